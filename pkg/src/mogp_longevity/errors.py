"""Exception hierarchy.

Every error carries a short ``category`` string; the command-line front end
prints it as the first token of its one-line failure message.
"""


class MortalityGPError(Exception):
    category = "error"


class ParseError(MortalityGPError, ValueError):
    category = "parse"


class AssemblyError(MortalityGPError, ValueError):
    category = "assembly"


class DomainError(MortalityGPError, ValueError):
    category = "domain"


class KernelError(MortalityGPError, ValueError):
    category = "kernel"


class ConditioningError(MortalityGPError, ArithmeticError):
    category = "conditioning"


class ContractError(MortalityGPError, ValueError):
    category = "contract"


class RankDeficientError(MortalityGPError, ValueError):
    category = "rank"


class FitError(MortalityGPError, RuntimeError):
    category = "fit"


class ModelFormatError(MortalityGPError, ValueError):
    category = "model"


class ConfigError(MortalityGPError, ValueError):
    category = "config"
