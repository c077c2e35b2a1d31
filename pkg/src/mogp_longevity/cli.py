"""Command-line front end: ``mogp-longevity <command> [--config run.yaml] [flags]``.

Every command reads an optional YAML run configuration; command-line flags
override it.  On failure a single line ``error: <category>: <message>`` is
written to stderr and the exit status is nonzero.  The log level comes from
the ``MOGP_LONGEVITY_LOG_LEVEL`` environment variable.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from ._core import BACKEND
from .analytics import (extract_correlations, hierarchical_cluster, improvement_bands,
                        improvement_factors, improvement_percent, raw_improvement,
                        read_score_footer,
                        score_predictions, trend_coefficients, trend_distance_matrix)
from .data import (MortalityPanel, RawTable, assemble_panel, merge_tables, parse_hmd_table,
                   read_csv_tables)
from .errors import ConfigError, DomainError, MortalityGPError, ParseError
from .gp import MeanSpec, sample_posterior
from .inference import (OptimizerConfig, PriorSpec, dumps_model, fit, load_model,
                        select_rank)
from .kernels import Family

logger = logging.getLogger("mogp_longevity")

EXIT_ERROR = 2
LOG_ENV = "MOGP_LONGEVITY_LOG_LEVEL"


# ---------------------------------------------------------------------------
# Run configuration


@dataclass
class Source:
    path: str
    population: str | None = None
    format: str | None = None
    column: str | None = None


@dataclass
class RunConfig:
    sources: list[Source] = field(default_factory=list)
    ages: tuple[int, int] | None = None
    years: tuple[int, int] | None = None
    notches: dict[str, tuple[int, int]] = field(default_factory=dict)
    panel: str | None = None
    family: str = "ICM"
    Q: list[int] = field(default_factory=lambda: [1, 2, 3])
    scenario: int = 1
    beta_yr_fixed: float | None = None
    priors: str = "mle"
    optimizer: dict = field(default_factory=dict)
    output_dir: str = "."
    seed: int = 0

    def validate(self) -> "RunConfig":
        for name in ("ages", "years"):
            r = getattr(self, name)
            if r is not None and r[1] < r[0]:
                raise ConfigError(f"{name} range {r[0]}:{r[1]} is empty")
        for pop, r in self.notches.items():
            if r[1] < r[0]:
                raise ConfigError(f"notch range for {pop} is empty")
        try:
            Family(self.family)
        except ValueError:
            raise ConfigError(f"unknown kernel family {self.family!r}") from None
        if self.priors not in ("mle", "map"):
            raise ConfigError("priors must be 'mle' or 'map'")
        if self.scenario not in (1, 2, 3):
            raise ConfigError("scenario must be 1, 2 or 3")
        if self.scenario == 3 and self.beta_yr_fixed is None:
            raise ConfigError("scenario 3 needs beta_yr_fixed")
        if not self.Q or any(q < 1 for q in self.Q):
            raise ConfigError("Q candidates must be positive integers")
        return self

    def optimizer_config(self) -> OptimizerConfig:
        allowed = set(OptimizerConfig.__dataclass_fields__) - {"seed"}
        bad = set(self.optimizer) - allowed
        if bad:
            raise ConfigError(f"unknown optimizer keys: {sorted(bad)}")
        opts = {k: tuple(v) if isinstance(v, list) else v for k, v in self.optimizer.items()}
        try:
            return OptimizerConfig(seed=self.seed, **opts)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"optimizer: {exc}") from None

    def mean_spec(self) -> MeanSpec:
        return MeanSpec(self.scenario, self.beta_yr_fixed)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


def _range(value, what: str) -> tuple[int, int]:
    if isinstance(value, str):
        parts = value.split(":")
        if len(parts) != 2:
            raise ConfigError(f"{what}: expected FIRST:LAST, got {value!r}")
        value = parts
    try:
        lo, hi = (int(v) for v in value)
    except (TypeError, ValueError):
        raise ConfigError(f"{what}: expected two integers, got {value!r}") from None
    if hi < lo:
        raise ConfigError(f"{what}: range {lo}:{hi} is empty")
    return lo, hi


def load_config(path: str | Path | None) -> RunConfig:
    """Read a YAML run configuration.  Relative paths resolve against its directory."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {str(exc).splitlines()[0]}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw, base=path.parent)


def config_from_dict(raw: dict, base: Path = Path(".")) -> RunConfig:
    known = set(RunConfig.__dataclass_fields__) | {"data", "model"}
    bad = set(raw) - known
    if bad:
        raise ConfigError(f"unknown config keys: {sorted(bad)}")
    flat = dict(raw)
    for section in ("data", "model"):
        sub = flat.pop(section, None) or {}
        if not isinstance(sub, dict):
            raise ConfigError(f"'{section}' must be a mapping")
        for k, v in sub.items():
            if k not in RunConfig.__dataclass_fields__:
                raise ConfigError(f"unknown key {section}.{k}")
            flat[k] = v
    cfg = RunConfig()

    def resolve(p):
        return str(p) if Path(p).is_absolute() else str(base / p)

    for src in flat.pop("sources", None) or []:
        if isinstance(src, str):
            src = {"path": src}
        if not isinstance(src, dict) or "path" not in src:
            raise ConfigError("each source needs a 'path'")
        bad = set(src) - set(Source.__dataclass_fields__)
        if bad:
            raise ConfigError(f"unknown source keys: {sorted(bad)}")
        cfg.sources.append(Source(**{**src, "path": resolve(src["path"])}))
    for key in ("ages", "years"):
        if flat.get(key) is not None:
            setattr(cfg, key, _range(flat.pop(key), key))
        flat.pop(key, None)
    cfg.notches = {str(p): _range(r, f"notch {p}")
                   for p, r in (flat.pop("notches", None) or {}).items()}
    for key in ("panel", "output_dir"):
        if flat.get(key) is not None:
            setattr(cfg, key, resolve(flat.pop(key)))
        flat.pop(key, None)
    if "Q" in flat:
        q = flat.pop("Q")
        cfg.Q = [int(v) for v in (q if isinstance(q, list) else [q])]
    for key, val in flat.items():
        setattr(cfg, key, val)
    cfg.family = str(cfg.family).upper()
    cfg.priors = str(cfg.priors).lower()
    return cfg.validate()


def _apply_flags(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Command-line flags override the configuration."""
    g = lambda name: getattr(args, name, None)  # noqa: E731
    if g("source"):
        cfg.sources = [_parse_source_flag(s) for s in args.source]
    if g("ages"):
        cfg.ages = _range(args.ages, "--ages")
    if g("years"):
        cfg.years = _range(args.years, "--years")
    if g("notch"):
        for item in args.notch:
            pop, _, rng = item.partition("=")
            if not rng:
                raise ConfigError(f"--notch expects POP=FIRST:LAST, got {item!r}")
            cfg.notches[pop] = _range(rng, f"--notch {pop}")
    for name in ("panel", "family", "scenario", "beta_yr_fixed", "output_dir", "seed"):
        if g(name) is not None:
            setattr(cfg, name, getattr(args, name))
    if g("Q"):
        cfg.Q = [int(v) for v in args.Q.split(",")]
    if g("map"):
        cfg.priors = "map"
    if g("n_starts") is not None:
        cfg.optimizer = {**cfg.optimizer, "n_starts": args.n_starts}
    if g("optimizer") is not None:
        cfg.optimizer = {**cfg.optimizer, "method": args.optimizer}
    cfg.family = str(cfg.family).upper()
    return cfg.validate()


def _parse_source_flag(text: str) -> Source:
    path, *rest = text.split(":")
    return Source(path, rest[0] if rest else None, None, rest[1] if len(rest) > 1 else None)


# ---------------------------------------------------------------------------
# Helpers


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_file(path: str | None, what: str) -> Path:
    if path is None:
        raise ConfigError(f"no {what} given")
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _panel_path(cfg: RunConfig) -> Path:
    return _require_file(cfg.panel or str(Path(cfg.output_dir) / "panel.csv"), "panel file")


def _read_panel(path: Path) -> MortalityPanel:
    return MortalityPanel.read_csv(path)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_metadata(out: Path, command: str, cfg: RunConfig, inputs: dict[str, Path],
                    outputs: list[Path]) -> None:
    meta = {"command": command, "version": __version__, "backend": BACKEND,
            "config": cfg.to_dict(),
            "inputs": {k: {"path": str(p), "sha256": _sha256(p)} for k, p in inputs.items()},
            "outputs": {p.name: _sha256(p) for p in outputs}}
    _write_json(out / f"run_{command.replace('-', '_')}.json", meta)


def _load_source(src: Source) -> list[RawTable]:
    p = _require_file(src.path, "source file")
    fmt = (src.format or ("csv" if p.suffix.lower() == ".csv" else "hmd")).lower()
    if fmt == "csv":
        tables = read_csv_tables(p)
        if src.population is not None:
            if src.population not in tables:
                raise ConfigError(f"{p}: population {src.population!r} not in file")
            tables = {src.population: tables[src.population]}
        return list(tables.values())
    if fmt != "hmd":
        raise ConfigError(f"unknown source format {fmt!r}")
    population = src.population or p.name.split("_")[0].split(".")[0]
    try:
        return [parse_hmd_table(p.read_text(encoding="utf-8"), population, src.column)]
    except ParseError as exc:
        raise ParseError(f"{p}: {exc}") from None


def _grid(pops, ages, years):
    P, T, A = np.meshgrid(np.arange(len(pops)), np.arange(years[0], years[1] + 1),
                          np.arange(ages[0], ages[1] + 1), indexing="ij")
    return [pops[i] for i in P.ravel()], A.ravel().astype(float), T.ravel().astype(float)


# ---------------------------------------------------------------------------
# Commands


def cmd_ingest(cfg: RunConfig) -> int:
    if not cfg.sources:
        raise ConfigError("no data sources given")
    if cfg.ages is None or cfg.years is None:
        raise ConfigError("ingest needs age and year ranges")
    by_pop: dict[str, list[RawTable]] = {}
    for src in cfg.sources:
        for t in _load_source(src):
            by_pop.setdefault(t.population, []).append(t)
    tables = [merge_tables(*ts) if len(ts) > 1 else ts[0] for ts in by_pop.values()]
    unknown = set(cfg.notches) - set(by_pop)
    if unknown:
        raise ConfigError(f"notch given for unknown population(s) {sorted(unknown)}")
    year_spec = ({p: cfg.notches.get(p, cfg.years) for p in by_pop} if cfg.notches
                 else cfg.years)
    panel = assemble_panel(tables, cfg.ages, year_spec)
    out = _outdir(cfg)
    panel_path = out / "panel.csv"
    panel.write_csv(panel_path)
    summary = panel.summary()
    summary["digest"] = panel.digest()
    _write_json(out / "panel_summary.json", summary)
    print(f"L={panel.L} M={panel.M} isotropic={str(panel.isotropic).lower()}")
    if not panel.isotropic:
        print("population,first_year,last_year,cells")
        for (p, (y0, y1)), n in zip(panel.year_ranges().items(), panel.counts()):
            print(f"{p},{int(y0)},{int(y1)},{n}")
    if panel.rejected:
        print(f"rejected {len(panel.rejected)} zero-death cells")
    _write_metadata(out, "ingest", cfg, {f"source{i}": Path(s.path)
                                         for i, s in enumerate(cfg.sources)},
                    [panel_path, out / "panel_summary.json"])
    return 0


def _fit_model(cfg: RunConfig, panel: MortalityPanel, Q_list=None):
    priors = PriorSpec() if cfg.priors == "map" else None
    config = cfg.optimizer_config()
    family = Family(cfg.family)
    if family is Family.ICM:
        scan = select_rank(panel, Q_list or cfg.Q, config, cfg.mean_spec(), priors)
        return scan.models[scan.best_Q], scan
    if family is Family.SOGP and panel.L != 1:
        raise ConfigError(f"SOGP needs a single-population panel, got L={panel.L}")
    return fit(panel, family, cfg.mean_spec(), config, priors), None


def cmd_fit(cfg: RunConfig) -> int:
    panel_path = _panel_path(cfg)
    panel = _read_panel(panel_path)
    model, scan = _fit_model(cfg, panel)
    out = _outdir(cfg)
    model_path = out / "model.json"
    model_path.write_text(dumps_model(model), encoding="utf-8")
    log_path = out / "fit_log.json"
    log = {"family": model.family.value, "objective": model.objective,
           "starts": model.metadata.get("starts", [])}
    outputs = [model_path, log_path]
    if scan is not None:
        log["ranks"] = {str(q): m.metadata.get("starts", []) for q, m in scan.models.items()}
        scan.to_csv(out / "bic_scan.csv")
        outputs.append(out / "bic_scan.csv")
    _write_json(log_path, log)
    _write_metadata(out, "fit", cfg, {"panel": panel_path}, outputs)
    q = f" Q={model.Q}" if model.Q is not None else ""
    print(f"{model.family.value}{q} loglik={model.loglik:.6f} bic={model.bic:.6f}")
    return 0


def cmd_bic_scan(cfg: RunConfig) -> int:
    panel_path = _panel_path(cfg)
    panel = _read_panel(panel_path)
    priors = PriorSpec() if cfg.priors == "map" else None
    scan = select_rank(panel, cfg.Q, cfg.optimizer_config(), cfg.mean_spec(), priors)
    out = _outdir(cfg)
    scan.to_csv(out / "bic_scan.csv")
    scan.to_csv(sys.stdout)
    _write_metadata(out, "bic-scan", cfg, {"panel": panel_path}, [out / "bic_scan.csv"])
    return 0


def _posterior(args, cfg):
    model_path = _require_file(args.model, "model file")
    panel_path = _panel_path(cfg)
    panel = _read_panel(panel_path)
    model = load_model(model_path)
    return model, model.posterior(panel), model_path, panel_path


def _pops(arg, populations):
    if not arg:
        return list(populations)
    names = [p for item in arg for p in item.split(",") if p]
    for p in names:
        if p not in populations:
            raise DomainError(f"unknown population {p!r}; model has {list(populations)}")
    return names


def cmd_predict(cfg: RunConfig, args) -> int:
    model, post, model_path, panel_path = _posterior(args, cfg)
    if cfg.ages is None or cfg.years is None:
        raise ConfigError("predict needs --ages and --years")
    pops = _pops(args.pop, model.populations)
    p, a, t = _grid(pops, cfg.ages, cfg.years)
    want_joint = bool(args.joint or args.samples)
    res = post.predict(p, a, t, want_joint=want_joint)
    out = _outdir(cfg)
    pred_path = Path(args.out) if args.out else out / "predictions.csv"
    res.to_csv(pred_path)
    outputs = [pred_path]
    if args.samples:
        seed = cfg.seed if args.seed is None else args.seed
        paths = sample_posterior(res, args.samples, seed, observed=args.observed)
        samp_path = pred_path.with_name(pred_path.stem + "_samples.csv")
        res.samples_to_csv(paths, samp_path)
        outputs.append(samp_path)
    _write_metadata(out, "predict", cfg, {"model": model_path, "panel": panel_path}, outputs)
    print(f"wrote {len(res.mean)} rows to {pred_path}")
    return 0


def cmd_score(cfg: RunConfig, args) -> int:
    model, post, model_path, panel_path = _posterior(args, cfg)
    holdout_path = _require_file(args.holdout, "holdout file")
    holdout = _read_panel(holdout_path)
    unknown = set(holdout.populations) - set(model.populations)
    if unknown:
        raise DomainError(f"holdout populations not in model: {sorted(unknown)}")
    names = [holdout.populations[l] for l in holdout.pop]
    res = post.predict(names, holdout.age, holdout.year)
    report = score_predictions(res, holdout)
    baseline = None
    if args.baseline:
        baseline = read_score_footer(_require_file(args.baseline, "baseline report"))
        if not {"smape", "crps"} <= set(baseline):
            raise ConfigError(f"{args.baseline}: no smape/crps footer")
    out = _outdir(cfg)
    path = Path(args.out) if args.out else out / "score.csv"
    report.to_csv(path, baseline)
    line = f"smape={report.smape:.6f} crps={report.crps:.6f}"
    if baseline:
        line += (f" smape_improvement_pct={improvement_percent(baseline['smape'], report.smape):.4f}"
                 f" crps_improvement_pct={improvement_percent(baseline['crps'], report.crps):.4f}")
    print(line)
    _write_metadata(out, "score", cfg, {"model": model_path, "panel": panel_path,
                                        "holdout": holdout_path}, [path])
    return 0


def cmd_improvement(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    path = Path(args.out) if args.out else out / "improvement.csv"
    rows = []
    if args.raw:
        panel_path = _panel_path(cfg)
        panel = _read_panel(panel_path)
        for p in _pops(args.pop, panel.populations):
            yrs, ages, fac = raw_improvement(panel, p)
            for i, yr in enumerate(yrs):
                rows += [(p, yr, ag, fac[i, j], None, None) for j, ag in enumerate(ages)]
        inputs = {"panel": panel_path}
    else:
        model, post, model_path, panel_path = _posterior(args, cfg)
        if cfg.ages is None or cfg.years is None:
            raise ConfigError("improvement needs --ages and --years")
        ages = np.arange(cfg.ages[0], cfg.ages[1] + 1, dtype=float)
        years = np.arange(cfg.years[0], cfg.years[1] + 1, dtype=float)
        for p in _pops(args.pop, model.populations):
            if args.samples:
                seed = cfg.seed if args.seed is None else args.seed
                fac, lo, hi = improvement_bands(post, p, ages, years, args.samples, seed)
            else:
                all_years = np.arange(years[0] - 1, years[-1] + 1)
                res = post.predict_grid(p, ages, all_years)
                fac = improvement_factors(res.mean.reshape(len(all_years), len(ages)), all_years)
                lo = hi = None
            for i, yr in enumerate(years):
                rows += [(p, yr, ag, fac[i, j], None if lo is None else lo[i, j],
                          None if hi is None else hi[i, j]) for j, ag in enumerate(ages)]
        inputs = {"model": model_path, "panel": panel_path}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("population,year,age,factor,lo95,hi95\n")
        for p, yr, ag, f, lo, hi in rows:
            fh.write(f"{p},{int(yr)},{int(ag)},{float(f)!r},"
                     f"{'' if lo is None else repr(float(lo))},"
                     f"{'' if hi is None else repr(float(hi))}\n")
    _write_metadata(out, "improvement", cfg, inputs, [path])
    print(f"wrote {len(rows)} rows to {path}")
    return 0


def cmd_correlations(cfg: RunConfig, args) -> int:
    model_path = _require_file(args.model, "model file")
    corr = extract_correlations(load_model(model_path))
    out = _outdir(cfg)
    path = Path(args.out) if args.out else out / "correlations.csv"
    corr.to_csv(path)
    for a, b, r in corr.pairs():
        print(f"{a},{b},{r:.6f}")
    _write_metadata(out, "correlations", cfg, {"model": model_path}, [path])
    return 0


def cmd_cluster(cfg: RunConfig, args) -> int:
    panel_path = _panel_path(cfg)
    panel = _read_panel(panel_path)
    trends = trend_coefficients(panel)
    age_b = _range(args.age_bounds, "--age-bounds") if args.age_bounds else panel.age_range
    yr = panel.year
    year_b = (_range(args.year_bounds, "--year-bounds") if args.year_bounds
              else (float(yr.min()), float(yr.max())))
    D = trend_distance_matrix(trends, age_b, year_b)
    dend = hierarchical_cluster(D, args.linkage, labels=panel.populations)
    out = _outdir(cfg)
    csv_path, nwk_path = out / "dendrogram.csv", out / "dendrogram.nwk"
    coef_path = out / "trend_coefficients.csv"
    dend.to_csv(csv_path)
    newick = dend.newick()
    nwk_path.write_text(newick + "\n", encoding="utf-8")
    with open(coef_path, "w", encoding="utf-8") as fh:
        fh.write("population,beta_0,beta_ag,beta_yr\n")
        for p, c in zip(trends.populations, trends.coef):
            fh.write(f"{p},{c[0]!r},{c[1]!r},{c[2]!r}\n")
    print(newick)
    _write_metadata(out, "cluster", cfg, {"panel": panel_path}, [csv_path, nwk_path, coef_path])
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"error: usage: {message}\n")
        raise SystemExit(EXIT_ERROR)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mogp-longevity",
                     description="Multi-population Gaussian process mortality modelling.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, ranges=False, model=False):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--panel", help="canonical panel CSV")
        if ranges:
            p.add_argument("--ages", help="FIRST:LAST")
            p.add_argument("--years", help="FIRST:LAST")
        if model:
            p.add_argument("--model", required=True, help="fitted model JSON")
        return p

    p = common(sub.add_parser("ingest", help="parse sources into a canonical panel"), True)
    p.add_argument("--source", action="append", help="PATH[:POPULATION[:COLUMN]]")
    p.add_argument("--notch", action="append", help="POP=FIRST:LAST year range override")

    for name, helptext in (("fit", "fit a model"), ("bic-scan", "ICM rank scan by BIC")):
        p = common(sub.add_parser(name, help=helptext))
        p.add_argument("--family", choices=[f.value for f in Family])
        p.add_argument("--Q", help="comma-separated ICM rank candidates")
        p.add_argument("--scenario", type=int, choices=(1, 2, 3))
        p.add_argument("--beta-yr-fixed", dest="beta_yr_fixed", type=float)
        p.add_argument("--map", action="store_true", help="MAP with the default priors")
        p.add_argument("--n-starts", dest="n_starts", type=int)
        p.add_argument("--optimizer", choices=("nelder-mead", "l-bfgs-b"))
        p.add_argument("--seed", type=int)

    p = common(sub.add_parser("predict", help="posterior predictions on a grid"), True, True)
    p.add_argument("--pop", action="append", help="population(s), default all")
    p.add_argument("--joint", action="store_true", help="compute the joint covariance")
    p.add_argument("--samples", type=int, default=0, help="number of joint sample paths")
    p.add_argument("--observed", action="store_true", help="sample y* instead of f*")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = common(sub.add_parser("score", help="SMAPE and CRPS on held-out cells"), model=True)
    p.add_argument("--holdout", required=True, help="held-out panel CSV")
    p.add_argument("--baseline", help="baseline score CSV for improvement percentages")
    p.add_argument("--out")

    p = common(sub.add_parser("improvement", help="mortality improvement factors"), True)
    p.add_argument("--model", help="fitted model JSON (smoothed factors)")
    p.add_argument("--raw", action="store_true", help="factors from observed data")
    p.add_argument("--pop", action="append")
    p.add_argument("--samples", type=int, default=0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("correlations", help="cross-population correlations")
    p.add_argument("--config")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--model", required=True)
    p.add_argument("--out")

    p = common(sub.add_parser("cluster", help="cluster populations by mean trend"))
    p.add_argument("--linkage", choices=("single", "complete"), default="single")
    p.add_argument("--age-bounds", dest="age_bounds", help="FIRST:LAST, default panel range")
    p.add_argument("--year-bounds", dest="year_bounds", help="FIRST:LAST, default panel range")
    return parser


def main(argv=None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_flags(load_config(args.config), args)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "bic-scan":
            return cmd_bic_scan(cfg)
        if args.command == "improvement" and not args.raw and not args.model:
            raise ConfigError("improvement needs --model or --raw")
        handler = {"predict": cmd_predict, "score": cmd_score, "improvement": cmd_improvement,
                   "correlations": cmd_correlations, "cluster": cmd_cluster}[args.command]
        return handler(cfg, args)
    except MortalityGPError as exc:
        msg = str(exc).replace("\n", " ")
        sys.stderr.write(f"error: {exc.category}: {msg}\n")
    except OSError as exc:
        sys.stderr.write(f"error: io: {exc}\n")
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
