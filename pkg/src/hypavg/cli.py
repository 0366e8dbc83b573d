"""Config-driven experiment runner.

Every subcommand reads a JSON config validated against
``schema/experiment.schema.json`` and writes CSV tables plus a
``summary.json`` into the output directory.  Exit status is 0 on success,
2 when a declared expectation fails and 1 on any error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import functools
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import jsonschema

from .eigenfamily import TorusFamily, family_from_descriptor
from .errors import ConfigError, FitError, HypavgError
from .manifold import TorusLine, geometry_from_descriptor
from .measures import analytic_defect_measure, conormal_diagnostic, integrate_symbol
from .quantize import TestOperator, matrix_element, symbol_from_config
from .rellich import (
    TRACE_COLUMNS,
    StripDomain,
    commutator_vs_bracket,
    main_inequality_trace,
    rellich_residual,
)
from .restriction import CSV_COLUMNS, ArcSet, decay_fit, decay_record, local_average, restriction_norm

EXIT_OK, EXIT_ERROR, EXIT_TOLERANCE = 0, 1, 2
OUT_ENV = "HYPAVG_OUT"
DEFAULT_OUT = "hypavg-out"
DEFAULTS = {"h_count": 40, "deltas": [0.4, 0.2, 0.1, 0.05], "alphas": [0.1], "t0s": [0.05], "seed": 0, "jobs": 1,
            "diagnostic_atol": 1e-3}
TASKS = ("decay-sweep", "diagnostic", "rellich-check", "matrix-element", "restriction-norms")


# --------------------------------------------------------------------------
# configuration


@functools.lru_cache(maxsize=1)
def schema() -> dict:
    return json.loads(resources.files("hypavg").joinpath("schema/experiment.schema.json").read_text())


def validate_config(cfg: dict) -> dict:
    """Validate ``cfg`` and return a copy with defaults filled in.

    Raises :class:`ConfigError` naming the offending key.
    """
    try:
        jsonschema.validate(cfg, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    out = copy.deepcopy(DEFAULTS)
    out.update(copy.deepcopy(cfg))
    if out["family"]["family"] == "torus_shell":
        out["family"].setdefault("seed", out["seed"])
    is_torus = cfg["geometry"]["manifold"] == "torus2"
    if is_torus != cfg["family"]["family"].startswith("torus"):
        raise ConfigError("config error at family: family does not live on the configured manifold")
    return out


def load_config(path: str | os.PathLike) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None


class Context:
    """Objects rebuilt from a validated config (cached once per process)."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.manifold, self.H = geometry_from_descriptor(cfg["geometry"])
        self.family = family_from_descriptor(cfg["family"])
        self.curves = [self.H] + [geometry_from_descriptor({"manifold": cfg["geometry"]["manifold"],
                                                            "hypersurface": c})[1]
                                  for c in cfg.get("restriction_curves", [])]
        self.arcs = (ArcSet(tuple(map(tuple, cfg["arcs"])), self.H.length) if cfg.get("arcs") else None)

    @property
    def ladder(self) -> list[float]:
        return self.family.admissible_h(self.cfg["h_count"])

    def symbol(self):
        options = self.cfg.get("symbol")
        if options is None:
            options = {"beta_delta": self.cfg["deltas"][0], "chi_alpha": self.cfg["alphas"][0], "xin_power": 1}
        line = self.H if isinstance(self.H, TorusLine) else None
        return symbol_from_config(options, line)

    def strip(self) -> StripDomain:
        if "strip" in self.cfg:
            return StripDomain(*self.cfg["strip"])
        level = self.H.base[1] if isinstance(self.H, TorusLine) and self.H.axis == 2 else 0.0
        return StripDomain(level - 0.5, level)


@functools.lru_cache(maxsize=4)
def _context(cfg_json: str) -> Context:
    return Context(json.loads(cfg_json))


def _ctx(cfg: dict) -> Context:
    return _context(json.dumps(cfg, sort_keys=True))


def _require_torus(ctx: Context, task: str):
    if not isinstance(ctx.family, TorusFamily):
        raise ConfigError(f"{task} needs a torus family")


# --------------------------------------------------------------------------
# per-h work cells (top level so that worker processes can import them)


def _decay_cell(cfg: dict, h: float) -> dict:
    ctx = _ctx(cfg)
    rec = decay_record(ctx.family, h, ctx.H, cfg.get("beta_delta"))
    local = []
    if ctx.arcs is not None:
        for i, (a, b) in enumerate(ctx.arcs.intervals):
            v = local_average(ctx.family, h, ctx.H, ArcSet(((a, b),), ctx.H.length))
            local.append({"h": h, "arc": i, "lo": a, "hi": b, "re_avg": v.real, "im_avg": v.imag})
    return {"row": rec.row(), "local": local}


def _restriction_cell(cfg: dict, h: float) -> list[dict]:
    ctx = _ctx(cfg)
    delta = cfg.get("beta_delta")
    rows = []
    for i, C in enumerate(ctx.curves):
        rows.append({"h": h, "curve": i, "l2_restriction": restriction_norm(ctx.family, h, C),
                     "l2_normal": restriction_norm(ctx.family, h, C, normal=True),
                     "beta_delta": math.nan if delta is None else delta,
                     "microlocalized_norm": math.nan if delta is None else restriction_norm(ctx.family, h, C, delta)})
    return rows


def _matrix_cell(cfg: dict, h: float) -> dict:
    ctx = _ctx(cfg)
    sym = ctx.symbol()
    val = matrix_element(TestOperator(sym, h), ctx.family, h)
    lim = integrate_symbol(analytic_defect_measure(ctx.family, h), sym)
    return {"h": h, "re": val.real, "im": val.imag, "re_limit": lim.real, "im_limit": lim.imag,
            "abs_diff": abs(val - lim)}


def _rellich_cell(cfg: dict, h: float) -> dict:
    ctx = _ctx(cfg)
    strip = ctx.strip()
    r = rellich_residual(TestOperator(ctx.symbol(), h), ctx.family, h, strip)
    trace = []
    if isinstance(ctx.H, TorusLine) and ctx.H.axis == 2:
        for d in cfg["deltas"]:
            for a in cfg["alphas"]:
                trace.append(main_inequality_trace(ctx.family, h, d, a, ctx.H).row())
    return {"row": {"h": h, "re_commutator": r.commutator.real, "im_commutator": r.commutator.imag,
                    "re_boundary": r.boundary.real, "im_boundary": r.boundary.imag, "residual": r.residual},
            "trace": trace}


def _map(fn, cfg: dict, hs, jobs: int) -> list:
    """Evaluate ``fn(cfg, h)`` for every ``h``; results keep ladder order."""
    if jobs <= 1 or len(hs) <= 1:
        return [fn(cfg, h) for h in hs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, [cfg] * len(hs), hs))


# --------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, columns, rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
    return path


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_json(path: Path, data) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


def _fit(hs, values, **kw) -> dict:
    try:
        return decay_fit(hs, values, **kw).as_dict()
    except FitError as exc:
        return {"error": str(exc)}


class Report:
    def __init__(self, out: Path):
        self.out = out
        self.fits: dict = {}
        self.checks: list = []
        self.files: list = []
        self.extra: dict = {}

    def check(self, name: str, value, bound, passed: bool):
        self.checks.append({"name": name, "value": value, "bound": bound, "passed": bool(passed)})

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)


# --------------------------------------------------------------------------
# tasks


def task_decay(cfg: dict, rep: Report):
    ctx = _ctx(cfg)
    hs = ctx.ladder
    cells = _map(_decay_cell, cfg, hs, cfg["jobs"])
    rows = [c["row"] for c in cells]
    rep.files.append(write_csv(rep.out / "decay.csv", CSV_COLUMNS, rows).name)
    if ctx.arcs is not None:
        local = [r for c in cells for r in c["local"]]
        rep.files.append(write_csv(rep.out / "local_averages.csv", ("h", "arc", "lo", "hi", "re_avg", "im_avg"),
                                   local).name)
    avg = [math.hypot(r["re_avg"], r["im_avg"]) for r in rows]
    navg = [math.hypot(r["re_normal_avg"], r["im_normal_avg"]) for r in rows]
    cols = {"avg": avg, "normal_avg": navg, "l2_restriction": [r["l2_restriction"] for r in rows],
            "l2_normal": [r["l2_normal"] for r in rows]}
    if cfg.get("beta_delta") is not None:
        cols["microlocalized_norm"] = [r["microlocalized_norm"] for r in rows]
    for k, v in cols.items():
        rep.fits[k] = _fit(hs, v)
    exp = cfg.get("expect", {})
    if "avg_abs_max" in exp:
        rep.check("max |avg|", max(avg), exp["avg_abs_max"], max(avg) <= exp["avg_abs_max"])
    if "avg_value" in exp:
        target = exp["avg_value"]
        target = complex(*target) if isinstance(target, list) else complex(target)
        tol = exp.get("avg_tol", 1e-10)
        err = max(abs(complex(r["re_avg"], r["im_avg"]) - target) for r in rows)
        rep.check("max |avg - expected|", err, tol, err <= tol)
    _check_exponents(rep, exp, 0, {k: rep.fits[k] for k in ("avg", "normal_avg")})


def _check_exponents(rep: Report, exp: dict, curve: int, fits: dict, prefix: str = ""):
    """Check declared exponent ranges; the exponent is the slope of log value against log h."""
    for e in exp.get("exponents", []):
        if e.get("curve", 0) != curve or e["column"] not in fits:
            continue
        f = fits[e["column"]]
        val = f.get("exponent", math.nan)
        rep.check(f"{prefix}exponent {e['column']}", val, [e["min"], e["max"]], e["min"] <= val <= e["max"])


def task_restriction(cfg: dict, rep: Report):
    ctx = _ctx(cfg)
    hs = ctx.ladder
    rows = [r for cell in _map(_restriction_cell, cfg, hs, cfg["jobs"]) for r in cell]
    cols = ("h", "curve", "l2_restriction", "l2_normal", "beta_delta", "microlocalized_norm")
    rep.files.append(write_csv(rep.out / "restriction_norms.csv", cols, rows).name)
    fits = {}
    for i in range(len(ctx.curves)):
        sub = [r for r in rows if r["curve"] == i]
        f = {c: _fit([r["h"] for r in sub], [r[c] for r in sub]) for c in ("l2_restriction", "l2_normal")}
        if cfg.get("beta_delta") is not None:
            f["microlocalized_norm"] = _fit([r["h"] for r in sub], [r["microlocalized_norm"] for r in sub])
        fits[f"curve{i}"] = f
        _check_exponents(rep, cfg.get("expect", {}), i, f, prefix=f"curve{i} ")
    rep.fits["restriction"] = fits


def task_diagnostic(cfg: dict, rep: Report):
    ctx = _ctx(cfg)
    mu = analytic_defect_measure(ctx.family, ctx.ladder[-1])
    mc = cfg.get("monte_carlo", {})
    kw = {"seed": cfg["seed"]}
    if "samples" in mc:
        kw["n_samples"] = mc["samples"]
    if "batches" in mc:
        kw["batches"] = mc["batches"]
    report = conormal_diagnostic(mu, ctx.H, cfg["deltas"], cfg["t0s"], cfg["diagnostic_atol"], **kw)
    rep.files.append(write_csv(rep.out / "diagnostic.csv", ("delta", "t0", "quotient", "stderr"),
                               report.csv_rows()).name)
    rep.files.append(write_json(rep.out / "diagnostic.json", report.verdict_block()).name)
    rep.extra["diagnostic"] = report.verdict_block()
    want = cfg.get("expect", {}).get("verdict")
    if want is not None:
        rep.check("verdict", report.verdict, want, report.verdict == want)


def task_matrix(cfg: dict, rep: Report):
    ctx = _ctx(cfg)
    _require_torus(ctx, "matrix-element")
    hs = ctx.ladder
    rows = _map(_matrix_cell, cfg, hs, cfg["jobs"])
    rep.files.append(write_csv(rep.out / "matrix_element.csv", ("h", "re", "im", "re_limit", "im_limit", "abs_diff"),
                               rows).name)
    rep.fits["matrix_element_error"] = _fit(hs, [r["abs_diff"] for r in rows])
    exp = cfg.get("expect", {})
    if "order_min" in exp:
        val = rep.fits["matrix_element_error"].get("exponent", math.nan)
        rep.check("matrix element error order", val, exp["order_min"], val >= exp["order_min"])


def task_rellich(cfg: dict, rep: Report):
    ctx = _ctx(cfg)
    _require_torus(ctx, "rellich-check")
    hs = ctx.ladder
    cells = _map(_rellich_cell, cfg, hs, cfg["jobs"])
    rows = [c["row"] for c in cells]
    cols = ("h", "re_commutator", "im_commutator", "re_boundary", "im_boundary", "residual")
    rep.files.append(write_csv(rep.out / "rellich.csv", cols, rows).name)
    trace = [r for c in cells for r in c["trace"]]
    if trace:
        rep.files.append(write_csv(rep.out / "rellich_trace.csv", TRACE_COLUMNS, trace).name)
    cf = commutator_vs_bracket(ctx.symbol(), ctx.family, hs, ctx.strip())
    rep.fits["commutator_order"] = cf.fit.as_dict()
    exp = cfg.get("expect", {})
    worst = max(r["residual"] for r in rows)
    bound = exp.get("residual_max", 1e-8)
    rep.check("max rellich residual", worst, bound, worst <= bound)
    if "order_min" in exp:
        rep.check("commutator order", cf.order, exp["order_min"], cf.order >= exp["order_min"])


def _rellich_applicable(cfg: dict) -> bool:
    hs = cfg["geometry"]["hypersurface"]
    if cfg["geometry"]["manifold"] != "torus2":
        return False
    return (hs["kind"] == "circle" and hs["axis"] == 2) or "fourier" in cfg.get("symbol", {})


RUNNERS = {"decay-sweep": task_decay, "diagnostic": task_diagnostic, "rellich-check": task_rellich,
           "matrix-element": task_matrix, "restriction-norms": task_restriction}


def run(cfg: dict, task: str, out: Path) -> Report:
    """Run ``task`` (or every applicable task for ``"run"``) and write ``summary.json``."""
    out.mkdir(parents=True, exist_ok=True)
    rep = Report(out)
    tasks = [task]
    if task == "run":
        tasks = ["decay-sweep", "restriction-norms", "diagnostic"]
        if cfg["geometry"]["manifold"] == "torus2" and "fourier" in cfg.get("symbol", {}):
            tasks.append("matrix-element")
        if _rellich_applicable(cfg):
            tasks.append("rellich-check")
    for t in tasks:
        RUNNERS[t](cfg, rep)
    summary = {"task": task, "name": cfg.get("name", ""), "seed": cfg["seed"], "h_count": cfg["h_count"],
               "fits": rep.fits, "checks": rep.checks, "passed": rep.passed, "outputs": sorted(rep.files)}
    summary.update(rep.extra)
    write_json(out / "summary.json", summary)
    return rep


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hypavg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in (*TASKS, "run", "validate"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON experiment config")
        s.add_argument("--out", help=f"output directory (default: config 'out', ${OUT_ENV}, or ./{DEFAULT_OUT})")
        s.add_argument("--jobs", type=int, help="worker processes")
        s.add_argument("--seed", type=int, help="seed for Monte Carlo and random-shell draws")
        s.add_argument("--dry-run", action="store_true", help="validate and print the planned h-ladder only")
    return p


def _output_dir(args, cfg) -> Path:
    return Path(args.out or cfg.get("out") or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config)
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.jobs is not None:
            raw["jobs"] = args.jobs
        cfg = validate_config(raw)
        if args.command == "validate":
            print(f"{args.config}: valid")
            return EXIT_OK
        ctx = _ctx(cfg)
        if args.dry_run:
            plan = {"command": args.command, "h": ctx.ladder, "levels": [ctx.family.level_of(h) for h in ctx.ladder],
                    "out": str(_output_dir(args, cfg))}
            print(json.dumps(_jsonable(plan), indent=2))
            return EXIT_OK
        rep = run(cfg, args.command, _output_dir(args, cfg))
    except (HypavgError, ValueError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for c in rep.checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['value']} (bound {c['bound']})")
    print(f"wrote {rep.out / 'summary.json'}")
    return EXIT_OK if rep.passed else EXIT_TOLERANCE


if __name__ == "__main__":
    sys.exit(main())
