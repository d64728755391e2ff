"""Command-line front end.

Configuration files are flat ``key = value`` lines grouped under ``[section]``
headers (``params``, ``quad``, ``input``, ``experiment``, ``output``). Keys may
also be written as ``section.key`` outside any header; a bare ``experiment``
key names the experiment. ``#`` starts a comment.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import harness
from .core import Constant, Field, FracParams, Grid, QuadSpec, holder_class, parse_exterior, read_grid, validate_params, write_grid
from .errors import ConfigValidationError, FraclapError, ParseError
from .laplacian import evaluate
from .norms import Region, full_norm
from .potentials import decompose, default_check_points, extension_field, poisson_extend_many

EXPERIMENTS = ("eval", "eval-g0", "solve-extend", "decompose", "norms", "verify-regularity", "blowup", "decay")
COMMANDS = {
    "eval": ("eval", "eval-g0"),
    "extend": ("solve-extend",),
    "decompose": ("decompose",),
    "norms": ("norms",),
    "verify": ("verify-regularity",),
    "blowup": ("blowup",),
    "decay": ("decay",),
}

_text = str


def _bool(v):
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _floats(v):
    return tuple(float(t) for t in v.replace(";", ",").split(",") if t.strip())


def _points(v):
    return tuple(_floats(chunk) for chunk in v.split(";") if chunk.strip())


def _ints(v):
    return tuple(int(t) for t in v.split(",") if t.strip())


SCHEMA = {
    "params": {"n": int, "s": float, "alpha": float, "p": float, "riesz": _bool},
    "quad": {
        "R": float,
        "n_panels": int,
        "gl_order": int,
        "ang_order": int,
        "tol": float,
        "r_min": float,
        "max_panel_width": float,
        "ang_max": int,
    },
    "input": {"field": _text, "f": _text, "exterior": _text, "h": float, "half_width": float},
    "experiment": {
        "name": _text,
        "seed": int,
        "count": int,
        "mass_multipliers": _floats,
        "theorem": _text,
        "bound": float,
        "expect": float,
        "points": _points,
        "h": float,
        "k": _ints,
        "x_k": _floats,
        "mode": _text,
        "q": float,
        "domain": _text,
        "radius": float,
        "axis": int,
        "lo": float,
        "hi": float,
        "generic": _bool,
        "region": _text,
    },
    "output": {"dir": _text},
}


@dataclass
class RunPlan:
    experiment: str
    params: FracParams
    quad: QuadSpec
    inputs: dict
    options: dict
    seed: int = 0
    out_dir: str = "fraclap-out"
    base: Path = Path(".")
    lines: dict = field(default_factory=dict, repr=False)


def _raw_entries(text):
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ParseError(no, f"malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ParseError(no, f"unknown section [{section}]")
            continue
        if "=" not in line:
            raise ParseError(no, f"expected key = value, got {raw.strip()!r}")
        key, value = (t.strip() for t in line.split("=", 1))
        if key == "experiment" and (section is None or key not in SCHEMA[section]):
            yield no, "experiment", "name", value
            continue
        if section is None:
            if "." not in key:
                raise ParseError(no, f"key {key!r} outside a section")
            sec, key = key.split(".", 1)
        else:
            sec = section
        if sec not in SCHEMA or key not in SCHEMA[sec]:
            raise ParseError(no, f"unknown key {sec}.{key}")
        yield no, sec, key, value


def parse_config_text(text: str, base=".") -> RunPlan:
    values = {sec: {} for sec in SCHEMA}
    lines = {}
    for no, sec, key, raw in _raw_entries(text):
        if key in values[sec]:
            raise ParseError(no, f"duplicate key {sec}.{key}")
        try:
            values[sec][key] = SCHEMA[sec][key](raw)
        except ValueError as exc:
            raise ParseError(no, f"bad value for {sec}.{key}: {exc}") from None
        lines[f"{sec}.{key}"] = no

    prm = values["params"]
    for key in ("n", "s"):
        if key not in prm:
            raise ParseError(0, f"missing required key params.{key}")
    # validate incrementally so a failure points at the key that caused it
    steps = [
        ("n", dict(n=prm["n"], s=0.5)),
        ("s", dict(n=prm["n"], s=prm["s"])),
        ("alpha", dict(n=prm["n"], s=prm["s"], alpha=prm.get("alpha"))),
        ("p", dict(n=prm["n"], s=prm["s"], alpha=prm.get("alpha"), p=prm.get("p"))),
        ("riesz", dict(n=prm["n"], s=prm["s"], alpha=prm.get("alpha"), p=prm.get("p"), riesz=prm.get("riesz", False))),
    ]
    params = None
    for key, kw in steps:
        try:
            params = validate_params(**kw)
        except FraclapError as exc:
            raise ConfigValidationError(lines.get(f"params.{key}", 0), f"{type(exc).__name__}({key}): {exc}") from exc
    try:
        quad = QuadSpec(**values["quad"])
    except (FraclapError, ValueError) as exc:
        key = next(iter(values["quad"]), "")
        raise ConfigValidationError(lines.get(f"quad.{key}", 0), str(exc)) from exc

    exp = dict(values["experiment"])
    name = exp.pop("name", None)
    if name is None:
        raise ParseError(0, "missing experiment name")
    if name not in EXPERIMENTS:
        raise ConfigValidationError(lines["experiment.name"], f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")
    seed = exp.pop("seed", 0)
    return RunPlan(
        experiment=name,
        params=params,
        quad=quad,
        inputs=values["input"],
        options=exp,
        seed=seed,
        out_dir=values["output"].get("dir", "fraclap-out"),
        base=Path(base),
        lines=lines,
    )


def parse_config(path) -> RunPlan:
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8"), base=path.parent)


# --- dispatch ---------------------------------------------------------------


@dataclass
class Report:
    experiment: str
    params: dict
    seed: int
    columns: tuple
    rows: list
    max_ratio: Optional[float] = None
    verdict: bool = True
    meta: dict = field(default_factory=dict)
    grids: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "experiment": self.experiment,
            "params": self.params,
            "seed": self.seed,
            "rows": len(self.rows),
            "max_ratio": _json_number(self.max_ratio),
            "verdict": bool(self.verdict),
        }


def _params_dict(plan: RunPlan) -> dict:
    p = plan.params
    out = {"n": p.n, "s": p.s}
    if p.alpha is not None:
        out["alpha"] = p.alpha
    if p.p is not None:
        out["p"] = p.p
    return out


def _load_field(plan: RunPlan, key: str = "field", default: Optional[str] = None) -> Field:
    spec = plan.inputs.get(key, default)
    if spec is None:
        raise ConfigValidationError(plan.lines.get(f"input.{key}", 0), f"input.{key} is required for {plan.experiment}")
    h = plan.inputs.get("h", 1.0 / 16.0)
    half = plan.inputs.get("half_width")
    n = plan.params.n
    if spec == "g0":
        return harness.g0_field(plan.params, h, 1.5 if half is None else half)
    if spec.startswith("const:"):
        c = float(spec.split(":", 1)[1])
        grid = Grid.cube(n, 1.0 if half is None else half, h)
        return Field.from_function(lambda x: np.full(len(x), c), grid, Constant(c), nonneg=c >= 0, holder=1.0, radial=True)
    return read_grid(plan.base / spec, s=plan.params.s)


def _row_points(plan: RunPlan):
    pts = plan.options.get("points")
    if pts is None:
        return default_check_points(plan.params.n)
    arr = np.asarray(pts, float)
    if arr.ndim != 2 or arr.shape[1] != plan.params.n:
        raise ConfigValidationError(plan.lines.get("experiment.points", 0), f"points must have {plan.params.n} coordinates each")
    return arr


def _xcols(n):
    return tuple(f"x{i}" for i in range(n))


def _xrow(x):
    return {f"x{i}": float(v) for i, v in enumerate(np.ravel(x))}


def _run_eval(plan: RunPlan) -> Report:
    n = plan.params.n
    if plan.experiment == "eval-g0":
        u = _load_field(plan, default="g0")
        expect = plan.options.get("expect", 1.0)
    else:
        u = _load_field(plan)
        expect = plan.options.get("expect")
    tol = plan.options.get("bound", 1e-3)
    rows, worst = [], 0.0
    for x in _row_points(plan):
        e = evaluate(u, x, plan.params, plan.quad, strict=False)
        row = {**_xrow(x), "value": e.value, "error_estimate": e.error}
        if expect is not None:
            row["deviation"] = e.value - expect
            worst = max(worst, abs(e.value - expect))
        rows.append(row)
    cols = _xcols(n) + ("value", "error_estimate") + (("deviation",) if expect is not None else ())
    return Report(plan.experiment, _params_dict(plan), plan.seed, cols, rows, verdict=worst <= tol, meta={"max_deviation": worst})


def _run_extend(plan: RunPlan) -> Report:
    text = plan.inputs.get("exterior")
    if text is None:
        raise ConfigValidationError(0, "input.exterior is required for solve-extend")
    g = parse_exterior(text)
    pts = _row_points(plan)
    vals = poisson_extend_many(g, pts, plan.params, plan.quad)
    rows = [{**_xrow(x), "value": float(v)} for x, v in zip(pts, vals)]
    report = Report(plan.experiment, _params_dict(plan), plan.seed, _xcols(plan.params.n) + ("value",), rows)
    if "h" in plan.inputs:
        grid = Grid.cube(plan.params.n, plan.inputs.get("half_width", 1.0), plan.inputs["h"])
        report.grids["extension.grid"] = extension_field(g, grid, plan.params, plan.quad)
    return report


def _run_decompose(plan: RunPlan) -> Report:
    u = _load_field(plan, default="g0")
    f = _load_field(plan, "f", default="const:1")
    pts = plan.options.get("points")
    d = decompose(u, f, plan.params, plan.quad, check_points=None if pts is None else _row_points(plan))
    rows = [
        {**_xrow(x), "pde_residual": float(a), "poisson_gap": float(b)}
        for x, a, b in zip(d.check_points, d.pde_values, d.poisson_gaps)
    ]
    bound = plan.options.get("bound", 1e-3)
    ok = d.pde_residual <= bound and d.poisson_residual <= bound
    cols = _xcols(plan.params.n) + ("pde_residual", "poisson_gap")
    return Report(plan.experiment, _params_dict(plan), plan.seed, cols, rows, verdict=ok)


def _region(plan: RunPlan) -> Region:
    text = plan.options.get("region", "ball:0.5")
    line = plan.lines.get("experiment.region", 0)
    kind, _, rest = text.partition(":")
    n = plan.params.n
    try:
        if kind == "ball":
            parts = rest.split(";")
            radius = float(parts[-1])
            centre = _floats(parts[0]) if len(parts) > 1 else (0.0,) * n
            return Region.ball(np.asarray(centre), radius)
        if kind == "box":
            lo, hi = rest.split(";")
            return Region.box(np.asarray(_floats(lo)), np.asarray(_floats(hi)))
    except ValueError as exc:
        raise ConfigValidationError(line, f"bad region {text!r}: {exc}") from None
    raise ConfigValidationError(line, f"region must be ball:[centre;]radius or box:lo;hi, got {text!r}")


def _run_norms(plan: RunPlan) -> Report:
    u = _load_field(plan)
    cls = holder_class(plan.params.s, plan.params.alpha)
    rep = full_norm(u, cls, _region(plan), seed=plan.seed)
    d = rep.to_dict()
    semi = rep.holder or rep.lnl
    row = {
        "class": cls.kind,
        "k": cls.k,
        "beta": cls.beta,
        "sup": rep.sup,
        "d_sup": ";".join(_fmt(v) for v in rep.d_sup),
        "seminorm": None if semi is None else semi["value"],
        "norm": rep.norm,
        "dini_I": None if rep.dini is None else rep.dini.I,
    }
    return Report(plan.experiment, _params_dict(plan), plan.seed, tuple(row), [row], meta={"norm": d})


def _run_verify(plan: RunPlan) -> Report:
    o = plan.options
    table = harness.refined_vs_global_experiment(
        plan.seed,
        o.get("count", 4),
        o.get("mass_multipliers", (1.0, 10.0, 100.0, 1000.0)),
        plan.params,
        o.get("h", 1.0 / 8.0),
        o.get("theorem", "1.1"),
        plan.quad,
        bound=o.get("bound", 10.0),
    )
    return Report(plan.experiment, _params_dict(plan), plan.seed, table.columns, table.rows, table.max_ratio, table.verdict)


def _run_blowup(plan: RunPlan) -> Report:
    o = plan.options
    u = _load_field(plan)
    n = plan.params.n
    x_k = np.asarray(o.get("x_k", (0.0,) * n), float)
    mode = o.get("mode", "plain")
    rows, ok = [], True
    for k in o.get("k", (1,)):
        tr = harness.blowup_step(
            u, x_k, k, plan.params, mode=mode, q=o.get("q"),
            check_points=None if o.get("points") is None else _row_points(plan), quad=plan.quad,
        )
        row = {"k": k, "mode": mode, "r_k": tr.r_k, "lambda_k": tr.lambda_k, "u_a": tr.u_a}
        row.update({f"a{i}": float(v) for i, v in enumerate(tr.a_k)})
        row.update({f"audit_{key}": val for key, val in tr.audits.items()})
        row.update({f"tail_{int(R)}": val for R, val in tr.tail.items()})
        row["pde_residual"] = tr.pde_residual
        rows.append(row)
        ok = ok and tr.passed
    cols = tuple(rows[0]) if rows else ()
    return Report(plan.experiment, _params_dict(plan), plan.seed, cols, rows, verdict=ok)


def _run_decay(plan: RunPlan) -> Report:
    o = plan.options
    u = _load_field(plan)
    dom = harness.Domain(o.get("domain", "whole"), o.get("radius"), o.get("axis", 0), o.get("lo"), o.get("hi"))
    cert = harness.decay_certificate(u, dom, plan.params, o.get("mode", "plain"), o.get("generic", False))
    row = {"case": cert.case, "exponent": cert.exponent, "constant": cert.constant, **_xrow(cert.point)}
    bound = o.get("bound", math.inf)
    return Report(plan.experiment, _params_dict(plan), plan.seed, tuple(row), [row], verdict=cert.constant <= bound)


RUNNERS = {
    "eval": _run_eval,
    "eval-g0": _run_eval,
    "solve-extend": _run_extend,
    "decompose": _run_decompose,
    "norms": _run_norms,
    "verify-regularity": _run_verify,
    "blowup": _run_blowup,
    "decay": _run_decay,
}


class ExperimentFailed(FraclapError):
    """A numerical error raised while running an experiment."""


def dispatch(plan: RunPlan) -> Report:
    start = time.perf_counter()
    try:
        report = RUNNERS[plan.experiment](plan)
    except (ParseError, ConfigValidationError):
        raise
    except FraclapError as exc:
        raise ExperimentFailed(f"{plan.experiment}: {type(exc).__name__}: {exc}") from exc
    report.meta["wall_clock"] = time.perf_counter() - start
    return report


# --- output -----------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _json_number(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def write_report(report: Report, out_dir) -> list:
    """Write ``report.csv`` and ``summary.json`` (plus any grids); returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(report.columns)
    for row in report.rows:
        writer.writerow([_fmt(row.get(c)) for c in report.columns])
    paths = [out / "report.csv", out / "summary.json"]
    paths[0].write_text(buf.getvalue(), encoding="utf-8", newline="\n")
    paths[1].write_text(json.dumps(report.summary(), indent=2) + "\n", encoding="utf-8", newline="\n")
    for name, g in sorted(report.grids.items()):
        write_grid(g, out / name)
        paths.append(out / name)
    return paths


# --- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fraclap", description="Fractional Laplacian experiments")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="configuration file")
    ap.add_argument("--seed", type=int, default=None, help="override experiment.seed")
    ap.add_argument("--out", default=None, help="output directory (overrides output.dir)")
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        plan = parse_config(args.config)
    except (OSError, ParseError, ConfigValidationError) as exc:
        print(f"fraclap: {exc}", file=sys.stderr)
        return 1
    if plan.experiment not in COMMANDS[args.command]:
        print(f"fraclap: experiment {plan.experiment!r} does not belong to command {args.command!r}", file=sys.stderr)
        return 1
    if args.seed is not None:
        plan.seed = args.seed
    out_dir = args.out or os.fspath(plan.base / plan.out_dir)
    try:
        report = dispatch(plan)
    except (ParseError, ConfigValidationError) as exc:
        print(f"fraclap: {exc}", file=sys.stderr)
        return 1
    except FraclapError as exc:
        print(f"fraclap: {exc}", file=sys.stderr)
        return 2
    for path in write_report(report, out_dir):
        print(path)
    print(f"verdict={'pass' if report.verdict else 'fail'} wall={report.meta['wall_clock']:.2f}s", file=sys.stderr)
    return 0 if report.verdict else 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
