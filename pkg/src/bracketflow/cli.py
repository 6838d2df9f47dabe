"""Command-line front end: curvature reports, flow runs, grid sweeps,
identity audits and the flow-equivalence check.

Artifacts are CSV tables plus JSON sidecar manifests.  CSV floats are
printed with 17 significant digits and rows are assembled in a fixed order,
so identical configurations produce byte-identical files.  Exit codes:
0 success, 2 invalid point, 3 malformed input, 4 validity drift,
5 equivalence failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import analysis, families, flow
from .core import (
    InvalidPointError,
    MalformedInputError,
    bracket_from_json,
    validate_point,
)
from .curvature import curvature_report
from .flow import (
    EventConfig,
    Normalization,
    NormalizationError,
    ValidityDriftError,
)

_STRATEGIES = {
    "none": flow.UNNORMALIZED,
    "volume": flow.VOLUME,
    "scalar-curvature": flow.SCALAR_CURVATURE,
    "bracket-norm": flow.BRACKET_NORM,
    "ricci-norm": flow.RICCI_NORM,
}

EXIT_OK = 0
EXIT_INVALID_POINT = 2
EXIT_MALFORMED = 3
EXIT_DRIFT = 4
EXIT_EQUIV_FAIL = 5


def fmt17(x: float) -> str:
    if isinstance(x, float) and np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(float(x), ".17g")


def _dump_json(obj, path: str | None, stream=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if stream is not None:
        stream.write(text)
    if path is not None:
        with open(path, "w", newline="\n") as f:
            f.write(text)


@dataclass
class Source:
    """Resolved seed: a validated point and/or a reduced family handle."""

    point: object | None
    family: object | None
    params: np.ndarray | None
    label: str


def _parse_params(text: str) -> list[float]:
    try:
        return [float(p) for p in text.split(",") if p != ""]
    except ValueError as exc:
        raise MalformedInputError(f"bad --params value {text!r}") from exc


def _parse_span(text: str) -> tuple[float, float]:
    try:
        lo, hi = text.split(":")
        return float(lo), float(hi)
    except ValueError as exc:
        raise MalformedInputError(f"bad --t-span value {text!r} (want a:b)") from exc


def _resolve_source(cfg: dict) -> Source:
    fam_name = cfg.get("family")
    seed = cfg.get("seed")
    if (fam_name is None) == (seed is None):
        raise MalformedInputError("exactly one of --family/--seed is required")
    if seed is not None:
        if cfg.get("seed_format", "json") != "json":
            raise MalformedInputError("only --seed-format json is supported")
        text = seed
        if not seed.lstrip().startswith("{"):
            try:
                with open(seed) as f:
                    text = f.read()
            except OSError as exc:
                raise MalformedInputError(f"cannot read seed file {seed}: {exc}") from exc
        mu = bracket_from_json(text)
        return Source(point=validate_point(mu), family=None, params=None, label="inline")

    params = cfg.get("params")
    if params is None:
        raise MalformedInputError("--family requires --params")
    params = [float(p) for p in params]
    if fam_name == "semisimple":
        if len(params) != 4:
            raise MalformedInputError("semisimple takes params a,b,h,m")
        a, b, h_dim, m_dim = params
        try:
            fam = families.get_family("semisimple", h_dim=int(h_dim), m_dim=int(m_dim))
        except ValueError as exc:
            raise MalformedInputError(str(exc)) from exc
        params = [a, b]
    else:
        try:
            fam = families.get_family(fam_name)
        except ValueError as exc:
            raise MalformedInputError(str(exc)) from exc
        if len(params) != len(fam.param_names):
            raise MalformedInputError(
                f"family {fam_name} takes params {','.join(fam.param_names)}"
            )
    point = None
    try:
        point = validate_point(fam.embed(params), h2_status="known-by-construction")
    except families.NoRealizationError:
        point = None
    label = f"{fam_name}({','.join(fmt17(p) for p in params)})"
    return Source(point=point, family=fam, params=np.asarray(params, float), label=label)


def _strategy(cfg: dict) -> Normalization:
    kind = cfg.get("normalization", "none")
    if kind not in _STRATEGIES:
        raise MalformedInputError(f"unknown normalization {kind!r}")
    return _STRATEGIES[kind]


def _events(cfg: dict) -> EventConfig:
    return EventConfig(
        blowup_norm=float(cfg.get("blowup_threshold", 1e6)),
        conv_tangent=float(cfg.get("conv_threshold", 1e-10)),
        conv_window=int(cfg.get("conv_window", 8)),
        drift_factor=float(cfg.get("drift_factor", 1e3)),
    )


def _tolerances(cfg: dict) -> tuple[float, float]:
    rtol = float(cfg.get("tol", 1e-9))
    atol = float(cfg.get("atol", rtol * 1e-3))
    if rtol <= 0 or atol <= 0:
        raise MalformedInputError("tolerances must be positive")
    return rtol, atol


def _row_diagnostics(traj, i) -> tuple[float, float, float, float, float]:
    """(R, |Ric|, |mu_p|^2, |H|^2, tr B) at sample i, closed-form fallback."""
    try:
        rep = traj.curvature_at(i)
        mu = traj.bracket_at(i)
        mu_p2 = float(np.sum(mu.mu_p**2))
        return (
            rep.R,
            float(np.linalg.norm(rep.Ric)),
            mu_p2,
            float(rep.H @ rep.H),
            float(np.trace(rep.B)),
        )
    except families.NoRealizationError:
        fam = traj.system.family
        p = traj.states[i]
        ric = fam.ricci_diag(p)
        return (
            float(np.sum(ric)),
            float(np.linalg.norm(ric)),
            fam.mu_p_norm2(p),
            0.0,
            float(np.sum(fam.killing_diag(p))),
        )


def write_trajectory_csv(traj, path: str) -> list[str]:
    state_cols = list(traj.system.param_names)
    header = ["t", "c", "tau", "R", "ric_norm", "mu_p_norm2", "H_norm2", "trB"] + state_cols
    lines = [",".join(header)]
    for i in range(traj.n_samples):
        r, ric_norm, mu_p2, h2, tr_b = _row_diagnostics(traj, i)
        row = [
            traj.times[i],
            traj.c[i],
            traj.tau[i],
            r,
            ric_norm,
            mu_p2,
            h2,
            tr_b,
            *traj.states[i],
        ]
        lines.append(",".join(fmt17(v) for v in row))
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    return state_cols


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as f:
            obj = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedInputError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedInputError("config document must be a JSON object")
    return obj


def _merge_config(args: argparse.Namespace) -> dict:
    """File config first, explicit command-line flags override."""
    cfg = _load_config(args.config)
    for key, value in vars(args).items():
        if key in ("config", "command") or value is None:
            continue
        cfg[key] = value
    if isinstance(cfg.get("params"), str):
        cfg["params"] = _parse_params(cfg["params"])
    if isinstance(cfg.get("t_span"), str):
        cfg["t_span"] = _parse_span(cfg["t_span"])
    return cfg


# ---------------------------------------------------------------------------
# Subcommands.


def cmd_ricci(cfg: dict) -> int:
    src = _resolve_source(cfg)
    if src.point is not None:
        if not src.point.valid:
            report = {
                "valid": False,
                "validation": src.point.report.as_dict(),
                "h2_status": src.point.h2_status,
            }
            _dump_json(report, _outpath(cfg, "ricci.json"), sys.stdout)
            return EXIT_INVALID_POINT
        rep = curvature_report(src.point)
        doc = rep.as_dict()
        doc.update(
            {
                "valid": True,
                "validation": src.point.report.as_dict(),
                "h2_status": src.point.h2_status,
                "source": src.label,
            }
        )
    else:
        rep = src.family.closed_report(src.params)
        doc = rep.as_dict()
        doc.update({"valid": True, "realization": "closed-form", "source": src.label})
    _dump_json(doc, _outpath(cfg, "ricci.json"), sys.stdout)
    return EXIT_OK


def _outpath(cfg: dict, name: str) -> str | None:
    out = cfg.get("out")
    if out is None:
        return None
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, name)


def _run_flow_from_cfg(cfg: dict, src: Source):
    strategy = _strategy(cfg)
    t_span = cfg.get("t_span", (0.0, 1.0))
    rtol, atol = _tolerances(cfg)
    samples = int(cfg.get("samples", 200))
    events = _events(cfg)

    if strategy.kind == "ricci-norm":
        if src.point is None:
            raise MalformedInputError("ricci-norm needs a realizable seed")
        base = flow.integrate(
            src.point, flow.UNNORMALIZED, t_span,
            rtol=rtol, atol=atol, samples=samples, events=events,
        )
        return flow.rescale_to_ricci_norm(base, samples=samples)

    if src.point is not None:
        return flow.integrate(
            src.point, strategy, t_span,
            rtol=rtol, atol=atol, samples=samples, events=events,
        )
    return flow.integrate_reduced(
        src.family, src.params, strategy, t_span,
        rtol=rtol, atol=atol, samples=samples, events=events,
    )


def cmd_flow(cfg: dict) -> int:
    src = _resolve_source(cfg)
    if src.point is not None and not src.point.valid:
        print("seed point failed validation", file=sys.stderr)
        return EXIT_INVALID_POINT
    out_csv = _outpath(cfg, "flow.csv") or "flow.csv"
    out_json = _outpath(cfg, "flow.json") or "flow.json"
    try:
        traj = _run_flow_from_cfg(cfg, src)
    except ValidityDriftError as exc:
        if exc.trajectory is not None:
            state_cols = write_trajectory_csv(exc.trajectory, out_csv)
            manifest = _manifest(cfg, src, exc.trajectory, state_cols)
            manifest["error"] = str(exc)
            _dump_json(manifest, out_json)
        print(f"validity drift: {exc}", file=sys.stderr)
        return EXIT_DRIFT
    state_cols = write_trajectory_csv(traj, out_csv)
    manifest = _manifest(cfg, src, traj, state_cols)
    verdict = analysis.classify_limit(traj, **_classify_tols(cfg))
    manifest["classification"] = verdict.as_dict()
    _dump_json(manifest, out_json)
    print(f"{traj.termination}: {traj.n_samples} samples -> {out_csv}")
    return EXIT_OK


def _classify_tols(cfg: dict) -> dict:
    return {
        "flat_tol": float(cfg.get("flat_tol", 1e-6)),
        "einstein_tol": float(cfg.get("einstein_tol", 1e-6)),
        "soliton_tol": float(cfg.get("soliton_tol", 1e-6)),
        "zero_tol": float(cfg.get("zero_tol", 1e-6)),
    }


def _manifest(cfg: dict, src: Source, traj, state_cols: list[str]) -> dict:
    rtol, atol = _tolerances(cfg)
    return {
        "source": src.label,
        "strategy": traj.strategy.kind,
        "rtol": rtol,
        "atol": atol,
        "events": {
            "blowup_threshold": _events(cfg).blowup_norm,
            "conv_threshold": _events(cfg).conv_tangent,
            "conv_window": _events(cfg).conv_window,
            "drift_factor": _events(cfg).drift_factor,
        },
        "state_columns": state_cols,
        "run": traj.describe(),
        "termination": traj.termination,
    }


def _parse_grid(text: str) -> list[tuple[str, float, float, int]]:
    axes = []
    for part in text.split(","):
        try:
            name, rng = part.split("=")
            lo, hi, count = rng.split(":")
            axes.append((name.strip(), float(lo), float(hi), int(count)))
        except ValueError as exc:
            raise MalformedInputError(
                f"bad --grid component {part!r} (want name=lo:hi:count)"
            ) from exc
    if len(axes) != 2:
        raise MalformedInputError("--grid must sweep exactly two parameters")
    return axes


def _sweep_cell(task: dict) -> dict:
    fam = families.get_family(task["family"], **task.get("context", {}))
    params = np.asarray(task["params"], dtype=float)
    strategy = _STRATEGIES[task["strategy"]]
    events = EventConfig(**task["events"])
    system = flow.ReducedFlowSystem(fam, params, strategy)
    row = {"params": [float(p) for p in params]}
    try:
        tangent, _ = system.tangent(params)
        row["rhs"] = [float(v) for v in tangent]
    except NormalizationError as exc:
        row["rhs"] = [float("nan")] * len(params)
        row["verdict"] = "normalization-error"
        row["termination"] = "not-run"
        row["final"] = row["params"]
        row["note"] = str(exc)
        return row
    try:
        traj = flow.integrate_reduced(
            fam, params, strategy, tuple(task["t_span"]),
            rtol=task["rtol"], atol=task["atol"], samples=task["samples"],
            events=events,
        )
        verdict = analysis.classify_limit(traj, **task["classify"])
        row["verdict"] = verdict.verdict
        row["termination"] = traj.termination
        row["final"] = [float(v) for v in traj.states[-1]]
    except NormalizationError as exc:
        row["verdict"] = "normalization-error"
        row["termination"] = "not-run"
        row["final"] = row["params"]
        row["note"] = str(exc)
    return row


def cmd_sweep(cfg: dict) -> int:
    if cfg.get("family") is None:
        raise MalformedInputError("sweep requires --family")
    src = _resolve_source(cfg)
    fam = src.family
    grid = _parse_grid(cfg.get("grid", ""))
    (n1, lo1, hi1, c1), (n2, lo2, hi2, c2) = grid
    names = list(fam.param_names)
    if n1 not in names or n2 not in names:
        raise MalformedInputError(
            f"grid parameters must be among {names} for family {fam.name}"
        )
    base = {name: float(v) for name, v in zip(names, src.params)}
    axis1 = np.linspace(lo1, hi1, c1)
    axis2 = np.linspace(lo2, hi2, c2)

    rtol, atol = _tolerances(cfg)
    tasks = []
    for v1 in axis1:
        for v2 in axis2:
            values = dict(base)
            values[n1] = float(v1)
            values[n2] = float(v2)
            tasks.append(
                {
                    "family": fam.name,
                    "context": fam.context(),
                    "params": [values[n] for n in names],
                    "strategy": _strategy(cfg).kind,
                    "t_span": list(cfg.get("t_span", (0.0, 10.0))),
                    "rtol": rtol,
                    "atol": atol,
                    "samples": int(cfg.get("samples", 60)),
                    "events": {
                        "blowup_norm": _events(cfg).blowup_norm,
                        "conv_tangent": _events(cfg).conv_tangent,
                        "conv_window": _events(cfg).conv_window,
                        "drift_factor": _events(cfg).drift_factor,
                    },
                    "classify": _classify_tols(cfg),
                }
            )

    jobs = int(cfg.get("jobs", 0)) or (os.cpu_count() or 1)
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_cell, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        rows = [_sweep_cell(t) for t in tasks]

    out_csv = _outpath(cfg, "sweep.csv") or "sweep.csv"
    out_json = _outpath(cfg, "sweep.json") or "sweep.json"
    header = (
        names
        + [f"rhs_{n}" for n in names]
        + ["termination", "verdict"]
        + [f"final_{n}" for n in names]
    )
    lines = [",".join(header)]
    for row in rows:
        cells = [fmt17(v) for v in row["params"]]
        cells += [fmt17(v) for v in row["rhs"]]
        cells += [row["termination"], row["verdict"]]
        cells += [fmt17(v) for v in row["final"]]
        lines.append(",".join(cells))
    with open(out_csv, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    manifest = {
        "family": fam.name,
        "context": fam.context(),
        "grid": {n1: [lo1, hi1, c1], n2: [lo2, hi2, c2]},
        "strategy": _strategy(cfg).kind,
        "t_span": list(cfg.get("t_span", (0.0, 10.0))),
        "rtol": rtol,
        "atol": atol,
        "cells": len(rows),
        "columns": header,
    }
    _dump_json(manifest, out_json)
    print(f"swept {len(rows)} cells -> {out_csv}")
    return EXIT_OK


def cmd_check(cfg: dict) -> int:
    src = _resolve_source(cfg)
    if src.point is not None and not src.point.valid:
        print("seed point failed validation", file=sys.stderr)
        return EXIT_INVALID_POINT
    try:
        traj = _run_flow_from_cfg(cfg, src)
    except ValidityDriftError as exc:
        print(f"validity drift: {exc}", file=sys.stderr)
        return EXIT_DRIFT
    audit = analysis.identity_audit(traj)
    tol = float(cfg.get("audit_tol", 1e-4))
    doc = audit.as_dict()
    doc["tolerance"] = tol
    doc["passed"] = audit.passed(tol)
    _dump_json(doc, _outpath(cfg, "check.json"), sys.stdout)
    return EXIT_OK if audit.passed(tol) else 1


def cmd_equiv(cfg: dict) -> int:
    src = _resolve_source(cfg)
    if src.point is None:
        raise MalformedInputError("equiv needs a seed with a tensor realization")
    if not src.point.valid:
        print("seed point failed validation", file=sys.stderr)
        return EXIT_INVALID_POINT
    rtol, atol = _tolerances(cfg)
    report = flow.equivalence_report(
        src.point,
        cfg.get("t_span", (0.0, 0.3)),
        rtol=rtol,
        atol=atol,
        samples=int(cfg.get("samples", 601)),
    )
    threshold = float(cfg.get("threshold", 1e-6))
    doc = report.as_dict()
    doc["threshold"] = threshold
    ok = report.max_bracket_dev <= threshold and report.max_metric_dev <= threshold
    doc["passed"] = ok
    _dump_json(doc, _outpath(cfg, "equiv.json"), sys.stdout)
    return EXIT_OK if ok else EXIT_EQUIV_FAIL


# ---------------------------------------------------------------------------
# Argument parsing.


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override it")
    common.add_argument("--out", help="output directory for artifacts")
    common.add_argument("--tol", type=float, dest="tol", help="relative integrator tolerance")
    common.add_argument("--atol", type=float, help="absolute integrator tolerance")
    common.add_argument("--seed-format", dest="seed_format", choices=["json"])
    common.add_argument("--family", choices=sorted(_FAMILY_CHOICES))
    common.add_argument("--params", help="comma-separated family parameters")
    common.add_argument("--seed", help="bracket JSON (inline or a file path)")
    common.add_argument(
        "--normalization",
        choices=sorted(_STRATEGIES),
        help="normalization strategy (default none)",
    )
    common.add_argument("--t-span", dest="t_span", help="integration span a:b")
    common.add_argument("--samples", type=int, help="number of stored samples")
    common.add_argument("--blowup-threshold", dest="blowup_threshold", type=float)
    common.add_argument("--conv-threshold", dest="conv_threshold", type=float)
    common.add_argument("--conv-window", dest="conv_window", type=int)
    common.add_argument("--drift-factor", dest="drift_factor", type=float)
    common.add_argument("--flat-tol", dest="flat_tol", type=float)
    common.add_argument("--einstein-tol", dest="einstein_tol", type=float)
    common.add_argument("--soliton-tol", dest="soliton_tol", type=float)
    common.add_argument("--zero-tol", dest="zero_tol", type=float)

    parser = argparse.ArgumentParser(
        prog="bracketflow",
        description="Curvature and Ricci-flow computations on homogeneous brackets",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ricci", parents=[common], help="curvature report of one point")
    sub.add_parser("flow", parents=[common], help="integrate a flow, emit CSV + manifest")
    sweep = sub.add_parser("sweep", parents=[common], help="classify a parameter grid")
    sweep.add_argument("--grid", help="two axes, e.g. a=0:2:21,b=-1:2:31")
    sweep.add_argument("--jobs", type=int, help="worker processes (default: cores)")
    check = sub.add_parser("check", parents=[common], help="audit evolution identities")
    check.add_argument("--audit-tol", dest="audit_tol", type=float)
    equiv = sub.add_parser("equiv", parents=[common], help="verify flow equivalence")
    equiv.add_argument("--threshold", type=float, help="max allowed deviation")
    return parser


_FAMILY_CHOICES = ("unimodular3", "berger3", "semisimple", "semisimple-su2")

_COMMANDS = {
    "ricci": cmd_ricci,
    "flow": cmd_flow,
    "sweep": cmd_sweep,
    "check": cmd_check,
    "equiv": cmd_equiv,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _merge_config(args)
        return _COMMANDS[args.command](cfg)
    except MalformedInputError as exc:
        print(f"malformed input: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except InvalidPointError as exc:
        print(f"invalid point: {exc}", file=sys.stderr)
        return EXIT_INVALID_POINT
    except ValidityDriftError as exc:
        print(f"validity drift: {exc}", file=sys.stderr)
        return EXIT_DRIFT


if __name__ == "__main__":
    sys.exit(main())
