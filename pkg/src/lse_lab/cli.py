"""Command line front end: ``lse-lab <command> --config run.yaml``.

Commands: simulate, dual, criteria, phase-scan, invariant, validate.
Exit codes: 0 success, 2 configuration error, 3 resource cap, 4 validation failure.
Progress goes to stderr; stdout carries short human-readable summaries.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict, dataclass, replace
from itertools import product
from typing import Optional, Sequence

import numpy as np
import yaml

from . import analytics, engine, oracle
from .lattice import SiteField
from .models import ModelError, ModelSpec
from .rng import replicate_seed

COMMANDS = ("simulate", "dual", "criteria", "phase-scan", "invariant", "validate")
EXIT_OK, EXIT_CONFIG, EXIT_CAP, EXIT_VALIDATION = 0, 2, 3, 4

_TOP_KEYS = {"command", "model", "T", "reps", "seed", "h_list", "window", "alpha", "scan",
             "output_path", "threads", "empirical"}
_MODEL_KEYS = {"kind", "d", "p", "q", "beta", "env", "rho"}
_SCAN_KEYS = {"axis", "min", "max", "steps"}
_SCAN_AXES = {
    "GOSP": ("p", "q"),
    "GOBP": ("p", "q"),
    "BCPP": ("p", "q"),
    "VM": ("p",),
    "DPRE": ("beta", "rho"),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScanAxis:
    axis: str
    min: float
    max: float
    steps: int

    def values(self) -> np.ndarray:
        return np.linspace(self.min, self.max, self.steps) if self.steps > 0 else np.empty(0)


@dataclass(frozen=True)
class RunConfig:
    command: str
    model: Optional[ModelSpec] = None
    T: int = 50
    reps: int = 1000
    seed: int = 0
    h_list: tuple = ()
    window: Optional[tuple] = None  # (lo, hi)
    alpha: float = 1.0
    scan: tuple = ()
    output_path: Optional[str] = None
    threads: Optional[int] = None
    empirical: bool = False

    def to_dict(self) -> dict:
        out = {
            "command": self.command,
            "T": self.T,
            "reps": self.reps,
            "seed": self.seed,
            "h_list": list(self.h_list),
            "alpha": self.alpha,
            "empirical": self.empirical,
            "scan": [asdict(a) for a in self.scan],
        }
        if self.model is not None:
            out["model"] = self.model.to_dict()
        if self.window is not None:
            out["window"] = {"lo": list(self.window[0]), "hi": list(self.window[1])}
        if self.output_path is not None:
            out["output_path"] = self.output_path
        if self.threads is not None:
            out["threads"] = self.threads
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


# -- parsing ----------------------------------------------------------------------------


def _reject_unknown(where: str, data: dict, allowed: set) -> None:
    extra = sorted(set(data) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(str, extra))}")


def _int(name: str, v, lo: int | None = None, hi: int | None = None) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
        if isinstance(v, float) and v.is_integer():
            v = int(v)
        else:
            raise ConfigError(f"{name}: expected an integer, got {v!r}")
    v = int(v)
    if lo is not None and v < lo:
        raise ConfigError(f"{name}: must be >= {lo}, got {v}")
    if hi is not None and v > hi:
        raise ConfigError(f"{name}: must be <= {hi}, got {v}")
    return v


def _real(name: str, v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name}: expected a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigError(f"{name}: must be finite")
    return v


def _model(data, fill: dict | None = None) -> ModelSpec:
    """``fill`` supplies values for parameters that are scanned over."""
    if not isinstance(data, dict):
        raise ConfigError("model: expected a mapping")
    _reject_unknown("model", data, _MODEL_KEYS)
    if "kind" not in data or "d" not in data:
        raise ConfigError("model: 'kind' and 'd' are required")
    data = {**(fill or {}), **data}
    kw = {"kind": str(data["kind"]), "d": _int("model.d", data["d"], 1, 32)}
    for k in ("p", "q", "beta", "rho"):
        if k in data:
            kw[k] = _real(f"model.{k}", data[k])
    if "env" in data:
        kw["env"] = str(data["env"])
    try:
        return ModelSpec(**kw)
    except ModelError as e:
        raise ConfigError(f"model.{e}") from None


def _scan(data, m: Optional[ModelSpec]) -> tuple:
    if data is None:
        return ()
    if isinstance(data, dict):
        data = [data]
    if not isinstance(data, list):
        raise ConfigError("scan: expected a mapping or a list of mappings")
    axes = []
    for i, a in enumerate(data):
        where = f"scan[{i}]"
        if not isinstance(a, dict):
            raise ConfigError(f"{where}: expected a mapping")
        _reject_unknown(where, a, _SCAN_KEYS)
        missing = _SCAN_KEYS - set(a)
        if missing:
            raise ConfigError(f"{where}: missing key(s) {', '.join(sorted(missing))}")
        ax = ScanAxis(str(a["axis"]), _real(f"{where}.min", a["min"]), _real(f"{where}.max", a["max"]),
                      _int(f"{where}.steps", a["steps"], 0))
        if m is not None:
            legal = _SCAN_AXES[m.kind]
            if m.kind == "DPRE" and m.env == "gaussian":
                legal = ("beta",)
            if ax.axis not in legal:
                raise ConfigError(f"{where}.axis: {ax.axis!r} is not a parameter of {m.kind} "
                                  f"(allowed: {', '.join(legal)})")
        if ax.min > ax.max:
            raise ConfigError(f"{where}: min must not exceed max")
        axes.append(ax)
    names = [a.axis for a in axes]
    if len(set(names)) != len(names):
        raise ConfigError("scan: repeated axis")
    return tuple(axes)


def parse_config(text: str, command: str | None = None) -> RunConfig:
    """Parse and validate a YAML run configuration.

    ``command`` (the subcommand) fills or must agree with the document's
    ``command`` key.
    """
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
        raise ConfigError(f"parse error: {where}{getattr(e, 'problem', None) or e}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("parse error: top level must be a mapping")
    _reject_unknown("config", data, _TOP_KEYS)
    cmd = data.get("command", command)
    if command is not None and cmd != command:
        raise ConfigError(f"command: config says {cmd!r} but {command!r} was requested")
    if cmd not in COMMANDS:
        raise ConfigError(f"command: must be one of {', '.join(COMMANDS)}, got {cmd!r}")
    fill = {}
    if isinstance(data.get("scan"), (dict, list)):
        raw = data["scan"] if isinstance(data["scan"], list) else [data["scan"]]
        fill = {a["axis"]: a["min"] for a in raw
                if isinstance(a, dict) and a.get("axis") in ("p", "q", "beta", "rho") and "min" in a}
    m = _model(data["model"], fill) if "model" in data else None
    if m is None and cmd != "validate":
        raise ConfigError("model: required for command " + cmd)
    T = _int("T", data.get("T", 50), 0, 10**6)
    reps = _int("reps", data.get("reps", 1000), 2)
    seed = _int("seed", data.get("seed", 0), 0, 2**64 - 1)
    h_list = data.get("h_list", [])
    if not isinstance(h_list, list):
        raise ConfigError("h_list: expected a list of exponents")
    h_list = tuple(_real("h_list", h) for h in h_list)
    if any(h <= 0 for h in h_list):
        raise ConfigError("h_list: exponents must be positive")
    window = None
    if "window" in data:
        w = data["window"]
        if not isinstance(w, dict):
            raise ConfigError("window: expected a mapping with lo and hi")
        _reject_unknown("window", w, {"lo", "hi"})
        try:
            lo = tuple(_int("window.lo", c) for c in w["lo"])
            hi = tuple(_int("window.hi", c) for c in w["hi"])
        except (KeyError, TypeError):
            raise ConfigError("window: lo and hi must be integer lists") from None
        if m is not None and (len(lo) != m.d or len(hi) != m.d):
            raise ConfigError(f"window: lo and hi must have {m.d} coordinates")
        if any(a > b for a, b in zip(lo, hi)):
            raise ConfigError("window: lo must not exceed hi")
        window = (lo, hi)
    if cmd == "invariant" and window is None:
        raise ConfigError("window: required for command invariant")
    alpha = _real("alpha", data.get("alpha", 1.0))
    if alpha < 0:
        raise ConfigError("alpha: must be nonnegative")
    scan = _scan(data.get("scan"), m)
    if cmd == "phase-scan" and not scan:
        raise ConfigError("scan: required for command phase-scan")
    out = data.get("output_path")
    if out is not None and not isinstance(out, str):
        raise ConfigError("output_path: expected a string")
    threads = data.get("threads")
    if threads is not None:
        threads = _int("threads", threads, 1, 1024)
    empirical = data.get("empirical", False)
    if not isinstance(empirical, bool):
        raise ConfigError("empirical: expected true or false")
    return RunConfig(cmd, m, T, reps, seed, h_list, window, alpha, scan, out, threads, empirical)


# -- commands -------------------------------------------------------------------------


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def _write(path: Optional[str], text: str) -> None:
    if path is None:
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _simulate(cfg: RunConfig, direction: str) -> int:
    m = cfg.model
    init = SiteField.delta(m.d)
    _progress(f"{direction}: {m.label}, T={cfg.T}, {cfg.reps} replicates")
    ens = engine.run_ensemble(m, init, cfg.T, cfg.reps, cfg.seed, direction, cfg.threads)
    _write(cfg.output_path, engine.dumps_jsonl(ens.records()))
    st = engine.ensemble_stats(m, init, cfg.T, cfg.reps, cfg.seed, cfg.h_list, direction, ensemble=ens)
    print(f"{m.label} {direction} T={cfg.T} reps={cfg.reps}")
    print(f"  E|N_T|     = {st['mean']:.6g} +- {st['mean_se']:.2g}")
    print(f"  E|N_T|^2   = {st['second_moment']:.6g} +- {st['second_moment_se']:.2g}")
    for h, v in st["fractional_moments"].items():
        print(f"  E|N_T|^{h:<4}= {v['mean']:.6g} +- {v['se']:.2g}")
    print(f"  survival   = {st['survival_fraction']:.4f}")
    return EXIT_OK


def _criteria(cfg: RunConfig) -> int:
    _progress(f"criteria: {cfg.model.label}")
    rep = analytics.classify_phase(cfg.model)
    print(format_report(rep))
    _write(cfg.output_path, rep.to_json() + "\n")
    return EXIT_OK


def format_report(rep: "analytics.PhaseReport") -> str:
    lines = [f"{rep.model.label}: {rep.classification} ({rep.reason})",
             f"  {'criterion':<10}{'lhs':>14}{'rhs':>14}{'error':>11}  verdict       method"]
    for r in (rep.l2, rep.dual_l2, rep.entropy):
        lines.append(f"  {r.name:<10}{r.lhs:>14.8g}{r.rhs:>14.8g}{r.error_bound:>11.2e}  "
                     f"{r.verdict:<13} {r.method}")
    lines.append(f"  gamma     {'-' if rep.gamma is None else f'{rep.gamma:.8g}'}")
    if rep.h_star is not None:
        lines.append(f"  h*        {rep.h_star:.6f}  phi(h*) = {rep.phi_star:.8g}")
    return "\n".join(lines)


SCAN_COLUMNS = ("cell", "kind", "d", "p", "q", "beta", "rho", "classification", "rate",
                "l2_lhs", "l2_verdict", "dual_l2_lhs", "dual_l2_verdict",
                "entropy_lhs", "entropy_rhs", "entropy_verdict", "gamma", "h_star", "phi_star",
                "survival_fraction", "second_moment", "second_moment_se", "error")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def phase_scan(cfg: RunConfig, sink=None, threads: Optional[int] = None) -> list[dict]:
    """One row per grid cell (row-major over the scan axes), written to ``sink``
    as CSV as soon as it is computed.  Errors are kept in the row."""
    writer = csv.writer(sink, lineterminator="\n") if sink is not None else None
    if writer:
        writer.writerow(SCAN_COLUMNS)
    grids = [ax.values() for ax in cfg.scan]
    cells = list(product(*grids)) if all(len(g) for g in grids) else []
    rows = []
    for i, vals in enumerate(cells):
        changes = {ax.axis: float(v) for ax, v in zip(cfg.scan, vals)}
        row = {c: None for c in SCAN_COLUMNS}
        row["cell"] = i
        _progress(f"phase-scan cell {i + 1}/{len(cells)}: {changes}")
        try:
            m = cfg.model.replace(**changes)
            row.update(kind=m.kind, d=m.d, p=m.p, q=m.q, beta=m.beta, rho=m.rho)
            rep = analytics.classify_phase(m)
            row.update(
                classification=rep.classification, rate=rep.rate,
                l2_lhs=rep.l2.lhs, l2_verdict=rep.l2.verdict,
                dual_l2_lhs=rep.dual_l2.lhs, dual_l2_verdict=rep.dual_l2.verdict,
                entropy_lhs=rep.entropy.lhs, entropy_rhs=rep.entropy.rhs,
                entropy_verdict=rep.entropy.verdict, gamma=rep.gamma,
                h_star=rep.h_star, phi_star=rep.phi_star)
            if cfg.empirical:
                st = engine.ensemble_stats(m, SiteField.delta(m.d), cfg.T, cfg.reps,
                                           replicate_seed(cfg.seed, i), threads=threads)
                row.update(survival_fraction=st["survival_fraction"],
                           second_moment=st["second_moment"],
                           second_moment_se=st["second_moment_se"])
        except (ModelError, analytics.ConvergenceError, engine.ResourceCapError, ValueError) as e:
            row["error"] = f"{type(e).__name__}: {e}"
        rows.append(row)
        if writer:
            writer.writerow([_fmt(row[c]) for c in SCAN_COLUMNS])
            sink.flush()
    return rows


def _phase_scan(cfg: RunConfig) -> int:
    if cfg.output_path is not None:
        with open(cfg.output_path, "w", encoding="utf-8", newline="") as fh:
            rows = phase_scan(cfg, fh, cfg.threads)
    else:
        rows = phase_scan(cfg, None, cfg.threads)
    counts: dict[str, int] = {}
    for r in rows:
        key = r["classification"] or "error"
        counts[key] = counts.get(key, 0) + 1
    print(f"phase-scan {cfg.model.label}: {len(rows)} cells, " +
          ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    return EXIT_OK


def _invariant(cfg: RunConfig) -> int:
    m = cfg.model
    _progress(f"invariant: {m.label}, alpha={cfg.alpha}, T={cfg.T}, {cfg.reps} replicates")
    means = engine.window_means(m, cfg.alpha, cfg.window, cfg.T, cfg.reps, cfg.seed, cfg.threads)
    recs = [{"model": m.kind, "params": m.to_dict(), "replicate": r,
             "seed": replicate_seed(cfg.seed, r), "T": cfg.T, "alpha": cfg.alpha,
             "window_lo": list(cfg.window[0]), "window_hi": list(cfg.window[1]),
             "window_mean": float(v)} for r, v in enumerate(means)]
    _write(cfg.output_path, engine.dumps_jsonl(recs))
    mu, se = engine.mean_se(means)
    print(f"{m.label} invariant window mean at T={cfg.T}: {mu:.6g} +- {se:.2g} (alpha={cfg.alpha:g})")
    return EXIT_OK


def _validate(cfg: RunConfig) -> int:
    checks = oracle.validation_suite(cfg.seed, min(cfg.reps, 10**6), cfg.threads, _progress)
    failed = [c for c in checks if not c["passed"]]
    report = {"passed": not failed, "n_checks": len(checks), "n_failed": len(failed), "checks": checks}
    _write(cfg.output_path, json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n")
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['check']}  {c.get('model', '')}")
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_VALIDATION if failed else EXIT_OK


def run(cfg: RunConfig) -> int:
    cmd = cfg.command
    if cmd in ("simulate", "dual"):
        return _simulate(cfg, engine.FORWARD if cmd == "simulate" else engine.DUAL)
    if cmd == "criteria":
        return _criteria(cfg)
    if cmd == "phase-scan":
        return _phase_scan(cfg)
    if cmd == "invariant":
        return _invariant(cfg)
    return _validate(cfg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lse-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH", help="YAML run configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--threads", type=int, help="worker threads (default: LSE_LAB_THREADS or 1)")
        p.add_argument("--out", metavar="PATH", help="output file (overrides output_path)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = ""
        if args.config:
            try:
                with open(args.config, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as e:
                raise ConfigError(f"config: cannot read {args.config}: {e.strerror}") from None
        cfg = parse_config(text, args.command)
        changes = {}
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed: must lie in [0, 2^64)")
            changes["seed"] = args.seed
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("threads: must be >= 1")
            changes["threads"] = args.threads
        if args.out is not None:
            changes["output_path"] = args.out
        cfg = replace(cfg, **changes)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run(cfg)
    except (engine.ResourceCapError, analytics.ConvergenceError) as e:
        print(f"resource cap: {e}", file=sys.stderr)
        return EXIT_CAP


if __name__ == "__main__":
    sys.exit(main())
