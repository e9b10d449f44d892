"""Forward and dual evolution of normalized fields, and replicate ensembles.

The stored field is N_t / |a|^t divided by exp(log_scale); powers of two are
factored into ``log_scale`` whenever the largest entry leaves [2^-64, 2^64].
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .lattice import SiteField
from .models import ModelSpec, mean_kernel
from .rng import replicate_seed, seed_from, trajectory_key

FORWARD, DUAL = "forward", "dual"
DEFAULT_SUPPORT_CAP = 10**7
DEFAULT_GRID_CAP = 6 * 10**7


class ResourceCapError(RuntimeError):
    """Support or grid size exceeded; ``partial`` holds what was computed."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class EvolutionState:
    t: int
    field: SiteField
    log_scale: float = 0.0
    direction: str = FORWARD

    @classmethod
    def initial(cls, init: SiteField, direction: str = FORWARD) -> "EvolutionState":
        return cls(0, init, 0.0, direction)

    def norm(self) -> tuple[float, float]:
        """|N̄_t| as (mantissa, log): value = mantissa * exp(log)."""
        return self.field.l1_norm(), self.log_scale

    def raw_field(self, a_total: float) -> SiteField:
        return self.field.scale(math.exp(self.log_scale) * a_total**self.t)


@dataclass
class TrajectoryStats:
    model: ModelSpec
    seed: int
    direction: str
    norm_mantissa: np.ndarray
    norm_log: np.ndarray
    occupied: np.ndarray
    extinction_time: int | None
    profile_snapshots: dict = field(default_factory=dict)
    final: EvolutionState | None = None

    @property
    def T(self) -> int:
        return len(self.norm_mantissa) - 1

    def log_norm(self) -> np.ndarray:
        """log |N̄_t|, -inf after extinction."""
        with np.errstate(divide="ignore"):
            return np.log(self.norm_mantissa) + self.norm_log

    def norm(self) -> np.ndarray:
        return self.norm_mantissa * np.exp(self.norm_log)

    def records(self) -> list[dict]:
        out = []
        for t in range(self.T + 1):
            out.append(self._record(t))
        return out

    def final_record(self) -> dict:
        return self._record(self.T)

    def _record(self, t: int) -> dict:
        return {
            "model": self.model.kind,
            "params": self.model.to_dict(),
            "direction": self.direction,
            "seed": self.seed,
            "t": t,
            "norm_mantissa": float(self.norm_mantissa[t]),
            "norm_log": float(self.norm_log[t]),
            "occupied": int(self.occupied[t]),
            "extinct_at": self.extinction_time,
        }


def _check_dim(m: ModelSpec, f: SiteField):
    if f.dim != m.d:
        raise ValueError(f"field dimension {f.dim} does not match model dimension {m.d}")


def _evolve(m, field_, log_scale, t0, T, key, direction, *, reverse_T=0,
            cap=DEFAULT_SUPPORT_CAP, grid_cap=DEFAULT_GRID_CAP, cone=None):
    """``field_`` is a SiteField or a (coords, values) pair."""
    _, atot = mean_kernel(m)
    coords, vals = field_.to_arrays() if isinstance(field_, SiteField) else field_
    if cone is None:
        use_cone, lo, hi, cT = False, np.zeros(m.d, np.int64), np.zeros(m.d, np.int64), 0
    else:
        use_cone = True
        lo, hi, cT = np.asarray(cone[0], np.int64), np.asarray(cone[1], np.int64), int(cone[2])
    return K.evolve(m.code, m.d, m.kernel_params(), atot, np.uint64(key),
                    0 if direction == FORWARD else 1, int(reverse_T),
                    coords, vals, float(log_scale), int(t0), int(T), int(cap), int(grid_cap),
                    use_cone, lo, hi, cT)


def step(state: EvolutionState, m: ModelSpec, rng, *, cap: int = DEFAULT_SUPPORT_CAP) -> EvolutionState:
    """One step of the forward (N A) or dual (A M) evolution.

    ``rng`` is the trajectory seed (or a Generator to draw one from); the
    column at (t, y) is a function of (seed, t, y) only, so repeated calls to
    ``step`` reproduce ``run_trajectory`` with the same seed.
    """
    _check_dim(m, state.field)
    key = trajectory_key(seed_from(rng))
    status, norms, logs, occ, ext, t_end, coords, vals, ls = _evolve(
        m, state.field, state.log_scale, state.t, 1, key, state.direction, cap=cap)
    if status != K.OK:
        raise ResourceCapError(f"support cap {cap} exceeded at t={state.t + 1}", partial=state)
    return EvolutionState(state.t + 1, SiteField.from_arrays(coords, vals, m.d), ls, state.direction)


def run_trajectory(m: ModelSpec, init: SiteField, T: int, seed: int, direction: str = FORWARD, *,
                   snapshots: Iterable[int] = (), cap: int = DEFAULT_SUPPORT_CAP,
                   grid_cap: int = DEFAULT_GRID_CAP, keep_final: bool = False,
                   _reverse_time: bool = False) -> TrajectoryStats:
    """Run one trajectory for T steps, stopping early at extinction.

    ``snapshots`` lists times at which the profile rho_t = N_t / |N_t| is kept.
    Raises ``ResourceCapError`` with the partial ``TrajectoryStats`` attached
    when the support cap is exceeded.
    """
    _check_dim(m, init)
    if not init:
        raise ValueError("initial field must be nonempty")
    if direction not in (FORWARD, DUAL):
        raise ValueError(f"direction must be {FORWARD!r} or {DUAL!r}")
    key = trajectory_key(seed)
    wanted = {int(s) for s in snapshots if 0 <= int(s) <= T}
    mant = np.zeros(T + 1)
    logs = np.zeros(T + 1)
    occ = np.zeros(T + 1, np.int64)
    mant[0], occ[0] = init.l1_norm(), len(init)
    snaps = {0: init.scale(1.0 / init.l1_norm())} if 0 in wanted else {}
    cur, ls, t, ext = init, 0.0, 0, None
    for stop in sorted(wanted | {T}):
        if stop <= t:
            continue
        span = stop - t
        status, n_, l_, o_, e_, t_end, coords, vals, ls = _evolve(
            m, cur, ls, t, span, key, direction,
            reverse_T=T if _reverse_time else 0, cap=cap, grid_cap=grid_cap)
        mant[t:stop + 1] = n_
        logs[t:stop + 1] = l_
        occ[t:stop + 1] = o_
        if status != K.OK:
            n = t_end + 1
            partial = TrajectoryStats(m, int(seed), direction, mant[:n], logs[:n], occ[:n], None, snaps)
            what = "support" if status == K.CAP_EXCEEDED else "grid"
            raise ResourceCapError(f"{what} cap exceeded after t={t_end}", partial=partial)
        # the field stays in array form unless a snapshot or the final state needs it
        cur = (coords, vals)
        if e_ >= 0:
            ext = int(e_)
            logs[ext:] = ls
            break
        t = stop
        if stop in wanted:
            f = SiteField.from_arrays(coords, vals, m.d)
            snaps[stop] = f.scale(1.0 / f.l1_norm())
    final = None
    if keep_final:
        if not isinstance(cur, SiteField):
            cur = SiteField.from_arrays(cur[0], cur[1], m.d)
        final = EvolutionState(ext if ext is not None else T, cur, ls, direction)
    return TrajectoryStats(m, int(seed), direction, mant, logs, occ, ext, snaps, final)


# -- ensembles -------------------------------------------------------------------


@dataclass
class Ensemble:
    """Per-replicate series: log |N̄_t| (-inf when extinct) and occupied counts."""

    model: ModelSpec
    master_seed: int
    direction: str
    seeds: np.ndarray
    log_norms: np.ndarray  # (n_reps, T+1)
    occupied: np.ndarray
    extinction: np.ndarray  # -1 when alive at T

    @property
    def n_reps(self) -> int:
        return self.log_norms.shape[0]

    @property
    def T(self) -> int:
        return self.log_norms.shape[1] - 1

    def moment_samples(self, h: float, t: int | None = None) -> np.ndarray:
        t = self.T if t is None else t
        with np.errstate(over="ignore"):
            return np.exp(h * self.log_norms[:, t])

    def moment(self, h: float, t: int | None = None) -> tuple[float, float]:
        """(mean, standard error) of |N̄_t|^h over replicates."""
        return mean_se(self.moment_samples(h, t))

    def moment_curve(self, h: float) -> tuple[np.ndarray, np.ndarray]:
        vals = np.exp(h * self.log_norms)
        n = vals.shape[0]
        mean = np.array([math.fsum(col) / n for col in vals.T])
        se = vals.std(axis=0, ddof=1) / math.sqrt(n)
        return mean, se

    def survival_fraction(self, t: int | None = None) -> float:
        t = self.T if t is None else t
        return float(np.mean(np.isfinite(self.log_norms[:, t])))

    def records(self) -> Iterable[dict]:
        for r in range(self.n_reps):
            ln = self.log_norms[r, -1]
            mant, lg = (0.0, 0.0) if not np.isfinite(ln) else (1.0, float(ln))
            ext = int(self.extinction[r])
            yield {
                "model": self.model.kind,
                "params": self.model.to_dict(),
                "direction": self.direction,
                "replicate": r,
                "seed": int(self.seeds[r]),
                "t": self.T,
                "norm_mantissa": mant,
                "norm_log": lg,
                "occupied": int(self.occupied[r, -1]),
                "extinct_at": ext if ext >= 0 else None,
            }


def mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    n = len(x)
    mean = math.fsum(x) / n
    var = math.fsum((x - mean) ** 2) / (n - 1) if n > 1 else 0.0
    return mean, math.sqrt(var / n)


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("LSE_LAB_THREADS")
        threads = int(env) if env else 1
    return max(1, int(threads))


def _run_one(m, init, T, seed, direction, cap):
    key = trajectory_key(seed)
    status, n_, l_, o_, e_, t_end, *_ = _evolve(m, init, 0.0, 0, T, key, direction, cap=cap)
    if status != K.OK:
        raise ResourceCapError(f"cap exceeded in replicate with seed {seed} at t={t_end}")
    with np.errstate(divide="ignore"):
        ln = np.log(n_) + l_
    return ln, o_, e_


def run_ensemble(m: ModelSpec, init: SiteField, T: int, n_reps: int, master_seed: int,
                 direction: str = FORWARD, threads: int | None = None,
                 cap: int = DEFAULT_SUPPORT_CAP) -> Ensemble:
    """Replicate r uses ``replicate_seed(master_seed, r)``; results are
    placed by replicate index, so they do not depend on ``threads``."""
    _check_dim(m, init)
    if n_reps < 2:
        raise ValueError("n_reps must be at least 2")
    seeds = np.array([replicate_seed(master_seed, r) for r in range(n_reps)], dtype=np.uint64)
    log_norms = np.empty((n_reps, T + 1))
    occupied = np.empty((n_reps, T + 1), np.int64)
    extinction = np.empty(n_reps, np.int64)

    def work(chunk):
        for r in chunk:
            ln, o, e = _run_one(m, init, T, int(seeds[r]), direction, cap)
            log_norms[r] = ln
            occupied[r] = o
            extinction[r] = e

    nthreads = resolve_threads(threads)
    if nthreads == 1:
        work(range(n_reps))
    else:
        chunks = [range(i, n_reps, nthreads) for i in range(nthreads)]
        with ThreadPoolExecutor(nthreads) as pool:
            list(pool.map(work, chunks))
    return Ensemble(m, int(master_seed), direction, seeds, log_norms, occupied, extinction)


def ensemble_stats(m: ModelSpec, init: SiteField, T: int, n_reps: int, master_seed: int,
                   h_list: Sequence[float] = (), direction: str = FORWARD,
                   threads: int | None = None, ensemble: Ensemble | None = None) -> dict:
    """Summary of |N̄_T| over replicates: mean, second moment, fractional moments."""
    ens = ensemble or run_ensemble(m, init, T, n_reps, master_seed, direction, threads)
    mean, mean_se_ = ens.moment(1.0)
    second, second_se = ens.moment(2.0)
    frac = {}
    for h in h_list:
        mu, se = ens.moment(float(h))
        frac[f"{float(h):g}"] = {"mean": mu, "se": se}
    return {
        "model": m.kind,
        "params": m.to_dict(),
        "direction": ens.direction,
        "master_seed": int(master_seed),
        "T": ens.T,
        "n_reps": ens.n_reps,
        "mean": mean,
        "mean_se": mean_se_,
        "second_moment": second,
        "second_moment_se": second_se,
        "fractional_moments": frac,
        "survival_fraction": ens.survival_fraction(),
    }


# -- invariant measures ---------------------------------------------------------------


def sample_invariant_window(m: ModelSpec, alpha: float, window: tuple[Sequence[int], Sequence[int]],
                            T: int, seed: int, *, cap: int = DEFAULT_SUPPORT_CAP) -> SiteField:
    """alpha * N̄_T of the flat initial state, restricted to ``window`` = (lo, hi).

    Only sites within l1 distance T of the window can influence it, so the
    process is started from alpha on that neighbourhood and later steps skip
    sites outside the shrinking dependence cone; the window values equal those
    of the infinite flat initial state exactly.
    """
    lo, hi = tuple(window[0]), tuple(window[1])
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if alpha == 0:
        return SiteField.zero(m.d)
    grid = _l1_neighbourhood(lo, hi, T)
    init = (grid, np.full(len(grid), float(alpha)))
    key = trajectory_key(seed)
    status, n_, l_, o_, e_, t_end, coords, vals, ls = _evolve(
        m, init, 0.0, 0, T, key, FORWARD, cap=cap, cone=(lo, hi, T))
    if status != K.OK:
        raise ResourceCapError(f"cap exceeded in invariant sampler at t={t_end}")
    out = SiteField.from_arrays(coords, vals * math.exp(ls), m.d)
    return out.restrict(lo, hi)


@lru_cache(maxsize=8)
def _l1_neighbourhood(lo: tuple, hi: tuple, r: int) -> np.ndarray:
    """Sites within l1 distance r of the box [lo, hi], as a read-only (n, d) array."""
    d = len(lo)
    ranges = [np.arange(a - r, b + r + 1) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*ranges, indexing="ij"), -1).reshape(-1, d)
    lo_a, hi_a = np.asarray(lo), np.asarray(hi)
    dist = (np.maximum(lo_a - grid, 0) + np.maximum(grid - hi_a, 0)).sum(1)
    grid = np.ascontiguousarray(grid[dist <= r], dtype=np.int64)
    grid.flags.writeable = False
    return grid


def window_means(m: ModelSpec, alpha: float, window, T: int, n_reps: int, master_seed: int,
                 threads: int | None = None) -> np.ndarray:
    """Per-replicate average of the window values."""
    lo, hi = window
    n_sites = int(np.prod([b - a + 1 for a, b in zip(lo, hi)]))
    out = np.empty(n_reps)

    def work(chunk):
        for r in chunk:
            f = sample_invariant_window(m, alpha, window, T, replicate_seed(master_seed, r))
            out[r] = f.l1_norm() / n_sites

    nthreads = resolve_threads(threads)
    if nthreads == 1:
        work(range(n_reps))
    else:
        with ThreadPoolExecutor(nthreads) as pool:
            list(pool.map(work, [range(i, n_reps, nthreads) for i in range(nthreads)]))
    return out


def dumps_jsonl(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True, allow_nan=False) + "\n" for r in records)
