"""Exact small-scale computations used to validate the Monte Carlo engine.

* ``exact_mean``: the normalized mean field by repeated convolution.
* ``exact_two_point``: E[N̄_{t,y} N̄_{t,ỹ}] by a dense dynamic programme over
  pairs indexed by (y, ỹ - y).
* ``two_point_totals``: E[|N̄_t|^2] from the difference coordinate alone,
  which is all that is needed for a translation-invariant total.
* ``enumerate_small``: the full law of N̄_t for Bernoulli-type columns, with
  exact rational probabilities.
* ``duality_check``: total-variation distance between the laws of a forward
  entry and the matching dual entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Iterable, Optional, Sequence

import numpy as np

from .engine import DUAL, FORWARD, ResourceCapError, ensemble_stats, run_ensemble
from .lattice import Site, SiteField, convolve_power
from .models import (
    ModelError,
    ModelSpec,
    column_law,
    column_mean,
    column_moment,
    mean_kernel,
    moment_tables,
    offsets,
)

PAIR_CELL_CAP = 2 * 10**7
ENUM_CAP = 10**7
MAX_ENUM_T = 3
_KEY_DIGITS = 13  # significant digits used to merge float values in laws


class EnumerationCapError(ResourceCapError):
    pass


# -- mean ------------------------------------------------------------------------------


def exact_mean(m: ModelSpec, init: SiteField, t: int) -> SiteField:
    """ā^{*t} * init: the mean of N̄_t started from ``init``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    a, atot = mean_kernel(m)
    abar = SiteField({s: v / atot for s, v in a.items() if v > 0}, m.d)
    return convolve_power(abar, t, init)


# -- two-point function ---------------------------------------------------------------


@dataclass
class PairField:
    """Values f(y, ỹ) on a dense box in (y, z = ỹ - y) coordinates."""

    d: int
    y_lo: tuple
    z_lo: tuple
    values: np.ndarray  # shape (Ly_1..Ly_d, Lz_1..Lz_d)

    @property
    def entries(self) -> dict:
        d = self.d
        out = {}
        for idx in zip(*np.nonzero(self.values)):
            y = tuple(int(i) + o for i, o in zip(idx[:d], self.y_lo))
            z = tuple(int(i) + o for i, o in zip(idx[d:], self.z_lo))
            out[(y, tuple(a + b for a, b in zip(y, z)))] = float(self.values[idx])
        return out

    def __getitem__(self, pair) -> float:
        y, yt = (tuple(s) for s in pair)
        z = tuple(b - a for a, b in zip(y, yt))
        idx = tuple(a - o for a, o in zip(y, self.y_lo)) + tuple(a - o for a, o in zip(z, self.z_lo))
        if any(i < 0 or i >= n for i, n in zip(idx, self.values.shape)):
            return 0.0
        return float(self.values[idx])

    def total(self) -> float:
        """sum over (y, ỹ): E[|N̄_t|^2]."""
        return math.fsum(self.values.ravel())

    def diagonal(self) -> SiteField:
        """y -> f(y, y) = E[N̄_{t,y}^2]."""
        d = self.d
        zi = tuple(-o for o in self.z_lo)
        diag = self.values[(slice(None),) * d + zi]
        out = {}
        for idx in zip(*np.nonzero(diag)):
            out[tuple(int(i) + o for i, o in zip(idx, self.y_lo))] = float(diag[idx])
        return SiteField(out, d)

    def marginal_z(self) -> SiteField:
        """z -> sum_y f(y, y + z)."""
        d = self.d
        g = self.values.sum(axis=tuple(range(d)))
        return SiteField({tuple(int(i) + o for i, o in zip(idx, self.z_lo)): float(g[idx])
                          for idx in zip(*np.nonzero(g))}, d)


def _pair_steps(m: ModelSpec) -> list[tuple[Site, Site, float, float]]:
    """(u, ũ, mean product, same-column moment) over entry offsets u = x - y."""
    offs = [u for u in offsets(m.d) if column_mean(m, u) > 0]
    return [(u, ut, column_mean(m, u) * column_mean(m, ut), column_moment(m, u, ut))
            for u in offs for ut in offs]


def _shifted(arr: np.ndarray, shift: Sequence[int]) -> np.ndarray:
    # the box is padded so nothing wraps around
    return np.roll(arr, tuple(shift), axis=tuple(range(arr.ndim)))


def exact_two_point(m: ModelSpec, init: SiteField, t: int, cap: int = PAIR_CELL_CAP) -> PairField:
    """f_t(y, ỹ) = E[N̄_{t,y} N̄_{t,ỹ}] from the pair recursion

        f_t(y, ỹ) = sum_{x, x̃} f_{t-1}(x, x̃) E[A_{x,y} A_{x̃,ỹ}] / |a|^2,

    with f_0 = init ⊗ init.  Raises ``ResourceCapError`` if the dense
    (y, ỹ - y) box would exceed ``cap`` cells.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if not init:
        raise ValueError("initial field must be nonempty")
    d = m.d
    lo, hi = init.bounding_box()
    ly = [b - a + 1 + 2 * t for a, b in zip(lo, hi)]
    lz = [2 * (b - a) + 1 + 4 * t for a, b in zip(lo, hi)]
    cells = int(np.prod(ly, dtype=np.int64) * np.prod(lz, dtype=np.int64))
    if cells > cap:
        raise ResourceCapError(f"pair box of {cells} cells exceeds the cap {cap}")
    y_lo = tuple(a - t for a in lo)
    z_lo = tuple(a - b - 2 * t for a, b in zip(lo, hi))
    f = np.zeros(ly + lz)
    items = init.items()
    for (x, vx), (xt, vt) in product(items, items):
        idx = tuple(a - o for a, o in zip(x, y_lo)) + tuple(b - a - o for a, b, o in zip(x, xt, z_lo))
        f[idx] += vx * vt
    _, atot = mean_kernel(m)
    steps = _pair_steps(m)
    zero_z = tuple(-o for o in z_lo)
    norm = atot * atot
    for _ in range(t):
        new = np.zeros_like(f)
        for u, ut, w_apart, w_same in steps:
            # (x, x̃) -> (x - u, x̃ - ũ): y shifts by -u, z by u - ũ
            moved = _shifted(f, tuple(-c for c in u) + tuple(a - b for a, b in zip(u, ut)))
            sl = (slice(None),) * d + zero_z
            same = moved[sl].copy()
            new += moved * (w_apart / norm)
            new[sl] += same * ((w_same - w_apart) / norm)
        f = new
    return PairField(d, y_lo, z_lo, f)


def two_point_totals(m: ModelSpec, init: SiteField, t: int, cap: int = PAIR_CELL_CAP) -> np.ndarray:
    """E[|N̄_s|^2] for s = 0..t.

    Only the difference z = ỹ - y matters for the total:
    g_s(z) = sum_{z'} g_{s-1}(z') q(z - z') for z != 0 and
    g_s(0) = sum_{z'} g_{s-1}(z') b^A_{z'} / |a|^2, where q = ā * reflect(ā).
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    d = m.d
    lo, hi = init.bounding_box()
    lz = [2 * (b - a) + 1 + 4 * t for a, b in zip(lo, hi)]
    if int(np.prod(lz, dtype=np.int64)) > cap:
        raise ResourceCapError("difference box exceeds the cap")
    z_lo = tuple(a - b - 2 * t for a, b in zip(lo, hi))
    g = np.zeros(lz)
    items = init.items()
    for (x, vx), (xt, vt) in product(items, items):
        g[tuple(b - a - o for a, b, o in zip(x, xt, z_lo))] += vx * vt
    mt = moment_tables(m)
    norm = mt.a_total**2
    qz: dict[Site, float] = {}
    for u, ut, w_apart, _ in _pair_steps(m):
        s = tuple(a - b for a, b in zip(u, ut))
        qz[s] = qz.get(s, 0.0) + w_apart / norm
    zero = tuple(-o for o in z_lo)
    # b^A as a dense array over the same box
    bA = np.zeros(lz)
    for z, v in mt.bA.items():
        idx = tuple(a - o for a, o in zip(z, z_lo))
        if all(0 <= i < n for i, n in zip(idx, lz)):
            bA[idx] = v / norm
    out = np.empty(t + 1)
    out[0] = math.fsum(g.ravel())
    for s in range(1, t + 1):
        new = np.zeros_like(g)
        for sh, w in qz.items():
            new += w * np.roll(g, sh, axis=tuple(range(d)))
        new[zero] = float(np.sum(g * bA))
        g = new
        out[s] = math.fsum(g.ravel())
    return out


# -- exact enumeration --------------------------------------------------------------


def _value_key(v: float) -> float:
    return float(f"{v:.{_KEY_DIGITS}g}")


def _field_key(vals: dict) -> tuple:
    return tuple(sorted((s, _value_key(v)) for s, v in vals.items() if v != 0.0))


def _projected_law(law, offs, used: Sequence[int]):
    """Column law restricted to the offset indices in ``used``, merged."""
    out: dict[tuple, Fraction] = {}
    for entries, prob in law:
        key = tuple(entries.get(k, 0.0) for k in used)
        out[key] = out.get(key, Fraction(0)) + prob
    return list(out.items())


def enumerate_small(m: ModelSpec, init: SiteField, t: int, box=None, *, direction: str = FORWARD,
                    exact: bool = False, cap: int = ENUM_CAP) -> list[tuple[SiteField, float]]:
    """Exact law of N̄_t (``direction="dual"``: of M̄_t) as (field, probability) pairs.

    Every column in the light cone is enumerated; identical fields are merged
    after each step.  ``box = (lo, hi)`` restricts the returned fields (the law
    is merged again after restriction).  Probabilities are Fractions when
    ``exact`` is set.  The number of partial configurations visited is capped.
    """
    if not 0 <= t <= MAX_ENUM_T:
        raise ValueError(f"enumeration supports 0 <= t <= {MAX_ENUM_T}")
    if direction not in (FORWARD, DUAL):
        raise ValueError(f"direction must be {FORWARD!r} or {DUAL!r}")
    if not m.has_finite_columns:
        raise ModelError("enumeration needs finitely many column outcomes (not Gaussian DPRE)")
    law = column_law(m)
    offs = offsets(m.d)
    _, atot = mean_kernel(m)
    # key -> (unrounded values, probability); keys only serve to merge
    init_vals = {s: v for s, v in init.items() if v != 0.0}
    states: dict[tuple, tuple[dict, Fraction]] = {_field_key(init_vals): (init_vals, Fraction(1))}
    work = 0
    for _ in range(t):
        nxt: dict[tuple, tuple[dict, Fraction]] = {}
        for vals, prob in states.values():
            if direction == FORWARD:
                choices = _forward_choices(vals, law, offs)
            else:
                choices = _dual_choices(vals, law, offs)
            # fold the independent columns in one at a time, merging partial
            # fields that agree so far
            partial: dict[tuple, tuple[dict, Fraction]] = {(): ({}, prob)}
            for _, outcomes, apply in choices:
                work += len(partial) * len(outcomes)
                if work > cap:
                    raise EnumerationCapError(f"more than {cap} column configurations")
                grown: dict[tuple, tuple[dict, Fraction]] = {}
                for out, pr in partial.values():
                    for outcome, p in outcomes:
                        new = dict(out)
                        apply(new, outcome)
                        _merge(grown, new, pr * p)
                partial = grown
            for out, pr in partial.values():
                _merge(nxt, out, pr)
        states = nxt
    scale = atot ** (-t)
    result: dict[tuple, tuple[dict, Fraction]] = {}
    for vals, prob in states.values():
        f = {s: v * scale for s, v in vals.items()}
        if box is not None:
            lo, hi = box
            f = {s: v for s, v in f.items() if all(a <= c <= b for a, c, b in zip(lo, s, hi))}
        _merge(result, f, prob)
    conv = (lambda p: p) if exact else float
    return [(SiteField(result[k][0], m.d), conv(result[k][1])) for k in sorted(result)]


def _merge(states: dict, vals: dict, prob: Fraction) -> None:
    k = _field_key(vals)
    if k in states:
        states[k] = (states[k][0], states[k][1] + prob)
    else:
        states[k] = (vals, prob)


def _forward_choices(vals: dict, law, offs):
    """Columns y reached from the support; each projected on the entries
    whose source x = y + u is occupied.  N_t(y) = sum_x N(x) A_{x,y}."""
    ys = sorted({tuple(a - b for a, b in zip(x, u)) for x in vals for u in offs})
    choices = []
    for y in ys:
        used = [k for k, u in enumerate(offs) if tuple(a + b for a, b in zip(y, u)) in vals]
        if not used:
            continue
        srcs = [vals[tuple(a + b for a, b in zip(y, offs[k]))] for k in used]

        def apply(out, outcome, y=y, srcs=srcs):
            s = sum(v * a for v, a in zip(srcs, outcome))
            if s != 0.0:
                out[y] = out.get(y, 0.0) + s

        choices.append((y, _projected_law(law, offs, used), apply))
    return choices


def _dual_choices(vals: dict, law, offs):
    """M_t(x) = sum_y A_{x,y} M(y): every column y in the support is used in full."""
    full = list(range(len(offs)))
    choices = []
    for y in sorted(vals):
        my = vals[y]
        targets = [tuple(a + b for a, b in zip(y, offs[k])) for k in full]

        def apply(out, outcome, my=my, targets=targets):
            for x, a in zip(targets, outcome):
                if a != 0.0:
                    out[x] = out.get(x, 0.0) + a * my

        choices.append((y, _projected_law(law, offs, full), apply))
    return choices


def law_mean(law: Iterable[tuple[SiteField, float]], d: int) -> SiteField:
    out: dict[Site, float] = {}
    for f, p in law:
        for s, v in f.items():
            out[s] = out.get(s, 0.0) + float(p) * v
    return SiteField(out, d)


def law_two_point(law: Iterable[tuple[SiteField, float]]) -> dict:
    """(y, ỹ) -> E[N̄_y N̄_ỹ] from an enumerated law."""
    out: dict = {}
    for f, p in law:
        items = f.items()
        for (y, v), (yt, vt) in product(items, items):
            out[(y, yt)] = out.get((y, yt), 0.0) + float(p) * v * vt
    return out


# -- duality ----------------------------------------------------------------------------


@dataclass(frozen=True)
class DualityReport:
    model: ModelSpec
    t: int
    x: Site
    y: Site
    forward_law: dict  # value -> probability
    dual_law: dict
    tv_distance: float

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(), "t": self.t, "x": list(self.x), "y": list(self.y),
            "forward_law": {repr(k): float(v) for k, v in sorted(self.forward_law.items())},
            "dual_law": {repr(k): float(v) for k, v in sorted(self.dual_law.items())},
            "tv_distance": self.tv_distance,
        }


def _entry_law(law, site) -> dict:
    out: dict[float, Fraction] = {}
    for f, p in law:
        v = _value_key(f.get(site, 0.0))
        out[v] = out.get(v, Fraction(0)) + p
    return out


def duality_check(m: ModelSpec, t: int, x: Sequence[int], y: Sequence[int]) -> DualityReport:
    """Exact laws of N^{0,x}_{t,y} and M^{0,y}_{t,x} and their TV distance."""
    x, y = tuple(x), tuple(y)
    fwd = _entry_law(enumerate_small(m, SiteField.delta(m.d, x), t, exact=True), y)
    dual = _entry_law(enumerate_small(m, SiteField.delta(m.d, y), t, direction=DUAL, exact=True), x)
    keys = set(fwd) | set(dual)
    tv = sum((abs(fwd.get(k, Fraction(0)) - dual.get(k, Fraction(0))) for k in keys), Fraction(0)) / 2
    return DualityReport(m, t, x, y, fwd, dual, float(tv))


DUALITY_CASES: tuple = (
    (ModelSpec("GOSP", 1, p=0.6, q=0.2), (0,), (0,)),
    (ModelSpec("GOSP", 1, p=0.6, q=0.2), (0,), (1,)),
    (ModelSpec("GOSP", 1, p=0.3, q=0.7), (0,), (2,)),
    (ModelSpec("GOBP", 1, p=0.6, q=0.3), (0,), (1,)),
    (ModelSpec("GOBP", 1, p=0.6, q=0.3), (0,), (0,)),
    (ModelSpec("GOBP", 1, p=0.4, q=0.5), (1,), (-1,)),
    (ModelSpec("BCPP", 1, p=0.5, q=0.3), (0,), (0,)),
    (ModelSpec("BCPP", 1, p=0.5, q=0.3), (0,), (1,)),
    (ModelSpec("BCPP", 1, p=0.8, q=0.6), (0,), (2,)),
    (ModelSpec("VM", 1, p=0.5), (0,), (0,)),
    (ModelSpec("VM", 1, p=0.5), (0,), (1,)),
    (ModelSpec("VM", 1, p=0.3), (0,), (-2,)),
)


# -- validation suite ------------------------------------------------------------------


def _check(name: str, passed: bool, **details) -> dict:
    return {"check": name, "passed": bool(passed), **details}


def validation_suite(master_seed: int = 1, reps: int = 20000, threads: Optional[int] = None,
                     progress=None) -> list[dict]:
    """Oracle-versus-engine checks; each entry has ``check`` and ``passed``."""
    say = progress or (lambda msg: None)
    out = []
    say("mean field: enumeration against convolution")
    for m in (ModelSpec("GOSP", 1, p=0.6, q=0.2), ModelSpec("GOBP", 1, p=0.6, q=0.3),
              ModelSpec("BCPP", 1, p=0.5, q=0.3), ModelSpec("VM", 1, p=0.5),
              ModelSpec("DPRE", 1, beta=0.5), ModelSpec("GOSP", 2, p=0.4, q=0.1)):
        for t in (1, 2):
            init = SiteField.delta(m.d)
            a = exact_mean(m, init, t)
            b = law_mean(enumerate_small(m, init, t), m.d)
            err = max((abs(a.get(s) - b.get(s)) for s in set(a) | set(b)), default=0.0)
            out.append(_check("enumeration_mean", err <= 1e-12, model=m.label, t=t, max_abs_diff=err))
    say("duality: exact total variation")
    for m, x, y in DUALITY_CASES:
        rep = duality_check(m, 2, x, y)
        out.append(_check("duality", rep.tv_distance <= 1e-12, model=m.label, x=list(x), y=list(y),
                          tv_distance=rep.tv_distance))
    say("two-point function: pair recursion against enumeration")
    m = ModelSpec("GOSP", 1, p=0.6, q=0.2)
    init = SiteField.delta(1)
    pf = exact_two_point(m, init, 1)
    tp = law_two_point(enumerate_small(m, init, 1))
    err = max(abs(pf[k] - v) for k, v in tp.items())
    out.append(_check("two_point_enumeration", err <= 1e-12, model=m.label, t=1, max_abs_diff=err))
    say("two-point function: engine second moment")
    for t in (5,):
        exact = exact_two_point(m, init, t).total()
        st = ensemble_stats(m, init, t, reps, master_seed, threads=threads)
        z = abs(st["second_moment"] - exact) / st["second_moment_se"]
        out.append(_check("engine_second_moment", z <= 4.0, model=m.label, t=t, exact=exact,
                          estimate=st["second_moment"], se=st["second_moment_se"], z=z))
    say("martingale: engine mean")
    m = ModelSpec("OSP", 1, p=0.7)
    st = ensemble_stats(m, init, 20, reps, master_seed + 1, threads=threads)
    z = abs(st["mean"] - 1.0) / st["mean_se"]
    out.append(_check("engine_mean", z <= 4.0, model=m.label, t=20, estimate=st["mean"],
                      se=st["mean_se"], z=z))
    say("dual engine: mean")
    m = ModelSpec("BCPP", 1, p=0.5, q=0.3)
    ens = run_ensemble(m, init, 10, reps, master_seed + 2, direction=DUAL, threads=threads)
    mu, se = ens.moment(1.0)
    out.append(_check("dual_engine_mean", abs(mu - 1.0) <= 4 * se, model=m.label, t=10,
                      estimate=mu, se=se))
    return out
