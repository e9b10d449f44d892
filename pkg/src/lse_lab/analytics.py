"""Deterministic phase-transition criteria.

The pair of independent walks (S, S~) with step law ā has difference walk
with step law q = ā * reflect(ā).  Everything below is built from its Green
function G(x) = sum_t q^{*t}(x), computed two ways:

* series: q^{*t}(x) for t <= T exactly (a trigonometric polynomial averaged
  over a grid fine enough to have no aliasing), plus a tail fitted to the
  local CLT expansion t^{-d/2} (C0 + C1/t + C2/t^2) and summed with the
  Hurwitz zeta function;
* quadrature: the midpoint rule for (2π)^{-d} ∫ cos(x·θ) / (1 - q̂(θ)) dθ
  after subtracting the lattice Green functions of the singular parts at
  θ = 0 and (for bipartite or nearly bipartite walks) at θ = (π, ..., π);
  the subtracted pieces are added back as Bessel-function integrals.

Collision weights E^{x,0}[e_{τ1}: τ1 < ∞] come from the taboo Green function
of the difference walk (first-collision decomposition), and the Monte Carlo
pair-walk estimator is kept as an independent check.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Callable, Optional, Sequence

import numba as nb
import numpy as np
from scipy import integrate, optimize
from scipy.special import ive, zeta

from .lattice import Site, l1
from .models import (
    ModelSpec,
    column_sum_is_constant,
    moment_tables,
    offsets,
    pair_weight,
    phi,
)

HOLDS, FAILS, INCONCLUSIVE = "holds", "fails", "inconclusive"
METHODS = ("closed_form", "quadrature", "series", "monte_carlo")

REGULAR, SLOW, UNKNOWN = "regular", "slow", "unknown"

# series length and quadrature grids per dimension (memory-bounded)
_SERIES_T = {3: (40, 60, 80, 100, 120), 4: (16, 24, 32), 5: (8, 12)}
_QUAD_N = {3: (32, 48), 4: (20, 28), 5: (12, 16)}
_GRID_BUDGET = 4e7  # doubles held by the series grid

# canonical sites |x|_1 <= 4 cover every G value a collision weight needs
_WEIGHT_RADIUS = 4


class ConvergenceError(RuntimeError):
    pass


# -- reports ------------------------------------------------------------------


def _json_num(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


@dataclass(frozen=True)
class CriterionReport:
    """lhs < rhs - error_bound: holds; lhs > rhs + error_bound: fails."""

    name: str
    lhs: float
    rhs: float
    verdict: str
    method: str
    error_bound: float
    details: dict = field(default_factory=dict)

    @classmethod
    def decide(cls, name: str, lhs: float, rhs: float, method: str, error_bound: float = 0.0,
               **details) -> "CriterionReport":
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}")
        err = abs(float(error_bound))
        if lhs < rhs - err:
            verdict = HOLDS
        elif lhs > rhs + err:
            verdict = FAILS
        else:
            verdict = INCONCLUSIVE  # includes NaN
        return cls(name, float(lhs), float(rhs), verdict, method, err, details)

    @property
    def holds(self) -> bool:
        return self.verdict == HOLDS

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": _json_num(self.lhs),
            "rhs": _json_num(self.rhs),
            "margin": _json_num(self.margin),
            "verdict": self.verdict,
            "method": self.method,
            "error_bound": _json_num(self.error_bound),
            "details": {k: _json_num(v) for k, v in self.details.items()},
        }


@dataclass(frozen=True)
class PhaseReport:
    model: ModelSpec
    l2: CriterionReport
    entropy: CriterionReport
    gamma: Optional[float]
    dual_l2: CriterionReport
    classification: str
    reason: str
    rate: Optional[str] = None  # "exponential" when the decay is proved exponential
    h_star: Optional[float] = None
    phi_star: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "label": self.model.label,
            "classification": self.classification,
            "reason": self.reason,
            "rate": self.rate,
            "gamma": self.gamma,
            "h_star": self.h_star,
            "phi_star": self.phi_star,
            "l2": self.l2.to_dict(),
            "entropy": self.entropy.to_dict(),
            "dual_l2": self.dual_l2.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# -- the difference walk ---------------------------------------------------------


def _abar_key(m: ModelSpec) -> tuple:
    a_bar = moment_tables(m).a_bar
    return tuple((u, a_bar[u]) for u in offsets(m.d))


def _is_symmetric(abar: dict, d: int) -> bool:
    """Invariance of ā under coordinate permutations and reflections."""
    for u, v in abar.items():
        w = abar.get(tuple(sorted((abs(c) for c in u), reverse=True)), 0.0)
        if abs(v - w) > 1e-15 * max(1.0, abs(v)):
            return False
    return True


def _canonical(x: Site, symmetric: bool) -> Site:
    if symmetric:
        return tuple(sorted((abs(c) for c in x), reverse=True))
    return tuple(x)


class _Walk:
    """Fourier data of the difference walk for one ā."""

    def __init__(self, key: tuple, d: int):
        self.d = d
        self.abar = {u: v for u, v in key if v > 0}
        self.symmetric = _is_symmetric(self.abar, d)
        q = {}
        for u, a in self.abar.items():
            for w, b in self.abar.items():
                z = tuple(p - r for p, r in zip(u, w))
                q[z] = q.get(z, 0.0) + a * b
        self.q = q
        self.v = sum(p * z[0] ** 2 for z, p in q.items())
        # G is computed for the thinned walk q_s = (q - λ δ_0) / (1 - λ), whose
        # Green function is (1 - λ) G: lazy walks need far fewer terms. λ stops
        # short of q(0) when full removal would leave q̂_s(π, ..., π) < -1/2,
        # since a nearly bipartite walk decays as slowly as a lazy one
        o = (0,) * d
        alt_q = sum(p * (-1) ** l1(z) for z, p in q.items())
        self.lazy = min(q.get(o, 0.0), max(0.0, (alt_q + 0.5) / 1.5))
        qs = {z: (p - (self.lazy if z == o else 0.0)) / (1.0 - self.lazy) for z, p in q.items()}
        # per-coordinate variance of q_s, and the same for the walk seen from
        # the corner θ = π(1, ..., 1): (-1)^{|x|} q_s(x)
        self.vs = sum(p * z[0] ** 2 for z, p in qs.items())
        alt = sum(p * (-1) ** l1(z) for z, p in qs.items())
        self.eps = 1.0 - alt  # 1 - q̂_s(π, ..., π)
        self.v2 = sum(p * (-1) ** l1(z) * z[0] ** 2 for z, p in qs.items())
        self.corner = self.eps < 0.5 and self.v2 > 0

    def qhat(self, axes: list[np.ndarray]) -> np.ndarray:
        """q̂_s = (|â|^2 - λ) / (1 - λ) on the tensor grid built from 1-d angle arrays."""
        d = self.d
        ah = np.zeros([len(a) for a in axes], dtype=np.complex128)
        for u, a in self.abar.items():
            phase = np.ones([1] * d, dtype=np.complex128)
            for j, c in enumerate(u):
                if c:
                    shape = [1] * d
                    shape[j] = len(axes[j])
                    phase = phase * np.exp(1j * c * axes[j]).reshape(shape)
            ah = ah + a * phase
        return ((ah * ah.conj()).real - self.lazy) / (1.0 - self.lazy)

    @staticmethod
    def cos_product(x: Site, axes: list[np.ndarray]) -> np.ndarray:
        """prod_j cos(x_j θ_j): cos(x·θ) averaged over coordinate reflections."""
        d = len(axes)
        out = np.ones([1] * d)
        for j, c in enumerate(x):
            if c:
                out = out * np.cos(c * axes[j]).reshape([len(axes[j]) if i == j else 1 for i in range(d)])
        return np.broadcast_to(out, [len(a) for a in axes])

    @staticmethod
    def cos_grid(x: Site, axes: list[np.ndarray]) -> np.ndarray:
        d = len(axes)
        out = np.ones([1] * d, dtype=np.complex128)
        for j, c in enumerate(x):
            if c:
                shape = [1] * d
                shape[j] = len(axes[j])
                out = out * np.exp(1j * c * axes[j]).reshape(shape)
        return np.broadcast_to(out.real, [len(a) for a in axes])


def _bessel_green(x: Site, v: float, eps: float = 0.0) -> float:
    """(2π)^{-d} ∫ cos(x·θ) / (eps + v (d - Σ cos θ)) dθ."""
    ax = [abs(c) for c in x]
    rate = eps / v

    def f(s):
        out = math.exp(-rate * s)
        for c in ax:
            out *= ive(c, s)
        return out

    head, _ = integrate.quad(f, 0.0, 50.0, limit=400, epsabs=1e-14, epsrel=1e-12)
    tail, _ = integrate.quad(f, 50.0, np.inf, limit=400, epsabs=1e-14, epsrel=1e-12)
    return (head + tail) / v


def _quadrature(walk: _Walk, xs: list[Site], n: int) -> np.ndarray:
    d = walk.d
    h = 2 * np.pi / n
    g = -np.pi + (np.arange(n) + 0.5) * h  # cell centres avoid 0 and ±π
    axes = [g] * d
    qh = walk.qhat(axes)
    sc = sum(np.cos(g).reshape([n if k == j else 1 for k in range(d)]) for j in range(d))
    rem = 1.0 / (1.0 - qh) - 1.0 / (walk.vs * (d - sc))
    if walk.corner:
        rem = rem - 1.0 / (walk.eps + walk.v2 * (d + sc))
    out = np.empty(len(xs))
    for i, x in enumerate(xs):
        val = float(np.mean(rem * walk.cos_grid(x, axes)))
        val += _bessel_green(x, walk.vs)
        if walk.corner:
            val += (-1) ** l1(x) * _bessel_green(x, walk.v2, walk.eps)
        out[i] = val
    return out / (1.0 - walk.lazy)


def _series(walk: _Walk, xs: list[Site], T: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Green function by exact terms up to T plus a fitted tail.

    Returns (G, error_bound, terms) with terms[t, i] = q^{*t}(xs[i]).
    """
    d = walk.d
    rx = max((max(abs(c) for c in x) for x in xs), default=0)
    # q^{*t} is a trig polynomial of degree 2t per axis: an L-point grid with
    # L > 2T + rx averages it without aliasing
    L = 2 * T + rx + 1
    L += 1 - L % 2  # odd, so the reflection k -> L - k fixes only k = 0
    if walk.symmetric:
        # q̂ is even in every coordinate: keep k <= L/2 with weight 2 off k = 0
        k = np.arange((L + 1) // 2)
        w1 = np.where(k == 0, 1.0, 2.0)
    else:
        k = np.arange(L)
        w1 = np.ones(L)
    axes = [2 * np.pi * k / L] * d
    wgt = np.ones([1] * d)
    for j in range(d):
        wgt = wgt * w1.reshape([len(k) if i == j else 1 for i in range(d)])
    qh = walk.qhat(axes).ravel()
    wgt = np.broadcast_to(wgt, [len(k)] * d).ravel()
    cosf = walk.cos_product if walk.symmetric else walk.cos_grid
    C = np.stack([np.ascontiguousarray(cosf(x, axes)).ravel() for x in xs], axis=1)
    C *= wgt[:, None] / float(L) ** d
    terms = np.empty((T + 1, len(xs)))
    P = np.ones_like(qh)
    for t in range(T + 1):
        terms[t] = P @ C
        P *= qh
    ts = np.arange(T // 2, T + 1, dtype=float)
    r = 1.0 - walk.eps
    # r < 0 when the stripped walk is nearly bipartite
    use_corner = 1e-12 < walk.eps and abs(r) ** (T // 2) > 1e-14
    G = np.empty(len(xs))
    err = np.empty(len(xs))
    for i, x in enumerate(xs):
        # local CLT shape t^{-d/2} exp(-|x|^2 / (2 v t)) (C0 + C1/t + ...)
        c = sum(cc * cc for cc in x) / (2 * walk.vs)
        y = terms[T // 2:, i] * ts ** (d / 2) * np.exp(c / ts)
        tails = []
        for k in (4, 3):
            cols = [ts ** (-float(j)) for j in range(k)]
            ncorner = k - 2 if use_corner else 0
            cols += [r ** ts * ts ** (-float(j)) for j in range(ncorner)]
            coef = np.linalg.lstsq(np.stack(cols, axis=1), y, rcond=None)[0]
            tail = sum(coef[j] * _gauss_tail(d / 2 + j, c, T + 1) for j in range(k))
            for j in range(ncorner):
                tail += coef[k + j] * _geometric_tail(r, d / 2 + j, T + 1, c)
            tails.append(tail)
        G[i] = math.fsum(terms[:, i]) + tails[0]
        err[i] = abs(tails[0] - tails[1]) + 1e-14
    return G / (1.0 - walk.lazy), err / (1.0 - walk.lazy), terms


@lru_cache(maxsize=4096)
def _gauss_tail(s: float, c: float, start: int, cut: int = 20_000) -> float:
    """sum_{t >= start} t^{-s} exp(-c/t)."""
    t = np.arange(start, cut, dtype=float)
    head = float(np.sum(np.exp(-s * np.log(t) - c / t)))
    # beyond the cut, exp(-c/t) = 1 - c/t + c^2/(2t^2) up to c^3 cut^{-s-2}
    rest = zeta(s, cut) - c * zeta(s + 1, cut) + 0.5 * c * c * zeta(s + 2, cut)
    return head + rest


def _geometric_tail(r: float, s: float, start: int, c: float = 0.0) -> float:
    """sum_{t >= start} r^t t^{-s} exp(-c/t), for 0 < |r| < 1."""
    total = 0.0
    t0 = start
    while True:
        t = np.arange(t0, t0 + 100_000, dtype=float)
        chunk = np.exp(t * math.log(abs(r)) - s * np.log(t) - c / t)
        if r < 0:
            chunk *= np.where(t % 2 == 1, -1.0, 1.0)
        total += float(chunk.sum())
        if abs(chunk[-1]) < 1e-20 * max(abs(total), 1e-300) or t0 > 10**8:
            return total
        t0 += 100_000


@dataclass(frozen=True)
class GreenTable:
    """Green function values at canonical sites, from both methods.

    ``primary`` is "series" when the series met its tail tolerance, else
    "quadrature" (the series values are then kept only as a rough check).
    """

    d: int
    symmetric: bool
    sites: tuple
    series: np.ndarray
    series_err: np.ndarray
    quad: np.ndarray
    quad_err: np.ndarray
    T: int
    primary: str = "series"

    def index(self, x: Site) -> int:
        return self.sites.index(_canonical(x, self.symmetric))

    def __contains__(self, x) -> bool:
        return _canonical(x, self.symmetric) in self.sites

    def value(self, x: Site, method: str | None = None) -> float:
        i = self.index(x)
        method = method or self.primary
        return float(self.series[i] if method == "series" else self.quad[i])

    def error(self, x: Site) -> float:
        """Error bound of the primary value; a series value is widened by any
        disagreement with quadrature."""
        i = self.index(x)
        if self.primary == "series":
            return float(max(self.series_err[i], abs(self.series[i] - self.quad[i])))
        return float(self.quad_err[i])

    @property
    def max_error(self) -> float:
        return max(self.error(x) for x in self.sites)


@lru_cache(maxsize=256)
def _green_table(key: tuple, d: int, sites: tuple, tol: float) -> GreenTable:
    walk = _Walk(key, d)
    xs = list(sites)
    rx = max((max(abs(c) for c in x) for x in xs), default=0)
    G = err = None
    T_used = 0
    for T in _SERIES_T.get(d, (6,)):
        points = (T + rx + 2) ** d if walk.symmetric else (2 * T + rx + 2) ** d
        if points * (len(xs) + 3) > _GRID_BUDGET:
            break
        G, err, _ = _series(walk, xs, T)
        T_used = T
        # tolerances are relative to the size of G, which grows as the walk slows
        scale = max(1.0, float(np.abs(G).max()))
        if err.max() <= scale * tol / 2:
            break
    n1, n2 = _QUAD_N.get(d, (10, 12))
    q1 = _quadrature(walk, xs, n1)
    q2 = _quadrature(walk, xs, n2)
    qerr = np.abs(q2 - q1) + 1e-13
    if G is None:
        G, err = np.full(len(xs), np.nan), np.full(len(xs), np.inf)
    scale = max(1.0, float(np.abs(q2).max()))
    series_ok = bool(err.max() <= scale * tol / 2)
    if series_ok:
        if np.any(np.abs(G - q2) > np.maximum(1e-3 * scale, err + qerr)):
            bad = int(np.argmax(np.abs(G - q2)))
            raise ConvergenceError(
                f"series and quadrature disagree at x={xs[bad]}: {G[bad]:.10f} vs {q2[bad]:.10f}")
        primary = "series"
    elif qerr.max() <= scale * tol / 2 and d >= 4:
        primary = "quadrature"
    else:
        raise ConvergenceError(
            f"Green function tail bound {err.max() / scale:.2e} (relative) above tol/2 at T={T_used} (d={d})")
    return GreenTable(d, walk.symmetric, tuple(xs), G, err, q2, qerr, T_used, primary)


def green_table(m: ModelSpec, extra: Sequence[Site] = (), tol: float = 1e-4) -> GreenTable:
    """Green function of the difference walk at all sites a collision weight needs."""
    if m.d < 3:
        raise ValueError("the difference walk is recurrent in d <= 2; G is infinite")
    key = _abar_key(m)
    sym = _is_symmetric({u: v for u, v in key if v > 0}, m.d)
    base = {(0,) * m.d}
    for s in _ball(m.d, _WEIGHT_RADIUS):
        base.add(_canonical(s, sym))
    for x in extra:
        base.add(_canonical(tuple(x), sym))
    return _green_table(key, m.d, tuple(sorted(base)), float(tol))


def _ball(d: int, r: int) -> list[Site]:
    rng = range(-r, r + 1)
    return [s for s in product(rng, repeat=d) if l1(s) <= r]


# -- collision probabilities and weights ---------------------------------------------


def collision_prob(m: ModelSpec, x: Sequence[int] | None = None, tol: float = 1e-4) -> tuple[float, float]:
    """(π_x, error bound): probability that the pair started at (x, 0) ever meets."""
    x = tuple(x) if x is not None else (0,) * m.d
    if len(x) != m.d:
        raise ValueError(f"site {x} does not have dimension {m.d}")
    if m.d <= 2:
        return 1.0, 0.0
    gt = green_table(m, extra=[x], tol=tol)
    return _pi(gt, x)


def _pi(gt: GreenTable, x: Site) -> tuple[float, float]:
    o = (0,) * gt.d
    g0, e0 = gt.value(o), gt.error(o)
    if x == o:
        return 1.0 - 1.0 / g0, e0 / g0**2
    gx, ex = gt.value(x), gt.error(x)
    return gx / g0, ex / g0 + gx * e0 / g0**2


def _B(m: ModelSpec) -> dict[Site, float]:
    """b^A_z / |a|^2: total pair weight of landing together from difference z."""
    mt = moment_tables(m)
    return {z: v / mt.a_total**2 for z, v in mt.bA.items()}


def _weights(m: ModelSpec, gt: GreenTable, method: str) -> tuple[float, Callable[[Site], float]]:
    """First-collision weights W(z) = E^{z,0}[e_{τ1}: τ1 < ∞] from G values.

    For z != 0 the pair must first land on 0, coming from some z' != 0 reached
    without meeting; the taboo Green function is G(z' - z) - π_z G(z').
    """
    d = m.d
    o = (0,) * d
    B = _B(m)
    G = lambda x: gt.value(x, method)
    g0 = G(o)
    pi = lambda z: 1.0 - 1.0 / g0 if z == o else G(z) / g0
    nz = [(z, b) for z, b in B.items() if z != o]

    def W(z: Site) -> float:
        z = tuple(z)
        if z == o:
            walk_q = _Walk(_abar_key(m), d).q
            return B.get(o, 0.0) + math.fsum(walk_q[z1] * W(z1) for z1 in walk_q if z1 != o)
        pz = pi(z)
        return math.fsum(
            (G(tuple(a - b for a, b in zip(zp, z))) - pz * G(zp)) * b for zp, b in nz)

    return W(o), W


def collision_weight(m: ModelSpec, x: Sequence[int] | None = None) -> tuple[float, float]:
    """(E^{0,x}[e_{τ1}: τ1 < ∞], error bound) for d >= 3."""
    if m.d < 3:
        raise ValueError("collision weights are only finite-horizon meaningful for d >= 3")
    x = tuple(x) if x is not None else (0,) * m.d
    gt = green_table(m)
    if not all(tuple(a - b for a, b in zip(zp, x)) in gt for zp in _B(m)):
        gt = green_table(m, extra=[tuple(a - b for a, b in zip(zp, x)) for zp in _B(m)] + [x])
    _, Wp = _weights(m, gt, gt.primary)
    wp = Wp(x)
    scale = sum(_B(m).values()) * (2.0 + 1.0 / gt.value((0,) * m.d))
    err = 4.0 * scale * gt.max_error
    if gt.primary == "series":
        _, Wq = _weights(m, gt, "quadrature")
        err += abs(wp - Wq(x))
    return wp, err


@nb.njit(cache=True)
def _pair_walk_mc(steps, cum, wtab, x0, n, max_steps, seed):
    np.random.seed(seed)
    d = steps.shape[1]
    k = cum.shape[0]
    total = 0.0
    total2 = 0.0
    z = np.empty(d, np.int64)
    for _ in range(n):
        for j in range(d):
            z[j] = x0[j]
        e = 0.0
        for _s in range(max_steps):
            u1 = np.random.random()
            u2 = np.random.random()
            i1 = 0
            while i1 < k - 1 and cum[i1] <= u1:
                i1 += 1
            i2 = 0
            while i2 < k - 1 and cum[i2] <= u2:
                i2 += 1
            hit = True
            for j in range(d):
                z[j] += steps[i1, j] - steps[i2, j]
                if z[j] != 0:
                    hit = False
            if hit:
                e = wtab[i1, i2]
                break
        total += e
        total2 += e * e
    return total, total2


def collision_weight_mc(m: ModelSpec, x: Sequence[int] | None = None, n_episodes: int = 10**6,
                        max_steps: int = 10**4, seed: int = 0) -> tuple[float, float, float]:
    """Pair-walk Monte Carlo of E^{x,0}[e_{τ1}: τ1 < ∞].

    The walkers step independently with law ā; the weight w of the step on
    which they first land together is recorded (w = 1 off the diagonal, so it
    is the whole product e_{τ1}).  Returns (mean, standard error, bias bound),
    where the bias bound covers episodes cut off at ``max_steps``.
    """
    d = m.d
    x = np.asarray(x if x is not None else (0,) * d, dtype=np.int64)
    mt = moment_tables(m)
    offs = [s for s in offsets(d) if mt.a_bar[s] > 0]
    probs = np.array([mt.a_bar[s] for s in offs])
    steps = np.array(offs, dtype=np.int64)
    o = (0,) * d
    wtab = np.array([[pair_weight(m, tuple(-c for c in s1), tuple(-c for c in s2), o, o)
                      for s2 in offs] for s1 in offs])
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    s1, s2 = _pair_walk_mc(steps, cum, wtab, x, int(n_episodes), int(max_steps), int(seed) & 0x7FFFFFFF)
    mean = s1 / n_episodes
    var = max(s2 / n_episodes - mean * mean, 0.0)
    se = math.sqrt(var / max(n_episodes - 1, 1))
    # P(first meeting after the cap) <= sum_{t > cap} q^{*t}(0) ~ C t^{-d/2}
    if d >= 3:
        # local CLT: q^{*t}(0) ~ (2π v t)^{-d/2}, doubled for bipartite walks
        c0 = 2.0 * (2 * math.pi * _Walk(_abar_key(m), d).v) ** (-d / 2)
        bias = float(wtab.max()) * c0 * zeta(d / 2, max_steps + 1)
    else:
        bias = float("nan")
    return mean, se, bias


# -- L^2 criteria ---------------------------------------------------------------------


def l2_report(m: ModelSpec) -> tuple[CriterionReport, Optional[Callable[[Site], float]]]:
    """Forward L^2 criterion E^{0,0}[e_{τ1}: τ1 < ∞] < 1, with the limit covariance map

        x -> E[|N̄^{0,0}_∞| |N̄^{0,x}_∞|] = 1 - π_x + W(x) (1 - π_0) / (1 - W(0)).
    """
    if m.d <= 2:
        rep = CriterionReport.decide("l2", float("nan"), 1.0, "closed_form", 0.0,
                                     note="difference walk recurrent in d <= 2")
        return rep, None
    w0, err = collision_weight(m)
    pi0, pi0_err = collision_prob(m)
    rep = CriterionReport.decide("l2", w0, 1.0, green_table(m).primary, err,
                                 pi0=pi0, pi0_error=pi0_err)
    if not rep.holds:
        return rep, None

    def cov(x: Sequence[int]) -> float:
        x = tuple(x)
        if x == (0,) * m.d:
            return (1.0 - pi0) / (1.0 - w0)
        px, _ = collision_prob(m, x)
        wx, _ = collision_weight(m, x)
        return 1.0 - px + wx * (1.0 - pi0) / (1.0 - w0)

    return rep, cov


def dual_l2_report(m: ModelSpec) -> CriterionReport:
    """Dual L^2 criterion: the time-reversed weight is collected when the pair
    leaves a common site, so W*(0) = B(0) + sum_{z != 0} B(z) π_z.

    Also records whether the weight sent out of a site, sum_y A_{0,y}, is a.s. constant
    (when it is not, the dual process grows slowly in d <= 2).
    """
    const = column_sum_is_constant(m)
    if m.d <= 2:
        return CriterionReport.decide("dual_l2", float("nan"), 1.0, "closed_form", 0.0,
                                      column_sum_constant=const,
                                      note="difference walk recurrent in d <= 2")
    mt = moment_tables(m)
    o = (0,) * m.d
    B = {z: v / mt.a_total**2 for z, v in mt.bA_star.items()}
    gt = green_table(m)
    ws = B.get(o, 0.0)
    err = 0.0
    for z, b in B.items():
        if z == o:
            continue
        pz, ez = _pi(gt, z)
        ws += b * pz
        err += b * ez
    return CriterionReport.decide("dual_l2", ws, 1.0, gt.primary, err, column_sum_constant=const)


# -- entropy criterion --------------------------------------------------------------


def _golden_min(f: Callable[[float], float], lo: float, hi: float, tol: float) -> float:
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2


def entropy_report(m: ModelSpec) -> tuple[CriterionReport, Optional[tuple[float, float]]]:
    """|a| ln |a| < sum_y E[A_{1,0,y} ln A_{1,0,y}]; when it holds, (h*, φ(h*))
    with φ(h) = sum_y E[(A_{1,0,y} / |a|)^h] minimized over (0, 1)."""
    mt = moment_tables(m)
    lhs, rhs = mt.entropy_rhs, mt.entropy_lhs  # |a| ln|a| versus sum E[A ln A]
    err = 1e-14 * max(1.0, abs(lhs), abs(rhs))
    rep = CriterionReport.decide("entropy", lhs, rhs, "closed_form", err)
    if not rep.holds:
        return rep, None
    h = _golden_min(lambda s: phi(m, s), 1e-6, 1.0 - 1e-6, 1e-6)
    return rep, (h, phi(m, h))


# -- covariance (gamma) criterion -----------------------------------------------------


@dataclass(frozen=True)
class FourierGap:
    """min over θ of b̂^A(θ) - |â(θ)|^2."""

    grid_min: float
    refined: float
    lower: float  # grid minimum minus the Lipschitz slack
    theta: tuple
    lipschitz: float


def fourier_gap(m: ModelSpec, n: int | None = None) -> FourierGap:
    """Grid-plus-refinement minimum of b̂^A - |â|^2 = sum_x (b^A_x - b_x) cos(x·θ)."""
    mt = moment_tables(m)
    d = m.d
    n = n or (64 if d <= 3 else 16)
    coef = {}
    for x, v in mt.bA.items():
        coef[x] = coef.get(x, 0.0) + v
    for x, v in mt.b.items():
        coef[x] = coef.get(x, 0.0) - v
    sites = np.array(list(coef), dtype=float)
    vals = np.array(list(coef.values()))

    def f(theta):
        return float(vals @ np.cos(sites @ np.asarray(theta)))

    g = -np.pi + 2 * np.pi * np.arange(n) / n  # contains 0 and -π
    axes = [g] * d
    grid = np.zeros([n] * d)
    for s, v in zip(sites, vals):
        grid += v * _Walk.cos_grid(tuple(int(c) for c in s), axes)
    idx = np.unravel_index(int(np.argmin(grid)), grid.shape)
    theta0 = np.array([g[i] for i in idx])
    grid_min = float(grid[idx])
    res = optimize.minimize(f, theta0, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 20000})
    refined = min(grid_min, float(res.fun))
    theta = tuple(res.x) if res.fun < grid_min else tuple(theta0)
    lip = float(np.sum(np.abs(vals) * np.linalg.norm(sites, axis=1)))
    h = 2 * np.pi / n
    lower = grid_min - lip * h * math.sqrt(d) / 2
    return FourierGap(grid_min, refined, lower, theta, lip)


def gamma_report(m: ModelSpec) -> Optional[float]:
    """γ > 1 with P[A_x A_x~] >= γ a a in the covariance sense, or None.

    Entrywise test first: c = b^A_0 - b_0 > 0 and b^A_x >= b_x elsewhere gives
    γ = 1 + c / |a|^2.  Otherwise the Fourier minimum c1 of b̂^A - |â|^2 is used
    when its certified lower bound is positive: γ = 1 + c1 / |a|^2.
    """
    mt = moment_tables(m)
    o = (0,) * m.d
    c = mt.bA[o] - mt.b[o]
    sites = set(mt.bA.support) | set(mt.b.support)
    entrywise = c > 0 and all(mt.bA[x] >= mt.b[x] - 1e-15 for x in sites if x != o)
    if entrywise:
        return 1.0 + c / mt.a_total**2
    gap = fourier_gap(m)
    if gap.lower > 0:
        return 1.0 + gap.refined / mt.a_total**2
    return None


# -- phase classification ----------------------------------------------------------


def classify_phase(m: ModelSpec) -> PhaseReport:
    l2, _ = l2_report(m)
    ent, hphi = entropy_report(m)
    gamma = gamma_report(m)
    dual = dual_l2_report(m)
    h_star, phi_star = hphi if hphi else (None, None)
    if ent.holds:
        cls, reason, rate = SLOW, "entropy criterion holds", "exponential"
    elif m.d <= 2 and gamma is not None:
        cls, reason = SLOW, f"d={m.d} and the covariance criterion holds (gamma={gamma:.6g})"
        rate = "exponential" if m.d == 1 else None
    elif l2.holds and m.d >= 3:
        cls, reason, rate = REGULAR, "L2 criterion holds in d >= 3", None
    else:
        cls, reason, rate = UNKNOWN, "no sufficient condition applies", None
    return PhaseReport(m, l2, ent, gamma, dual, cls, reason, rate, h_star, phi_star)
