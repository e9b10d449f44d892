"""Model catalogue: GOSP, GOBP, DPRE, BCPP and VM.

All kernels have range one in the l1 norm.  A column A_{., y} is described by
its entries at offsets u = x - y; offsets are indexed as

    0        -> the origin (x = y)
    2j + 1   -> +e_j
    2j + 2   -> -e_j

Closed-form moments live here; the random column sampler is shared with the
simulation kernels (see ``_kernels.sample_column_kernel``).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from itertools import product
from typing import Sequence

import numpy as np

from .lattice import Site, SiteField, convolve, l1
from . import rng as _rng

KINDS = ("GOSP", "GOBP", "DPRE", "BCPP", "VM")
KIND_CODE = {k: i for i, k in enumerate(KINDS)}
ENVS = ("bernoulli", "gaussian")

RANGE = 1  # r_A for every catalogued model


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    d: int
    p: float = 0.0
    q: float = 0.0
    beta: float = 0.0
    env: str = "bernoulli"
    rho: float = 0.5
    # False admits a.s. constant kernels such as GOSP with p = 1, q = 0
    strict: bool = field(default=True, repr=False)

    def __post_init__(self):
        kind = str(self.kind).upper()
        if kind == "OSP":
            kind, q = "GOSP", 0.0
            object.__setattr__(self, "q", q)
        elif kind == "OBP":
            kind = "GOBP"
            object.__setattr__(self, "q", 0.0)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "env", str(self.env).lower())
        for name in ("p", "q", "beta", "rho"):
            object.__setattr__(self, name, float(getattr(self, name)))
        self._validate()

    def _validate(self):
        if self.kind not in KINDS:
            raise ModelError(f"kind: unknown model kind {self.kind!r}")
        if not isinstance(self.d, (int, np.integer)) or isinstance(self.d, bool) or self.d < 1:
            raise ModelError(f"d: dimension must be a positive integer, got {self.d!r}")
        object.__setattr__(self, "d", int(self.d))
        p, q = self.p, self.q
        if self.kind in ("GOSP", "GOBP", "BCPP"):
            if not 0.0 <= p <= 1.0:
                raise ModelError(f"p: must lie in [0, 1], got {p}")
            if not 0.0 <= q <= 1.0:
                raise ModelError(f"q: must lie in [0, 1], got {q}")
            if p == 0.0:
                raise ModelError("p: must be positive (the mean kernel must reach the neighbours)")
            if self.strict and p in (0.0, 1.0) and q in (0.0, 1.0):
                raise ModelError(f"p, q: either p or q must lie in (0, 1), got p={p}, q={q}")
        elif self.kind == "VM":
            if not 0.0 < p <= 1.0:
                raise ModelError(f"p: voter model needs p in (0, 1], got {p}")
        elif self.kind == "DPRE":
            if not (self.beta > 0 and math.isfinite(self.beta)):
                raise ModelError(f"beta: must be a positive finite real, got {self.beta}")
            if self.env not in ENVS:
                raise ModelError(f"env: must be one of {ENVS}, got {self.env!r}")
            if self.env == "bernoulli" and not 0.0 < self.rho < 1.0:
                raise ModelError(f"rho: Bernoulli environment needs rho in (0, 1), got {self.rho}")
            if not math.isfinite(lam(self, 2 * self.beta)):
                raise ModelError("beta: lambda(2 beta) is not finite")

    @property
    def label(self) -> str:
        if self.kind == "DPRE":
            env = f"bernoulli(rho={self.rho:g})" if self.env == "bernoulli" else "gaussian"
            return f"DPRE(d={self.d}, beta={self.beta:g}, env={env})"
        if self.kind == "VM":
            return f"VM(d={self.d}, p={self.p:g})"
        return f"{self.kind}(d={self.d}, p={self.p:g}, q={self.q:g})"

    def params(self) -> dict:
        """Only the parameters meaningful for this kind."""
        if self.kind == "DPRE":
            out = {"beta": self.beta, "env": self.env}
            if self.env == "bernoulli":
                out["rho"] = self.rho
            return out
        if self.kind == "VM":
            return {"p": self.p}
        return {"p": self.p, "q": self.q}

    def to_dict(self) -> dict:
        return {"kind": self.kind, "d": self.d, **self.params()}

    def replace(self, **changes) -> "ModelSpec":
        data = asdict(self)
        data.update(changes)
        return ModelSpec(**data)

    @property
    def code(self) -> int:
        return KIND_CODE[self.kind]

    def kernel_params(self) -> np.ndarray:
        return np.array(
            [self.p, self.q, self.beta, self.rho, float(ENVS.index(self.env))], dtype=np.float64
        )

    @property
    def has_finite_columns(self) -> bool:
        return not (self.kind == "DPRE" and self.env == "gaussian")


# -- offsets -------------------------------------------------------------------


def offsets(d: int) -> list[Site]:
    out = [(0,) * d]
    for j in range(d):
        for s in (1, -1):
            e = [0] * d
            e[j] = s
            out.append(tuple(e))
    return out


def offset_index(u: Sequence[int]) -> int:
    n = l1(u)
    if n == 0:
        return 0
    if n != 1:
        return -1
    for j, c in enumerate(u):
        if c:
            return 2 * j + 1 if c > 0 else 2 * j + 2
    return -1


# -- environment ---------------------------------------------------------------


def lam(m: ModelSpec, beta: float) -> float:
    """lambda(beta) = log E[exp(beta * omega)]."""
    if m.env == "gaussian":
        return 0.5 * beta * beta
    return math.log1p(m.rho * math.expm1(beta))


def dlam(m: ModelSpec, beta: float) -> float:
    if m.env == "gaussian":
        return beta
    e = math.exp(beta)
    return m.rho * e / (1.0 - m.rho + m.rho * e)


def gamma_dpre(m: ModelSpec) -> float:
    return math.exp(lam(m, 2 * m.beta) - 2 * lam(m, m.beta))


# -- moments of one column ------------------------------------------------------


def column_mean(m: ModelSpec, u: Sequence[int]) -> float:
    """E[A_{y+u, y}]."""
    n = l1(u)
    if n > RANGE:
        return 0.0
    d = m.d
    if m.kind in ("GOSP", "GOBP"):
        return m.q if n == 0 else m.p
    if m.kind == "DPRE":
        return 0.0 if n == 0 else math.exp(lam(m, m.beta)) / (2 * d)
    if m.kind == "BCPP":
        return m.q if n == 0 else m.p / (2 * d)
    # VM
    return 1.0 - m.p if n == 0 else m.p / (2 * d)


def column_moment(m: ModelSpec, u: Sequence[int], ut: Sequence[int]) -> float:
    """E[A_{y+u, y} A_{y+ut, y}] for two entries of the same column."""
    nu, nt = l1(u), l1(ut)
    if nu > RANGE or nt > RANGE:
        return 0.0
    same = tuple(u) == tuple(ut)
    kind = m.kind
    if kind == "GOSP":
        if nu == 0 and nt == 0:
            return m.q
        if nu == 1 and nt == 1:
            return m.p
        return m.p * m.q
    if kind == "GOBP":
        return column_mean(m, u) if same else column_mean(m, u) * column_mean(m, ut)
    if kind == "DPRE":
        if nu == 0 or nt == 0:
            return 0.0
        return math.exp(lam(m, 2 * m.beta)) / (2 * m.d) ** 2
    if kind == "BCPP":
        if same:
            return column_mean(m, u)
        if nu == 0 or nt == 0:
            return m.q * m.p / (2 * m.d)
        return 0.0
    # VM: exactly one nonzero entry per column
    return column_mean(m, u) if same else 0.0


def mean_kernel(m: ModelSpec) -> tuple[SiteField, float]:
    """(a, |a|) with a_y = E[A_{1,0,y}]."""
    a = SiteField({tuple(-c for c in u): column_mean(m, u) for u in offsets(m.d)}, m.d)
    return a, a.l1_norm()


def pair_moment(m: ModelSpec, x: Sequence[int], xt: Sequence[int], y: Sequence[int], yt: Sequence[int]) -> float:
    """E[A_{1,x,y} A_{1,xt,yt}]."""
    u = tuple(a - b for a, b in zip(x, y))
    ut = tuple(a - b for a, b in zip(xt, yt))
    if tuple(y) != tuple(yt):
        return column_mean(m, u) * column_mean(m, ut)
    return column_moment(m, u, ut)


def pair_weight(m: ModelSpec, x, xt, y, yt) -> float:
    """Feynman-Kac pair weight w(x, xt, y, yt); 0 where a step is impossible."""
    ax = column_mean(m, tuple(a - b for a, b in zip(x, y)))
    at = column_mean(m, tuple(a - b for a, b in zip(xt, yt)))
    if ax * at == 0.0:
        return 0.0
    return pair_moment(m, x, xt, y, yt) / (ax * at)


# -- column law -----------------------------------------------------------------


def _frac(v: float) -> Fraction:
    return Fraction(repr(float(v)))


def column_law(m: ModelSpec) -> list[tuple[dict[int, float], Fraction]]:
    """Exact law of one column as (offset index -> value, probability) pairs.

    Zero entries are omitted; outcomes with identical entries are merged.
    Gaussian DPRE has no finite law and raises ``ModelError``.
    """
    if not m.has_finite_columns:
        raise ModelError("the Gaussian DPRE column has a continuous law")
    d = m.d
    nb = 2 * d
    p, q = _frac(m.p), _frac(m.q)
    raw: list[tuple[dict[int, float], Fraction]] = []
    if m.kind == "GOSP":
        for eta, zeta in product((0, 1), repeat=2):
            e = {k: 1.0 for k in range(1, nb + 1)} if eta else {}
            if zeta:
                e[0] = 1.0
            raw.append((e, (p if eta else 1 - p) * (q if zeta else 1 - q)))
    elif m.kind == "GOBP":
        for bits in product((0, 1), repeat=nb + 1):
            e = {k: 1.0 for k, b in enumerate(bits) if b}
            prob = q if bits[0] else 1 - q
            for b in bits[1:]:
                prob *= p if b else 1 - p
            raw.append((e, prob))
    elif m.kind == "DPRE":
        rho = _frac(m.rho)
        hi = math.exp(m.beta) / nb
        lo = 1.0 / nb
        raw.append(({k: hi for k in range(1, nb + 1)}, rho))
        raw.append(({k: lo for k in range(1, nb + 1)}, 1 - rho))
    elif m.kind == "BCPP":
        for zeta in (0, 1):
            pz = q if zeta else 1 - q
            raw.append(({0: 1.0} if zeta else {}, (1 - p) * pz))
            for r in range(nb):
                # A_{x,y} = eta 1{e = y - x}: the entry sits at offset u = -e
                e = {_neg_index(_dir_index(r)): 1.0}
                if zeta:
                    e[0] = 1.0
                raw.append((e, p * pz / nb))
    else:  # VM: A_{x,y} = 1{x = y + e}
        raw.append(({0: 1.0}, 1 - p))
        for r in range(nb):
            raw.append(({_dir_index(r): 1.0}, p / nb))
    merged: dict[tuple, Fraction] = {}
    for e, prob in raw:
        if prob == 0:
            continue
        key = tuple(sorted(e.items()))
        merged[key] = merged.get(key, Fraction(0)) + prob
    return [(dict(k), v) for k, v in merged.items()]


def _dir_index(r: int) -> int:
    """Direction r in [0, 2d) -> offset index of +-e_j (even r positive)."""
    j, neg = divmod(r, 2)
    return 2 * j + 1 + neg


def _neg_index(k: int) -> int:
    if k == 0:
        return 0
    return k + 1 if k % 2 == 1 else k - 1


# -- moment tables ---------------------------------------------------------------


@dataclass(frozen=True)
class MomentTable:
    a: SiteField
    a_total: float
    a_bar: SiteField
    b: SiteField
    bA: SiteField
    delta: float
    entropy_lhs: float
    entropy_rhs: float
    # sum_y E[A_{1,y,0} A_{1,y+z,0}]: the same-column analogue of bA used by the dual
    bA_star: SiteField = field(default=None)


def moment_tables(m: ModelSpec) -> MomentTable:
    a, atot = mean_kernel(m)
    d = m.d
    b = convolve(a, a.reflect())
    offs = offsets(d)
    bA: dict[Site, float] = {}
    bstar: dict[Site, float] = {}
    # b^A_x = sum_y E[A_{0,y} A_{x,y}]: both rows hit column y
    for y in offs:
        for u in offs:
            x = tuple(yy + uu for yy, uu in zip(y, u))
            bA[x] = bA.get(x, 0.0) + pair_moment(m, (0,) * d, x, y, y)
    for u in offs:
        for ut in offs:
            z = tuple(b_ - a_ for a_, b_ in zip(u, ut))
            bstar[z] = bstar.get(z, 0.0) + column_moment(m, u, ut)
    return MomentTable(
        a=a,
        a_total=atot,
        a_bar=a.scale(1.0 / atot),
        b=b,
        bA=SiteField(bA, d),
        delta=zero_column_probability(m),
        entropy_lhs=entropy_sum(m),
        entropy_rhs=atot * math.log(atot),
        bA_star=SiteField(bstar, d),
    )


def zero_column_probability(m: ModelSpec) -> float:
    """P(A_{1,x,0} = 0 for all x), exact from the column law."""
    if not m.has_finite_columns:
        return 0.0
    return float(sum((prob for e, prob in column_law(m) if not e), Fraction(0)))


def entropy_sum(m: ModelSpec) -> float:
    """sum_y E[A_{1,0,y} log A_{1,0,y}] with 0 log 0 = 0."""
    if m.kind != "DPRE":
        return 0.0  # {0, 1}-valued entries
    lb = lam(m, m.beta)
    return math.exp(lb) * (m.beta * dlam(m, m.beta) - math.log(2 * m.d))


def phi(m: ModelSpec, h: float) -> float:
    """sum_y E[(A_{1,0,y} / |a|)^h]."""
    _, atot = mean_kernel(m)
    if m.kind != "DPRE":
        return atot ** (1.0 - h)
    nb = 2 * m.d
    return nb ** (1.0 - h) * math.exp(lam(m, h * m.beta) - h * lam(m, m.beta))


def column_sum_is_constant(m: ModelSpec) -> bool:
    """Whether the total weight sent out of one site, sum_y A_{0,y}, is a.s. constant.

    The entries A_{0,y} sit in independent columns, each at offset -y, so the
    sum is constant exactly when every offset marginal of the column law is.
    """
    if not m.has_finite_columns:
        return False
    law = [e for e, prob in column_law(m) if prob > 0]
    return all(len({round(e.get(k, 0.0), 12) for e in law}) == 1 for k in range(2 * m.d + 1))


def third_moment_finite(m: ModelSpec) -> bool:
    # bounded entries, or exp(3 beta omega) with finite Bernoulli/Gaussian mgf
    return True


def sample_column(m: ModelSpec, y: Sequence[int], rng) -> dict[Site, float]:
    """One draw of the column (A_{x,y})_x as a map x -> value, zeros omitted.

    ``rng`` is an int seed or a numpy Generator; the draw uses the same
    sampler as the simulation kernels.
    """
    from ._kernels import sample_column_kernel

    key = np.uint64(_rng.seed_from(rng) & (2**64 - 1))
    ks = np.zeros(2 * m.d + 1, dtype=np.int64)
    vs = np.zeros(2 * m.d + 1, dtype=np.float64)
    n = sample_column_kernel(m.code, m.d, m.kernel_params(), key, ks, vs)
    offs = offsets(m.d)
    return {tuple(c + o for c, o in zip(y, offs[ks[i]])): float(vs[i]) for i in range(n)}
