import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lse_lab import analytics as A
from lse_lab.engine import ResourceCapError, ensemble_stats
from lse_lab.lattice import SiteField
from lse_lab.models import ModelError, ModelSpec
from lse_lab.oracle import (
    DUALITY_CASES,
    EnumerationCapError,
    duality_check,
    enumerate_small,
    exact_mean,
    exact_two_point,
    law_mean,
    law_two_point,
    two_point_totals,
)

BERNOULLI = [
    ModelSpec("GOSP", 1, p=0.6, q=0.2),
    ModelSpec("OSP", 2, p=0.5),
    ModelSpec("GOBP", 1, p=0.6, q=0.3),
    ModelSpec("DPRE", 1, beta=0.8, rho=0.3),
    ModelSpec("BCPP", 1, p=0.5, q=0.3),
    ModelSpec("BCPP", 2, p=0.4, q=0.5),
    ModelSpec("VM", 1, p=0.5),
    ModelSpec("VM", 2, p=0.3),
]
IDS = [m.label for m in BERNOULLI]

small_fields = st.dictionaries(st.tuples(st.integers(-2, 2)), st.floats(0.1, 3.0),
                               min_size=1, max_size=3).map(lambda e: SiteField(e, 1))


# -- exact_mean --------------------------------------------------------------------------


def test_mean_at_time_zero():
    f = SiteField({(0,): 0.5, (3,): 2.0}, 1)
    assert exact_mean(ModelSpec("VM", 1, p=0.5), f, 0) == f


def test_mean_binomial():
    m = ModelSpec("GOSP", 1, p=0.5, q=0.0)
    assert exact_mean(m, SiteField.delta(1), 2) == SiteField({(-2,): 0.25, (0,): 0.5, (2,): 0.25}, 1)


@given(small_fields, st.integers(0, 6))
def test_mean_preserves_mass(f, t):
    same_dim = [m for m in BERNOULLI if m.d == f.dim]
    assert same_dim
    for m in same_dim[:3]:
        assert math.isclose(exact_mean(m, f, t).l1_norm(), f.l1_norm(), rel_tol=1e-12)


# -- enumeration -------------------------------------------------------------------------


@pytest.mark.parametrize("m", BERNOULLI, ids=IDS)
@pytest.mark.parametrize("t", [1, 2])
def test_enumeration_mean_matches_convolution(m, t):
    init = SiteField.delta(m.d)
    law = enumerate_small(m, init, t, exact=True)
    assert sum((p for _, p in law), Fraction(0)) == 1
    a = exact_mean(m, init, t)
    b = law_mean(law, m.d)
    for s in set(a) | set(b):
        assert abs(a.get(s) - b.get(s)) <= 1e-12


def test_osp_one_step_extinction():
    law = enumerate_small(ModelSpec("OSP", 1, p=0.5), SiteField.delta(1), 1)
    p_dead = sum(p for f, p in law if len(f) == 0)
    assert math.isclose(p_dead, 0.25)  # both neighbour columns closed: (1 - p)^2


def test_enumeration_box_restriction():
    m = ModelSpec("GOBP", 1, p=0.6, q=0.3)
    law = enumerate_small(m, SiteField.delta(1), 2, box=((0,), (0,)))
    assert all(set(f) <= {(0,)} for f, _ in law)
    assert math.isclose(sum(p for _, p in law), 1.0, abs_tol=1e-12)
    full = law_mean(enumerate_small(m, SiteField.delta(1), 2), 1)
    assert math.isclose(law_mean(law, 1).get((0,)), full.get((0,)), rel_tol=1e-12)


def test_enumeration_rejects_gaussian_and_long_times():
    with pytest.raises(ModelError):
        enumerate_small(ModelSpec("DPRE", 1, beta=1.0, env="gaussian"), SiteField.delta(1), 1)
    with pytest.raises(ValueError):
        enumerate_small(ModelSpec("VM", 1, p=0.5), SiteField.delta(1), 4)


def test_enumeration_cap():
    with pytest.raises(EnumerationCapError):
        enumerate_small(ModelSpec("GOBP", 2, p=0.5, q=0.5), SiteField.delta(2), 2, cap=1000)


# -- two-point function ---------------------------------------------------------------


def test_two_point_against_enumeration():
    m = ModelSpec("GOSP", 1, p=0.6, q=0.2)
    init = SiteField.delta(1)
    pf = exact_two_point(m, init, 1)
    tp = law_two_point(enumerate_small(m, init, 1))
    assert set(pf.entries) == {k for k, v in tp.items() if v > 0}
    for k, v in tp.items():
        assert abs(pf[k] - v) <= 1e-14


@pytest.mark.parametrize("m", BERNOULLI, ids=IDS)
def test_two_point_against_enumeration_t2(m):
    init = SiteField.delta(m.d)
    pf = exact_two_point(m, init, 2)
    tp = law_two_point(enumerate_small(m, init, 2))
    for k, v in tp.items():
        assert abs(pf[k] - v) <= 1e-12
    assert math.isclose(pf.total(), sum(tp.values()), rel_tol=1e-12)


@pytest.mark.parametrize("m", BERNOULLI + [ModelSpec("DPRE", 2, beta=0.5, env="gaussian")],
                         ids=IDS + ["DPRE-gauss"])
def test_difference_recursion_matches_pair_recursion(m):
    init = SiteField({(0,) * m.d: 1.0, (1,) + (0,) * (m.d - 1): 0.5}, m.d)
    tot = two_point_totals(m, init, 4)
    for t in range(5):
        assert math.isclose(tot[t], exact_two_point(m, init, t).total(), rel_tol=1e-12)


def test_deterministic_kernel_factorizes():
    # with all weights equal to one the pair law is the product of the means
    m = ModelSpec("GOSP", 1, p=1.0, q=0.0, strict=False)
    init = SiteField({(0,): 1.0, (1,): 2.0}, 1)
    pf = exact_two_point(m, init, 3)
    mean = exact_mean(m, init, 3)
    assert math.isclose(pf.total(), mean.l1_norm() ** 2, rel_tol=1e-13)
    for y, v in mean.items():
        assert math.isclose(pf.diagonal().get(y), v * v, rel_tol=1e-13)


def test_second_moment_increases_to_l2_limit():
    m = ModelSpec("OSP", 3, p=0.8)
    tot = two_point_totals(m, SiteField.delta(3), 30)
    assert np.all(np.diff(tot) > 0)
    pi0 = A.collision_prob(m)[0]
    g = 1 / 0.8
    limit = 1 + pi0 * (g - 1) / (1 - pi0 * g)
    assert tot[-1] < limit
    # the gap closes like t^{-1/2}
    assert limit - tot[-1] < 0.5 * (limit - tot[4])


def test_pair_cap():
    with pytest.raises(ResourceCapError):
        exact_two_point(ModelSpec("OSP", 3, p=0.8), SiteField.delta(3), 30)


def test_engine_second_moment_matches():
    m = ModelSpec("GOSP", 1, p=0.6, q=0.2)
    init = SiteField.delta(1)
    s = ensemble_stats(m, init, 5, 100_000, 123)
    exact = exact_two_point(m, init, 5).total()
    assert abs(s["second_moment"] - exact) <= 4 * s["second_moment_se"]


# -- duality ---------------------------------------------------------------------------


def test_duality_time_zero():
    m = ModelSpec("GOSP", 1, p=0.6, q=0.2)
    for x, y in [((0,), (0,)), ((0,), (1,))]:
        rep = duality_check(m, 0, x, y)
        v = 1.0 if x == y else 0.0
        assert rep.forward_law == {v: 1} and rep.dual_law == {v: 1}
        assert rep.tv_distance == 0


@pytest.mark.parametrize("m,x,y", DUALITY_CASES, ids=[f"{m.label}-{x}-{y}" for m, x, y in DUALITY_CASES])
def test_duality_matrix(m, x, y):
    assert duality_check(m, 2, x, y).tv_distance <= 1e-12


def test_duality_gobp_and_osp():
    assert duality_check(ModelSpec("GOBP", 1, p=0.6, q=0.3), 2, (0,), (1,)).tv_distance < 1e-12
    rep = duality_check(ModelSpec("OSP", 1, p=0.5), 2, (0,), (0,))
    assert rep.forward_law == rep.dual_law


@pytest.mark.parametrize("m", [ModelSpec("BCPP", 1, p=0.5, q=0.3), ModelSpec("DPRE", 1, beta=0.9, rho=0.4)],
                         ids=["BCPP", "DPRE"])
def test_duality_at_t3(m):
    assert duality_check(m, 3, (0,), (1,)).tv_distance <= 1e-12


def test_dual_total_law_differs_from_forward():
    # the entries agree in law, the totals need not: BCPP forward and dual
    # extinction probabilities after one step differ
    m = ModelSpec("BCPP", 1, p=0.5, q=0.3)
    fwd = enumerate_small(m, SiteField.delta(1), 1, exact=True)
    dual = enumerate_small(m, SiteField.delta(1), 1, direction="dual", exact=True)
    pf = sum(p for f, p in fwd if len(f) == 0)
    pd = sum(p for f, p in dual if len(f) == 0)
    assert pf != pd
