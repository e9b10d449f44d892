import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lse_lab import analytics as A
from lse_lab.models import ModelSpec, column_sum_is_constant, gamma_dpre, lam, phi

SIMPLE3 = ModelSpec("OSP", 3, p=0.8)
probs = st.floats(0.02, 0.98)


# -- reports ----------------------------------------------------------------------------


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 1))
def test_verdict_rule(lhs, rhs, err):
    r = A.CriterionReport.decide("x", lhs, rhs, "series", err)
    assert (r.verdict == A.HOLDS) == (lhs < rhs - err)
    assert (r.verdict == A.FAILS) == (lhs > rhs + err)
    assert r.error_bound >= 0


def test_nan_is_inconclusive_and_serializes():
    r = A.CriterionReport.decide("x", float("nan"), 1.0, "closed_form")
    assert r.verdict == A.INCONCLUSIVE
    assert r.to_dict()["lhs"] is None
    with pytest.raises(ValueError):
        A.CriterionReport.decide("x", 0.0, 1.0, "guess")


def test_phase_report_json():
    rep = A.classify_phase(SIMPLE3)
    data = json.loads(rep.to_json())
    assert data["classification"] == "regular"
    assert data["l2"]["method"] in A.METHODS
    assert data["model"]["p"] == 0.8


# -- collision probabilities ----------------------------------------------------------


def test_simple_walk_pi0():
    pi0, err = A.collision_prob(SIMPLE3)
    assert 0.3395 <= pi0 <= 0.3415
    assert pi0 > 1 / 6
    assert err < 1e-4
    # reference value of the d=3 simple random walk return probability
    assert abs(pi0 - 0.340537329550999) < 1e-6


def test_dpre_walk_is_simple():
    m = ModelSpec("DPRE", 3, beta=0.4)
    assert abs(A.collision_prob(m)[0] - A.collision_prob(SIMPLE3)[0]) < 1e-9


@pytest.mark.parametrize("m", [ModelSpec("OSP", 1, p=0.3), ModelSpec("VM", 2, p=0.5)])
def test_recurrent_dimensions(m):
    assert A.collision_prob(m) == (1.0, 0.0)


@pytest.mark.parametrize("m", [
    ModelSpec("GOSP", 3, p=0.8, q=0.3),
    ModelSpec("GOBP", 3, p=0.5, q=0.1),
    ModelSpec("BCPP", 3, p=0.5, q=0.3),
    ModelSpec("VM", 3, p=0.5),
    ModelSpec("GOBP", 4, p=0.5, q=0.1),
    ModelSpec("BCPP", 4, p=0.6, q=0.2),
    ModelSpec("OSP", 4, p=0.5),
], ids=lambda m: m.label)
def test_series_and_quadrature_agree(m):
    gt = A.green_table(m)
    for x in gt.sites:
        s, q = gt.value(x, "series"), gt.value(x, "quadrature")
        assert abs(s - q) <= 1e-3
        assert abs(s - q) <= gt.series_err[gt.index(x)] + gt.quad_err[gt.index(x)] + 1e-6


def test_pi_x_parity_and_decay():
    # both walkers of an OSP pair move every step, so odd differences never close
    for k in (1, 3):
        assert abs(A.collision_prob(SIMPLE3, (k, 0, 0))[0]) < 1e-9
    vals = [A.collision_prob(SIMPLE3, (k, 0, 0))[0] for k in (2, 4, 6)]
    assert all(0 < v < 1 for v in vals)
    assert vals == sorted(vals, reverse=True)
    assert A.collision_prob(SIMPLE3, (1, 1, 0))[0] > vals[0]


def test_high_dimension_falls_back_to_quadrature():
    m = ModelSpec("OSP", 5, p=0.5)
    gt = A.green_table(m)
    assert gt.primary in ("series", "quadrature")
    pi0, err = A.collision_prob(m)
    # the d=5 simple walk return probability
    assert abs(pi0 - 0.1351786098) < 1e-6
    assert err < 1e-4


# -- collision weights ----------------------------------------------------------------


@pytest.mark.parametrize("x", [(0, 0, 0), (1, 0, 0), (1, 1, 0), (2, 0, 1)])
@pytest.mark.parametrize("p", [0.5, 0.8])
def test_osp_weight_is_pi_over_p(x, p):
    m = ModelSpec("OSP", 3, p=p)
    w, err = A.collision_weight(m, x)
    px, perr = A.collision_prob(m, x)
    assert abs(w - px / p) <= err + perr / p + 1e-9


@given(probs, st.floats(0.05, 0.95))
@settings(max_examples=10)
def test_gobp_weight_at_origin(p, q):
    d = 3
    m = ModelSpec("GOBP", d, p=p, q=q)
    w, err = A.collision_weight(m)
    pi0, perr = A.collision_prob(m)
    c = (2 * d * p * (1 - p) + q * (1 - q)) / (2 * d * p + q) ** 2
    assert abs(w - (pi0 + c)) <= err + perr + 1e-9


@pytest.mark.parametrize("env", ["bernoulli", "gaussian"])
def test_dpre_weight(env):
    m = ModelSpec("DPRE", 3, beta=0.6, env=env, rho=0.4)
    g = math.exp(lam(m, 1.2) - 2 * lam(m, 0.6))
    assert math.isclose(gamma_dpre(m), g)
    for x in [(0, 0, 0), (1, 0, 0), (0, 2, 1)]:
        w, err = A.collision_weight(m, x)
        px, perr = A.collision_prob(m, x)
        assert abs(w - g * px) <= err + g * perr + 1e-9


@pytest.mark.parametrize("m", [SIMPLE3, ModelSpec("BCPP", 3, p=0.5, q=0.3)], ids=["OSP", "BCPP"])
def test_weight_against_pair_walk_monte_carlo(m):
    w, err = A.collision_weight(m)
    mean, se, bias = A.collision_weight_mc(m, n_episodes=200_000, max_steps=2000, seed=3)
    # the capped walk only undercounts, by at most ``bias``
    assert mean - 4 * se - err <= w <= mean + 4 * se + bias + err


# -- L2 criteria -------------------------------------------------------------------------


def test_l2_osp():
    rep, cov = A.l2_report(SIMPLE3)
    assert rep.verdict == A.HOLDS and rep.method in ("series", "quadrature")
    pi0 = A.collision_prob(SIMPLE3)[0]
    g = 1 / 0.8
    assert abs(cov((0, 0, 0)) - (1 + pi0 * (g - 1) / (1 - pi0 * g))) < 1e-6
    assert abs(cov((0, 0, 0)) - 1.148) < 1e-3
    for x in [(1, 0, 0), (2, 1, 0)]:
        px = A.collision_prob(SIMPLE3, x)[0]
        assert abs(cov(x) - (1 + px * (g - 1) / (1 - pi0 * g))) < 1e-5
    bad, cov_bad = A.l2_report(ModelSpec("OSP", 3, p=0.2))
    assert bad.verdict == A.FAILS and cov_bad is None


def test_l2_monotone_in_p():
    verdicts = [A.l2_report(ModelSpec("OSP", 3, p=p))[0].holds for p in np.linspace(0.05, 0.95, 19)]
    first = verdicts.index(True)
    assert all(verdicts[first:]) and not any(verdicts[:first])


@pytest.mark.parametrize("p,q", [(0.5, 0.1), (0.1, 0.2), (0.05, 0.9)])
def test_l2_gobp(p, q):
    d = 3
    m = ModelSpec("GOBP", d, p=p, q=q)
    rep, _ = A.l2_report(m)
    c = (2 * d * p * (1 - p) + q * (1 - q)) / (2 * d * p + q) ** 2
    pi0 = A.collision_prob(m)[0]
    if rep.verdict != A.INCONCLUSIVE:
        assert rep.holds == (pi0 + c < 1)


def test_dual_l2_osp_matches_forward():
    pi0 = A.collision_prob(SIMPLE3)[0]
    for p in (0.2, 0.3, 0.5, 0.8):
        m = ModelSpec("OSP", 3, p=p)
        assert A.dual_l2_report(m).holds == (p > pi0)


@pytest.mark.parametrize("beta", [0.2, 0.5, 1.0])
def test_dual_l2_dpre(beta):
    m = ModelSpec("DPRE", 3, beta=beta, env="gaussian")
    pi0 = A.collision_prob(m)[0]
    rep = A.dual_l2_report(m)
    assert rep.holds == (lam(m, 2 * beta) - 2 * lam(m, beta) < math.log(1 / pi0))


def test_dual_column_sum_flag():
    assert A.dual_l2_report(ModelSpec("VM", 1, p=0.5)).details["column_sum_constant"] is False
    # every site copies a uniform neighbour: how many copy site 0 is still random
    assert A.dual_l2_report(ModelSpec("VM", 1, p=1.0)).details["column_sum_constant"] is False
    det = ModelSpec("GOSP", 1, p=1.0, q=0.0, strict=False)
    assert column_sum_is_constant(det)
    assert not column_sum_is_constant(ModelSpec("OSP", 2, p=0.5))


# -- entropy criterion -----------------------------------------------------------------


@given(st.integers(1, 4), probs, probs)
def test_entropy_gosp(d, p, q):
    m = ModelSpec("GOSP", d, p=p, q=q)
    rep, hphi = A.entropy_report(m)
    s = 2 * d * p + q
    if abs(s - 1) > 1e-9:
        assert rep.holds == (s < 1)
    if rep.holds:
        h, ph = hphi
        assert 0 < h < 1 and ph < 1


@given(st.integers(1, 3), probs, probs)
def test_entropy_bcpp(d, p, q):
    rep, _ = A.entropy_report(ModelSpec("BCPP", d, p=p, q=q))
    if abs(p + q - 1) > 1e-9:
        assert rep.holds == (p + q < 1)


def test_entropy_dpre_minimizer():
    m = ModelSpec("DPRE", 1, beta=3.0, env="gaussian")
    rep, (h, ph) = A.entropy_report(m)
    assert rep.holds
    grid = np.linspace(1e-3, 1 - 1e-3, 2001)
    best = min(phi(m, x) for x in grid)
    assert ph <= best + 1e-9
    assert ph < 1


# -- covariance criterion ---------------------------------------------------------------


def test_gamma_gosp_grid():
    for d in (1, 2):
        for p in np.linspace(0.1, 0.9, 9):
            for q in np.linspace(0.1, 0.9, 9):
                m = ModelSpec("GOSP", d, p=float(p), q=float(q))
                g = A.gamma_report(m)
                c = 2 * d * p * (1 - p) + q * (1 - q)
                assert g is not None and g > 1
                assert math.isclose(g, 1 + c / (2 * d * p + q) ** 2, rel_tol=1e-12)


def test_bcpp_fourier_gap():
    p, q = 0.5, 0.3
    gap = A.fourier_gap(ModelSpec("BCPP", 2, p=p, q=q))
    assert gap.refined >= p * (1 - p) + q * (1 - q) - 1e-6
    assert gap.lower > 0 and gap.lower <= gap.refined
    assert A.gamma_report(ModelSpec("BCPP", 2, p=p, q=q)) > 1


def test_voter_has_no_gamma():
    m = ModelSpec("VM", 1, p=0.5)
    assert A.gamma_report(m) is None
    assert abs(A.fourier_gap(m).refined) < 1e-12


# -- classification ----------------------------------------------------------------------


def test_classify_examples():
    assert A.classify_phase(SIMPLE3).classification == A.REGULAR
    for p in (0.2, 0.5, 0.9):
        rep = A.classify_phase(ModelSpec("OSP", 1, p=p))
        assert rep.classification == A.SLOW and rep.rate == "exponential"
    rep = A.classify_phase(ModelSpec("GOSP", 5, p=0.05, q=0.05))
    assert rep.classification == A.SLOW and rep.entropy.holds


@given(st.sampled_from(["GOSP", "GOBP", "BCPP"]), st.integers(1, 3), probs, probs)
@settings(max_examples=15)
def test_classification_invariants(kind, d, p, q):
    rep = A.classify_phase(ModelSpec(kind, d, p=p, q=q))
    if rep.classification == A.REGULAR:
        assert rep.l2.holds and d >= 3
        assert not rep.entropy.holds
    if rep.entropy.holds or (d <= 2 and rep.gamma is not None):
        assert rep.classification == A.SLOW
