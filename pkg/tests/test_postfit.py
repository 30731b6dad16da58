import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from jlcidm import hazards
from jlcidm.data import ParameterSet, make_record, table1_spec, table1_truth
from jlcidm.likelihood import class_membership_probs
from jlcidm.optimizer import OptimizerConfig, fit
from jlcidm.postfit import (Condition, class_mean_curve, condition_weights,
                           conditional_trajectory, cumulative_incidence, gof_weighted_means,
                           posterior_probs)

from conftest import exp_spec, five_subjects
from oracles import exp_theta, oracle_event, oracle_marker

RATES = [[0.004, 0.02], [0.006, 0.011], [0.05, 0.09]]
GAMMAS = (0.3, -0.2, 0.5)
BETA = [[31.0, -4.0], [28.0, -6.0]]


def _with(theta: ParameterSet, **changes) -> ParameterSet:
    return ParameterSet(**{**theta.__dict__, **changes})


def _truth(G: int) -> ParameterSet:
    """Table-1 truth restricted to class 2 (G=1) or extended by a copy of class 1 (G=3)."""
    t = table1_truth()
    if G == 2:
        return t
    idx = [1] if G == 1 else [0, 1, 0]
    zeta = np.zeros((G - 1, t.zeta.shape[1]))
    if G == 3:
        zeta[:] = [[t.zeta[0, 0] - 0.5], [0.0]]
    beta = t.beta_class[idx].copy()
    if G == 3:
        beta[2, 0] -= 2.0
    return _with(t, zeta=zeta, weibull=t.weibull[:, idx].copy(), beta_class=beta,
                 sigma_root=np.ones(0) if G == 1 else t.sigma_root)


def _duplicate_classes(theta: ParameterSet) -> ParameterSet:
    """Copy class-2 parameters onto class 1."""
    w = theta.weibull.copy()
    w[:, 0] = w[:, 1]
    b = theta.beta_class.copy()
    b[0] = b[1]
    gam = tuple(g.copy() for g in theta.gamma)
    for g in gam:
        if g.ndim == 2:
            g[0] = g[1]
    return _with(theta, weibull=w, beta_class=b, gamma=gam)


# ---------------------------------------------------------------- posterior


def test_single_class_posterior_is_one(sim120):
    records, _ = sim120
    spec = table1_spec(n_classes=1)
    post = posterior_probs(records, _truth(1), spec)
    np.testing.assert_array_equal(post.probs, 1.0)
    assert np.all(post.assigned == 0)


def test_identical_classes_return_prior(sim120):
    records, _ = sim120
    spec = table1_spec()
    theta = _duplicate_classes(table1_truth())
    post = posterior_probs(records, theta, spec)
    prior = class_membership_probs(theta.zeta)
    np.testing.assert_allclose(post.probs, np.tile(prior, (len(records), 1)), atol=1e-12)


def test_ties_go_to_lowest_class(sim120):
    records, _ = sim120
    spec = table1_spec()
    theta = _duplicate_classes(table1_truth())
    theta = _with(theta, zeta=np.zeros_like(theta.zeta))
    post = posterior_probs(records, theta, spec)
    np.testing.assert_allclose(post.probs, 0.5, atol=1e-12)
    assert np.all(post.assigned == 0)


def test_three_subject_hand_composition():
    spec = exp_spec(n_classes=2)
    recs = five_subjects(spec)[:3]
    zeta = 0.4
    theta = exp_theta(spec, RATES, GAMMAS, zeta, BETA, su=2.0, se=1.5)
    pi = np.exp([zeta, 0.0]) / np.exp([zeta, 0.0]).sum()
    post = posterior_probs(recs, theta, spec)
    for i, rec in enumerate(recs):
        x = rec.covariates["X"]
        num = []
        for g in range(2):
            a = [RATES[m][g] * math.exp(GAMMAS[m] * x) for m in range(3)]
            num.append(pi[g] * math.exp(oracle_marker(rec, np.asarray(BETA[g]), 2.0, 1.5))
                       * oracle_event(rec, *a))
        want = np.array(num) / sum(num)
        np.testing.assert_allclose(post.probs[i], want, rtol=0, atol=1e-12)


@pytest.fixture(scope="module")
def truth_posterior(sim500):
    records, summary = sim500
    return posterior_probs(records, table1_truth(), table1_spec()), summary


def test_posterior_rows_normalised(truth_posterior):
    post, _ = truth_posterior
    np.testing.assert_allclose(post.probs.sum(axis=1), 1.0, atol=1e-12)
    rows = np.arange(len(post.ids))
    assert np.all(post.probs[rows, post.assigned] == post.probs.max(axis=1))
    assert post.counts.sum() == len(post.ids)


def test_class_mean_posterior_is_diagonally_dominant(truth_posterior):
    post, _ = truth_posterior
    M = post.class_means
    for g in range(M.shape[0]):
        assert np.all(M[g, g] >= np.delete(M[g], g))


def test_classification_beats_chance(truth_posterior):
    post, summary = truth_posterior
    order = np.argsort([int(s) for s in post.ids])
    agree = np.mean(post.assigned[order] == summary.true_class)
    assert agree > max(summary.class_share)


# ---------------------------------------------------------------- goodness of fit


def _noise_free(spec, theta, n=4):
    recs = []
    for i in range(n):
        t0 = 66.0 + 3 * i
        ages = t0 + np.arange(0, 12, 2.0)
        rec = make_record(spec, i + 1, t0, ages[-1], np.inf, 0, ages[-1] + 1.0, 0, {"X": 0.0},
                          markers=np.zeros(len(ages), dtype=int), ages=ages,
                          values=np.zeros(len(ages)))
        recs.append(replace(rec, values=rec.x_class @ theta.beta_class[0]))
    return recs


def test_gof_perfect_model_with_zero_noise():
    spec = exp_spec(n_classes=1)
    theta = exp_theta(spec, [[0.01], [0.02], [0.05]], (0, 0, 0), beta=[[30.0, -3.0]])
    rows = gof_weighted_means(_noise_free(spec, theta), theta, spec)
    assert rows
    for r in rows:
        assert r.predicted == pytest.approx(r.observed, abs=1e-12)
        assert r.predicted_re == pytest.approx(r.predicted, abs=1e-12)


def test_gof_without_random_effects(sim120):
    records, _ = sim120
    spec = table1_spec()
    theta = table1_truth()
    theta = _with(theta, u_chol=np.zeros_like(theta.u_chol))
    for r in gof_weighted_means(records, theta, spec):
        assert r.predicted_re == pytest.approx(r.predicted, abs=1e-10)


def test_gof_bins_and_counts(sim120):
    records, _ = sim120
    spec = table1_spec()
    rows = gof_weighted_means(records, table1_truth(), spec, bin_width=5.0)
    n_obs = sum(r.n_obs for r in records)
    for g in (1, 2):
        cls = [r for r in rows if r.cls == g]
        assert sum(r.n_obs for r in cls) == n_obs
        for r in cls:
            assert r.age_hi - r.age_lo == 5.0
            assert (r.age_lo - 65.0) % 5.0 == 0.0
            assert r.n_obs > 0 and r.weight > 0
    # posterior weights of each observation sum to one over classes
    assert sum(r.weight for r in rows) == pytest.approx(n_obs, rel=1e-9)


def test_gof_rejects_bad_bin_width(sim120):
    records, _ = sim120
    with pytest.raises(ValueError):
        gof_weighted_means(records, table1_truth(), table1_spec(), bin_width=0.0)


# ---------------------------------------------------------------- incidence


@pytest.mark.parametrize("markovian", [True, False])
def test_exponential_incidence_closed_form(markovian):
    spec = exp_spec(n_classes=2, markovian=markovian)
    theta = exp_theta(spec, RATES, GAMMAS, 0.4, BETA)
    ages = np.array([65.0, 66.0, 70.0, 77.5, 90.0, 104.0])
    for g in range(2):
        for x in (0.0, 1.0):
            a01, a02, a12 = (RATES[m][g] * math.exp(GAMMAS[m] * x) for m in range(3))
            c = cumulative_incidence(theta, spec, g, {"X": x}, ages)
            d = ages - 65.0
            tot = a01 + a02
            np.testing.assert_allclose(c["F01"], a01 / tot * (1 - np.exp(-tot * d)), atol=1e-8)
            np.testing.assert_allclose(c["F02"], a02 / tot * (1 - np.exp(-tot * d)), atol=1e-8)
            np.testing.assert_allclose(c["F12"], 1 - np.exp(-a12 * d), atol=1e-8)


def test_incidence_at_origin_is_zero():
    c = cumulative_incidence(table1_truth(), table1_spec(), 0, {"X": 1.0}, [65.0])
    for v in c.values():
        assert v[0] == 0.0


def test_incidence_rejects_young_ages():
    with pytest.raises(ValueError):
        cumulative_incidence(table1_truth(), table1_spec(), 0, {"X": 0.0}, [64.0, 70.0])


@given(st.lists(st.floats(min_value=65.0, max_value=110.0), min_size=1, max_size=15),
       st.integers(min_value=0, max_value=1), st.booleans(), st.sampled_from([0.0, 1.0]))
def test_incidence_bounds_and_monotonicity(ages, g, markovian, x):
    spec = table1_spec(markovian=markovian)
    ages = np.array(ages)
    c = cumulative_incidence(table1_truth(), spec, g, {"X": x}, ages)
    order = np.argsort(ages, kind="stable")
    for name, v in c.items():
        assert np.all(v >= 0.0)
        assert np.all(np.diff(v[order]) >= -1e-15), name
    assert np.all(c["F01"] + c["F02"] <= 1.0 + 1e-12)
    assert np.all(c["F12"] <= 1.0 + 1e-12)


def test_incidence_grid_order_does_not_matter():
    ages = np.array([90.0, 70.0, 80.0, 100.0])
    a = cumulative_incidence(table1_truth(), table1_spec(), 1, {"X": 1.0}, ages)
    b = cumulative_incidence(table1_truth(), table1_spec(), 1, {"X": 1.0}, np.sort(ages))
    for k in a:
        np.testing.assert_allclose(a[k][np.argsort(ages)], b[k], rtol=1e-12)


def test_competing_spec_has_no_f12():
    spec = table1_spec(competing=True)
    c = cumulative_incidence(table1_truth(spec), spec, 0, {"X": 0.0}, [70.0, 80.0])
    assert set(c) == {"F01", "F02"}


# ---------------------------------------------------------------- trajectories

AGES = np.arange(65.0, 96.0, 1.0)


@pytest.mark.parametrize("kind", ["healthy_alive", "died_dementia_free", "dementia_onset"])
def test_single_class_trajectory_is_class_mean(kind):
    spec = table1_spec(n_classes=1)
    theta = _truth(1)
    curve, w = conditional_trajectory(theta, spec, Condition(kind, 80.0, {"X": 1.0}), AGES)
    np.testing.assert_array_equal(w, [1.0])
    np.testing.assert_allclose(curve, class_mean_curve(theta, spec, 0, {"X": 1.0}, AGES),
                               rtol=1e-14)


def test_healthy_weights_direct_formula():
    spec, theta = table1_spec(), table1_truth()
    a, x = 88.0, 1.0
    pi = class_membership_probs(theta.zeta)
    s = []
    for g in range(2):
        lp = [theta.gamma_for(m, g)[0] * x for m in range(2)]
        s.append(math.exp(-hazards.cumhaz(a, theta.shape[0, g], theta.scale[0, g], lp[0])
                          - hazards.cumhaz(a, theta.shape[1, g], theta.scale[1, g], lp[1])))
    want = pi * np.array(s) / (pi * np.array(s)).sum()
    got = condition_weights(theta, spec, Condition("healthy_alive", a, {"X": x}))
    np.testing.assert_allclose(got, want, rtol=1e-12)


@given(st.sampled_from(["healthy_alive", "died_dementia_free", "dementia_onset"]),
       st.floats(min_value=60.0, max_value=105.0), st.sampled_from([0.0, 1.0]),
       st.integers(min_value=1, max_value=3))
def test_condition_weights_are_probabilities(kind, age, x, G):
    spec = table1_spec(n_classes=G)
    theta = _truth(G)
    w = condition_weights(theta, spec, Condition(kind, age, {"X": x}))
    assert w.shape == (G,)
    assert np.all(w >= 0.0)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_condition_validation():
    with pytest.raises(ValueError):
        Condition("moved_away", 80.0, {})
    with pytest.raises(ValueError):
        Condition("healthy_alive", -1.0, {})
    assert Condition("dementia_onset", 80.0, {}).label == "dementia_onset@80"


@pytest.fixture(scope="module")
def fitted(sim500):
    records, _ = sim500
    return fit(records, table1_spec(), table1_truth(), OptimizerConfig(n_starts=1))


def test_healthy_survivor_curve_is_highest(fitted):
    late = AGES >= 80.0
    for x in (0.0, 1.0):
        curves = {}
        for kind, a in (("healthy_alive", 95.0), ("died_dementia_free", 80.0),
                        ("dementia_onset", 80.0)):
            curves[kind], _ = conditional_trajectory(fitted.theta_hat, fitted.spec,
                                                     Condition(kind, a, {"X": x}), AGES)
        assert np.all(curves["healthy_alive"][late] >= curves["died_dementia_free"][late])
        assert np.all(curves["healthy_alive"][late] >= curves["dementia_onset"][late])
