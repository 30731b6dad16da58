import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from jlcidm.data import make_record, table1_spec, table1_truth
from jlcidm.likelihood import (JointLikelihood, LikelihoodError, QuadratureRule,
                               class_membership_probs, contribution_demented,
                               contribution_healthy, contribution_unknown, log_likelihood,
                               log_likelihood_competing)
from jlcidm.simulator import impute_competing

from conftest import exp_spec, five_subjects
from oracles import exp_theta, oracle_event, oracle_loglik, oracle_marker


RATES = [[0.004, 0.02], [0.006, 0.011], [0.05, 0.09]]
GAMMAS = (0.3, -0.2, 0.5)
BETA = [[31.0, -4.0], [28.0, -6.0]]


@pytest.mark.parametrize("markovian", [True, False])
def test_five_subject_closed_form(markovian):
    spec = exp_spec(n_classes=2, markovian=markovian)
    recs = five_subjects(spec)
    theta = exp_theta(spec, RATES, GAMMAS, 0.4, BETA, su=2.0, se=1.5)
    got = log_likelihood(recs, theta, spec)
    want = oracle_loglik(recs, spec, RATES, GAMMAS, 0.4, BETA, 2.0, 1.5)
    assert abs(got - want) < 1e-8


def test_subject_contributions_closed_form():
    spec = exp_spec(n_classes=2)
    recs = five_subjects(spec)
    theta = exp_theta(spec, RATES, GAMMAS, 0.4, BETA)
    for rec in recs:
        for g in range(2):
            x = rec.covariates["X"]
            a = [RATES[m][g] * math.exp(GAMMAS[m] * x) for m in range(3)]
            want = oracle_event(rec, *a)
            if rec.delta_a == 1:
                got = contribution_demented(rec, g, theta, spec)
            elif rec.l == rec.t_end:
                got = contribution_healthy(rec, g, theta, spec)
            else:
                got = contribution_unknown(rec, g, theta, spec)
            assert got == pytest.approx(want, rel=1e-10)


def test_contribution_preconditions(t1_spec, t1_truth):
    recs = five_subjects(exp_spec())
    with pytest.raises(ValueError):
        contribution_demented(recs[2], 0, t1_truth, t1_spec)
    with pytest.raises(ValueError):
        contribution_healthy(recs[0], 0, t1_truth, t1_spec)
    with pytest.raises(ValueError):
        contribution_unknown(recs[0], 0, t1_truth, t1_spec)


def test_exact_onset_uses_density():
    spec = exp_spec()
    rec = make_record(spec, 9, 70.0, 74.0, 74.0, 1, 78.0, 1, {"X": 0.0})
    theta = exp_theta(spec, [[0.01], [0.02], [0.05]], (0, 0, 0), beta=[[30.0, -3.0]])
    want = math.exp(-0.03 * 74) * 0.01 * math.exp(-0.05 * 4) * 0.05
    assert contribution_demented(rec, 0, theta, spec) == pytest.approx(want, rel=1e-12)


def test_competing_closed_form():
    spec = exp_spec(n_classes=2)
    cr = replace(spec, competing=True)
    recs = impute_competing(five_subjects(spec))
    rates = [[0.004, 0.02], [0.006, 0.011]]
    theta = exp_theta(cr, rates, GAMMAS, 0.4, BETA)
    pi = np.exp([0.4, 0.0]) / np.exp([0.4, 0.0]).sum()
    want = 0.0
    for rec in recs:
        x = rec.covariates["X"]
        cause = 1 if rec.delta_a else (2 if rec.delta_d else 0)
        num = den = 0.0
        for g in range(2):
            a1, a2 = (rates[m][g] * math.exp(GAMMAS[m] * x) for m in range(2))
            ev = math.exp(-(a1 + a2) * rec.t_end) * (a1 if cause == 1 else 1) * (a2 if cause == 2 else 1)
            f = math.exp(oracle_marker(rec, np.asarray(BETA[g]), 2.0, 1.5))
            num += pi[g] * f * ev
            den += pi[g] * math.exp(-(a1 + a2) * rec.t0)
        want += math.log(num) - math.log(den)
    assert log_likelihood_competing(recs, theta, cr) == pytest.approx(want, abs=1e-8)
    with pytest.raises(ValueError):
        log_likelihood_competing(recs, theta, spec)
    with pytest.raises(ValueError):
        log_likelihood(recs, theta, cr)


# ------------------------------------------------------------ properties ----

@given(st.lists(st.floats(-30, 30), min_size=1, max_size=6),
       st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_softmax_normalised(z, x):
    zeta = np.column_stack([z, np.zeros(len(z))]) if len(z) else np.zeros((0, 2))
    p = class_membership_probs(zeta, [1.0, x[0]])
    assert p.shape == (len(z) + 1,)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(p >= 0)
    # reference class has zero linear predictor
    assert class_membership_probs(np.zeros((len(z), 2)), [1.0, x[0]]) == pytest.approx(
        np.full(len(z) + 1, 1.0 / (len(z) + 1)))


@given(st.floats(60, 90), st.floats(0.1, 15), st.integers(0, 1), st.floats(0.3, 4),
       st.floats(0.05, 0.15))
def test_unknown_at_least_healthy(l, gap, dead, shape_root, scale_root):
    spec = exp_spec()
    t = l + gap
    rec = make_record(spec, 1, l - 1.0, l, np.inf, 0, t, dead, {"X": 1.0})
    healthy_rec = make_record(spec, 1, l - 1.0, t, np.inf, 0, t, dead, {"X": 1.0})
    theta = exp_theta(spec, [[0.01], [0.02], [0.05]], beta=[[30.0, -3.0]])
    w = theta.weibull.copy()
    w[:, 0] = (shape_root, scale_root)
    theta = replace(theta, weibull=w)
    pu = contribution_unknown(rec, 0, theta, spec)
    ph = contribution_healthy(healthy_rec, 0, theta, spec)
    assert pu >= ph


def test_delayed_entry_zero_at_origin():
    spec = exp_spec()
    theta = exp_theta(spec, [[0.01], [0.02], [0.05]], beta=[[30.0, -3.0]])
    rec = make_record(spec, 1, 0.0, 3.0, np.inf, 0, 3.0, 0, {"X": 1.0})
    lik = JointLikelihood([rec], spec)
    _, entry = lik.block(theta, ("surv", 0))
    assert entry[0] == 0.0
    # no correction: the total is the plain event log-probability
    a01, a02 = 0.01 * math.exp(0.3), 0.02 * math.exp(-0.2)
    assert lik.loglik(theta) == pytest.approx(-(a01 + a02) * 3.0, abs=1e-12)


def test_mixture_degeneracy(sim120):
    records, _ = sim120
    spec1, spec2 = table1_spec(n_classes=1), table1_spec(n_classes=2)
    t2 = table1_truth()
    w = t2.weibull.copy()
    w[:, 1] = w[:, 0]
    bc = np.repeat(t2.beta_class[:1], 2, axis=0)
    dup = replace(t2, weibull=w, beta_class=bc, zeta=np.array([[0.7]]))
    single = replace(t2, weibull=w[:, :1], beta_class=bc[:1], zeta=np.zeros((0, 1)))
    assert abs(log_likelihood(records, dup, spec2) - log_likelihood(records, single, spec1)) < 1e-10


def test_semi_markov_equals_markov_for_unit_shape(sim120):
    records = sim120[0][:50]
    theta = table1_truth()
    w = theta.weibull.copy()
    w[2, :, 0] = 1.0
    theta = replace(theta, weibull=w)
    a = log_likelihood(records, theta, table1_spec(markovian=True))
    b = log_likelihood(records, theta, table1_spec(markovian=False))
    assert abs(a - b) < 1e-8


def test_quadrature_node_doubling(sim500):
    records, _ = sim500
    theta = table1_truth()
    a = log_likelihood(records, theta, table1_spec(quadrature_nodes=30))
    b = log_likelihood(records, theta, table1_spec(quadrature_nodes=60))
    assert abs(a - b) < 1e-6


def test_gauss_legendre_polynomial_exactness():
    rule = QuadratureRule.gauss_legendre(5)
    # exact for degree <= 9
    val = rule.log_integral(lambda u: np.log(u ** 9 + 1.0), np.array([1.0]), np.array([3.0]))
    assert math.exp(val[0]) == pytest.approx((3 ** 10 - 1) / 10 + 2, rel=1e-13)


@given(st.permutations(list(range(12))))
def test_loglik_invariant_to_subject_order(perm):
    spec = exp_spec(n_classes=2)
    base = five_subjects(spec)
    recs = [replace(base[i % 5], id=str(i + 1)) for i in range(12)]
    theta = exp_theta(spec, RATES, GAMMAS, 0.4, BETA)
    a = log_likelihood(recs, theta, spec)
    b = log_likelihood([recs[i] for i in perm], theta, spec)
    assert a == pytest.approx(b, abs=1e-9)


def test_zero_probability_names_subject():
    spec = exp_spec(n_classes=2)
    recs = five_subjects(spec)
    theta = exp_theta(spec, RATES, GAMMAS, 0.4, BETA)
    w = theta.weibull.copy()
    w[1, :, 1] = 0.0          # no healthy deaths possible
    with np.errstate(divide="ignore"), pytest.raises(LikelihoodError, match="subject 3"):
        log_likelihood(recs, replace(theta, weibull=w), spec)


def test_single_class_membership_with_covariates():
    np.testing.assert_array_equal(class_membership_probs(np.zeros((0, 2)), [1.0, 3.0]), [1.0])
    assert class_membership_probs(np.zeros((0, 2)), np.ones((4, 2))).shape == (4, 1)
    np.testing.assert_array_equal(class_membership_probs(np.zeros(0)), [1.0])
