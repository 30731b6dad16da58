"""Mixture log-likelihood of the joint latent class illness-death model.

The per-subject, per-class pieces are kept in separate blocks so that a
perturbation of one parameter only recomputes what it touches:

* ``("prior",)``   log pi_ig, shape (N, G)
* ``("long", g)``  log f(Y_i | c_i = g), shape (N,)
* ``("surv", g)``  (log P(D_i | c_i = g), log P(healthy at T0_i | c_i = g))
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import math

import numpy as np

from . import hazards
from .data import ModelSpec, ParameterLayout, ParameterSet, SubjectRecord
from .longitudinal import NotPositiveDefinite, PackedMarkers


class LikelihoodError(ArithmeticError):
    """Non-finite likelihood contribution."""


def logsumexp(a, axis=-1, keepdims=False):
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out if keepdims else np.squeeze(out, axis=axis)


# --------------------------------------------------------------------------
# quadrature
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def gauss_legendre(cls, n: int) -> "QuadratureRule":
        return _gl(n)

    def grid(self, a, b):
        """Nodes mapped to each interval [a, b] and the matching log weights."""
        a = np.asarray(a, dtype=float)[..., None]
        b = np.asarray(b, dtype=float)[..., None]
        half = 0.5 * (b - a)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights) + np.log(half)
        return half * self.nodes + 0.5 * (a + b), logw

    def log_integral(self, log_f, a, b, grid=None):
        """log of int_a^b exp(log_f(u)) du for arrays of intervals (a, b)."""
        u, logw = self.grid(a, b) if grid is None else grid
        return logsumexp(log_f(u) + logw, axis=-1)


@lru_cache(maxsize=None)
def _gl(n: int) -> QuadratureRule:
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(x, w)


# --------------------------------------------------------------------------
# class membership
# --------------------------------------------------------------------------


def class_membership_probs(zeta: np.ndarray, x_p=None) -> np.ndarray:
    """Multinomial logit probabilities with the last class as reference."""
    return np.exp(log_class_membership(zeta, x_p))


def log_class_membership(zeta: np.ndarray, x_p=None) -> np.ndarray:
    zeta = np.asarray(zeta, dtype=float)
    if zeta.ndim < 2:
        zeta = np.atleast_2d(zeta) if zeta.size else np.zeros((0, 1))
    if zeta.shape[0] == 0 and x_p is not None:
        zeta = np.zeros((0, np.shape(x_p)[-1]))  # single class: any covariate width
    if x_p is None:
        x_p = np.ones(zeta.shape[1])
    x_p = np.asarray(x_p, dtype=float)
    lin = x_p @ zeta.T  # (..., G-1)
    lin = np.concatenate([lin, np.zeros(lin.shape[:-1] + (1,))], axis=-1)
    return lin - logsumexp(lin, axis=-1, keepdims=True)


# --------------------------------------------------------------------------
# event-history contributions (log scale, vectorised over subjects)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassHazards:
    """Weibull parameters of one class with per-subject linear predictors."""

    shape: np.ndarray  # (n transitions,)
    scale: np.ndarray
    lp: np.ndarray     # (n transitions, N)

    def log_alpha(self, m: int, t, idx=slice(None)):
        lp = self.lp[m][idx]
        if np.ndim(t) > np.ndim(lp):
            lp = lp[..., None]
        return hazards.log_hazard(t, self.shape[m], self.scale[m], lp)

    def cum(self, m: int, t, idx=slice(None)):
        lp = self.lp[m][idx]
        if np.ndim(t) > np.ndim(lp):
            lp = lp[..., None]
        return hazards.cumhaz(t, self.shape[m], self.scale[m], lp)

    def subset(self, idx) -> "ClassHazards":
        return ClassHazards(self.shape, self.scale, self.lp[:, idx])


def _log_onset_density(h: ClassHazards, u, t_end, dead, markovian: bool):
    """log of the integrand: healthy to u, onset at u, alive (and dying) at t_end.

    ``t_end`` and ``dead`` are per-subject arrays broadcast against u's last axis.
    """
    t_end = np.asarray(t_end, dtype=float)[..., None] if np.ndim(u) > np.ndim(t_end) else t_end
    dead = np.asarray(dead)[..., None] if np.ndim(u) > np.ndim(dead) else dead
    out = -h.cum(0, u) - h.cum(1, u) + h.log_alpha(0, u)
    if markovian:
        out = out - (h.cum(2, t_end) - h.cum(2, u))
        death = h.log_alpha(2, np.broadcast_to(t_end, np.shape(u)))
    else:
        dur = t_end - u
        out = out - h.cum(2, dur)
        death = h.log_alpha(2, dur)
    return out + np.where(dead == 1, death, 0.0)


def log_p_healthy(h: ClassHazards, t_end, dead):
    """Healthy and alive up to t_end, possibly dying at t_end (patterns 3-4)."""
    out = -h.cum(0, t_end) - h.cum(1, t_end)
    return out + np.where(dead == 1, h.log_alpha(1, t_end), 0.0)


def log_p_demented(h: ClassHazards, l, r, t_end, dead, markovian: bool,
                   rule: QuadratureRule):
    """Onset in [l, r], then alive (and dying) at t_end (patterns 1-2)."""
    l, r, t_end, dead = (np.asarray(a) for a in (l, r, t_end, dead))
    out = np.empty(l.shape)
    exact = l == r
    if exact.any():
        e = np.where(exact)[0]
        he = h.subset(e)
        out[e] = _log_onset_density(he, l[e], t_end[e], dead[e], markovian)
    iv = np.where(~exact)[0]
    if iv.size:
        hi = h.subset(iv)
        out[iv] = rule.log_integral(
            lambda u: _log_onset_density(hi, u, t_end[iv], dead[iv], markovian), l[iv], r[iv])
    return out


def log_p_unknown(h: ClassHazards, l, t_end, dead, markovian: bool, rule: QuadratureRule):
    """Healthy through t_end, or onset in [l, t_end] unobserved (patterns 5-6)."""
    l, t_end, dead = (np.asarray(a) for a in (l, t_end, dead))
    healthy = log_p_healthy(h, t_end, dead)
    out = healthy.copy()
    iv = np.where(l < t_end)[0]
    if iv.size:
        hi = h.subset(iv)
        path = rule.log_integral(
            lambda u: _log_onset_density(hi, u, t_end[iv], dead[iv], markovian), l[iv], t_end[iv])
        out[iv] = np.logaddexp(healthy[iv], path)
    return out


@dataclass(frozen=True)
class OnsetGrid:
    """Quadrature nodes of onset integrals with their logs, fixed for a dataset."""

    logw: np.ndarray      # (n, Q) log weights including the half-width
    log_u: np.ndarray     # (n, Q)
    log_dur: np.ndarray   # (n, Q) log(t_end - u)
    log_t: np.ndarray     # (n, 1) log t_end
    dead: np.ndarray      # (n, 1) bool

    @classmethod
    def build(cls, rule: QuadratureRule, a, b, t_end, dead) -> "OnsetGrid":
        u, logw = rule.grid(a, b)
        t_end = np.asarray(t_end, dtype=float)[:, None]
        with np.errstate(divide="ignore"):
            return cls(logw, np.log(u), np.log(t_end - u), np.log(t_end),
                       np.asarray(dead)[:, None] == 1)

    def log_integral(self, h: ClassHazards, markovian: bool) -> np.ndarray:
        """Same integrand as _log_onset_density, evaluated from cached logs."""
        k, ls, lp = h.shape, np.log(h.scale), h.lp[:, :, None]

        def log_cum(m, logt):
            return k[m] * (ls[m] + logt) + lp[m]

        def log_alpha(m, logt):
            return math.log(k[m]) + k[m] * ls[m] + (k[m] - 1.0) * logt + lp[m]

        f = (log_alpha(0, self.log_u) - np.exp(log_cum(0, self.log_u))
             - np.exp(log_cum(1, self.log_u)))
        if markovian:
            f = f - (np.exp(log_cum(2, self.log_t)) - np.exp(log_cum(2, self.log_u)))
            death = log_alpha(2, self.log_t)
        else:
            f = f - np.exp(log_cum(2, self.log_dur))
            death = log_alpha(2, self.log_dur)
        f = f + np.where(self.dead, death, 0.0)
        return logsumexp(f + self.logw, axis=-1)


def log_p_competing(h: ClassHazards, t_end, cause):
    """First-event likelihood with cause 0 (censored), 1 (dementia) or 2 (death)."""
    out = -h.cum(0, t_end) - h.cum(1, t_end)
    out = out + np.where(cause == 1, h.log_alpha(0, t_end), 0.0)
    return out + np.where(cause == 2, h.log_alpha(1, t_end), 0.0)


# --------------------------------------------------------------------------
# packed data + block evaluation
# --------------------------------------------------------------------------


class PackedEvents:
    def __init__(self, records: Sequence[SubjectRecord], spec: ModelSpec):
        self.ids = [r.id for r in records]
        self.t0 = np.array([r.t0 for r in records], dtype=float)
        self.l = np.array([r.l for r in records], dtype=float)
        self.r = np.array([r.r for r in records], dtype=float)
        self.t_end = np.array([r.t_end for r in records], dtype=float)
        self.delta_a = np.array([r.delta_a for r in records], dtype=int)
        self.delta_d = np.array([r.delta_d for r in records], dtype=int)

        def cov(name, r):
            if name not in r.covariates:
                raise KeyError(f"subject {r.id}: covariate {name!r} missing")
            return r.covariates[name]

        self.w = [np.array([[cov(c, r) for c in spec.event_terms(tr)] for r in records],
                           dtype=float).reshape(len(records), -1)
                  for tr in spec.transitions]
        self.x_p = np.array([[1.0] + [cov(c, r) for c in spec.class_covariates]
                             for r in records], dtype=float).reshape(len(records), -1)
        self.demented = np.where(self.delta_a == 1)[0]
        self.healthy = np.where((self.delta_a == 0) & (self.l == self.t_end))[0]
        self.unknown = np.where((self.delta_a == 0) & (self.l < self.t_end))[0]
        self.cause = np.where(self.delta_a == 1, 1, np.where(self.delta_d == 1, 2, 0))


BlockKey = Tuple[Hashable, ...]


class JointLikelihood:
    """Log-likelihood of a dataset under a ModelSpec, as a function of the free vector."""

    def __init__(self, records: Sequence[SubjectRecord], spec: ModelSpec,
                 layout: Optional[ParameterLayout] = None):
        records = list(records)
        self.spec = spec
        self.layout = layout or ParameterLayout(spec)
        order = sorted(range(len(records)), key=lambda i: _sort_key(records[i].id))
        self.records = [records[i] for i in order]
        self.n = len(self.records)
        self.events = PackedEvents(self.records, spec)
        self.markers = PackedMarkers(self.records, spec)
        self.rule = QuadratureRule.gauss_legendre(spec.quadrature_nodes)
        G = spec.n_classes
        self.keys: List[BlockKey] = ([("prior",)] + [("long", g) for g in range(G)]
                                     + [("surv", g) for g in range(G)])
        self._coord_keys = [self._keys_for(s) for s in self.layout.free_slots]
        ev = self.events
        dem = ev.demented
        self._dem_exact = dem[ev.l[dem] == ev.r[dem]]
        self._dem_iv = dem[ev.l[dem] < ev.r[dem]]
        d, u = self._dem_iv, ev.unknown
        self._grid_d = OnsetGrid.build(self.rule, ev.l[d], ev.r[d], ev.t_end[d], ev.delta_d[d])
        self._grid_u = OnsetGrid.build(self.rule, ev.l[u], ev.t_end[u], ev.t_end[u],
                                       ev.delta_d[u])

    # which blocks each free coordinate influences
    def _keys_for(self, slot) -> frozenset:
        G = self.spec.n_classes
        f, idx = slot.field, slot.index
        if f == "zeta":
            return frozenset({("prior",)})
        if f == "weibull":
            return frozenset({("surv", idx[1])})
        if f == "gamma":
            if self.spec.class_specific_gamma:
                return frozenset({("surv", idx[1])})
            return frozenset(("surv", g) for g in range(G))
        if f == "beta_class":
            return frozenset({("long", idx[0])})
        if f == "sigma_root":
            return frozenset({("long", idx[0])})
        return frozenset(("long", g) for g in range(G))

    def coord_keys(self, j: int) -> frozenset:
        return self._coord_keys[j]

    # -- blocks -------------------------------------------------------------
    def class_hazards(self, theta: ParameterSet, g: int) -> ClassHazards:
        lp = np.stack([self.events.w[m] @ theta.gamma_for(m, g)
                       for m in range(len(self.spec.transitions))])
        return ClassHazards(theta.shape[:, g], theta.scale[:, g], lp)

    def block(self, theta: ParameterSet, key: BlockKey):
        # trial points far from the optimum may overflow; the result is then
        # non-finite and rejected by combine()
        with np.errstate(over="ignore", invalid="ignore"):
            return self._block(theta, key)

    def _block(self, theta: ParameterSet, key: BlockKey):
        kind = key[0]
        if kind == "prior":
            return log_class_membership(theta.zeta, self.events.x_p)
        g = key[1]
        if kind == "long":
            return self.markers.log_density(theta, g)
        h = self.class_hazards(theta, g)
        ev = self.events
        entry = -h.cum(0, ev.t0) - h.cum(1, ev.t0)
        return self._log_p_events(h), entry

    def _log_p_events(self, h: ClassHazards) -> np.ndarray:
        ev, spec = self.events, self.spec
        if spec.competing:
            return log_p_competing(h, ev.t_end, ev.cause)
        out = np.empty(self.n)
        e, d, hl, u = self._dem_exact, self._dem_iv, ev.healthy, ev.unknown
        if e.size:
            out[e] = _log_onset_density(h.subset(e), ev.l[e], ev.t_end[e], ev.delta_d[e],
                                        spec.markovian)
        if d.size:
            out[d] = self._grid_d.log_integral(h.subset(d), spec.markovian)
        if hl.size:
            out[hl] = log_p_healthy(h.subset(hl), ev.t_end[hl], ev.delta_d[hl])
        if u.size:
            path = self._grid_u.log_integral(h.subset(u), spec.markovian)
            out[u] = np.logaddexp(log_p_healthy(h.subset(u), ev.t_end[u], ev.delta_d[u]), path)
        return out

    def blocks(self, theta: ParameterSet, keys=None) -> Dict[BlockKey, object]:
        keys = self.keys if keys is None else keys
        return {k: self.block(theta, k) for k in keys}

    def combine(self, blocks: Dict[BlockKey, object], per_subject: bool = False, check=True):
        G = self.spec.n_classes
        prior = blocks[("prior",)]
        joint = np.empty((self.n, G))
        entry = np.empty((self.n, G))
        # extreme probes can give inf - inf here; the finiteness check below reports them
        with np.errstate(invalid="ignore", over="ignore"):
            for g in range(G):
                ev, s0 = blocks[("surv", g)]
                joint[:, g] = prior[:, g] + blocks[("long", g)] + ev
                entry[:, g] = prior[:, g] + s0
            contrib = logsumexp(joint, axis=1) - logsumexp(entry, axis=1)
        if check and not np.all(np.isfinite(contrib)):
            i = int(np.where(~np.isfinite(contrib))[0][0])
            bad = [g for g in range(G) if not np.isfinite(joint[i, g])]
            raise LikelihoodError(
                f"non-finite contribution for subject {self.records[i].id} (classes {bad})")
        if per_subject:
            return contrib
        return float(np.sum(contrib))

    def combine_many(self, store: Dict[BlockKey, list], selections: Sequence[Dict[BlockKey, int]],
                     chunk: int = 256) -> np.ndarray:
        """Totals for many block combinations in one vectorised pass.

        ``store`` lists alternative values of every block; each selection
        names, per block, the index of the value to use. Non-finite totals are
        returned as they are.
        """
        G = self.spec.n_classes
        prior = np.stack(store[("prior",)])
        longs = [np.stack(store[("long", g)]) for g in range(G)]
        evs = [np.stack([b[0] for b in store[("surv", g)]]) for g in range(G)]
        s0s = [np.stack([b[1] for b in store[("surv", g)]]) for g in range(G)]
        idx = {k: np.array([sel[k] for sel in selections], dtype=int) for k in self.keys}
        out = np.empty(len(selections))
        with np.errstate(invalid="ignore"):
            for a in range(0, len(selections), chunk):
                sl = slice(a, a + chunk)
                pr = prior[idx[("prior",)][sl]]
                joint = np.empty_like(pr)
                entry = np.empty_like(pr)
                for g in range(G):
                    si = idx[("surv", g)][sl]
                    joint[..., g] = pr[..., g] + longs[g][idx[("long", g)][sl]] + evs[g][si]
                    entry[..., g] = pr[..., g] + s0s[g][si]
                out[sl] = (logsumexp(joint, axis=2) - logsumexp(entry, axis=2)).sum(axis=1)
        return out

    # -- public -------------------------------------------------------------
    def __call__(self, v) -> float:
        return self.loglik(self.layout.decode(v))

    def loglik(self, theta: ParameterSet) -> float:
        return self.combine(self.blocks(theta))

    def per_subject(self, theta: ParameterSet) -> np.ndarray:
        return self.combine(self.blocks(theta), per_subject=True)

    def class_joint(self, theta: ParameterSet) -> np.ndarray:
        """log pi_ig f(Y_i|g) P(D_i|g), shape (N, G)."""
        b = self.blocks(theta)
        G = self.spec.n_classes
        return np.column_stack([b[("prior",)][:, g] + b[("long", g)] + b[("surv", g)][0]
                                for g in range(G)])


def _sort_key(sid: str):
    try:
        return (0, float(sid), sid)
    except ValueError:
        return (1, 0.0, sid)


# --------------------------------------------------------------------------
# subject-level API
# --------------------------------------------------------------------------


def _single(rec: SubjectRecord, g: int, theta: ParameterSet, spec: ModelSpec) -> ClassHazards:
    lp = []
    for m, tr in enumerate(spec.transitions):
        w = np.array([rec.covariates[c] for c in spec.event_terms(tr)], dtype=float)
        lp.append([float(w @ theta.gamma_for(m, g))])
    return ClassHazards(theta.shape[:, g], theta.scale[:, g], np.array(lp))


def contribution_demented(rec: SubjectRecord, g: int, theta: ParameterSet, spec: ModelSpec,
                          markovian: Optional[bool] = None, rule=None) -> float:
    if rec.delta_a != 1:
        raise ValueError(f"subject {rec.id}: not diagnosed")
    markovian = spec.markovian if markovian is None else markovian
    rule = rule or QuadratureRule.gauss_legendre(spec.quadrature_nodes)
    h = _single(rec, g, theta, spec)
    return float(np.exp(log_p_demented(h, np.array([rec.l]), np.array([rec.r]),
                                       np.array([rec.t_end]), np.array([rec.delta_d]),
                                       markovian, rule))[0])


def contribution_healthy(rec: SubjectRecord, g: int, theta: ParameterSet, spec: ModelSpec) -> float:
    if rec.delta_a != 0 or rec.l != rec.t_end:
        raise ValueError(f"subject {rec.id}: not healthy at the end of follow-up")
    h = _single(rec, g, theta, spec)
    return float(np.exp(log_p_healthy(h, np.array([rec.t_end]), np.array([rec.delta_d])))[0])


def contribution_unknown(rec: SubjectRecord, g: int, theta: ParameterSet, spec: ModelSpec,
                         markovian: Optional[bool] = None, rule=None) -> float:
    if rec.delta_a != 0:
        raise ValueError(f"subject {rec.id}: diagnosed")
    markovian = spec.markovian if markovian is None else markovian
    rule = rule or QuadratureRule.gauss_legendre(spec.quadrature_nodes)
    h = _single(rec, g, theta, spec)
    return float(np.exp(log_p_unknown(h, np.array([rec.l]), np.array([rec.t_end]),
                                      np.array([rec.delta_d]), markovian, rule))[0])


def log_likelihood(records: Sequence[SubjectRecord], theta: ParameterSet, spec: ModelSpec) -> float:
    """Full mixture log-likelihood with the delayed-entry correction."""
    if spec.competing:
        raise ValueError("use log_likelihood_competing for the competing-risks model")
    return JointLikelihood(records, spec).loglik(theta)


def log_likelihood_competing(records: Sequence[SubjectRecord], theta: ParameterSet,
                             spec: ModelSpec) -> float:
    """Naive competing-risks joint model on first-event (imputed) records."""
    if not spec.competing:
        raise ValueError("spec.competing must be True")
    return JointLikelihood(records, spec).loglik(theta)
