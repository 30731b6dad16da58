"""Post-fit summaries: posterior classes, goodness of fit, incidences, trajectories.

Marker quantities are reported on the latent-process scale, which coincides
with the raw score for identity links.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from . import hazards
from .data import ModelSpec, ParameterSet, SubjectRecord, build_design
from .likelihood import JointLikelihood, QuadratureRule, log_class_membership, logsumexp
from .longitudinal import random_effects_mean, transformed_values

INCIDENCE_ORIGIN = 65.0
CONDITIONS = ("healthy_alive", "died_dementia_free", "dementia_onset")


# --------------------------------------------------------------------------
# posterior classification
# --------------------------------------------------------------------------


@dataclass
class PosteriorTable:
    ids: List[str]
    probs: np.ndarray       # (N, G)
    assigned: np.ndarray    # 0-based class index
    class_means: np.ndarray  # row: assigned class, column: mean posterior probability

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.assigned, minlength=self.probs.shape[1])


def posterior_probs(records: Sequence[SubjectRecord], theta: ParameterSet,
                    spec: ModelSpec) -> PosteriorTable:
    """P(c_i = g | Y_i, D_i) for every subject, ordered by subject id."""
    lik = JointLikelihood(records, spec)
    joint = lik.class_joint(theta)
    probs = np.exp(joint - logsumexp(joint, axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    assigned = np.argmax(probs, axis=1)  # first maximum, i.e. lowest index on ties
    G = spec.n_classes
    means = np.full((G, G), np.nan)
    for g in range(G):
        sel = assigned == g
        if sel.any():
            means[g] = probs[sel].mean(axis=0)
    return PosteriorTable([r.id for r in lik.records], probs, assigned, means)


def write_posterior(table: PosteriorTable, path) -> None:
    G = table.probs.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "assigned"] + [f"p{g + 1}" for g in range(G)])
        for sid, c, row in zip(table.ids, table.assigned, table.probs):
            w.writerow([sid, int(c) + 1] + [repr(float(p)) for p in row])


# --------------------------------------------------------------------------
# goodness of fit of the marker
# --------------------------------------------------------------------------


@dataclass
class GofRow:
    cls: int          # 1-based
    age_lo: float
    age_hi: float
    n_obs: int
    weight: float
    predicted: float
    observed: float
    predicted_re: float


def _fixed_part(rec: SubjectRecord, g: int, theta: ParameterSet) -> np.ndarray:
    mean = rec.x_class @ theta.beta_class[g]
    if rec.x_common.shape[1]:
        mean = mean + rec.x_common @ theta.beta_common
    return mean


def gof_weighted_means(records: Sequence[SubjectRecord], theta: ParameterSet, spec: ModelSpec,
                       bin_width: float = 5.0, origin: float = INCIDENCE_ORIGIN,
                       posterior: Optional[PosteriorTable] = None,
                       marker: int = 0) -> List[GofRow]:
    """Posterior-weighted predicted and observed marker means per class and age bin.

    Bins are [origin + k*bin_width, origin + (k+1)*bin_width); empty bins are
    left out.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    post = posterior if posterior is not None else posterior_probs(records, theta, spec)
    row_of = {sid: i for i, sid in enumerate(post.ids)}
    G = spec.n_classes
    tt = spec.time_transform
    acc: Dict[tuple, np.ndarray] = {}
    for rec in records:
        keep = rec.markers == marker
        if not keep.any():
            continue
        y, _ = transformed_values(rec, spec, theta)
        ages = tt.inverse(rec.times)
        bins = np.floor((ages - origin) / bin_width + 1e-9).astype(int)
        p = post.probs[row_of[rec.id]]
        for g in range(G):
            fixed = _fixed_part(rec, g, theta)
            cond = fixed + rec.z @ random_effects_mean(rec, g, theta, spec)
            for j in np.where(keep)[0]:
                a = acc.setdefault((g, int(bins[j])), np.zeros(5))
                a += (1.0, p[g], p[g] * fixed[j], p[g] * y[j], p[g] * cond[j])
    rows = []
    for (g, b), (n, w, sp, so, su) in sorted(acc.items()):
        if w <= 0:
            continue
        lo = origin + b * bin_width
        rows.append(GofRow(g + 1, lo, lo + bin_width, int(n), w, sp / w, so / w, su / w))
    return rows


def write_gof(rows: Sequence[GofRow], path) -> None:
    """Long format: one line per class, bin and statistic."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "age_lo", "age_hi", "n_obs", "statistic", "value"])
        for r in rows:
            for stat, val in (("predicted", r.predicted), ("observed", r.observed),
                              ("predicted_re", r.predicted_re)):
                w.writerow([r.cls, r.age_lo, r.age_hi, r.n_obs, stat, repr(float(val))])


# --------------------------------------------------------------------------
# cumulative incidences
# --------------------------------------------------------------------------


def _transition_params(theta: ParameterSet, spec: ModelSpec, g: int,
                       covariates: Mapping[str, float]) -> List[hazards.TransitionParams]:
    out = []
    for m, tr in enumerate(spec.transitions):
        w = np.array([covariates[c] for c in spec.event_terms(tr)], dtype=float)
        out.append(hazards.TransitionParams(float(theta.shape[m, g]), float(theta.scale[m, g]),
                                            theta.gamma_for(m, g), w))
    return out


def cumulative_incidence(theta: ParameterSet, spec: ModelSpec, g: int,
                         covariates: Mapping[str, float], ages,
                         origin: float = INCIDENCE_ORIGIN, nodes: int = 30
                         ) -> Dict[str, np.ndarray]:
    """Class-g cumulative incidences from ``origin`` on a grid of ages.

    F01 and F02 are for a subject healthy at ``origin``; F12 for a subject
    demented at ``origin`` (duration since ``origin`` under semi-markov).
    Integrals are accumulated piecewise over the sorted grid, so the curves
    are nondecreasing by construction.
    """
    ages = np.asarray(ages, dtype=float)
    if ages.size and ages.min() < origin:
        raise ValueError(f"cumulative incidence needs ages >= {origin}")
    params = _transition_params(theta, spec, g, covariates)
    rule = QuadratureRule.gauss_legendre(nodes)
    order = np.argsort(ages, kind="stable")
    knots = np.concatenate([[origin], ages[order]])
    u, logw = rule.grid(knots[:-1], knots[1:])
    p01, p02 = params[0], params[1]
    s0 = -(hazards.cumhaz(u, p01.lambda1, p01.lambda2, p01.lp)
           - hazards.cumhaz(origin, p01.lambda1, p01.lambda2, p01.lp)
           + hazards.cumhaz(u, p02.lambda1, p02.lambda2, p02.lp)
           - hazards.cumhaz(origin, p02.lambda1, p02.lambda2, p02.lp))

    def accumulate(log_f):
        with np.errstate(divide="ignore"):
            piece = np.where(knots[1:, None] > knots[:-1, None], np.exp(log_f + logw), 0.0)
        out = np.empty_like(ages)
        out[order] = np.cumsum(piece.sum(axis=1))
        return out

    curves = {
        "F01": accumulate(s0 + hazards.log_hazard(u, p01.lambda1, p01.lambda2, p01.lp)),
        "F02": accumulate(s0 + hazards.log_hazard(u, p02.lambda1, p02.lambda2, p02.lp)),
    }
    if not spec.competing:
        p12 = params[2]
        if spec.markovian:
            s1 = -(hazards.cumhaz(u, p12.lambda1, p12.lambda2, p12.lp)
                   - hazards.cumhaz(origin, p12.lambda1, p12.lambda2, p12.lp))
            la = hazards.log_hazard(u, p12.lambda1, p12.lambda2, p12.lp)
        else:
            d = u - origin
            s1 = -hazards.cumhaz(d, p12.lambda1, p12.lambda2, p12.lp)
            la = hazards.log_hazard(d, p12.lambda1, p12.lambda2, p12.lp)
        curves["F12"] = accumulate(s1 + la)
    return curves


def write_incidence(curves: Mapping[int, Mapping[str, np.ndarray]], ages, path) -> None:
    ages = np.asarray(ages, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "curve", "age", "value"])
        for g, cs in sorted(curves.items()):
            for name, vals in cs.items():
                for a, v in zip(ages, vals):
                    w.writerow([g + 1, name, repr(float(a)), repr(float(v))])


# --------------------------------------------------------------------------
# conditional mean trajectories
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Condition:
    kind: str
    age: float
    covariates: Mapping[str, float]

    def __post_init__(self):
        if self.kind not in CONDITIONS:
            raise ValueError(f"unknown condition {self.kind!r}; choose from {CONDITIONS}")
        if not self.age > 0 or not math.isfinite(self.age):
            raise ValueError("condition age must be positive and finite")

    @property
    def label(self) -> str:
        return f"{self.kind}@{self.age:g}"


def condition_weights(theta: ParameterSet, spec: ModelSpec, cond: Condition) -> np.ndarray:
    """P(c = g | condition): prior times the class-g probability of the event."""
    x_p = [1.0] + [cond.covariates[c] for c in spec.class_covariates]
    logw = log_class_membership(theta.zeta, x_p).astype(float)
    for g in range(spec.n_classes):
        p01, p02 = _transition_params(theta, spec, g, cond.covariates)[:2]
        a = cond.age
        lw = -(hazards.cumhaz(a, p01.lambda1, p01.lambda2, p01.lp)
               + hazards.cumhaz(a, p02.lambda1, p02.lambda2, p02.lp))
        if cond.kind == "died_dementia_free":
            lw = lw + hazards.log_hazard(a, p02.lambda1, p02.lambda2, p02.lp)
        elif cond.kind == "dementia_onset":
            lw = lw + hazards.log_hazard(a, p01.lambda1, p01.lambda2, p01.lp)
        logw[g] += float(lw)
    if not np.all(np.isfinite(logw)) and not np.any(np.isfinite(logw)):
        raise ValueError(f"condition {cond.label} has zero probability in every class")
    return np.exp(logw - logsumexp(logw))


def class_mean_curve(theta: ParameterSet, spec: ModelSpec, g: int,
                     covariates: Mapping[str, float], ages, marker: int = 0) -> np.ndarray:
    ages = np.asarray(ages, dtype=float)
    times = spec.time_transform(ages)
    markers = np.full(ages.shape, marker, dtype=int)
    x_class, x_common, _ = build_design(spec, markers, times, covariates)
    mean = x_class @ theta.beta_class[g]
    if x_common.shape[1]:
        mean = mean + x_common @ theta.beta_common
    return mean


def conditional_trajectory(theta: ParameterSet, spec: ModelSpec, cond: Condition, ages,
                           marker: int = 0):
    """Expected marker curve sum_g E(Y(t) | g) P(g | condition); returns (curve, weights)."""
    w = condition_weights(theta, spec, cond)
    curves = np.stack([class_mean_curve(theta, spec, g, cond.covariates, ages, marker)
                       for g in range(spec.n_classes)])
    return w @ curves, w


def write_trajectories(results: Mapping[str, np.ndarray], ages, path) -> None:
    ages = np.asarray(ages, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["condition", "age", "value"])
        for label, vals in results.items():
            for a, v in zip(ages, vals):
                w.writerow([label, repr(float(a)), repr(float(v))])
