"""Simulated cohorts with intermittent visits, selection at entry and death.

Subjects are drawn from the class prior, then kept only if alive and
dementia-free at entry. Dementia is diagnosed at the first visit after onset
that the subject attends alive; visits stop at diagnosis, death or the
administrative end of follow-up.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import hazards
from .data import (ModelSpec, ParameterSet, SubjectRecord, make_record, observation_pattern,
                   table1_spec, table1_truth)
from .likelihood import class_membership_probs


@dataclass(frozen=True)
class SimulationDesign:
    n_subjects: int = 500
    visit_interval: float = 2.0
    admin_years: float = 20.0
    entry_age: Tuple[float, float] = (65.0, 85.0)
    x_prob: float = 0.5
    spec: ModelSpec = field(default_factory=table1_spec)
    truth: Optional[ParameterSet] = None
    seed: int = 0

    def __post_init__(self):
        if self.visit_interval <= 0 or self.admin_years <= 0:
            raise ValueError("visit interval and follow-up length must be positive")
        if self.truth is None:
            object.__setattr__(self, "truth", table1_truth(self.spec))

    def visit_offsets(self) -> np.ndarray:
        k = int(math.floor(self.admin_years / self.visit_interval + 1e-9))
        return np.arange(k + 1) * self.visit_interval


@dataclass
class DatasetSummary:
    n: int
    observed_demented: float
    died_after_diagnosis: float
    died_undiagnosed: float
    class_share: List[float]
    by_class: Dict[int, Dict[str, float]]
    patterns: Dict[int, int]
    mean_interval_width: float
    true_class: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "observed_demented": self.observed_demented,
            "died_after_diagnosis": self.died_after_diagnosis,
            "died_undiagnosed": self.died_undiagnosed,
            "class_share": self.class_share,
            "by_class": {str(k): v for k, v in self.by_class.items()},
            "patterns": {str(k): v for k, v in self.patterns.items()},
            "mean_interval_width": self.mean_interval_width,
        }


def draw_event_times(g: int, x: float, truth: ParameterSet, spec: ModelSpec,
                     rng: np.random.Generator, size: Optional[int] = None):
    """Ages at dementia onset (inf if death comes first) and at death.

    Inverse-transform sampling from class-g Weibull intensities with
    multiplier exp(gamma x). Post-onset death is drawn conditionally on being
    alive at onset (markovian) or on the duration scale (semi-markovian).
    """
    t_dem, t_death, _ = _draw(np.full(size or 1, g), np.full(size or 1, x, dtype=float),
                              truth, spec, rng)
    if size is None:
        return float(t_dem[0]), float(t_death[0])
    return t_dem, t_death


def _draw(g: np.ndarray, x: np.ndarray, truth: ParameterSet, spec: ModelSpec,
          rng: np.random.Generator):
    n = len(g)
    e = -np.log(rng.uniform(size=(3, n)))
    shape, scale = truth.shape[:, g], truth.scale[:, g]
    lp = np.stack([_lp(truth, m, g, x) for m in range(3)])
    onset = hazards.inverse_cumhaz(e[0], shape[0], scale[0], lp[0])
    death0 = hazards.inverse_cumhaz(e[1], shape[1], scale[1], lp[1])
    demented = onset < death0
    if spec.markovian:
        a12 = hazards.cumhaz(onset, shape[2], scale[2], lp[2])
        death1 = hazards.inverse_cumhaz(a12 + e[2], shape[2], scale[2], lp[2])
    else:
        death1 = onset + hazards.inverse_cumhaz(e[2], shape[2], scale[2], lp[2])
    t_death = np.where(demented, death1, death0)
    t_dem = np.where(demented, onset, np.inf)
    return t_dem, t_death, onset


def _lp(truth: ParameterSet, m: int, g: np.ndarray, x: np.ndarray) -> np.ndarray:
    gam = truth.gamma[m]
    if gam.size == 0:
        return np.zeros(len(g))
    coef = gam[g, 0] if gam.ndim == 2 else np.full(len(g), gam[0])
    return coef * x


def generate_dataset(design: SimulationDesign,
                     rng: Optional[np.random.Generator] = None
                     ) -> Tuple[List[SubjectRecord], DatasetSummary]:
    spec, truth = design.spec, design.truth
    if spec.competing:
        raise ValueError("simulate from an illness-death spec")
    rng = rng if rng is not None else np.random.default_rng(design.seed)
    G = spec.n_classes
    probs = class_membership_probs(truth.zeta)

    # rejection sampling: alive and dementia-free at entry
    keep_g, keep_x, keep_t0, keep_dem, keep_death = [], [], [], [], []
    have = 0
    while have < design.n_subjects:
        m = 2 * (design.n_subjects - have) + 16
        g = rng.choice(G, size=m, p=probs)
        x = (rng.uniform(size=m) < design.x_prob).astype(float)
        t0 = rng.uniform(*design.entry_age, size=m)
        t_dem, t_death, onset = _draw(g, x, truth, spec, rng)
        ok = (onset > t0) & (t_death > t0)
        for arr, lst in ((g, keep_g), (x, keep_x), (t0, keep_t0), (t_dem, keep_dem),
                         (t_death, keep_death)):
            lst.append(arr[ok])
        have += int(ok.sum())
    n = design.n_subjects
    g = np.concatenate(keep_g)[:n]
    x = np.concatenate(keep_x)[:n]
    t0 = np.concatenate(keep_t0)[:n]
    t_dem = np.concatenate(keep_dem)[:n]
    t_death = np.concatenate(keep_death)[:n]

    offsets = design.visit_offsets()
    q = truth.u_chol.shape[0]
    records = []
    for i in range(n):
        visits = t0[i] + offsets
        end = t0[i] + design.admin_years
        alive = visits < t_death[i]
        attended = visits[alive]
        after = np.where(attended[1:] >= t_dem[i])[0]
        if after.size:
            k = after[0] + 1
            l_age, r_age, delta_a = attended[k - 1], attended[k], 1
            attended = attended[:k + 1]
        else:
            l_age, r_age, delta_a = attended[-1], math.inf, 0
        delta_d = int(t_death[i] <= end)
        t_end = t_death[i] if delta_d else end
        covs = {"X": float(x[i])}
        rec = make_record(spec, i + 1, t0[i], l_age, r_age, delta_a, t_end, delta_d,
                          covariates=covs, markers=np.zeros(len(attended), dtype=int),
                          ages=attended, values=np.zeros(len(attended)), validate=False)
        u = truth.sigma[g[i]] * (truth.u_chol @ rng.standard_normal(q))
        mean = rec.x_class @ truth.beta_class[g[i]]
        if rec.x_common.shape[1]:
            mean = mean + rec.x_common @ truth.beta_common
        eps = truth.sigma_e[rec.markers] * rng.standard_normal(rec.n_obs)
        rec = replace(rec, values=mean + rec.z @ u + eps)
        rec.validate(spec.time_transform)
        records.append(rec)
    return records, summarize(records, g)


def summarize(records: Sequence[SubjectRecord], true_class: Optional[np.ndarray] = None
              ) -> DatasetSummary:
    n = len(records)
    da = np.array([r.delta_a for r in records])
    dd = np.array([r.delta_d for r in records])
    pats = np.array([observation_pattern(r) for r in records])

    def props(mask):
        m = max(int(mask.sum()), 1)
        return {
            "observed_demented": float((da[mask] == 1).sum() / m),
            "died_after_diagnosis": float(((da[mask] == 1) & (dd[mask] == 1)).sum() / m),
            "died_undiagnosed": float(((da[mask] == 0) & (dd[mask] == 1)).sum() / m),
        }

    overall = props(np.ones(n, dtype=bool))
    by_class, share = {}, []
    if true_class is not None:
        G = int(true_class.max()) + 1
        for c in range(G):
            mask = true_class == c
            share.append(float(mask.mean()))
            by_class[c + 1] = props(mask)
    widths = [r.r - r.l for r in records if r.delta_a == 1]
    return DatasetSummary(
        n=n, class_share=share, by_class=by_class,
        patterns={p: int((pats == p).sum()) for p in range(1, 7)},
        mean_interval_width=float(np.mean(widths)) if widths else float("nan"),
        true_class=true_class, **overall,
    )


def replicate_seeds(seed: int, n: int) -> List[np.random.SeedSequence]:
    """Independent seed sequences for n replicates."""
    return np.random.SeedSequence(seed).spawn(n)


def impute_competing(records: Sequence[SubjectRecord]) -> List[SubjectRecord]:
    """Reduce illness-death records to a first-event couple (T, cause).

    Diagnosed subjects get a dementia event at the diagnosis age and their
    later death is dropped; undiagnosed deaths are deaths at the death age.
    The record encodes cause 1 as delta_a = 1 with l = r = t, cause 2 as
    delta_d = 1.
    """
    out = []
    for rec in records:
        if rec.delta_a == 1:
            out.append(replace(rec, l=rec.r, t_end=rec.r, delta_d=0))
        else:
            out.append(rec)
    return out
