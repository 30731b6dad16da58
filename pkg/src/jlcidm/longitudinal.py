"""Latent-process mixed model for one or several markers.

Given class g, the transformed marker series of a subject is gaussian with
mean X_class beta_g + X_common beta_common and covariance
sigma_g^2 Z B Z' + diag(sigma_e[k]^2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from scipy import special

from .data import ModelSpec, ParameterSet, SubjectRecord

LOG_2PI = math.log(2.0 * math.pi)
CLAMP_EPS = 1e-4


class NotPositiveDefinite(ValueError):
    pass


@dataclass(frozen=True)
class LinkFunction:
    """Monotone map from a raw score to the latent-process scale.

    ``eta`` holds natural values (eta1, eta2 > 0, eta3, eta4 > 0); the raw
    range (lo, hi) is padded by half a unit before entering the Beta CDF.
    """

    kind: str = "identity"
    eta: Tuple[float, float, float, float] = (1.0, 1.0, 0.0, 1.0)
    lo: float = 0.0
    hi: float = 1.0

    def rescale(self, y):
        return (np.asarray(y, dtype=float) - self.lo + 0.5) / (self.hi - self.lo + 1.0)


def transform(link: LinkFunction, y):
    """Transformed values, log-Jacobians and a clamp flag array."""
    y = np.asarray(y, dtype=float)
    if link.kind == "identity":
        return y.copy(), np.zeros_like(y), np.zeros(y.shape, dtype=bool)
    if link.kind != "beta_cdf":
        raise ValueError(f"unknown link {link.kind!r}")
    if np.any((y < link.lo) | (y > link.hi)):
        raise ValueError(f"marker value outside [{link.lo}, {link.hi}]")
    e1, e2, e3, e4 = link.eta
    x = link.rescale(y)
    clamped = (x < CLAMP_EPS) | (x > 1.0 - CLAMP_EPS)
    x = np.clip(x, CLAMP_EPS, 1.0 - CLAMP_EPS)
    y_tilde = (special.betainc(e1, e2, x) - e3) / e4
    log_pdf = ((e1 - 1.0) * np.log(x) + (e2 - 1.0) * np.log1p(-x)
               - special.betaln(e1, e2))
    log_jac = log_pdf - math.log(link.hi - link.lo + 1.0) - math.log(e4)
    return y_tilde, log_jac, clamped


def marker_link(spec: ModelSpec, theta: ParameterSet, k: int) -> LinkFunction:
    if spec.links[k] == "identity":
        return LinkFunction()
    lo, hi = spec.marker_ranges[k]
    return LinkFunction("beta_cdf", tuple(theta.link_params(k)), lo, hi)


def transformed_values(rec: SubjectRecord, spec: ModelSpec, theta: ParameterSet):
    y_tilde = np.array(rec.values, dtype=float)
    log_jac = np.zeros_like(y_tilde)
    for k in range(spec.n_markers):
        if spec.links[k] == "identity":
            continue
        m = rec.markers == k
        if m.any():
            y_tilde[m], log_jac[m], _ = transform(marker_link(spec, theta, k), rec.values[m])
    return y_tilde, log_jac


def conditional_moments(rec: SubjectRecord, g: int, theta: ParameterSet, spec: ModelSpec):
    """Mean vector and covariance matrix of the transformed series in class g."""
    if rec.x_class.shape[0] != rec.n_obs or rec.z.shape[0] != rec.n_obs:
        raise ValueError(f"subject {rec.id}: design rows do not match observations")
    mean = rec.x_class @ theta.beta_class[g]
    if rec.x_common.shape[1]:
        mean = mean + rec.x_common @ theta.beta_common
    zb = rec.z @ theta.u_chol
    cov = theta.sigma[g] ** 2 * (zb @ zb.T)
    cov[np.diag_indices_from(cov)] += theta.sigma_e[rec.markers] ** 2
    return mean, cov


def log_density(rec: SubjectRecord, g: int, theta: ParameterSet, spec: ModelSpec) -> float:
    """log f(Y_i | c_i = g) including the link Jacobian; 0 for no observations."""
    if rec.n_obs == 0:
        return 0.0
    y_tilde, log_jac = transformed_values(rec, spec, theta)
    mean, cov = conditional_moments(rec, g, theta, spec)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(f"subject {rec.id}: covariance not positive definite") from None
    z = np.linalg.solve(chol, y_tilde - mean)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return float(-0.5 * (rec.n_obs * LOG_2PI + logdet + z @ z) + log_jac.sum())


def random_effects_mean(rec: SubjectRecord, g: int, theta: ParameterSet, spec: ModelSpec):
    """E(u_i | Y_i, c_i = g): sigma_g^2 B Z' V^-1 (y~ - E)."""
    q = theta.u_chol.shape[0]
    if rec.n_obs == 0:
        return np.zeros(q)
    y_tilde, _ = transformed_values(rec, spec, theta)
    mean, cov = conditional_moments(rec, g, theta, spec)
    cov_u = theta.sigma[g] ** 2 * theta.B
    return cov_u @ rec.z.T @ np.linalg.solve(cov, y_tilde - mean)


# --------------------------------------------------------------------------
# batched evaluation over subjects
# --------------------------------------------------------------------------


class PackedMarkers:
    """Marker series of many subjects padded to a common length."""

    def __init__(self, records: Sequence[SubjectRecord], spec: ModelSpec):
        n = len(records)
        nmax = max([r.n_obs for r in records] + [1])
        pc = len(spec.class_terms)
        pm = spec.n_common
        q = len(spec.random_terms)
        self.spec = spec
        self.n_obs = np.array([r.n_obs for r in records])
        self.mask = np.arange(nmax)[None, :] < self.n_obs[:, None]
        self.values = np.zeros((n, nmax))
        self.markers = np.zeros((n, nmax), dtype=int)
        self.x_class = np.zeros((n, nmax, pc))
        self.x_common = np.zeros((n, nmax, pm))
        self.z = np.zeros((n, nmax, q))
        self.times = np.zeros((n, nmax))
        for i, r in enumerate(records):
            k = r.n_obs
            if not k:
                continue
            self.values[i, :k] = r.values
            self.markers[i, :k] = r.markers
            self.times[i, :k] = r.times
            self.x_class[i, :k] = r.x_class
            if pm:
                self.x_common[i, :k] = r.x_common
            self.z[i, :k] = r.z
        self.ids = [r.id for r in records]
        self._identity = all(link == "identity" for link in spec.links)
        self._pad = ~self.mask

    def transformed(self, theta: ParameterSet):
        """(y~, summed log-Jacobian per subject)."""
        if self._identity:
            return self.values, np.zeros(len(self.n_obs))
        y = self.values.copy()
        lj = np.zeros_like(y)
        for k, link in enumerate(self.spec.links):
            if link == "identity":
                continue
            m = self.mask & (self.markers == k)
            y[m], lj[m], _ = transform(marker_link(self.spec, theta, k), self.values[m])
        return y, lj.sum(axis=1)

    def log_density(self, theta: ParameterSet, g: int, y_tilde=None, log_jac=None):
        """Per-subject log f(Y_i | c_i = g), shape (N,).

        Uses V = D + W W' with D = diag(sigma_e^2) and W = sigma_g Z U, so only
        q x q systems are factorised (Woodbury identity and determinant lemma).
        """
        if y_tilde is None:
            y_tilde, log_jac = self.transformed(theta)
        mean = self.x_class @ theta.beta_class[g]
        if self.x_common.shape[2]:
            mean = mean + self.x_common @ theta.beta_common
        var_e = theta.sigma_e ** 2
        if np.any(var_e <= 0):
            raise NotPositiveDefinite("measurement variance must be positive")
        d_inv = np.where(self.mask, 1.0 / var_e[self.markers], 0.0)
        resid = np.where(self.mask, y_tilde - mean, 0.0)
        w = theta.sigma[g] * (self.z @ theta.u_chol)          # (N, n, q)
        dw = w * d_inv[..., None]
        q = w.shape[2]
        m = np.einsum("nik,nil->nkl", w, dw) + np.eye(q)
        b = np.einsum("nik,ni->nk", dw, resid)
        try:
            chol = np.linalg.cholesky(m)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite("marginal covariance not positive definite") from None
        c = np.linalg.solve(chol, b[..., None])[..., 0]
        idx = np.arange(q)
        logdet = (2.0 * np.log(chol[:, idx, idx]).sum(axis=1)
                  + np.where(self.mask, np.log(var_e[self.markers]), 0.0).sum(axis=1))
        quad = (resid * resid * d_inv).sum(axis=1) - (c * c).sum(axis=1)
        return -0.5 * (self.n_obs * LOG_2PI + logdet + quad) + log_jac
