"""Marquardt maximisation, multi-start fitting, standard errors and BIC."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import ModelSpec, ParameterLayout, ParameterSet, SubjectRecord
from .likelihood import JointLikelihood, LikelihoodError
from .longitudinal import NotPositiveDefinite

log = logging.getLogger(__name__)

# failures of the objective that mean "outside the admissible region"
EVAL_ERRORS = (LikelihoodError, NotPositiveDefinite, FloatingPointError, ZeroDivisionError,
               OverflowError, np.linalg.LinAlgError)


class DerivativeError(ArithmeticError):
    pass


class InflationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    eps_loglik: float = 1e-3
    eps_param: float = 1e-3
    eps_rdm: float = 1e-2
    max_iter: int = 100
    n_starts: int = 10
    seed: int = 0
    fd_step: float = 1e-4      # Hessian
    grad_step: float = 1e-5    # gradient
    jitter: float = 0.1
    workers: int = 1

    def __post_init__(self):
        if min(self.eps_loglik, self.eps_param, self.eps_rdm, self.fd_step,
               self.grad_step) <= 0:
            raise ValueError("tolerances must be positive")


# --------------------------------------------------------------------------
# finite differences
# --------------------------------------------------------------------------


STEP_FLOOR = 0.1


def fd_steps(x: np.ndarray, rel_step: float) -> np.ndarray:
    """rel_step * max(|x|, 0.1): relative steps, floored near zero."""
    return rel_step * np.maximum(np.abs(x), STEP_FLOOR)


def _probe(f, x, j=None):
    try:
        val = f(x)
    except EVAL_ERRORS as exc:
        raise DerivativeError(f"objective failed at probe of coordinate {j}: {exc}") from None
    if not np.isfinite(val):
        raise DerivativeError(f"non-finite objective at probe of coordinate {j}")
    return val


def numeric_gradient(f: Callable, x, rel_step: float = 1e-4, steps=None) -> np.ndarray:
    """Central-difference gradient with steps fd_steps(x, rel_step)."""
    x = np.asarray(x, dtype=float)
    h = fd_steps(x, rel_step) if steps is None else steps
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h[j]
        g[j] = (_probe(f, x + e, j) - _probe(f, x - e, j)) / (2.0 * h[j])
    return g


def numeric_hessian(f: Callable, x, rel_step: float = 1e-4) -> np.ndarray:
    """Hessian from central differences of the central-difference gradient.

    Steps are fixed at x, so entry (j, k) is the four-point stencil with
    spacings h_j, h_k (2 h_j on the diagonal); the result is symmetrised.
    """
    x = np.asarray(x, dtype=float)
    h = fd_steps(x, rel_step)
    p = x.size
    H = np.empty((p, p))
    for j in range(p):
        e = np.zeros(p)
        e[j] = h[j]
        gp = numeric_gradient(f, x + e, steps=h)
        gm = numeric_gradient(f, x - e, steps=h)
        H[:, j] = (gp - gm) / (2.0 * h[j])
    return 0.5 * (H + H.T)


def numeric_gradient_4th(f: Callable, x, rel_step: float = 1e-3) -> np.ndarray:
    """Fourth-order five-point stencil gradient."""
    x = np.asarray(x, dtype=float)
    h = fd_steps(x, rel_step)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h[j]
        g[j] = (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12.0 * h[j])
    return g


def block_derivatives(lik: JointLikelihood, x, rel_step: float = 1e-4, hessian: bool = True,
                      grad_step: Optional[float] = None):
    """Value, gradient and Hessian of a JointLikelihood by cached finite differences.

    Same stencils as numeric_gradient/numeric_hessian. The gradient uses
    ``grad_step`` (default: ``rel_step``), the Hessian ``rel_step``. A
    perturbed point only recomputes the likelihood blocks its coordinates
    touch; all probe totals are then assembled in one vectorised pass.
    """
    x = np.asarray(x, dtype=float)
    layout = lik.layout
    p = x.size
    h = fd_steps(x, rel_step)
    hg = h if grad_step is None else fd_steps(x, grad_step)
    store: Dict[tuple, list] = {k: [] for k in lik.keys}

    def evaluate(moves, keys, where):
        v = x.copy()
        for j, d in moves:
            v[j] += d
        try:
            th = layout.decode(v)
            sel = {}
            for k in keys:
                store[k].append(lik.block(th, k))
                sel[k] = len(store[k]) - 1
        except EVAL_ERRORS as exc:
            raise DerivativeError(f"objective failed at probe of coordinate {where}: {exc}") from None
        return sel

    base = evaluate([], lik.keys, None)
    single = {}
    if hessian:
        single = {(j, s): evaluate([(j, s * h[j])], lik.coord_keys(j), j)
                  for j in range(p) for s in (1, -1, 2, -2)}
    gsingle = {}
    for j in range(p):
        for s in (1, -1):
            if hessian and grad_step is None:
                gsingle[j, s] = single[j, s]
            else:
                gsingle[j, s] = evaluate([(j, s * hg[j])], lik.coord_keys(j), j)

    selections, where = [base], [None]

    def probe(parts, coord):
        sel = dict(base)
        for part in parts:
            sel.update(part)
        selections.append(sel)
        where.append(coord)
        return len(selections) - 1

    grad_idx = [(probe([gsingle[j, 1]], j), probe([gsingle[j, -1]], j)) for j in range(p)]
    diag_idx, cross_idx = [], {}
    if hessian:
        diag_idx = [(probe([single[j, 2]], j), probe([single[j, -2]], j)) for j in range(p)]
        for j in range(p):
            kj = lik.coord_keys(j)
            for k in range(j):
                shared = kj & lik.coord_keys(k)
                ids = []
                for sj, sk in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                    parts = [single[j, sj], single[k, sk]]
                    if shared:
                        parts.append(evaluate([(j, sj * h[j]), (k, sk * h[k])], shared, (j, k)))
                    ids.append(probe(parts, (j, k)))
                cross_idx[j, k] = ids

    vals = lik.combine_many(store, selections)
    bad = np.where(~np.isfinite(vals))[0]
    if bad.size:
        raise DerivativeError(f"non-finite objective at probe of coordinate {where[bad[0]]}")
    f0 = float(vals[0])
    grad = np.array([(vals[a] - vals[b]) / (2 * hg[j]) for j, (a, b) in enumerate(grad_idx)])
    if not hessian:
        return f0, grad, None
    H = np.empty((p, p))
    for j, (a, b) in enumerate(diag_idx):
        H[j, j] = (vals[a] - 2 * f0 + vals[b]) / (4 * h[j] ** 2)
    for (j, k), (pp, pm, mp, mm) in cross_idx.items():
        H[j, k] = H[k, j] = (vals[pp] - vals[pm] - vals[mp] + vals[mm]) / (4 * h[j] * h[k])
    return f0, grad, H


# --------------------------------------------------------------------------
# Marquardt
# --------------------------------------------------------------------------


@dataclass
class MaximizeResult:
    x: np.ndarray
    fun: float
    n_iter: int
    converged: bool
    criteria: Dict[str, float]
    history: List[float] = field(default_factory=list)
    message: str = ""


def _inflate(A: np.ndarray, max_escalations: int = 50):
    """Cholesky of A, diagonally inflated by tau (|A_jj| + 1) until it succeeds."""
    try:
        return A, np.linalg.cholesky(A), 0.0
    except np.linalg.LinAlgError:
        pass
    tau = 1e-2
    bump = np.diag(np.abs(np.diag(A)) + 1.0)
    for _ in range(max_escalations):
        A_star = A + tau * bump
        try:
            return A_star, np.linalg.cholesky(A_star), tau
        except np.linalg.LinAlgError:
            tau *= 10.0
    raise InflationError("Hessian inflation failed after 50 escalations")


def _chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.solve(L.T, np.linalg.solve(L, b))


def rdm_criterion(grad: np.ndarray, hess: np.ndarray) -> float:
    """U' [-H]^-1 U, or inf when -H is not positive definite."""
    try:
        L = np.linalg.cholesky(-hess)
    except np.linalg.LinAlgError:
        return math.inf
    return float(grad @ _chol_solve(L, grad))


def marquardt_maximize(f: Callable, x0, cfg: OptimizerConfig = OptimizerConfig(),
                       derivatives: Optional[Callable] = None,
                       callback: Optional[Callable] = None) -> MaximizeResult:
    """Maximise f by Marquardt steps with backtracking line search.

    Converged when the change in f, the largest change in the parameters and
    U'[-H]^-1 U all fall below their thresholds.
    """
    x = np.asarray(x0, dtype=float).copy()
    if derivatives is None:
        def derivatives(v):
            return (f(v), numeric_gradient(f, v, cfg.grad_step),
                    numeric_hessian(f, v, cfg.fd_step))

    def safe_f(v):
        try:
            val = f(v)
        except EVAL_ERRORS:
            return -math.inf
        return val if np.isfinite(val) else -math.inf

    fx = safe_f(x)
    if not np.isfinite(fx):
        raise ValueError("objective is not finite at the starting point")
    history = [fx]
    crit = {"loglik": math.inf, "param": math.inf, "rdm": math.inf}
    for it in range(1, cfg.max_iter + 1):
        try:
            fx, grad, hess = derivatives(x)
        except DerivativeError as exc:
            return MaximizeResult(x, fx, it - 1, False, crit, history, str(exc))
        crit["rdm"] = rdm_criterion(grad, hess)
        _, L, _ = _inflate(-hess)
        step = _chol_solve(L, grad)

        kappa, f_new = 1.0, safe_f(x + step)
        while f_new < fx and kappa > 2.0 ** -20:
            kappa *= 0.5
            f_new = safe_f(x + kappa * step)
        if f_new < fx:
            kappa, f_new = 0.0, fx
        elif kappa == 1.0:
            f_dbl = safe_f(x + 2.0 * step)
            if f_dbl > f_new:
                kappa, f_new = 2.0, f_dbl
        x_new = x + kappa * step
        crit["loglik"] = abs(f_new - fx)
        crit["param"] = float(np.max(np.abs(x_new - x))) if x.size else 0.0
        x, fx = x_new, f_new
        history.append(fx)
        if callback is not None:
            callback(it, x, fx, dict(crit))
        log.debug("iter %d loglik %.6f crit %s", it, fx, crit)
        if (crit["loglik"] < cfg.eps_loglik and crit["param"] < cfg.eps_param
                and crit["rdm"] < cfg.eps_rdm):
            return MaximizeResult(x, fx, it, True, dict(crit), history, "converged")
        if kappa == 0.0:
            return MaximizeResult(x, fx, it, False, dict(crit), history,
                                  "line search found no ascent")
    return MaximizeResult(x, fx, cfg.max_iter, False, dict(crit), history, "max_iter reached")


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------


@dataclass
class FitResult:
    spec: ModelSpec
    theta_hat: ParameterSet
    x: np.ndarray
    labels: List[str]
    loglik: float
    bic: float
    se: np.ndarray          # reported scale
    vcov: np.ndarray        # free-vector scale
    n_iter: int
    converged: bool
    criteria: Dict[str, float]
    start_index: int
    n_subjects: int
    message: str = ""
    start_logliks: List[float] = field(default_factory=list)

    @property
    def n_params(self) -> int:
        return len(self.x)

    @property
    def estimates(self) -> np.ndarray:
        return ParameterLayout(self.spec).report(self.x)

    def table(self) -> List[Tuple[str, float, float]]:
        return list(zip(self.labels, self.estimates, self.se))

    def to_dict(self) -> dict:
        return {
            "loglik": self.loglik,
            "bic": self.bic,
            "n_params": self.n_params,
            "n_subjects": self.n_subjects,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "criteria": self.criteria,
            "start_index": self.start_index,
            "start_logliks": self.start_logliks,
            "message": self.message,
            "parameters": [
                {"name": n, "value": float(xv), "estimate": float(e), "se": float(s)}
                for n, xv, e, s in zip(self.labels, self.x, self.estimates, self.se)
            ],
        }


def bic(loglik: float, n_params: int, n_subjects: int) -> float:
    return -2.0 * loglik + n_params * math.log(n_subjects)


def standard_errors(layout: ParameterLayout, x: np.ndarray, hess: np.ndarray):
    """(reported-scale SEs, free-vector covariance) from the observed information."""
    try:
        vcov = np.linalg.inv(-hess)
    except np.linalg.LinAlgError:
        vcov = np.full_like(hess, np.nan)
    var = np.diag(vcov).copy()
    var[var < 0] = np.nan
    se = np.abs(layout.report_jacobian(x)) * np.sqrt(var)
    return se, vcov


def default_init(records: Sequence[SubjectRecord], spec: ModelSpec) -> ParameterSet:
    """Class-agnostic starting values.

    Longitudinal fixed effects from pooled least squares with class intercepts
    spread over +-0.5 residual SD, random-intercept SD and measurement SD at
    half the residual SD, Weibull roots (3, 0.1), gamma = 0, zeta = 0.
    """
    layout = ParameterLayout(spec)
    v = np.zeros(layout.p)
    G = spec.n_classes
    y = np.concatenate([r.values for r in records]) if records else np.zeros(0)
    xc = np.vstack([r.x_class for r in records]) if records else np.zeros((0, 0))
    xm = np.vstack([r.x_common for r in records]) if records else np.zeros((0, 0))
    beta = np.zeros(xc.shape[1] + xm.shape[1])
    resid_sd = 1.0
    lin_links = all(link == "identity" for link in spec.links)
    if y.size > beta.size and lin_links:
        X = np.hstack([xc, xm])
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid_sd = float(np.std(y - X @ beta)) or 1.0
    spread = np.linspace(0.5, -0.5, G) if G > 1 else np.zeros(1)
    for i, slot in enumerate(layout.free_slots):
        f, idx = slot.field, slot.index
        if f == "weibull":
            v[i] = 3.0 if idx[2] == 0 else 0.1
        elif f == "beta_class":
            g, j = idx
            v[i] = beta[j]
            if spec.class_terms[j] == "1":
                v[i] += spread[g] * resid_sd
        elif f == "beta_common":
            v[i] = beta[xc.shape[1] + idx[0]]
        elif f == "u_chol":
            v[i] = 0.5 * resid_sd if idx[0] == idx[1] == 0 else (0.1 if idx[0] == idx[1] else 0.0)
        elif f == "sigma_root":
            v[i] = 1.0
        elif f == "sigma_e_root":
            v[i] = math.sqrt(0.5 * resid_sd)
        elif f == "eta":
            v[i] = (1.0, 1.0, 0.5, math.sqrt(0.25))[idx[1]]
    return layout.decode(v)


def jittered_starts(x0: np.ndarray, n: int, scale: float, rng: np.random.Generator):
    """x0 plus n-1 multiplicative perturbations (additive where x0 is zero)."""
    starts = [x0.copy()]
    for _ in range(n - 1):
        z = rng.standard_normal(x0.size)
        starts.append(np.where(x0 != 0, x0 * (1.0 + scale * z), scale * z))
    return starts


def _run_start(args):
    records, spec, x0, cfg = args
    lik = JointLikelihood(records, spec)
    return _maximize(lik, x0, cfg)


def _maximize(lik: JointLikelihood, x0, cfg: OptimizerConfig) -> MaximizeResult:
    try:
        return marquardt_maximize(
            lik, x0, cfg,
            derivatives=lambda v: block_derivatives(lik, v, cfg.fd_step, grad_step=cfg.grad_step))
    except (ValueError, InflationError) + EVAL_ERRORS as exc:
        return MaximizeResult(np.asarray(x0, float), -math.inf, 0, False,
                              {"loglik": math.inf, "param": math.inf, "rdm": math.inf},
                              [], f"start failed: {exc}")


def fit(records: Sequence[SubjectRecord], spec: ModelSpec,
        theta_init: Optional[ParameterSet] = None,
        cfg: OptimizerConfig = OptimizerConfig()) -> FitResult:
    """Multi-start Marquardt fit; keeps the best converged start."""
    records = list(records)
    layout = ParameterLayout(spec)
    lik = JointLikelihood(records, spec, layout)
    theta_init = theta_init if theta_init is not None else default_init(records, spec)
    x0 = layout.encode(theta_init)
    rng = np.random.default_rng(cfg.seed)
    starts = jittered_starts(x0, max(cfg.n_starts, 1), cfg.jitter, rng)

    if cfg.workers > 1 and len(starts) > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_run_start, [(records, spec, s, cfg) for s in starts]))
    else:
        results = [_maximize(lik, s, cfg) for s in starts]

    conv = [i for i, r in enumerate(results) if r.converged]
    pool_idx = conv if conv else range(len(results))
    best = max(pool_idx, key=lambda i: results[i].fun)
    res = results[best]
    if not np.isfinite(res.fun):
        raise RuntimeError(f"no start produced a finite log-likelihood ({res.message})")
    try:
        _, _, hess = block_derivatives(lik, res.x, cfg.fd_step)
        se, vcov = standard_errors(layout, res.x, hess)
    except DerivativeError:
        se = np.full(layout.p, np.nan)
        vcov = np.full((layout.p, layout.p), np.nan)
    return FitResult(
        spec=spec, theta_hat=layout.decode(res.x), x=res.x, labels=layout.labels,
        loglik=res.fun, bic=bic(res.fun, layout.p, len(records)), se=se, vcov=vcov,
        n_iter=res.n_iter, converged=res.converged, criteria=res.criteria,
        start_index=best, n_subjects=len(records), message=res.message,
        start_logliks=[float(r.fun) for r in results],
    )
