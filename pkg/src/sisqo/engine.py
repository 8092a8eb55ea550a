"""Single-iteration core of the stochastic inexact SQP method.

Each iteration decomposes the step into a normal component (constraint
reduction, matrix-free CG on the normal equations) and a tangential
component (an indefinite KKT solve by MINRES, truncated as soon as one
of two termination tests accepts the iterate).  The merit parameter
tau, the ratio parameter xi, and the step size alpha then follow from
closed-form updates.

Public functions operate on raw arrays so every piece can be exercised
and cross-checked in isolation; ``sqp_iterate`` wires them together
with cached intermediate quantities.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .krylov import (cg_normal_solve, least_squares_multipliers, minres_init,
                     minres_step, norm_pair)
from .problems import HessianLadder, estimate_lipschitz, ladder_matrix
from .sparse import KktOperator

__all__ = ["SolverConfig", "IterateState", "StepResult", "NormalStepResult",
           "ConfigError", "EngineError", "IterationFailure", "InvariantBreach",
           "StationaryPointDetected", "model_reduction", "compute_normal_step",
           "check_model_reduction_condition", "termination_test_1",
           "termination_test_2", "tau_trial_and_update", "xi_update",
           "evaluate_varphi", "step_size_bounds", "select_step_size",
           "update_duals", "beta_for_iteration", "init_state", "sqp_iterate",
           "merit_value"]

logger = logging.getLogger(__name__)

# relative slack for invariant re-verification; guards against flagging
# pure round-off at equality boundaries
REL_SLACK = 1e-9


def _slack(*scales):
    return REL_SLACK * max(1.0, *(abs(s) for s in scales))


class ConfigError(ValueError):
    """Invalid solver configuration."""


class EngineError(RuntimeError):
    """Base class for iteration-level failures."""


class IterationFailure(EngineError):
    """No tangential iterate was accepted at any Hessian rung."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InvariantBreach(EngineError):
    """A quantity the convergence theory guarantees came out wrong,
    which indicates a bug rather than a hard problem."""


class StationaryPointDetected(Exception):
    """The current iterate is feasible and stationary for the sampled
    gradient; carries the certifying residuals."""

    def __init__(self, x, y_ls, grad_residual, resampled):
        super().__init__(
            f"stationary for sampled gradient (residual {grad_residual:.3e},"
            f" resampled={resampled})")
        self.x = x
        self.y_ls = y_ls
        self.grad_residual = grad_residual
        self.resampled = resampled


@dataclass
class SolverConfig:
    """All tunable constants of the method.

    Defaults follow the recommended settings for the stochastic runs:
    adaptive parameters start at tau = 0.1 and xi = 1, the two residual
    contractions share kappa = 0.1, and Lipschitz constants are
    re-estimated by finite differences at every iterate.
    """

    # adaptive parameter initial values
    tau_init: float = 0.1
    xi_init: float = 1.0
    # decrease fractions and curvature thresholds
    eps_c: float = 1.0
    eps_u: float = 5e-9
    sigma_u: float = 1.0 - 1e-12
    sigma_c: float = 0.1
    eps_tau: float = 0.01
    eps_xi: float = 0.01
    eta: float = 0.1
    kappa: float = 0.1
    kappa_rho: float = 100.0
    kappa_r: float = 100.0
    kappa_u: float = 0.1
    kappa_v: float = 0.1
    theta: float = 1e4
    eps_r: float = 1.0 - 1e-4
    zeta: float = 1e-8
    # step-size scale schedule
    beta_mode: str = "constant"
    beta0: float = 1.0
    # Lipschitz constants: fixed values or per-iteration estimates
    lipschitz_mode: str = "estimate"
    lip_l: float = 1.0
    lip_gamma: float = 0.0
    lip_floor: float = 1e-8
    probe_radius_scale: float = 1e-4
    # normal step (CG) and tangential step (MINRES) controls
    cg_rel_tol: float = 0.1
    cg_abs_floor: float = 1e-10
    cg_max_iter: int = 0
    minres_abs_floor: float = 1e-12
    minres_max_iter_scale: float = 2.0
    tt_check_stride: int = 1
    ls_multiplier_tol: float = 1e-10
    max_rung: int = 10
    # stationarity for the sampled gradient
    stationary_tol: float = 1e-12
    resample_on_stationary: bool = True
    # outer loop (consumed by the run harness)
    feasibility_tol: float = 1e-6
    stationarity_tol: float = 1e-2
    max_outer_iterations: int = 500
    seed: int = 0
    dual_update: str = "direct"
    debug_checks: bool = False

    def __post_init__(self):
        unit_open = {"eta": self.eta, "sigma_c": self.sigma_c,
                     "sigma_u": self.sigma_u, "eps_tau": self.eps_tau,
                     "eps_xi": self.eps_xi, "kappa": self.kappa}
        for name, val in unit_open.items():
            if not 0.0 < val < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {val}")
        if not 0.0 < self.eps_r <= 1.0:
            raise ConfigError("eps_r must lie in (0, 1]")
        if self.sigma_c >= self.eps_r:
            raise ConfigError("sigma_c < eps_r required for the tau update")
        positive = {"tau_init": self.tau_init, "xi_init": self.xi_init,
                    "eps_c": self.eps_c, "eps_u": self.eps_u,
                    "kappa_rho": self.kappa_rho, "kappa_r": self.kappa_r,
                    "kappa_u": self.kappa_u, "kappa_v": self.kappa_v,
                    "theta": self.theta, "zeta": self.zeta,
                    "lip_floor": self.lip_floor,
                    "probe_radius_scale": self.probe_radius_scale,
                    "cg_rel_tol": self.cg_rel_tol,
                    "minres_max_iter_scale": self.minres_max_iter_scale}
        for name, val in positive.items():
            if val <= 0.0:
                raise ConfigError(f"{name} must be positive, got {val}")
        if self.eps_c > 1.0:
            raise ConfigError("eps_c must lie in (0, 1]")
        if not 0.0 < self.beta0 <= 1.0:
            raise ConfigError("beta0 must lie in (0, 1]")
        if self.beta_mode not in ("constant", "diminishing"):
            raise ConfigError(f"unknown beta_mode {self.beta_mode!r}")
        if self.lipschitz_mode not in ("fixed", "estimate"):
            raise ConfigError(f"unknown lipschitz_mode {self.lipschitz_mode!r}")
        if self.lipschitz_mode == "fixed":
            if self.lip_l <= 0.0 or self.lip_gamma < 0.0:
                raise ConfigError("fixed mode needs lip_l > 0, lip_gamma >= 0")
            if self.lip_gamma > 0.0:
                scale = 2.0 * (1.0 - self.eta) * self.beta0 * self.xi_init \
                    * self.tau_init / self.lip_gamma
                if not 0.0 < scale <= 1.0:
                    raise ConfigError(
                        "step-size normalization 2(1-eta) beta0 xi0 tau0 /"
                        f" gamma = {scale:.3g} falls outside (0, 1]")
        if self.dual_update not in ("direct", "least_squares"):
            raise ConfigError(f"unknown dual_update {self.dual_update!r}")
        if self.tt_check_stride < 1:
            raise ConfigError("tt_check_stride must be >= 1")
        if self.max_rung < 0 or self.max_outer_iterations < 0:
            raise ConfigError("max_rung and max_outer_iterations must be >= 0")
        if self.cg_abs_floor < 0 or self.minres_abs_floor < 0:
            raise ConfigError("absolute floors must be >= 0")


@dataclass
class IterateState:
    """Everything carried from iteration k to k+1.

    The previous iterate's sampled gradient, Jacobian, and constraint
    values feed the backward-looking branch of the dual residual bound;
    they are None at k = 0.
    """

    k: int
    x: np.ndarray
    y: np.ndarray
    tau: float
    xi: float
    c: np.ndarray
    j: object
    prev_g: Optional[np.ndarray] = None
    prev_j: Optional[object] = None
    prev_c: Optional[np.ndarray] = None


@dataclass
class NormalStepResult:
    v: np.ndarray
    iterations: int
    cauchy_lhs: float
    cauchy_rhs: float


@dataclass
class StepResult:
    """Full diagnostics for one accepted iteration."""

    k: int
    v: np.ndarray
    u: np.ndarray
    delta: np.ndarray
    d: np.ndarray
    rho: np.ndarray
    r: np.ndarray
    accepted_test: int
    minres_iters: int
    cg_iters: int
    hessian_rung: int
    tau_trial: float
    tau: float
    xi_trial: float
    xi: float
    beta: float
    lip_l: float
    lip_gamma: float
    delta_l: float
    alpha_min: float
    alpha_suff: float
    alpha: float
    merit_gap: Optional[float] = None
    violations: list = field(default_factory=list)
    info: dict = field(default_factory=dict)


def merit_value(problem, x, tau):
    """Exact-penalty merit tau * f(x) + ||c(x)||."""
    return tau * problem.eval_f(x) + float(np.linalg.norm(problem.eval_c(x)))


# -- model reduction and the normal step ------------------------------------

def model_reduction(tau, g, c, j, d):
    """Reduction of the local merit model along d:
    -tau g'd + ||c|| - ||c + Jd||."""
    return (-tau * float(np.dot(g, d)) + float(np.linalg.norm(c))
            - float(np.linalg.norm(c + j.apply(d))))


def compute_normal_step(c, j, cfg):
    """Matrix-free CG on J'J v = -J'c, certified against the Cauchy
    decrease of the steepest-descent direction for 0.5||c + Jv||^2.

    Raises InvariantBreach if the certification fails, since the CG
    iterates should dominate the Cauchy point by construction.
    """
    max_iter = cfg.cg_max_iter if cfg.cg_max_iter > 0 else None
    res = cg_normal_solve(j, c, cfg.cg_rel_tol, cfg.cg_abs_floor,
                          max_iter=max_iter)
    v = res.v
    c_norm = float(np.linalg.norm(c))
    lhs = c_norm - float(np.linalg.norm(c + j.apply(v)))

    jtc = j.apply_transpose(c)
    jtc_sq = float(np.dot(jtc, jtc))
    if jtc_sq == 0.0:
        rhs = 0.0
    else:
        jjtc = j.apply(jtc)
        denom = float(np.dot(jjtc, jjtc))
        alpha_c = jtc_sq / denom if denom > 0.0 else 0.0
        rhs = cfg.eps_c * (c_norm
                           - float(np.linalg.norm(c - alpha_c * jjtc)))
    if lhs < rhs - _slack(c_norm):
        raise InvariantBreach(
            f"normal step lost to the Cauchy point: decrease {lhs:.6e}"
            f" < required {rhs:.6e} (||c|| = {c_norm:.3e},"
            f" cg iterations {res.iterations})")
    return NormalStepResult(v, res.iterations, lhs, rhs)


def check_model_reduction_condition(tau, g, c, j, v, u, h, cfg):
    """Sufficient model reduction of d = v + u against the tangential
    curvature and the normal decrease, at the given tau."""
    d = v + u
    uhu = float(np.dot(u, h.apply(u)))
    u_sq = float(np.dot(u, u))
    c_norm = float(np.linalg.norm(c))
    decrease_v = c_norm - float(np.linalg.norm(c + j.apply(v)))
    lhs = model_reduction(tau, g, c, j, d)
    rhs = cfg.sigma_u * tau * max(uhu, cfg.eps_u * u_sq) \
        + cfg.sigma_c * decrease_v
    return lhs >= rhs - _slack(lhs, rhs)


# -- termination tests -------------------------------------------------------

class _TestEvaluation:
    """Shared quantities behind both termination tests for one MINRES
    candidate; computed once, consumed by the test predicates and the
    subsequent tau update."""

    __slots__ = ("tt1", "tt2", "common", "g_dot_d", "max_term",
                 "norm_c_plus_jd", "uhu", "u_sq")

    def __init__(self, u, delta, rho, r, ctx, cfg):
        hu = ctx.h.apply(u)
        self.uhu = float(np.dot(u, hu))
        self.u_sq = float(np.dot(u, u))
        rho_norm = float(np.linalg.norm(rho))
        r_norm = float(np.linalg.norm(r))

        # dual residual against the smaller of the current and previous
        # stationarity measures; the identity
        # g + J'(y + delta) = rho - Hu - Hv avoids a Jacobian apply
        stat_vec = rho - hu - ctx.hv
        current = norm_pair(stat_vec, ctx.c)
        bound = cfg.kappa * min(current, ctx.prev_pair_norm)
        cond_a = rho_norm <= bound

        cond_b = (rho_norm <= cfg.kappa_rho * ctx.beta
                  and r_norm <= cfg.kappa_r * ctx.beta)

        small_u = math.sqrt(self.u_sq) <= cfg.kappa_u * ctx.v_norm
        if small_u:
            cond_c = True
        else:
            curved = self.uhu >= cfg.eps_u * self.u_sq
            bounded = (float(np.dot(ctx.gv_vec, u)) + 0.5 * self.uhu
                       <= cfg.kappa_v * ctx.v_norm)
            cond_c = curved and bounded
        self.common = cond_a and cond_b and cond_c

        # Jd = Jv + r, again avoiding a Jacobian apply
        self.norm_c_plus_jd = float(np.linalg.norm(ctx.c_plus_jv + r))
        self.g_dot_d = ctx.g_dot_v + float(np.dot(ctx.g, u))
        self.max_term = max(self.uhu, cfg.eps_u * self.u_sq)

        if not self.common:
            self.tt1 = self.tt2 = False
            return
        reduction_prev = (-ctx.tau_prev * self.g_dot_d + ctx.c_norm
                          - self.norm_c_plus_jd)
        self.tt1 = reduction_prev >= (cfg.sigma_u * ctx.tau_prev
                                      * self.max_term
                                      + cfg.sigma_c * ctx.decrease_v)
        retained = ctx.c_norm - self.norm_c_plus_jd
        floor = cfg.eps_r * ctx.decrease_v
        self.tt2 = retained >= floor and floor > 0.0

    @property
    def accepted(self):
        return 1 if self.tt1 else (2 if self.tt2 else 0)


class _IterationContext:
    """Per-(iterate, rung) cache shared across MINRES candidates."""

    __slots__ = ("g", "c", "j", "v", "y", "h", "tau_prev", "beta",
                 "prev_pair_norm", "hv", "jv", "c_plus_jv", "c_norm",
                 "decrease_v", "g_dot_v", "gv_vec", "rhs_top", "v_norm")

    def __init__(self, g, c, j, v, y, h, tau_prev, beta, prev_pair_norm):
        self.g = g
        self.c = c
        self.j = j
        self.v = v
        self.y = y
        self.h = h
        self.tau_prev = tau_prev
        self.beta = beta
        self.prev_pair_norm = (math.inf if prev_pair_norm is None
                               else prev_pair_norm)
        self.hv = h.apply(v)
        self.jv = j.apply(v)
        self.c_plus_jv = c + self.jv
        self.c_norm = float(np.linalg.norm(c))
        self.decrease_v = self.c_norm - float(np.linalg.norm(self.c_plus_jv))
        self.g_dot_v = float(np.dot(g, v))
        self.gv_vec = g + self.hv
        self.rhs_top = self.gv_vec + j.apply_transpose(y)
        self.v_norm = float(np.linalg.norm(v))


def termination_test_1(g, c, j, v, y, h, u, delta, rho, r, tau_prev, beta,
                       cfg, prev_pair_norm=None):
    """Truncation test requiring sufficient model reduction at the
    incoming tau; accepting it leaves tau unchanged."""
    ctx = _IterationContext(g, c, j, v, y, h, tau_prev, beta, prev_pair_norm)
    return _TestEvaluation(u, delta, rho, r, ctx, cfg).tt1


def termination_test_2(g, c, j, v, y, h, u, delta, rho, r, beta, cfg,
                       prev_pair_norm=None):
    """Truncation test requiring retention of the normal constraint
    decrease; accepting it may shrink tau."""
    ctx = _IterationContext(g, c, j, v, y, h, 1.0, beta, prev_pair_norm)
    return _TestEvaluation(u, delta, rho, r, ctx, cfg).tt2


# -- parameter updates -------------------------------------------------------

def _tau_from_parts(tau_prev, g_dot_d, max_term, c_norm, norm_c_plus_jd, cfg):
    denom = g_dot_d + max_term
    if denom <= 0.0:
        tau_trial = math.inf
    else:
        tau_trial = (1.0 - cfg.sigma_c / cfg.eps_r) \
            * (c_norm - norm_c_plus_jd) / denom
    if tau_prev <= tau_trial:
        tau_new = tau_prev
    else:
        tau_new = min((1.0 - cfg.eps_tau) * tau_prev, tau_trial)
    if tau_new <= 0.0:
        raise InvariantBreach(
            f"merit parameter collapsed to {tau_new:.3e}"
            f" (trial {tau_trial:.3e})")
    return tau_trial, tau_new


def tau_trial_and_update(tau_prev, g, d, u, h, c, j, v, r, cfg):
    """Merit parameter update after a test-2 acceptance."""
    g_dot_d = float(np.dot(g, d))
    max_term = max(float(np.dot(u, h.apply(u))),
                   cfg.eps_u * float(np.dot(u, u)))
    c_norm = float(np.linalg.norm(c))
    norm_c_plus_jd = float(np.linalg.norm(c + j.apply(v) + r))
    return _tau_from_parts(tau_prev, g_dot_d, max_term, c_norm,
                           norm_c_plus_jd, cfg)


def xi_update(xi_prev, tau, delta_l, d, cfg):
    """Ratio parameter update; the trial value is the realized
    reduction-to-step ratio delta_l / (tau ||d||^2)."""
    d_sq = float(np.dot(d, d))
    if delta_l <= 0.0 or d_sq <= 0.0:
        raise InvariantBreach(
            f"nonpositive model reduction (delta_l = {delta_l:.3e},"
            f" ||d||^2 = {d_sq:.3e}) reached the ratio update")
    xi_trial = delta_l / (tau * d_sq)
    if xi_prev <= xi_trial:
        xi_new = xi_prev
    else:
        xi_new = min((1.0 - cfg.eps_xi) * xi_prev, xi_trial)
    return xi_trial, xi_new


# -- step size ---------------------------------------------------------------

def evaluate_varphi(alpha, beta, tau, delta_l, c, j, d, lip_l, lip_gamma,
                    cfg):
    """Upper model of the merit change at step size alpha, minus the
    target decrease; step sizes with varphi <= 0 are safe."""
    jd = j.apply(d)
    c_norm = float(np.linalg.norm(c))
    return ((cfg.eta - 1.0) * alpha * beta * delta_l
            + float(np.linalg.norm(c + alpha * jd)) - c_norm
            + alpha * (c_norm - float(np.linalg.norm(c + jd)))
            + 0.5 * (tau * lip_l + lip_gamma) * alpha ** 2
            * float(np.dot(d, d)))


def step_size_bounds(tau, xi, beta, delta_l, d, lip_l, lip_gamma, cfg):
    """Lower and upper safe step sizes.

    alpha_min <= alpha_suff holds because xi never exceeds the realized
    ratio delta_l / (tau ||d||^2); the clamp makes the guarantee robust
    to round-off (and to Lipschitz constants from different sources).
    """
    denom = tau * lip_l + lip_gamma
    if denom <= 0.0:
        raise ConfigError("tau * L + Gamma must be positive")
    d_sq = float(np.dot(d, d))
    if d_sq <= 0.0:
        raise InvariantBreach("zero step direction reached the step-size rule")
    alpha_suff = min(2.0 * (1.0 - cfg.eta) * beta * delta_l / (denom * d_sq),
                     1.0)
    alpha_min = min(2.0 * (1.0 - cfg.eta) * beta * xi * tau / denom,
                    alpha_suff)
    return alpha_min, alpha_suff


_EXPAND = 1.1


def select_step_size(alpha_min, alpha_suff, beta, theta, varphi):
    """Step size selection between the safe bounds.

    A full step wins when alpha_suff reaches 1.  Otherwise the capped
    lower bound alpha_min + theta beta^2 is taken when it does not
    exceed alpha_suff; failing that, alpha_suff is expanded by factors
    of 1.1 while the merit model stays nonpositive, the cap is
    respected, and the previous trial was below 1.  The unexpanded
    alpha_suff is always admissible, so no varphi evaluation guards it.
    """
    cap = alpha_min + theta * beta ** 2
    if alpha_suff == 1.0:
        return min(1.0, cap)
    if cap <= alpha_suff:
        return cap
    alpha = alpha_suff
    t = 1
    while True:
        trial = alpha_suff * _EXPAND ** t
        if trial > cap or alpha_suff * _EXPAND ** (t - 1) >= 1.0 \
                or varphi(trial) > 0.0:
            return alpha
        alpha = trial
        t += 1


def beta_for_iteration(cfg, k):
    if cfg.beta_mode == "constant":
        return cfg.beta0
    return cfg.beta0 / (k + 1)


# -- dual update and the outer iteration -------------------------------------

def update_duals(y, delta, g, j, cfg):
    """Shifted duals y + delta, or in least-squares mode the minimum
    residual multipliers when they beat the shifted ones."""
    y_plus = y + delta
    if cfg.dual_update == "least_squares":
        y_ls = least_squares_multipliers(j, g, cfg.ls_multiplier_tol)
        res_ls = float(np.linalg.norm(g + j.apply_transpose(y_ls)))
        res_plus = float(np.linalg.norm(g + j.apply_transpose(y_plus)))
        if res_ls <= res_plus:
            return y_ls
    return y_plus


def init_state(problem, cfg, x0=None, y0=None):
    x = np.array(problem.x0 if x0 is None else x0, dtype=np.float64)
    y = np.zeros(problem.m) if y0 is None else np.array(y0, dtype=np.float64)
    if x.shape != (problem.n,) or y.shape != (problem.m,):
        raise ValueError("bad x0 or y0 shape")
    return IterateState(k=0, x=x, y=y, tau=cfg.tau_init, xi=cfg.xi_init,
                        c=problem.eval_c(x), j=problem.eval_jacobian(x))


def _default_probe_rng(cfg, k):
    # keyed by (seed, stream, iteration) so standalone calls do not
    # replay the same probe every iteration
    from .problems import STREAMS

    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence((int(cfg.seed), STREAMS["lipschitz"], int(k)))))


def _check_stationary(state, problem, oracle, cfg, g):
    """Feasible-and-stationary detection for the sampled gradient,
    with a single resample for stochastic oracles."""
    if float(np.max(np.abs(state.c), initial=0.0)) >= cfg.stationary_tol:
        return g
    resampled = False
    while True:
        y_ls = least_squares_multipliers(state.j, g, cfg.ls_multiplier_tol)
        residual = float(np.linalg.norm(
            g + state.j.apply_transpose(y_ls)))
        if residual >= cfg.stationary_tol:
            return g
        if oracle.is_stochastic and cfg.resample_on_stationary \
                and not resampled:
            g = oracle.sample(problem, state.x)
            resampled = True
            continue
        raise StationaryPointDetected(state.x, y_ls, residual, resampled)


def _tangential_solve(ctx, cfg):
    """Run MINRES on the KKT system, checking the termination tests on
    a stride of iterates (and at breakdown), until one accepts.

    Returns (u, delta, rho, r, evaluation, iterations, solver_info);
    the evaluation is None when the solver gave out unaccepted.
    """
    op = KktOperator(ctx.h, ctx.j)
    mstate = minres_init(op, (ctx.rhs_top, np.zeros(ctx.j.rows)))
    cap = max(cfg.kappa * float(np.max(np.abs(ctx.rhs_top), initial=0.0)),
              cfg.minres_abs_floor)
    max_iter = max(1, int(cfg.minres_max_iter_scale * op.dim))

    def try_accept():
        if mstate.resid_norm_inf > cap:
            return None
        ev = _TestEvaluation(mstate.u, mstate.delta, mstate.rho, mstate.r,
                             ctx, cfg)
        return ev if ev.accepted else None

    ev = try_accept()
    if ev is not None:
        return (mstate.u, mstate.delta, mstate.rho, mstate.r, ev, 0,
                {"breakdown": False, "stalled": False})
    for t in range(1, max_iter + 1):
        minres_step(mstate)
        final = mstate.breakdown or mstate.stalled
        if t % cfg.tt_check_stride == 0 or final or t == max_iter:
            ev = try_accept()
            if ev is not None:
                return (mstate.u, mstate.delta, mstate.rho, mstate.r, ev, t,
                        {"breakdown": mstate.breakdown,
                         "stalled": mstate.stalled})
        if final:
            return (None, None, None, None, None, t,
                    {"breakdown": mstate.breakdown,
                     "stalled": mstate.stalled,
                     "resid_norm": mstate.resid_norm})
    return (None, None, None, None, None, max_iter,
            {"breakdown": False, "stalled": False,
             "resid_norm": mstate.resid_norm})


def _debug_verify(step, ctx, ns, varphi, cfg):
    """Recompute every guaranteed inequality from scratch; returns a
    list of violation descriptions (empty when clean)."""
    out = []
    if ns.cauchy_lhs < ns.cauchy_rhs - _slack(ns.cauchy_lhs, ns.cauchy_rhs):
        out.append(f"cauchy decrease {ns.cauchy_lhs:.6e} < {ns.cauchy_rhs:.6e}")

    args = (ctx.g, ctx.c, ctx.j, ctx.v, ctx.y, ctx.h, step.u, step.delta,
            step.rho, step.r)
    if step.accepted_test == 1:
        ok = termination_test_1(*args, ctx.tau_prev, step.beta, cfg,
                                prev_pair_norm=ctx.prev_pair_norm)
    else:
        ok = termination_test_2(*args, step.beta, cfg,
                                prev_pair_norm=ctx.prev_pair_norm)
    if not ok:
        out.append(f"accepted test {step.accepted_test} fails on recompute")

    if not check_model_reduction_condition(step.tau, ctx.g, ctx.c, ctx.j,
                                           ctx.v, step.u, ctx.h, cfg):
        out.append("model reduction condition fails at updated tau")

    d_norm = float(np.linalg.norm(step.d))
    if d_norm <= 0.0:
        out.append("zero search direction")
    if step.delta_l <= 0.0:
        out.append(f"nonpositive model reduction {step.delta_l:.6e}")

    if step.alpha_min > step.alpha_suff + _slack(step.alpha_suff):
        out.append(f"alpha_min {step.alpha_min:.6e} exceeds"
                   f" alpha_suff {step.alpha_suff:.6e}")
    cap = step.alpha_min + cfg.theta * step.beta ** 2
    if step.alpha > cap + _slack(cap):
        out.append(f"alpha {step.alpha:.6e} exceeds cap {cap:.6e}")
    if step.alpha >= _EXPAND + _slack(1.0):
        out.append(f"alpha {step.alpha:.6e} at or above the expansion limit")
    phi_scale = (1.0 - cfg.eta) * step.alpha * step.beta * step.delta_l \
        + 0.5 * (step.tau * step.lip_l + step.lip_gamma) \
        * step.alpha ** 2 * d_norm ** 2 + step.alpha * ctx.c_norm
    phi_val = varphi(step.alpha)
    if phi_val > _slack(phi_scale):
        out.append(f"varphi({step.alpha:.6e}) = {phi_val:.6e} > 0")

    if step.tau > ctx.tau_prev:
        out.append(f"tau increased {ctx.tau_prev:.6e} -> {step.tau:.6e}")
    elif step.tau < ctx.tau_prev and \
            step.tau > (1.0 - cfg.eps_tau) * ctx.tau_prev + _slack(step.tau):
        out.append("tau decrease smaller than the geometric fraction")
    if step.tau > step.tau_trial + _slack(step.tau):
        out.append(f"tau {step.tau:.6e} exceeds trial {step.tau_trial:.6e}")
    if step.xi_trial < step.xi - _slack(step.xi):
        out.append(f"xi {step.xi:.6e} exceeds trial {step.xi_trial:.6e}")
    return out


def sqp_iterate(state, problem, oracle, cfg, probe_rng=None):
    """One full iteration: sample, detect stationarity, take the normal
    step, truncate the tangential solve over the Hessian ladder, update
    tau / xi / duals, and select the step size.

    Returns the advanced state and a StepResult.  Raises
    StationaryPointDetected or IterationFailure; either ends the run.
    """
    g = oracle.sample(problem, state.x)
    g = _check_stationary(state, problem, oracle, cfg, g)

    if cfg.lipschitz_mode == "fixed":
        lip_l, lip_gamma = cfg.lip_l, cfg.lip_gamma
    else:
        if probe_rng is None:
            probe_rng = _default_probe_rng(cfg, state.k)
        radius = cfg.probe_radius_scale * max(
            1.0, float(np.linalg.norm(state.x)))
        lip_l, lip_gamma = estimate_lipschitz(problem, state.x, radius,
                                              probe_rng, floor=cfg.lip_floor)

    ns = compute_normal_step(state.c, state.j, cfg)
    beta = beta_for_iteration(cfg, state.k)

    if state.prev_g is None:
        prev_pair = None
    else:
        prev_pair = norm_pair(
            state.prev_g + state.prev_j.apply_transpose(state.y),
            state.prev_c)

    ladder = HessianLadder(max_rung=cfg.max_rung)
    total_minres = 0
    rungs = []
    while True:
        h = ladder_matrix(ladder, problem, state.x, state.y)
        ctx = _IterationContext(g, state.c, state.j, ns.v, state.y, h,
                                state.tau, beta, prev_pair)
        u, delta, rho, r, ev, iters, solver_info = _tangential_solve(ctx, cfg)
        total_minres += iters
        rungs.append({"rung": ladder.rung, "minres_iters": iters,
                      **solver_info})
        if ev is not None:
            break
        if ladder.exhausted:
            raise IterationFailure(
                f"no tangential iterate accepted at iteration {state.k}"
                f" after {len(rungs)} Hessian rungs"
                f" ({total_minres} total MINRES iterations)",
                diagnostics={"k": state.k, "rungs": rungs,
                             "c_norm": ctx.c_norm,
                             "v_norm": ctx.v_norm,
                             "rhs_norm": float(np.linalg.norm(ctx.rhs_top))})
        ladder.advance()

    if ev.accepted == 1:
        tau_trial, tau_new = math.inf, state.tau
    else:
        tau_trial, tau_new = _tau_from_parts(
            state.tau, ev.g_dot_d, ev.max_term, ctx.c_norm,
            ev.norm_c_plus_jd, cfg)

    d = ns.v + u
    if float(np.dot(d, d)) == 0.0:
        # a zero direction can only be accepted with v = 0 and u = 0
        # (any cancellation fails both tests), which certifies the
        # iterate as stationary for the sampled gradient to working
        # precision even when the explicit gate has not fired yet
        y_ls = least_squares_multipliers(state.j, g, cfg.ls_multiplier_tol)
        raise StationaryPointDetected(
            state.x, y_ls,
            float(np.linalg.norm(g + state.j.apply_transpose(y_ls))),
            resampled=False)
    delta_l = -tau_new * ev.g_dot_d + ctx.c_norm - ev.norm_c_plus_jd
    xi_trial, xi_new = xi_update(state.xi, tau_new, delta_l, d, cfg)
    alpha_min, alpha_suff = step_size_bounds(tau_new, xi_new, beta, delta_l,
                                             d, lip_l, lip_gamma, cfg)

    jd = ctx.jv + r
    d_sq = float(np.dot(d, d))
    norm_c_plus_jd = ev.norm_c_plus_jd

    def varphi(alpha):
        return ((cfg.eta - 1.0) * alpha * beta * delta_l
                + float(np.linalg.norm(ctx.c + alpha * jd)) - ctx.c_norm
                + alpha * (ctx.c_norm - norm_c_plus_jd)
                + 0.5 * (tau_new * lip_l + lip_gamma) * alpha ** 2 * d_sq)

    alpha = select_step_size(alpha_min, alpha_suff, beta, cfg.theta, varphi)

    x_next = state.x + alpha * d
    y_next = update_duals(state.y, delta, g, state.j, cfg)

    step = StepResult(
        k=state.k, v=ns.v, u=u, delta=delta, d=d, rho=rho, r=r,
        accepted_test=ev.accepted, minres_iters=total_minres,
        cg_iters=ns.iterations, hessian_rung=ladder.rung,
        tau_trial=tau_trial, tau=tau_new, xi_trial=xi_trial, xi=xi_new,
        beta=beta, lip_l=lip_l, lip_gamma=lip_gamma, delta_l=delta_l,
        alpha_min=alpha_min, alpha_suff=alpha_suff, alpha=alpha,
        info={"rungs": rungs, "c_norm": ctx.c_norm,
              "decrease_v": ctx.decrease_v})

    # merit decrease against the model bound: guaranteed when the
    # Lipschitz constants are true upper bounds and g is exact, so a
    # breach is only flagged in that mode and logged otherwise
    merit_drop = merit_value(problem, x_next, tau_new) \
        - merit_value(problem, state.x, tau_new)
    bound = -alpha * delta_l * (1.0 - (1.0 - cfg.eta) * beta)
    step.merit_gap = merit_drop - bound
    guaranteed = cfg.lipschitz_mode == "fixed" and not oracle.is_stochastic
    if step.merit_gap > _slack(abs(merit_drop), abs(bound), delta_l):
        if guaranteed:
            step.violations.append(
                f"merit change {merit_drop:.6e} above bound {bound:.6e}")
        else:
            logger.debug("merit bound exceeded by %.3e at iteration %d"
                         " (estimated Lipschitz constants)",
                         step.merit_gap, state.k)

    if cfg.debug_checks:
        step.violations.extend(_debug_verify(step, ctx, ns, varphi, cfg))
        for message in step.violations:
            logger.warning("invariant violation at iteration %d: %s",
                           state.k, message)

    state_next = IterateState(
        k=state.k + 1, x=x_next, y=y_next, tau=tau_new, xi=xi_new,
        c=problem.eval_c(x_next), j=problem.eval_jacobian(x_next),
        prev_g=g, prev_j=state.j, prev_c=state.c)
    return state_next, step
