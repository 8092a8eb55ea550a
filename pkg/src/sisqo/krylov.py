"""Matrix-free Krylov solvers for the SQP subproblems.

Three pieces live here:

* conjugate gradients on the normal equations ``J.T J v = -J.T c`` for
  the normal (feasibility) step, applied as J then J.T so the product
  matrix is never formed;
* conjugate gradients on ``J J.T y = -J g`` for least-squares
  multiplier estimates;
* a streaming MINRES on the symmetric saddle system whose iterates
  ``(u_t, delta_t)`` and residual pair ``(rho_t, r_t)`` are exposed
  after every step, so the caller can interleave termination tests with
  the Lanczos recurrence.

MINRES follows the classical Lanczos + Givens formulation.  The
residual pair is recomputed from the operator at every step (one extra
apply), so the reported residual is always the true one; this subsumes
the periodic drift-guard recompute that recurrence-based residuals
need.
"""

import logging
from dataclasses import dataclass

import numpy as np

__all__ = ["CgResult", "cg_normal_solve", "least_squares_multipliers",
           "residual_pair", "MinresState", "minres_init", "minres_step",
           "norm_pair", "inf_norm_pair"]

logger = logging.getLogger(__name__)

# Lanczos breakdown threshold: a new off-diagonal below this means the
# Krylov space became invariant and the current iterate is exact.
BREAKDOWN_TOL = 1e-14

# Stall detection: best residual must improve by this relative factor
# over a window of steps, else the solve is flagged as stalled.
STALL_WINDOW = 50
STALL_IMPROVEMENT = 1e-4


def norm_pair(a, b):
    """Euclidean norm of the stacked vector (a; b)."""
    return float(np.sqrt(np.dot(a, a) + np.dot(b, b)))


def inf_norm_pair(a, b):
    """Infinity norm of the stacked vector (a; b)."""
    na = float(np.max(np.abs(a))) if a.size else 0.0
    nb = float(np.max(np.abs(b))) if b.size else 0.0
    return max(na, nb)


@dataclass
class CgResult:
    """Outcome of a conjugate-gradient solve.

    ``v`` is the best iterate seen (the converged one when ``converged``
    is set), ``resid_norm`` its normal-equations residual norm.
    """

    v: np.ndarray
    iterations: int
    converged: bool
    resid_norm: float


def _cg(apply_a, b, threshold, max_iter):
    """CG on a PSD system from the zero start, tracking the best iterate."""
    x = np.zeros_like(b)
    r = b.copy()
    rs = float(np.dot(r, r))
    rnorm = np.sqrt(rs)
    if rnorm <= threshold:
        return CgResult(x, 0, True, rnorm)
    p = r.copy()
    best_x, best_norm = x.copy(), rnorm
    iterations = 0
    for t in range(1, max_iter + 1):
        ap = apply_a(p)
        pap = float(np.dot(p, ap))
        if pap <= 0.0:
            # round-off pushed p outside the range space; stop here
            break
        alpha = rs / pap
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(np.dot(r, r))
        rnorm = np.sqrt(rs_new)
        iterations = t
        if rnorm < best_norm:
            best_x, best_norm = x.copy(), rnorm
        if rnorm <= threshold:
            return CgResult(x, t, True, rnorm)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return CgResult(best_x, iterations, False, best_norm)


def cg_normal_solve(j, c, rel_tol, abs_floor, max_iter=None):
    """Solve min ||c + J v|| over the row space of J by CG.

    Works on the normal equations ``J.T J v = -J.T c`` applied
    matrix-free (J then J.T).  Starts from v = 0 and stops at the first
    iterate with ``||J.T J v + J.T c|| <= max(rel_tol * ||J.T c||,
    abs_floor)``.  A zero right-hand side returns v = 0 immediately.

    Returns a :class:`CgResult`; non-convergence within ``max_iter`` is
    reported through ``converged=False`` with the best iterate kept.
    """
    m, n = j.shape
    b = -j.apply_transpose(c)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return CgResult(np.zeros(n), 0, True, 0.0)
    if max_iter is None:
        max_iter = 4 * max(m, 1) + 10
    threshold = max(rel_tol * bnorm, abs_floor)
    result = _cg(lambda p: j.apply_transpose(j.apply(p)), b, threshold, max_iter)
    if not result.converged:
        logger.warning("normal-step CG hit max_iter=%d (resid %.3e, target %.3e)",
                       max_iter, result.resid_norm, threshold)
    return result


def least_squares_multipliers(j, g, tol=1e-10, abs_floor=1e-14, max_iter=None):
    """Least-squares multipliers: CG on ``J J.T y = -J g``.

    ``tol`` is relative to the right-hand side norm.  Stagnation or an
    exhausted iteration budget logs a warning and returns the best
    iterate reached.
    """
    m = j.shape[0]
    if m == 0:
        return np.zeros(0)
    b = -j.apply(g)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(m)
    if max_iter is None:
        max_iter = 4 * m + 10
    threshold = max(tol * bnorm, abs_floor)
    result = _cg(lambda p: j.apply(j.apply_transpose(p)), b, threshold, max_iter)
    if not result.converged:
        logger.warning("multiplier CG stopped at resid %.3e (target %.3e) "
                       "after %d iterations", result.resid_norm, threshold,
                       result.iterations)
    return result.v


def residual_pair(h, j, g, v, y, u, delta):
    """Residual of the tangential saddle system at (u, delta).

    rho = H u + J.T delta + (g + H v + J.T y),  r = J u.
    """
    rho = h.apply(u) + h.apply(v) + g
    if j.shape[0]:
        rho += j.apply_transpose(delta) + j.apply_transpose(y)
        r = j.apply(u)
    else:
        r = np.zeros(0)
    return rho, r


class MinresState:
    """Streaming MINRES on ``K z = -rhs`` for the saddle operator K.

    The state owns the Lanczos vectors, the running Givens rotation, the
    iterate ``z = (u, delta)`` and the residual pair ``(rho, r) = K z +
    rhs``.  It is single-owner: advance it only through
    :func:`minres_step`.

    Attributes
    ----------
    iteration : int
        Number of completed steps.
    breakdown : bool
        Lanczos breakdown was detected (the iterate is the exact
        solution of the consistent system) or the state was stepped
        after convergence.
    stalled : bool
        The best residual stopped improving over a full window; the
        caller should treat the solve as unable to make progress.
    """

    def __init__(self, op, rhs):
        rhs_top, rhs_bot = rhs
        rhs_top = np.asarray(rhs_top, dtype=np.float64)
        rhs_bot = np.asarray(rhs_bot, dtype=np.float64)
        if rhs_top.shape != (op.n,) or rhs_bot.shape != (op.m,):
            raise ValueError("rhs blocks must match operator dimensions")
        self.op = op
        self.rhs = np.concatenate([rhs_top, rhs_bot])
        self.z = np.zeros(op.dim)
        self.iteration = 0
        self.breakdown = False
        self.stalled = False

        b = -self.rhs
        beta1 = float(np.linalg.norm(b))
        self._beta1 = beta1
        self._resid = self.rhs.copy()
        self._resid_norm = beta1
        self._best_norm = beta1
        self._window_best = beta1
        if beta1 > 0.0:
            self._r1 = b.copy()
            self._r2 = b.copy()
            self._oldb = 0.0
            self._beta = beta1
            self._dbar = 0.0
            self._epsln = 0.0
            self._phibar = beta1
            self._cs = -1.0
            self._sn = 0.0
            self._w = np.zeros(op.dim)
            self._w2 = np.zeros(op.dim)

    # -- views --------------------------------------------------------

    @property
    def u(self):
        return self.z[:self.op.n]

    @property
    def delta(self):
        return self.z[self.op.n:]

    @property
    def rho(self):
        return self._resid[:self.op.n]

    @property
    def r(self):
        return self._resid[self.op.n:]

    @property
    def resid_norm(self):
        """Euclidean norm of the stacked residual (recomputed, true)."""
        return self._resid_norm

    @property
    def resid_norm_inf(self):
        return float(np.max(np.abs(self._resid))) if self._resid.size else 0.0

    # -- stepping -----------------------------------------------------

    def step(self):
        """Advance one Lanczos/Givens step; no-op once converged."""
        if self.breakdown or self.stalled:
            return self
        if self._resid_norm == 0.0 or self._beta1 == 0.0:
            # stepping an already-converged state: flag and leave alone
            self.breakdown = True
            return self
        # r2 always holds the latest unnormalized Lanczos vector
        vec = (1.0 / self._beta) * self._r2
        y = self.op.apply(vec)
        if self.iteration >= 1:
            y -= (self._beta / self._oldb) * self._r1
        alfa = float(np.dot(vec, y))
        y -= (alfa / self._beta) * self._r2
        self._r1 = self._r2
        self._r2 = y
        self._oldb = self._beta
        self._beta = float(np.linalg.norm(y))

        oldeps = self._epsln
        delta = self._cs * self._dbar + self._sn * alfa
        gbar = self._sn * self._dbar - self._cs * alfa
        self._epsln = self._sn * self._beta
        self._dbar = -self._cs * self._beta
        gamma = max(np.hypot(gbar, self._beta), np.finfo(float).eps)
        self._cs = gbar / gamma
        self._sn = self._beta / gamma
        phi = self._cs * self._phibar
        self._phibar = self._sn * self._phibar

        w1 = self._w2
        self._w2 = self._w
        self._w = (vec - oldeps * w1 - delta * self._w2) / gamma
        self.z = self.z + phi * self._w
        self.iteration += 1

        # true residual, recomputed from the operator every step
        self._resid = self.op.apply(self.z) + self.rhs
        self._resid_norm = float(np.linalg.norm(self._resid))

        if self._beta < BREAKDOWN_TOL:
            self.breakdown = True

        if self._resid_norm < self._best_norm:
            self._best_norm = self._resid_norm
        if self.iteration % STALL_WINDOW == 0:
            if self._best_norm > (1.0 - STALL_IMPROVEMENT) * self._window_best:
                self.stalled = True
            self._window_best = self._best_norm
        return self


def minres_init(op, rhs):
    """Fresh MINRES state with iterate 0 and residual equal to rhs."""
    return MinresState(op, rhs)


def minres_step(state):
    """Advance the state one step and return it."""
    return state.step()
