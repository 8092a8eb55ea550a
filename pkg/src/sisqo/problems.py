"""Problem abstraction, stochastic gradient oracles, Hessian ladder, and
finite-difference Lipschitz estimation.

A Problem bundles callables for the objective, constraints, and their
derivatives.  Sparse matrices returned by the derivative callables must
be :class:`sisqo.sparse.SparseMatrix`.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .sparse import SparseMatrix, blend_with_identity

__all__ = ["Problem", "GradientOracle", "HessianLadder",
           "gaussian_oracle_sample", "finite_sum_oracle_sample",
           "ladder_matrix", "estimate_lipschitz", "substream",
           "validate_problem"]

# substream codes for the counter-based RNG (Philox): adding new
# instrumentation must never perturb existing streams
STREAMS = {"oracle": 1, "lipschitz": 2, "problem": 3}


def substream(seed, name):
    """Named Philox substream; (seed, name) fully determines the draws."""
    try:
        code = STREAMS[name]
    except KeyError:
        raise ValueError(f"unknown stream {name!r}; known: {sorted(STREAMS)}")
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence((int(seed), code))))


@dataclass(frozen=True)
class Problem:
    """Equality-constrained NLP: min f(x) subject to c(x) = 0.

    Parameters
    ----------
    eval_f, eval_grad_f, eval_c, eval_jacobian : callables of x
        True objective, gradient, constraints, and m-by-n Jacobian.
        The true gradient stays available for metrics and for the
        exact-mode oracle even when runs sample stochastic gradients.
    eval_lagrangian_hessian : callable of (x, y)
        Symmetric n-by-n Hessian of f(x) + c(x)^T y.
    known_solution : optional (x_star, y_star)
        A KKT pair when available (synthetic QPs).
    term_grid : optional int
        N when f is the mean of N^2 terms indexed by (i, j) in
        {1..N}^2; enables the finite-sum oracle.
    eval_term_grad : optional callable of (x, i, j)
        Gradient of the single (i, j) term.
    lipschitz : optional (L, Gamma)
        True Lipschitz upper bounds for the gradient and Jacobian, when
        known (quadratic objective / linear constraints).
    """

    name: str
    n: int
    m: int
    eval_f: Callable
    eval_grad_f: Callable
    eval_c: Callable
    eval_jacobian: Callable
    eval_lagrangian_hessian: Callable
    x0: np.ndarray
    known_solution: Optional[tuple] = None
    term_grid: Optional[int] = None
    eval_term_grad: Optional[Callable] = None
    lipschitz: Optional[tuple] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.m > self.n:
            raise ValueError("constraint dimension cannot exceed primal dimension")
        if self.x0.shape != (self.n,):
            raise ValueError("x0 must have length n")


# -- gradient oracles ----------------------------------------------------

def gaussian_oracle_sample(problem, x, eps_n, rng):
    """True gradient plus N(0, (eps_n^2/n) I) noise; M_g = eps_n^2."""
    if eps_n < 0:
        raise ValueError("eps_n must be non-negative")
    g = problem.eval_grad_f(x)
    if eps_n == 0.0:
        return g
    return g + (eps_n / np.sqrt(problem.n)) * rng.standard_normal(problem.n)


def finite_sum_oracle_sample(problem, x, rng):
    """Gradient of one uniformly drawn (i, j) term of the finite sum."""
    n_terms = problem.term_grid
    if n_terms is None or problem.eval_term_grad is None:
        raise ValueError(f"problem {problem.name} exposes no finite-sum terms")
    i = int(rng.integers(1, n_terms + 1))
    j = int(rng.integers(1, n_terms + 1))
    return problem.eval_term_grad(x, i, j)


@dataclass
class GradientOracle:
    """Stochastic (or exact) gradient sampler with a private stream.

    kind is one of ``gaussian`` (true gradient plus isotropic noise),
    ``finite_sum`` (single uniformly drawn term), or ``exact``.
    """

    kind: str
    rng: Optional[np.random.Generator] = None
    eps_n: float = 0.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "finite_sum", "exact"):
            raise ValueError(f"unknown oracle kind {self.kind!r}")
        if self.kind != "exact" and self.rng is None:
            raise ValueError(f"{self.kind} oracle requires an rng")

    @property
    def is_stochastic(self):
        return self.kind != "exact" and not (self.kind == "gaussian"
                                             and self.eps_n == 0.0)

    def sample(self, problem, x):
        if self.kind == "exact":
            return problem.eval_grad_f(x)
        if self.kind == "gaussian":
            return gaussian_oracle_sample(problem, x, self.eps_n, self.rng)
        return finite_sum_oracle_sample(problem, x, self.rng)

    def variance_bound(self, problem):
        """Reported M_g metadata; the algorithm itself never consumes it.

        Gaussian: eps_n^2 exactly.  Finite sum: the maximum squared
        term-gradient deviation at x0, computed exhaustively.
        """
        if self.kind == "exact":
            return 0.0
        if self.kind == "gaussian":
            return self.eps_n ** 2
        n_terms = problem.term_grid
        x0 = problem.x0
        full = problem.eval_grad_f(x0)
        worst = 0.0
        for i in range(1, n_terms + 1):
            for j in range(1, n_terms + 1):
                dev = problem.eval_term_grad(x0, i, j) - full
                worst = max(worst, float(np.dot(dev, dev)))
        return worst


# -- Hessian modification ladder ------------------------------------------

@dataclass
class HessianLadder:
    """Blending schedule H <- iota * Hessian + (1 - iota) * I.

    Rung j gives iota = 10^(-j); past ``max_rung`` the identity is used
    so no further modification can be triggered.
    """

    max_rung: int = 10
    rung: int = 0

    @property
    def iota(self):
        if self.rung > self.max_rung:
            return 0.0
        return 10.0 ** (-self.rung)

    @property
    def exhausted(self):
        """True once the identity rung has been reached."""
        return self.rung > self.max_rung

    def advance(self):
        self.rung += 1
        return self


def ladder_matrix(ladder, problem, x, y):
    """Hessian at the ladder's current rung."""
    if ladder.rung > ladder.max_rung:
        return SparseMatrix.identity(problem.n)
    hess = problem.eval_lagrangian_hessian(x, y)
    return blend_with_identity(hess, ladder.iota)


# -- Lipschitz estimation --------------------------------------------------

def estimate_lipschitz(problem, x, probe_radius, rng, floor=1e-8):
    """Finite-difference Lipschitz estimates at a random nearby point.

    Samples x' uniformly in the ball of radius ``probe_radius`` around
    x, then L_est = ||grad f(x') - grad f(x)|| / ||x' - x|| and
    Gamma_est = ||J(x') - J(x)||_F / ||x' - x||, floored at ``floor``.
    """
    if probe_radius <= 0:
        raise ValueError("probe_radius must be positive")
    n = problem.n
    direction = rng.standard_normal(n)
    dnorm = float(np.linalg.norm(direction))
    if dnorm == 0.0:
        return floor, floor
    radius = probe_radius * rng.uniform() ** (1.0 / n)
    step = (radius / dnorm) * direction
    dist = float(np.linalg.norm(step))
    if dist == 0.0:
        return floor, floor
    xp = x + step
    l_est = float(np.linalg.norm(problem.eval_grad_f(xp)
                                 - problem.eval_grad_f(x))) / dist
    from .sparse import frobenius_distance

    gamma_est = frobenius_distance(problem.eval_jacobian(xp),
                                   problem.eval_jacobian(x)) / dist
    return max(l_est, floor), max(gamma_est, floor)


# -- derivative validation -------------------------------------------------

def validate_problem(problem, seed=0, n_points=20, fd_step=1e-6):
    """Central finite-difference checks of the declared derivatives.

    Returns a dict of worst-case relative errors over ``n_points``
    random probes: gradient vs f, Jacobian vs c, and Lagrangian Hessian
    vs the Lagrangian gradient.
    """
    rng = substream(seed, "problem")
    x_base = problem.x0
    scale = max(1.0, float(np.linalg.norm(x_base)))
    grad_err = jac_err = hess_err = 0.0
    for _ in range(n_points):
        x = x_base + 0.5 * scale * rng.standard_normal(problem.n)
        y = rng.standard_normal(problem.m)
        d = rng.standard_normal(problem.n)
        d /= np.linalg.norm(d)
        h = fd_step * scale

        fd = (problem.eval_f(x + h * d) - problem.eval_f(x - h * d)) / (2 * h)
        an = float(np.dot(problem.eval_grad_f(x), d))
        grad_err = max(grad_err, abs(fd - an) / max(1.0, abs(an)))

        cd = (problem.eval_c(x + h * d) - problem.eval_c(x - h * d)) / (2 * h)
        jd = problem.eval_jacobian(x).apply(d)
        jac_err = max(jac_err, float(np.max(np.abs(cd - jd)))
                      / max(1.0, float(np.max(np.abs(jd)))))

        def lagr_grad(z):
            return problem.eval_grad_f(z) + \
                problem.eval_jacobian(z).apply_transpose(y)

        hd_fd = (lagr_grad(x + h * d) - lagr_grad(x - h * d)) / (2 * h)
        hd = problem.eval_lagrangian_hessian(x, y).apply(d)
        hess_err = max(hess_err, float(np.max(np.abs(hd_fd - hd)))
                       / max(1.0, float(np.max(np.abs(hd)))))
    return {"gradient": grad_err, "jacobian": jac_err, "hessian": hess_err}
