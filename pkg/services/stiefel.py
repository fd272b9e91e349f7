"""
Minimize f(X) = ||A X B - C||_F^2 over matrices X with orthonormal columns.

Descent follows the Cayley curve
    X(t) = (I + t/2 W)^-1 (I - t/2 W) X,   W = G X^T - X G^T,
which stays on the Stiefel manifold for every t, with monotone Armijo
backtracking on t.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from models import SolverConfig
from utils.errors import DataError, NumericError
from utils.logger import logger

FEASIBILITY_TOL = 1e-8
SHORTCUT_TOL = 1e-10


@dataclass(frozen=True)
class StiefelProblem:
    a: np.ndarray  # p x m
    b: np.ndarray  # q x s
    c: np.ndarray  # p x s

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=np.float64))
        b = np.atleast_2d(np.asarray(self.b, dtype=np.float64))
        c = np.atleast_2d(np.asarray(self.c, dtype=np.float64))
        if a.shape[0] != c.shape[0] or b.shape[1] != c.shape[1]:
            raise DataError(f"Incompatible problem shapes A{a.shape} B{b.shape} C{c.shape}")
        if a.shape[1] < b.shape[0]:
            raise DataError(f"Variable would be {a.shape[1]}x{b.shape[0]}; need at least as many rows as columns")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def variable_shape(self) -> tuple:
        return self.a.shape[1], self.b.shape[0]

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.a @ x @ self.b - self.c

    def objective(self, x: np.ndarray) -> float:
        r = self.residual(x)
        return float(np.sum(r * r))


@dataclass(frozen=True)
class SolverResult:
    x: np.ndarray
    objective: float
    iterations: int
    stop_reason: str
    history: tuple = field(default=())


def _check_variable(prob: StiefelProblem, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != prob.variable_shape:
        raise DataError(f"Variable of shape {x.shape}, expected {prob.variable_shape}")
    return x


def gradient(prob: StiefelProblem, x: np.ndarray) -> np.ndarray:
    """Euclidean gradient 2 A^T (A X B - C) B^T."""
    x = _check_variable(prob, x)
    return 2.0 * prob.a.T @ prob.residual(x) @ prob.b.T


def feasibility_error(x: np.ndarray) -> float:
    """max |X^T X - I|."""
    return float(np.max(np.abs(x.T @ x - np.eye(x.shape[1]))))


def riemannian_gradient(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    return g - x @ g.T @ x


def polar_factor(m: np.ndarray) -> np.ndarray:
    """Closest matrix with orthonormal columns to m (U V^T of its thin SVD)."""
    u, _, vt = scipy.linalg.svd(m, full_matrices=False)
    return u @ vt


def _cayley(x: np.ndarray, w: np.ndarray, t: float) -> np.ndarray:
    identity = np.eye(x.shape[0])
    try:
        return scipy.linalg.solve(identity + 0.5 * t * w, (identity - 0.5 * t * w) @ x)
    except scipy.linalg.LinAlgError as e:
        # I + tW/2 is nonsingular for any real skew W
        raise NumericError(f"Cayley system singular at t={t:g}: {e}") from e


def _orthonormal_factors(prob: StiefelProblem) -> bool:
    m, q = prob.variable_shape
    left = np.max(np.abs(prob.a.T @ prob.a - np.eye(m)))
    right = np.max(np.abs(prob.b @ prob.b.T - np.eye(q)))
    return left <= SHORTCUT_TOL and right <= SHORTCUT_TOL


def _curvilinear_search(prob: StiefelProblem, x0: np.ndarray, cfg: SolverConfig) -> SolverResult:
    x = x0
    f = prob.objective(x)
    g = gradient(prob, x)
    rgrad = riemannian_gradient(x, g)
    history = [f]
    prev_x = prev_rgrad = None
    stop_reason = "max-iters"
    iteration = 0

    for iteration in range(1, cfg.max_iters + 1):
        if np.linalg.norm(rgrad) <= cfg.grad_tol:
            stop_reason = "gradient"
            iteration -= 1
            break

        w = g @ x.T - x @ g.T
        slope = -float(np.sum(g * rgrad))  # d/dt f(X(t)) at t = 0

        t = cfg.step
        if cfg.use_bb and prev_x is not None:
            s = x - prev_x
            y = rgrad - prev_rgrad
            sy = abs(float(np.sum(s * y)))
            if sy > 0:
                t = float(np.clip(np.sum(s * s) / sy, 1e-10, 1e10))

        accepted = False
        for _ in range(cfg.max_backtracks):
            x_new = _cayley(x, w, t)
            f_new = prob.objective(x_new)
            if f_new <= f + cfg.armijo * t * slope:
                accepted = True
                break
            t *= cfg.backtrack
        if not accepted:
            stop_reason = "line-search"
            iteration -= 1
            break

        prev_x, prev_rgrad = x, rgrad
        decrease = (f - f_new) / max(abs(f), np.finfo(float).tiny)
        x, f = x_new, f_new
        g = gradient(prob, x)
        rgrad = riemannian_gradient(x, g)
        history.append(f)
        logger.debug(f"stiefel it={iteration} f={f:.6e} t={t:.3e} |rgrad|={np.linalg.norm(rgrad):.3e}")

        if decrease < cfg.obj_tol:
            stop_reason = "objective"
            break

    if stop_reason == "max-iters":
        logger.debug(f"Stiefel solver hit max_iters={cfg.max_iters} at f={f:.6e}")
    return SolverResult(x, f, iteration, stop_reason, tuple(history))


def solve(prob: StiefelProblem, x0: np.ndarray, cfg: SolverConfig | None = None) -> SolverResult:
    """
    Cayley curvilinear search from a feasible X0; f(X*) <= f(X0).

    When A has orthonormal columns and B orthonormal rows, ||A X B|| is
    constant on the feasible set and the minimizer is the polar factor of
    A^T C B^T. For square X the feasible set has two components the Cayley
    curve cannot cross, so the search also starts from X0 with its last
    column negated.
    """
    cfg = cfg or SolverConfig()
    x0 = _check_variable(prob, x0)
    if feasibility_error(x0) > FEASIBILITY_TOL:
        raise NumericError(f"Starting point is not feasible: max |X^T X - I| = {feasibility_error(x0):.3e}")
    f0 = prob.objective(x0)

    if _orthonormal_factors(prob):
        x = polar_factor(prob.a.T @ prob.c @ prob.b.T)
        f = prob.objective(x)
        if f <= f0:
            return SolverResult(x, f, 0, "closed-form", (f0, f))
        return SolverResult(x0, f0, 0, "closed-form", (f0,))

    result = _curvilinear_search(prob, x0, cfg)
    m, q = prob.variable_shape
    if m == q:
        flipped = x0.copy()
        flipped[:, -1] *= -1.0
        other = _curvilinear_search(prob, flipped, cfg)
        if other.objective < result.objective:
            # the flipped run starts off the X0 path, keep only its endpoint
            result = SolverResult(other.x, other.objective, other.iterations, other.stop_reason,
                                  (f0, other.objective))
    return result
