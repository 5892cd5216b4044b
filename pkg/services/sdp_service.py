"""
Dense primal-dual interior-point solver for small block-diagonal SDPs.

    minimise   <C, X>   subject to  <A_i, X> = b_i,  X >= 0
    maximise   b . y    subject to  sum_i y_i A_i + Z = C,  Z >= 0

Every matrix argument is a list of symmetric blocks. Directions are the HKM
ones with a Mehrotra-style centring parameter; iterates may start infeasible.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from monitoring import run_logger
from services.errors import KinshipError

logger = logging.getLogger(__name__)

Blocks = List[np.ndarray]

MAX_ITERATIONS = 200
GAP_TOL = 1e-9
FEASIBILITY_TOL = 1e-9
STEP_FRACTION = 0.95


@dataclass
class SdpSolution:
    X: Blocks
    y: np.ndarray
    Z: Blocks
    primal_value: float
    dual_value: float
    gap: float
    iterations: int


def inner(first: Sequence[np.ndarray], second: Sequence[np.ndarray]) -> float:
    return float(sum(np.sum(a * b) for a, b in zip(first, second)))


def _apply(constraints, X) -> np.ndarray:
    return np.array([inner(A, X) for A in constraints])


def _adjoint(constraints, y) -> Blocks:
    return [sum(y_i * A[k] for y_i, A in zip(y, constraints)) for k in range(len(constraints[0]))]


def _sym(blocks):
    return [(B + B.T) / 2 for B in blocks]


def _max_step(X, dX):
    """Largest alpha <= 1 keeping X + alpha dX positive definite, shortened by the step fraction."""
    alpha = np.inf
    for block, step in zip(X, dX):
        factor = np.linalg.cholesky(block)
        inv = np.linalg.inv(factor)
        smallest = np.linalg.eigvalsh(inv @ step @ inv.T).min()
        if smallest < 0:
            alpha = min(alpha, -1.0 / smallest)
    return min(1.0, STEP_FRACTION * alpha)


def _norm(blocks) -> float:
    return float(np.sqrt(inner(blocks, blocks)))


def solve_sdp(C: Blocks, constraints: Sequence[Blocks], b, max_iterations: int = MAX_ITERATIONS,
              tolerance: float = GAP_TOL) -> SdpSolution:
    b = np.asarray(b, dtype=float)
    C = [np.asarray(block, dtype=float) for block in C]
    sizes = [len(block) for block in C]
    n = sum(sizes)

    a_norm = max(_norm(A) for A in constraints)
    x0 = max(10.0, np.sqrt(n), max((1 + abs(b_i)) / (1 + _norm(A)) for b_i, A in zip(b, constraints)))
    z0 = max(10.0, np.sqrt(n), _norm(C), a_norm)
    X = [x0 * np.eye(s) for s in sizes]
    Z = [z0 * np.eye(s) for s in sizes]
    y = np.zeros(len(b))

    for iteration in range(1, max_iterations + 1):
        primal, dual = inner(C, X), float(b @ y)
        mu = inner(X, Z) / n
        r_p = b - _apply(constraints, X)
        r_d = [c - z - a for c, z, a in zip(C, Z, _adjoint(constraints, y))]
        gap = abs(primal - dual) / (1 + abs(primal) + abs(dual))
        p_inf = np.linalg.norm(r_p) / (1 + np.linalg.norm(b))
        d_inf = _norm(r_d) / (1 + _norm(C))
        logger.debug("iter %d primal %.12g dual %.12g gap %.2e pinf %.2e dinf %.2e",
                     iteration, primal, dual, gap, p_inf, d_inf)
        if gap <= tolerance and p_inf <= FEASIBILITY_TOL and d_inf <= FEASIBILITY_TOL:
            run_logger.log_solver('sdp', {'iterations': iteration, 'gap': gap, 'primal': primal, 'dual': dual})
            return SdpSolution(X, y, Z, primal, dual, gap, iteration)

        Z_inv = [np.linalg.inv(block) for block in Z]
        schur = np.array([[inner(A_i, [x @ a @ zi for x, a, zi in zip(X, A_j, Z_inv)])
                           for A_j in constraints] for A_i in constraints])

        def direction(sigma):
            target = [sigma * mu * zi - x - x @ rd @ zi for x, rd, zi in zip(X, r_d, Z_inv)]
            dy = np.linalg.solve(schur, r_p - _apply(constraints, target))
            dZ = [rd - a for rd, a in zip(r_d, _adjoint(constraints, dy))]
            dX = _sym([sigma * mu * zi - x - x @ dz @ zi for x, dz, zi in zip(X, dZ, Z_inv)])
            return dX, dy, dZ

        dX, dy, dZ = direction(0.0)
        alpha_p, alpha_d = _max_step(X, dX), _max_step(Z, dZ)
        affine = inner([x + alpha_p * d for x, d in zip(X, dX)], [z + alpha_d * d for z, d in zip(Z, dZ)]) / n
        sigma = min(1.0, (affine / mu) ** 3)

        dX, dy, dZ = direction(sigma)
        alpha_p, alpha_d = _max_step(X, dX), _max_step(Z, dZ)
        X = [x + alpha_p * d for x, d in zip(X, dX)]
        y = y + alpha_d * dy
        Z = [z + alpha_d * d for z, d in zip(Z, dZ)]

    raise KinshipError("interior-point method did not converge",
                       {'iterations': max_iterations, 'gap': gap, 'primal_infeasibility': p_inf,
                        'dual_infeasibility': d_inf})
