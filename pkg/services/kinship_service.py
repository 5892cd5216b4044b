"""
Optimal polynomial kinship functions.

kappa(z) is written through t = z + 1 as K(t) = integral_0^t q(s) ds with
q = s1 + t s2, s1 and s2 sums of squares given by PSD Gram blocks Y1, Y2.
K(0) = 0 holds by construction, so the SDP only carries the normalisation
K(1) = 1 and minimises integral_0^1 K(t) dt.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence

import numpy as np
from scipy.special import comb

from monitoring import monitor_performance, run_logger
from services import history_service
from services.errors import KinshipError
from services.sdp_service import solve_sdp

logger = logging.getLogger(__name__)

MAX_ORDER = 16
GRID_POINTS = 10_000
GRID_UPPER = 50.0
VALUE_TOL = 1e-8
LEADING_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class KinshipPoly:
    order: int
    zeta: np.ndarray
    integral_value: float
    gram_blocks: tuple
    duality_gap: float = 0.0

    def __call__(self, z):
        return eval_kinship(self, z)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'order': self.order,
            'zeta': self.zeta.tolist(),
            'integral_value': self.integral_value,
            'gram_blocks': [block.tolist() for block in self.gram_blocks],
            'duality_gap': self.duality_gap,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "KinshipPoly":
        return cls(
            order=int(data['order']),
            zeta=np.asarray(data['zeta'], dtype=float),
            integral_value=float(data['integral_value']),
            gram_blocks=tuple(np.asarray(b, dtype=float) for b in data['gram_blocks']),
            duality_gap=float(data.get('duality_gap', 0.0)),
        )


def block_orders(rho: int):
    return (rho - 1) // 2, (rho - 2) // 2


def _selector(size: int, offset: int, m: int) -> np.ndarray:
    """Indicator of the antidiagonal i + j = m - offset."""
    i, j = np.indices((size, size))
    return (i + j == m - offset).astype(float)


def _coefficient_blocks(rho: int) -> List[List[np.ndarray]]:
    """E[m] maps the Gram blocks to the coefficient of t^m in q."""
    n1, n2 = block_orders(rho)
    sizes_offsets = [(n1 + 1, 0)] + ([(n2 + 1, 1)] if n2 >= 0 else [])
    return [[_selector(size, offset, m) for size, offset in sizes_offsets] for m in range(rho)]


def q_coefficients(blocks: Sequence[np.ndarray], rho: int) -> np.ndarray:
    return np.array([sum(np.sum(E * Y) for E, Y in zip(E_m, blocks)) for E_m in _coefficient_blocks(rho)])


def zeta_from_q(q: np.ndarray) -> np.ndarray:
    """Coefficients of kappa(z) = sum_m q_m (z + 1)^(m+1) / (m + 1)."""
    rho = len(q)
    zeta = np.zeros(rho + 1)
    for m, q_m in enumerate(q):
        for i in range(m + 2):
            zeta[i] += q_m / (m + 1) * comb(m + 1, i, exact=True)
    return zeta


def integral_from_zeta(zeta: np.ndarray) -> float:
    return float(sum((-1) ** i * z / (i + 1) for i, z in enumerate(zeta)))


@monitor_performance("kinship.solve")
def solve_optimal_kinship(rho: int) -> KinshipPoly:
    if not 1 <= rho <= MAX_ORDER:
        raise KinshipError("kinship order must lie in [1, 16]", {'rho': rho})

    E = _coefficient_blocks(rho)
    n_blocks = len(E[0])
    A = [sum(E[m][k] / (m + 1) for m in range(rho)) for k in range(n_blocks)]
    C = [sum(E[m][k] / ((m + 1) * (m + 2)) for m in range(rho)) for k in range(n_blocks)]
    solution = solve_sdp(C, [A], [1.0])

    blocks = tuple(solution.X)
    zeta = zeta_from_q(q_coefficients(blocks, rho))
    kinship = KinshipPoly(order=rho, zeta=zeta, integral_value=integral_from_zeta(zeta),
                          gram_blocks=blocks, duality_gap=solution.gap)
    run_logger.log_event('kinship_solved', {
        'rho': rho, 'integral': kinship.integral_value, 'gap': solution.gap,
        'iterations': solution.iterations,
    })
    return kinship


def eval_kinship(k: KinshipPoly, z):
    """Horner evaluation of sum zeta_i z^i on z >= -1."""
    z_arr = np.asarray(z, dtype=float)
    if np.any(z_arr < -1.0):
        raise KinshipError("kinship evaluated below -1", {'min_z': float(z_arr.min())})
    value = np.zeros_like(z_arr)
    for coefficient in k.zeta[::-1]:
        value = value * z_arr + coefficient
    return float(value) if np.ndim(z) == 0 else value


def eval_kinship_derivative(k: KinshipPoly, z):
    z_arr = np.asarray(z, dtype=float)
    value = np.zeros_like(z_arr)
    for i in range(len(k.zeta) - 1, 0, -1):
        value = value * z_arr + i * k.zeta[i]
    return float(value) if np.ndim(z) == 0 else value


def verify_kinship(k: KinshipPoly) -> Dict[str, Any]:
    """Independent check of the defining constraints of a kinship polynomial."""
    grid = np.linspace(-1.0, GRID_UPPER, GRID_POINTS)
    values = eval_kinship(k, grid)
    slopes = eval_kinship_derivative(k, grid)
    leading = len(k.zeta) - 1

    violations = {
        'at_zero': abs(eval_kinship(k, 0.0) - 1.0),
        'at_minus_one': abs(eval_kinship(k, -1.0)),
        'negativity': max(0.0, -float(values.min())),
        'decrease': max(0.0, -float(slopes.min())),
        'integral': abs(k.integral_value - integral_from_zeta(k.zeta)),
    }
    leading_slope = leading * k.zeta[leading] if leading > 0 else 0.0
    violations['leading'] = max(0.0, -float(leading_slope))

    if k.gram_blocks:
        # s1 + t s2 rebuilt from the Gram blocks against kappa'(t - 1)
        q = q_coefficients(k.gram_blocks, k.order)
        shifted = np.array([sum(k.zeta[i] * i * comb(i - 1, m, exact=True) * (-1) ** (i - 1 - m)
                                for i in range(m + 1, len(k.zeta))) for m in range(k.order)])
        violations['certificate'] = float(np.abs(q - shifted).max())
        violations['gram_psd'] = max(0.0, -min(float(np.linalg.eigvalsh(b).min()) for b in k.gram_blocks))

    passed = (max(v for name, v in violations.items() if name != 'leading') <= VALUE_TOL
              and violations['leading'] <= LEADING_TOL)
    report = {
        'rho': k.order,
        'max_violation': float(max(violations.values())),
        'violations': violations,
        'duality_gap': k.duality_gap,
        'passed': bool(passed),
    }
    if not passed:
        run_logger.log_event('kinship_verification_failed', report)
    return report


def load_or_solve(rho: int, use_cache: bool = True) -> KinshipPoly:
    """Kinship of order rho from the cache, solving and storing it when missing."""
    if use_cache:
        cached = history_service.get_entry('kinship', rho)
        if cached is not None:
            return KinshipPoly.from_dict(cached)
    kinship = solve_optimal_kinship(rho)
    if use_cache:
        history_service.save_entry('kinship', rho, kinship.to_dict())
    return kinship


def kinship_table(orders: Sequence[int], use_cache: bool = True) -> List[Dict[str, Any]]:
    rows = []
    for rho in orders:
        k = load_or_solve(rho, use_cache)
        rows.append({
            'rho': rho,
            'integral_value': k.integral_value,
            'trivial_bound': 1.0 / (rho + 1),
            'max_violation': verify_kinship(k)['max_violation'],
        })
    return rows
