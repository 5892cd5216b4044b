"""
Transfer-matrix models of the two photonic benchmark filters.

MZI lattice: coupler(tau1) . delay . coupler(tau2) . delay . coupler(tau3),
field through-coupling tau = exp(-g / 260), cross-coupling sqrt(1 - tau^2).

Triple-ring add-drop filter: power couplings K1..K4 between the input bus,
three identical lossless rings and the drop bus; the six half-ring fields are
solved per frequency.

Frequencies are in GHz relative to the band centre, over one free spectral range.
"""

import csv
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from services.errors import SpectrumError

FSR_GHZ = 2000.0
GRID_POINTS = 2001
GAP_DECAY_NM = 260.0
COUPLING_CLIP = (0.01, 0.99)
POWER_FLOOR = 1e-30

BAND_DB = 3.0
PASSBAND_DB = 1.0
OUT_OF_BAND_FACTOR = 1.5


@dataclass(frozen=True, eq=False)
class Spectrum:
    frequency_grid: np.ndarray
    drop: np.ndarray
    through: np.ndarray

    def __post_init__(self):
        if not len(self.frequency_grid) == len(self.drop) == len(self.through):
            raise SpectrumError("spectrum arrays must share one grid")


def frequency_grid(points: int = GRID_POINTS, fsr: float = FSR_GHZ) -> np.ndarray:
    return np.linspace(-fsr / 2, fsr / 2, points)


def to_db(power):
    return 10.0 * np.log10(np.maximum(power, POWER_FLOOR))


# MZI lattice

def mzi_powers(gaps, grid: Optional[np.ndarray] = None, fsr: float = FSR_GHZ):
    """Linear (drop, through) power transmissions for physical gaps in nm."""
    grid = frequency_grid() if grid is None else grid
    tau = np.exp(-np.asarray(gaps, dtype=float) / GAP_DECAY_NM)
    kappa = np.sqrt(1.0 - tau ** 2)
    phase = np.pi + 2 * np.pi * grid / fsr
    delay = np.zeros((len(grid), 2, 2), dtype=complex)
    delay[:, 0, 0] = np.exp(-0.5j * phase)
    delay[:, 1, 1] = np.exp(0.5j * phase)

    def coupler(t, k):
        return np.array([[t, -1j * k], [-1j * k, t]])

    transfer = np.broadcast_to(coupler(tau[0], kappa[0]), (len(grid), 2, 2))
    for t, k in zip(tau[1:], kappa[1:]):
        transfer = coupler(t, k) @ (delay @ transfer)
    return np.abs(transfer[:, 1, 0]) ** 2, np.abs(transfer[:, 0, 0]) ** 2


def mzi_spectrum(design, xi, grid: Optional[np.ndarray] = None) -> Spectrum:
    """Spectrum of the gap design [g1, g2, g3] (nm) under gap perturbations xi (nm)."""
    grid = frequency_grid() if grid is None else grid
    drop, through = mzi_powers(np.asarray(design, dtype=float) + np.asarray(xi, dtype=float), grid)
    return Spectrum(grid, to_db(drop), to_db(through))


# Triple-ring add-drop filter

def ring_powers(couplings, grid: Optional[np.ndarray] = None, fsr: float = FSR_GHZ):
    grid = frequency_grid() if grid is None else grid
    K = np.clip(np.asarray(couplings, dtype=float), *COUPLING_CLIP)
    t, k = np.sqrt(1.0 - K), np.sqrt(K)
    p = np.exp(-0.5j * 2 * np.pi * grid / fsr)

    # unknowns ordered (c1, c2, c3, d1, d2, d3); c_j leaves coupler j, d_j leaves coupler j+1
    system = np.zeros((len(grid), 6, 6), dtype=complex)
    rhs = np.zeros((len(grid), 6), dtype=complex)
    system[:, 0, 0] = 1.0
    system[:, 0, 3] = -t[0] * p
    rhs[:, 0] = -1j * k[0]
    for j in (1, 2):
        # coupler j+1 between ring j and ring j+1 (zero-based rings j-1 and j)
        c_prev, c_next, d_prev, d_next = j - 1, j, 3 + j - 1, 3 + j
        system[:, 2 * j - 1, d_prev] = 1.0
        system[:, 2 * j - 1, c_prev] = -t[j] * p
        system[:, 2 * j - 1, d_next] = 1j * k[j] * p
        system[:, 2 * j, c_next] = 1.0
        system[:, 2 * j, c_prev] = 1j * k[j] * p
        system[:, 2 * j, d_next] = -t[j] * p
    system[:, 5, 5] = 1.0
    system[:, 5, 2] = -t[3] * p

    fields = np.linalg.solve(system, rhs[..., None])[..., 0]
    through = t[0] - 1j * k[0] * p * fields[:, 3]
    drop = -1j * k[3] * p * fields[:, 2]
    return np.abs(drop) ** 2, np.abs(through) ** 2


def ring_spectrum(design, xi, grid: Optional[np.ndarray] = None) -> Spectrum:
    """Spectrum of the coupling design [K1..K4] under coupling perturbations xi."""
    grid = frequency_grid() if grid is None else grid
    drop, through = ring_powers(np.asarray(design, dtype=float) + np.asarray(xi, dtype=float), grid)
    return Spectrum(grid, to_db(drop), to_db(through))


# Spectral metrics

def _band(s: Spectrum, depth_db: float, outermost: bool = False):
    """Band within depth_db of the drop peak, with interpolated edges.

    By default the band is the lobe holding the peak. With outermost=True it
    runs between the outermost crossings, so passband ripple deeper than
    depth_db does not split it.
    """
    drop = s.drop
    peak = int(np.argmax(drop))
    level = drop[peak] - depth_db
    if outermost:
        above = np.flatnonzero(drop >= level)
        left, right = int(above[0]), int(above[-1])
    else:
        left = peak
        while left > 0 and drop[left - 1] >= level:
            left -= 1
        right = peak
        while right < len(drop) - 1 and drop[right + 1] >= level:
            right += 1
    if left == 0 or right == len(drop) - 1:
        raise SpectrumError(f"no {depth_db:g}-dB crossing inside the frequency grid",
                            {'peak_db': float(drop[peak]), 'depth_db': depth_db})
    f = s.frequency_grid
    lower = _crossing(f[left - 1], f[left], drop[left - 1], drop[left], level)
    upper = _crossing(f[right], f[right + 1], drop[right], drop[right + 1], level)
    return peak, left, right, lower, upper


def _crossing(f0, f1, d0, d1, level):
    if d1 == d0:
        return f0
    return f0 + (level - d0) * (f1 - f0) / (d1 - d0)


def mzi_metrics(s: Spectrum) -> Dict[str, float]:
    """BW (GHz) of the 3-dB drop band, XT (dB) as the worst through level in
    the 1-dB passband, alpha (dB) as the peak drop attenuation."""
    peak, _, _, lower, upper = _band(s, BAND_DB)
    _, left, right, _, _ = _band(s, PASSBAND_DB)
    return {
        'BW': float(upper - lower),
        'XT': float(s.through[left:right + 1].max()),
        'alpha': float(-s.drop[peak]),
    }


def ring_metrics(s: Spectrum) -> Dict[str, float]:
    """BW (GHz), RE (dB) and sigma_pass (dB) of a triple-ring drop response.

    Bands run between outermost crossings. RE is taken against the strongest
    drop level at least 1.5 BW from the band centre; the offset is capped at the
    farthest grid point, so the anti-resonance always counts as out of band.
    """
    peak, _, _, lower, upper = _band(s, BAND_DB, outermost=True)
    _, left, right, _, _ = _band(s, PASSBAND_DB, outermost=True)
    width = upper - lower
    offset = np.abs(s.frequency_grid - (upper + lower) / 2)
    outside = offset >= min(OUT_OF_BAND_FACTOR * width, offset.max())
    return {
        'BW': float(width),
        'RE': float(s.drop[peak] - s.drop[outside].max()),
        'sigma_pass': float(np.std(s.drop[left:right + 1])),
    }


def write_spectrum_csv(path, spectrum: Spectrum, ensemble_mean: Optional[Spectrum] = None):
    """CSV of frequency, drop and through levels, plus ensemble means when given."""
    header = ['frequency_ghz', 'drop_db', 'through_db']
    columns = [spectrum.frequency_grid, spectrum.drop, spectrum.through]
    if ensemble_mean is not None:
        header += ['drop_db_mean', 'through_db_mean']
        columns += [ensemble_mean.drop, ensemble_mean.through]
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([format(float(v), '.17g') for v in row])
