"""Spatial covariance and MUSIC angle estimation over the RX array.

The covariance is accumulated from per-symbol space/fast-time snapshots, so its
signal component carries conjugated steering vectors; the spectrum below is
evaluated accordingly (a^T U U^H a^* rather than the usual a^H U U^H a).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scene import OfdmParams, Scenario
from .simulate import DataCube, rx_steering, tx_steering
from .scene import tx_beamformer


def build_scm(cube: DataCube) -> np.ndarray:
    """Spatial covariance R = sum_m Ybar_m^H Ybar_m, shape (n_rx, n_rx).

    Symmetrized numerically so downstream eigensolvers see an exactly
    Hermitian matrix.
    """
    scm = np.einsum("inm,jnm->ij", np.conj(cube.cube), cube.cube)
    return 0.5 * (scm + scm.conj().T)


def scm_from_snapshots(snapshots: np.ndarray) -> np.ndarray:
    """Covariance of (M, N, n_rx) snapshot stacks (residues included)."""
    scm = np.einsum("mni,mnj->ij", np.conj(snapshots), snapshots)
    return 0.5 * (scm + scm.conj().T)


def scm_model(scenario: Scenario, gains: np.ndarray,
              symbol_power: float = 1.0) -> np.ndarray:
    """Two-term covariance model: rank-K signal part plus scaled identity.

    Valid when targets are separated in delay or Doppler and N*M is large;
    used as the numerical oracle for `build_scm`.
    """
    params = scenario.params
    nm = params.n_subcarriers * params.n_symbols
    f_t = tx_beamformer(params, scenario.tx_steer_deg)
    model = nm * scenario.noise_power * np.eye(params.n_rx, dtype=complex)
    for gain, target in zip(gains, scenario.targets):
        a_r = rx_steering(params, target.angle_deg)
        a_t = tx_steering(params, target.angle_deg)
        beta = abs(gain) ** 2 * abs(a_t @ f_t) ** 2
        model += nm * symbol_power * beta * np.outer(np.conj(a_r), a_r)
    return model


def estimate_source_count(scm: np.ndarray, n_rx: int,
                          ratio: float = 10.0) -> int:
    """Eigenvalues exceeding `ratio` times the median count as sources.

    Clamped to [1, n_rx - 1]; callers with ground truth can bypass this.
    """
    eigvals = np.linalg.eigvalsh(scm)
    median = np.median(eigvals)
    k = int(np.sum(eigvals > ratio * max(median, 0.0)))
    return int(np.clip(k, 1, n_rx - 1))


def default_angle_grid(step_deg: float = 0.1) -> np.ndarray:
    return np.arange(-90.0, 90.0, step_deg)


@dataclass
class AngleEstimateSet:
    """MUSIC output: estimated angles plus the sampled spectrum."""

    angles_deg: list[float]
    grid_deg: np.ndarray
    spectrum: np.ndarray
    eigenvalues: np.ndarray          # sorted descending
    n_sources_used: int
    all_peaks_found: bool = True


def _steering_grid(params: OfdmParams, grid_deg: np.ndarray) -> np.ndarray:
    n = np.arange(params.n_rx)[:, None]
    phase = 2.0 * np.pi * params.d_over_lambda * n * np.sin(np.deg2rad(grid_deg))
    return np.exp(1j * phase)  # (n_rx, len(grid))


def music_spectrum(scm: np.ndarray, params: OfdmParams,
                   grid_deg: np.ndarray | None = None,
                   n_sources: int | None = None) -> AngleEstimateSet:
    """MUSIC pseudo-spectrum and its top-k interior peaks.

    `n_sources` fixes the signal subspace dimension; None estimates it from
    the eigenvalue spread. Peaks are strict interior local maxima of the
    sampled spectrum, returned sorted by angle; no interpolation is applied.
    """
    n_rx = params.n_rx
    if grid_deg is None:
        grid_deg = default_angle_grid()
    if n_sources is None:
        n_sources = estimate_source_count(scm, n_rx)
    if not 1 <= n_sources < n_rx:
        raise ValueError(f"source count must lie in [1, {n_rx - 1}]")

    scm = 0.5 * (scm + scm.conj().T)
    eigvals, eigvecs = np.linalg.eigh(scm)           # ascending
    noise_basis = eigvecs[:, : n_rx - n_sources]

    steer = _steering_grid(params, grid_deg)         # a(theta) per column
    proj = noise_basis.conj().T @ np.conj(steer)      # U_n^H a^*(theta)
    denom = np.sum(np.abs(proj) ** 2, axis=0)
    spectrum = 1.0 / np.maximum(denom, 1e-300)

    interior = np.flatnonzero(
        (spectrum[1:-1] > spectrum[:-2]) & (spectrum[1:-1] > spectrum[2:])
    ) + 1
    order = interior[np.argsort(spectrum[interior])[::-1]]
    picked = sorted(order[:n_sources])
    return AngleEstimateSet(
        angles_deg=[float(grid_deg[i]) for i in picked],
        grid_deg=grid_deg,
        spectrum=spectrum,
        eigenvalues=eigvals[::-1],
        n_sources_used=n_sources,
        all_peaks_found=len(picked) == n_sources,
    )


def bartlett_spectrum(scm: np.ndarray, params: OfdmParams,
                      grid_deg: np.ndarray | None = None) -> np.ndarray:
    """Ordinary (Fourier) beamforming spectrum of the same covariance."""
    if grid_deg is None:
        grid_deg = default_angle_grid()
    steer = _steering_grid(params, grid_deg)
    # signal part of R is conj(a) a^T, so the matched form is a^T R a^*
    return np.real(np.einsum("it,ij,jt->t", steer, scm, np.conj(steer)))
