"""Radar data-cube synthesis for a MIMO-OFDM frame, with and without ICI.

Model conventions (fixed across the package):

* delay steering      b(tau)[n]   = exp(-j 2 pi n spacing tau)
* Doppler steering    c(nu)[m]    = exp(-j 2 pi fc m Tsym nu)
* fast-time ICI ramp  d(nu)[l]    = exp(+j 2 pi fc (T/N) l nu)   (opposite sign)
* unitary DFT         F[l, n]     = exp(-j 2 pi n l / N) / sqrt(N)
* array steering      a(theta)[n] = exp(+j 2 pi (d/lambda) n sin(theta))

A closing target (positive velocity) therefore advances phase over both slow
time (via conj(c)) and fast time (via d). The received cube per RX antenna i is

    Y_i = sum_k alpha_k [a_R]_i (a_T^T f_T) * d(nu_k) ⊙ IDFT{X ⊙ b(tau_k) c^H(nu_k)} + Z_i

with Z_i circular complex Gaussian, i.i.d. per sample.
"""

from __future__ import annotations

from dataclasses import dataclass
import struct

import numpy as np

from .errors import ConfigError, ScenarioError
from .scene import (
    OfdmParams,
    Scenario,
    SymbolGrid,
    SPEED_OF_LIGHT,
    generate_symbols,
    target_gains,
    tx_beamformer,
)


def velocity_to_doppler(velocity_mps: float) -> float:
    return 2.0 * velocity_mps / SPEED_OF_LIGHT


def doppler_to_velocity(nu: float) -> float:
    return nu * SPEED_OF_LIGHT / 2.0


# ---------------------------------------------------------------------------
# Steering vector constructors
# ---------------------------------------------------------------------------

def steer_delay(params: OfdmParams, tau_s: float) -> np.ndarray:
    """Frequency-domain delay steering vector, length N."""
    n = np.arange(params.n_subcarriers)
    return np.exp(-2j * np.pi * n * params.subcarrier_spacing_hz * tau_s)


def steer_doppler(params: OfdmParams, nu: float) -> np.ndarray:
    """Slow-time Doppler steering vector, length M."""
    m = np.arange(params.n_symbols)
    return np.exp(-2j * np.pi * params.fc_hz * m * params.total_symbol_duration_s * nu)


def ici_ramp(params: OfdmParams, nu: float) -> np.ndarray:
    """Diagonal of the fast-time ICI phase rotation, length N. Note +j sign."""
    ell = np.arange(params.n_subcarriers)
    step = params.fc_hz * params.symbol_duration_s / params.n_subcarriers
    return np.exp(2j * np.pi * step * ell * nu)


def rx_steering(params: OfdmParams, angle_deg: float) -> np.ndarray:
    n = np.arange(params.n_rx)
    phase = 2.0 * np.pi * params.d_over_lambda * n * np.sin(np.deg2rad(angle_deg))
    return np.exp(1j * phase)


def tx_steering(params: OfdmParams, angle_deg: float) -> np.ndarray:
    n = np.arange(params.n_tx)
    phase = 2.0 * np.pi * params.d_over_lambda * n * np.sin(np.deg2rad(angle_deg))
    return np.exp(1j * phase)


@dataclass(frozen=True)
class SteeringSet:
    """All steering vectors of one target, bundled for convenience."""

    delay: np.ndarray      # b(tau), length N
    doppler: np.ndarray    # c(nu), length M
    ici: np.ndarray        # diag of D(nu), length N
    tx: np.ndarray         # a_T(theta), length n_tx
    rx: np.ndarray         # a_R(theta), length n_rx


def build_steering(params: OfdmParams, tau_s: float, nu: float,
                   angle_deg: float) -> SteeringSet:
    return SteeringSet(
        delay=steer_delay(params, tau_s),
        doppler=steer_doppler(params, nu),
        ici=ici_ramp(params, nu),
        tx=tx_steering(params, angle_deg),
        rx=rx_steering(params, angle_deg),
    )


# ---------------------------------------------------------------------------
# Data cube
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DataCube:
    """Space/fast-time/slow-time observations, shape (n_rx, N, M)."""

    cube: np.ndarray
    params: OfdmParams
    symbols: SymbolGrid

    def snapshots(self) -> np.ndarray:
        """Per-symbol space/fast-time snapshots, shape (M, N, n_rx)."""
        return np.ascontiguousarray(np.transpose(self.cube, (2, 1, 0)))


def _signal_cube(scenario: Scenario, symbols: SymbolGrid, gains: np.ndarray,
                 with_ici: bool) -> np.ndarray:
    params = scenario.params
    n_rx, n, m = params.n_rx, params.n_subcarriers, params.n_symbols
    if symbols.symbols.shape != (n, m):
        raise ConfigError("symbol grid shape does not match the numerology")
    f_t = tx_beamformer(params, scenario.tx_steer_deg)
    cube = np.zeros((n_rx, n, m), dtype=complex)
    for gain, target in zip(gains, scenario.targets):
        sv = build_steering(params, target.delay_s(), target.doppler(),
                            target.angle_deg)
        grid = symbols.symbols * np.outer(sv.delay, np.conj(sv.doppler))
        # per-symbol unitary IDFT over fast time; O(M N log N) per target
        fast = np.fft.ifft(grid, axis=0) * np.sqrt(n)
        if with_ici:
            fast = sv.ici[:, None] * fast
        amp = gain * (sv.tx @ f_t)
        cube += (amp * sv.rx)[:, None, None] * fast[None, :, :]
    return cube


def synthesize(scenario: Scenario, symbols: SymbolGrid | None = None, *,
               rng: np.random.Generator | None = None,
               with_ici: bool = True,
               noise: np.ndarray | None = None,
               gains: np.ndarray | None = None) -> DataCube:
    """Synthesize the radar data cube for `scenario`.

    Parameters
    ----------
    symbols : transmit grid; generated from the scenario seed when omitted.
    rng : source for gain phases and noise; defaults to the scenario seed.
    with_ici : apply the fast-time ICI ramp (set False for the ICI-free cube).
    noise : pre-drawn noise cube to reuse (pairs ICI / ICI-free runs); drawn
        internally when omitted and the scenario noise power is positive.
    gains : pre-drawn complex target gains; overrides the rng draw.
    """
    params = scenario.params
    if rng is None:
        rng = np.random.default_rng(scenario.seed)
    if symbols is None:
        symbols = generate_symbols(params, scenario.seed)
    if gains is None:
        gains = target_gains(scenario, rng)
    cube = _signal_cube(scenario, symbols, gains, with_ici)
    if noise is None and scenario.noise_power > 0:
        noise = draw_noise(params, scenario.noise_power, rng)
    if noise is not None:
        if noise.shape != cube.shape:
            raise ConfigError("noise cube shape does not match the numerology")
        cube = cube + noise
    return DataCube(cube=cube, params=params, symbols=symbols)


def synthesize_ici_free(scenario: Scenario, symbols: SymbolGrid | None = None,
                        **kwargs) -> DataCube:
    """ICI-free counterpart of `synthesize` (identity fast-time ramp)."""
    return synthesize(scenario, symbols, with_ici=False, **kwargs)


def draw_noise(params: OfdmParams, noise_power: float,
               rng: np.random.Generator) -> np.ndarray:
    """Circular complex Gaussian cube, variance `noise_power` per sample."""
    shape = (params.n_rx, params.n_subcarriers, params.n_symbols)
    scale = np.sqrt(noise_power / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def synthesize_pair(scenario: Scenario, symbols: SymbolGrid | None = None, *,
                    rng: np.random.Generator | None = None
                    ) -> tuple[DataCube, DataCube]:
    """ICI and ICI-free cubes sharing gains, symbols and the noise realization.

    Pairing the noise keeps Monte Carlo comparisons between the pipelines low
    variance.
    """
    params = scenario.params
    if rng is None:
        rng = np.random.default_rng(scenario.seed)
    if symbols is None:
        symbols = generate_symbols(params, scenario.seed)
    gains = target_gains(scenario, rng)
    noise = (draw_noise(params, scenario.noise_power, rng)
             if scenario.noise_power > 0 else None)
    ici = synthesize(scenario, symbols, gains=gains, noise=noise, rng=rng)
    free = synthesize(scenario, symbols, with_ici=False, gains=gains,
                      noise=noise, rng=rng)
    return ici, free


# ---------------------------------------------------------------------------
# Brute-force reference (tests and debugging only)
# ---------------------------------------------------------------------------

def synthesize_reference(scenario: Scenario, symbols: SymbolGrid,
                         gains: np.ndarray) -> np.ndarray:
    """Noiseless cube evaluated sample-by-sample from the scalar model.

    Direct double loop over fast-time sample and subcarrier; quadratic in N,
    intended only as an independent oracle at small sizes.
    """
    params = scenario.params
    n_rx, n, m_sym = params.n_rx, params.n_subcarriers, params.n_symbols
    spacing = params.subcarrier_spacing_hz
    t_sym = params.total_symbol_duration_s
    t = params.symbol_duration_s
    f_t = tx_beamformer(params, scenario.tx_steer_deg)
    cube = np.zeros((n_rx, n, m_sym), dtype=complex)
    for gain, target in zip(gains, scenario.targets):
        tau, nu = target.delay_s(), target.doppler()
        a_r = rx_steering(params, target.angle_deg)
        a_t = tx_steering(params, target.angle_deg)
        amp = gain * (a_t @ f_t)
        for i in range(n_rx):
            for m in range(m_sym):
                slow = np.exp(2j * np.pi * params.fc_hz * m * t_sym * nu)
                for ell in range(n):
                    fast = np.exp(2j * np.pi * params.fc_hz * t * ell / n * nu)
                    acc = 0.0 + 0.0j
                    for sub in range(n):
                        acc += symbols.symbols[sub, m] * np.exp(
                            2j * np.pi * sub * ell / n
                        ) * np.exp(-2j * np.pi * sub * spacing * tau)
                    cube[i, ell, m] += (
                        amp * a_r[i] * slow * fast * acc / np.sqrt(n)
                    )
    return cube


# ---------------------------------------------------------------------------
# Binary cube dump (debugging / golden tests)
# ---------------------------------------------------------------------------

_CUBE_MAGIC = b"ICICUBE1"


def save_cube(cube: DataCube, path) -> None:
    """Write little-endian complex64 samples ordered (antenna, symbol, fast-time).

    32-byte header: 8-byte magic, uint32 n_rx/N/M, 12 zero pad bytes.
    """
    n_rx, n, m = cube.cube.shape
    header = _CUBE_MAGIC + struct.pack("<III", n_rx, n, m)
    header = header.ljust(32, b"\0")
    data = np.transpose(cube.cube, (0, 2, 1)).astype("<c8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def load_cube_array(path) -> np.ndarray:
    """Read a cube dump back as an (n_rx, N, M) complex64 array."""
    with open(path, "rb") as fh:
        header = fh.read(32)
        if header[:8] != _CUBE_MAGIC:
            raise ConfigError(f"{path}: not a cube dump (bad magic)")
        n_rx, n, m = struct.unpack("<III", header[8:20])
        data = np.frombuffer(fh.read(), dtype="<c8")
    if data.size != n_rx * n * m:
        raise ConfigError(f"{path}: truncated cube dump")
    return np.transpose(data.reshape(n_rx, m, n), (0, 2, 1))
