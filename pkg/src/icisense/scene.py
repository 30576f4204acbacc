"""Static scene description: OFDM numerology, arrays, targets, transmit symbols.

Everything here is plain configuration plus derived quantities; no received data
is touched. All types are immutable after construction and safe to share across
worker processes.

Unit conventions used throughout the package:

* physical units at the API surface (Hz, s, m, m/s, degrees, dB),
* normalized Doppler nu = 2 v / c internally where noted,
* azimuth measured from array broadside, positive towards increasing element phase.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ScenarioError

# Rounded propagation speed; the numerology tables this package reproduces assume
# exactly 3e8 (e.g. range resolution c/(2B) = 3 m at B = 50 MHz).
SPEED_OF_LIGHT = 3.0e8

QPSK_ALPHABET = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)


# ---------------------------------------------------------------------------
# OFDM numerology
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OfdmParams:
    """OFDM frame and array geometry.

    Attributes
    ----------
    fc_hz : carrier frequency
    bandwidth_hz : total bandwidth B = N * subcarrier spacing
    n_subcarriers : N (fast-time dimension)
    n_symbols : M (slow-time dimension)
    cp_duration_s : cyclic prefix duration
    n_tx, n_rx : TX / RX uniform linear array sizes
    d_over_lambda : element spacing in wavelengths (half-wavelength default)
    """

    fc_hz: float
    bandwidth_hz: float
    n_subcarriers: int
    n_symbols: int
    cp_duration_s: float
    n_tx: int
    n_rx: int
    d_over_lambda: float = 0.5

    def __post_init__(self):
        if self.bandwidth_hz <= 0 or self.fc_hz <= 0:
            raise ConfigError("carrier frequency and bandwidth must be positive")
        if self.n_subcarriers <= 0 or self.n_symbols <= 0:
            raise ConfigError("subcarrier and symbol counts must be positive")
        if self.n_tx <= 0 or self.n_rx <= 0:
            raise ConfigError("array sizes must be positive")
        if self.cp_duration_s < 0:
            raise ConfigError("cyclic prefix duration cannot be negative")
        if self.n_taps < 1:
            raise ConfigError(
                "cyclic prefix too short: no channel tap representable (L < 1)"
            )

    # -- primary derived quantities -------------------------------------
    @property
    def subcarrier_spacing_hz(self) -> float:
        return self.bandwidth_hz / self.n_subcarriers

    @property
    def symbol_duration_s(self) -> float:
        """Elementary symbol duration T = 1/spacing (without CP)."""
        return 1.0 / self.subcarrier_spacing_hz

    @property
    def total_symbol_duration_s(self) -> float:
        """Tsym = Tcp + T."""
        return self.cp_duration_s + self.symbol_duration_s

    @property
    def n_taps(self) -> int:
        """Channel tap count L = floor(N * Tcp / T) supported by the CP."""
        ratio = self.n_subcarriers * self.cp_duration_s / self.symbol_duration_s
        return int(np.floor(ratio + 1e-9))

    # -- resolutions and ambiguity limits --------------------------------
    @property
    def range_resolution_m(self) -> float:
        return SPEED_OF_LIGHT / (2.0 * self.bandwidth_hz)

    @property
    def velocity_resolution_mps(self) -> float:
        return SPEED_OF_LIGHT / (
            2.0 * self.fc_hz * self.n_symbols * self.total_symbol_duration_s
        )

    @property
    def v_max_mps(self) -> float:
        """Slow-time unambiguous velocity (one-sided)."""
        return SPEED_OF_LIGHT / (4.0 * self.fc_hz * self.total_symbol_duration_s)

    @property
    def v_cfo_max_mps(self) -> float:
        """Fast-time (CFO) unambiguous velocity, N*Tsym/T times v_max."""
        return (
            SPEED_OF_LIGHT
            * self.n_subcarriers
            / (4.0 * self.fc_hz * self.symbol_duration_s)
        )

    @property
    def cfo_cell_mps(self) -> float:
        """Velocity extent of one fast-time CFO resolution cell, c/(2 fc T)."""
        return SPEED_OF_LIGHT / (2.0 * self.fc_hz * self.symbol_duration_s)

    @property
    def max_range_m(self) -> float:
        """Largest round-trip range supported by the cyclic prefix."""
        return SPEED_OF_LIGHT * self.cp_duration_s / 2.0

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.fc_hz


@dataclass(frozen=True)
class DerivedQuantities:
    """Bundle of the derived numerology values (all fields in SI units)."""

    subcarrier_spacing_hz: float
    symbol_duration_s: float
    total_symbol_duration_s: float
    n_taps: int
    range_resolution_m: float
    velocity_resolution_mps: float
    v_max_mps: float
    v_cfo_max_mps: float


def derive_quantities(params: OfdmParams) -> DerivedQuantities:
    """Return the eight derived numerology quantities for `params`.

    Pure function of the input; raises ConfigError for degenerate numerology
    (already enforced by OfdmParams construction).
    """
    return DerivedQuantities(
        subcarrier_spacing_hz=params.subcarrier_spacing_hz,
        symbol_duration_s=params.symbol_duration_s,
        total_symbol_duration_s=params.total_symbol_duration_s,
        n_taps=params.n_taps,
        range_resolution_m=params.range_resolution_m,
        velocity_resolution_mps=params.velocity_resolution_mps,
        v_max_mps=params.v_max_mps,
        v_cfo_max_mps=params.v_cfo_max_mps,
    )


# ---------------------------------------------------------------------------
# Targets and scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Target:
    """One point scatterer, specified in physical units.

    `snr_db` is the per-target ratio |gain|^2 / noise power. Positive velocity
    means a closing target. `phase_rad` is the gain phase; None means a fresh
    uniform draw per trial.
    """

    range_m: float
    velocity_mps: float
    angle_deg: float
    snr_db: float
    phase_rad: float | None = None

    def delay_s(self) -> float:
        return 2.0 * self.range_m / SPEED_OF_LIGHT

    def doppler(self) -> float:
        """Normalized Doppler shift nu = 2 v / c."""
        return 2.0 * self.velocity_mps / SPEED_OF_LIGHT

    def validate(self, params: OfdmParams) -> None:
        if not -90.0 < self.angle_deg < 90.0:
            raise ScenarioError(f"target angle {self.angle_deg} deg outside (-90, 90)")
        if self.range_m < 0:
            raise ScenarioError("target range cannot be negative")
        if self.delay_s() > params.cp_duration_s:
            raise ScenarioError(
                f"round-trip delay of target at {self.range_m} m exceeds the CP "
                f"(max supported range {params.max_range_m:.1f} m)"
            )
        if abs(self.doppler()) * params.n_subcarriers >= 1.0:
            raise ScenarioError(
                "normalized Doppler violates the narrow-Doppler model assumption "
                "(|nu| must stay well below 1/N)"
            )


@dataclass(frozen=True)
class Scenario:
    """Scene: numerology, target truth, noise level, TX pointing, RNG seed."""

    params: OfdmParams
    targets: tuple[Target, ...]
    noise_power: float = 1.0
    tx_steer_deg: float = -30.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        if self.noise_power < 0:
            raise ConfigError("noise power cannot be negative")
        for t in self.targets:
            t.validate(self.params)
        if len(self.targets) >= self.params.n_rx:
            raise ScenarioError(
                "target count must stay below the RX array size for subspace "
                "angle estimation"
            )

    def with_targets(self, targets) -> "Scenario":
        return replace(self, targets=tuple(targets))


# ---------------------------------------------------------------------------
# Transmit symbols
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SymbolGrid:
    """N x M grid of transmit data symbols.

    `unit_modulus` certifies |x| = 1 for every entry, which downstream code
    uses to replace pilot Gram matrices with the identity.
    """

    symbols: np.ndarray
    unit_modulus: bool = True

    @property
    def n_subcarriers(self) -> int:
        return self.symbols.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.symbols.shape[1]


def generate_symbols(params: OfdmParams, seed) -> SymbolGrid:
    """Draw an N x M QPSK grid, deterministic for a fixed seed.

    `seed` may be an int, a numpy SeedSequence, or a Generator.
    """
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, 4, size=(params.n_subcarriers, params.n_symbols))
    return SymbolGrid(symbols=QPSK_ALPHABET[idx], unit_modulus=True)


def tx_beamformer(params: OfdmParams, angle_deg: float) -> np.ndarray:
    """Conjugate-steering transmit beamformer pointed at `angle_deg`.

    Gives coherent array gain a_T^T(angle) f_T = n_tx at the pointed angle.
    """
    if not -90.0 < angle_deg < 90.0:
        raise ConfigError("beamformer angle must lie in (-90, 90) degrees")
    n = np.arange(params.n_tx)
    phase = 2.0 * np.pi * params.d_over_lambda * n * np.sin(np.deg2rad(angle_deg))
    return np.exp(-1j * phase)  # conjugate of the TX steering vector


def target_gains(scenario: Scenario, rng: np.random.Generator | None) -> np.ndarray:
    """Complex gains alpha_k with |alpha|^2 = SNR * noise power.

    Phases come from `Target.phase_rad` when set, otherwise from `rng`
    (one uniform draw per target, in target order).
    """
    sigma2 = scenario.noise_power if scenario.noise_power > 0 else 1.0
    gains = np.empty(len(scenario.targets), dtype=complex)
    for k, t in enumerate(scenario.targets):
        mag = np.sqrt(10.0 ** (t.snr_db / 10.0) * sigma2)
        if t.phase_rad is not None:
            ph = t.phase_rad
        elif rng is not None:
            ph = rng.uniform(0.0, 2.0 * np.pi)
        else:
            ph = 0.0
        gains[k] = mag * np.exp(1j * ph)
    return gains


# ---------------------------------------------------------------------------
# Scenario files (JSON)
# ---------------------------------------------------------------------------

_PARAM_KEYS = ("fc_hz", "bandwidth_hz", "n_subcarriers", "n_symbols",
               "cp_duration_s", "n_tx", "n_rx")


def scenario_to_dict(scenario: Scenario) -> dict:
    d = {key: getattr(scenario.params, key) for key in _PARAM_KEYS}
    d.update(
        tx_steer_deg=scenario.tx_steer_deg,
        noise_power=scenario.noise_power,
        seed=scenario.seed,
        targets=[
            {
                "range_m": t.range_m,
                "velocity_mps": t.velocity_mps,
                "angle_deg": t.angle_deg,
                "snr_db": t.snr_db,
                **({"phase_rad": t.phase_rad} if t.phase_rad is not None else {}),
            }
            for t in scenario.targets
        ],
    )
    return d


def scenario_from_dict(d: dict) -> Scenario:
    try:
        params = OfdmParams(**{key: d[key] for key in _PARAM_KEYS})
        targets = tuple(
            Target(
                range_m=t["range_m"],
                velocity_mps=t["velocity_mps"],
                angle_deg=t["angle_deg"],
                snr_db=t["snr_db"],
                phase_rad=t.get("phase_rad"),
            )
            for t in d.get("targets", [])
        )
    except KeyError as exc:
        raise ConfigError(f"scenario file missing field {exc}") from exc
    return Scenario(
        params=params,
        targets=targets,
        noise_power=d.get("noise_power", 1.0),
        tx_steer_deg=d.get("tx_steer_deg", -30.0),
        seed=d.get("seed", 0),
    )


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

#: Full-scale numerology (60 GHz carrier, 2048 subcarriers). Campaign runs at
#: this scale take hours; use the desk preset for interactive work.
PAPER_PARAMS = OfdmParams(
    fc_hz=60e9,
    bandwidth_hz=50e6,
    n_subcarriers=2048,
    n_symbols=64,
    cp_duration_s=10.24e-6,
    n_tx=8,
    n_rx=8,
)

#: Reduced-size numerology for fast runs. The carrier is raised to 240 GHz so
#: that fc*T and fc*Tsym match the full-scale preset: range resolution (3 m),
#: unambiguous velocity (24.41 m/s), CFO resolution (61.04 m/s) and the ICI
#: severity at a given velocity are all preserved while N*M shrinks 8x.
DESK_PARAMS = OfdmParams(
    fc_hz=240e9,
    bandwidth_hz=50e6,
    n_subcarriers=512,
    n_symbols=32,
    cp_duration_s=2.56e-6,
    n_tx=8,
    n_rx=8,
)

PRESETS = {"paper": PAPER_PARAMS, "desk": DESK_PARAMS}


def preset_params(name: str) -> OfdmParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset '{name}' (choose from {sorted(PRESETS)})")
