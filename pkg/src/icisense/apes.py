"""Joint CFO / unstructured channel estimation with iterative cancellation.

Per estimated angle, the detector alternates between

1. a CFO sweep: for each candidate fast-time ramp, the per-symbol pilot
   subspace is projected out of the ramp-compensated residue and a Capon-type
   quadratic form measures how much energy along the angle the candidate
   explains (normalized to [0, 1]);
2. a greedy accept step: the best candidate joins the atom set, all channels
   detected so far are jointly re-fit against the original snapshots, and the
   fit is subtracted to form the next residue.

Pilot matrices never materialize in the hot path: applying one (or its
adjoint) is a pair of length-N FFTs, and for unit-modulus symbol grids the
pilot Gram is exactly the identity.

Shapes: snapshots are (M, N, n_rx) stacks of per-symbol space/fast-time
matrices; channels are (L, M); symbol grids are (N, M).
"""

from __future__ import annotations

import warnings as _warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import ConfigError, IllConditionedAtomsError
from .music import scm_from_snapshots
from .scene import OfdmParams, SymbolGrid
from .simulate import DataCube, rx_steering, velocity_to_doppler

RIDGE = 1e-10  # relative ridge for Hermitian solves near rank deficiency


# ---------------------------------------------------------------------------
# Pilot operators (fast-time convolution with the transmit symbols)
# ---------------------------------------------------------------------------

def pilot_apply(x_col: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply the N x L pilot matrix of one symbol to `v` (length L or (L, r)).

    Equals IDFT{x ⊙ DFT(zero-padded v)}; the unitary scalings cancel.
    """
    n = x_col.shape[0]
    spec = np.fft.fft(v, n=n, axis=0)
    if v.ndim == 1:
        return np.fft.ifft(x_col * spec)
    return np.fft.ifft(x_col[:, None] * spec, axis=0)


def pilot_apply_adj(x_col: np.ndarray, u: np.ndarray, n_taps: int) -> np.ndarray:
    """Adjoint pilot application: first `n_taps` lags of conj-symbol correlation."""
    spec = np.fft.fft(u, axis=0)
    if u.ndim == 1:
        return np.fft.ifft(np.conj(x_col) * spec)[:n_taps]
    return np.fft.ifft(np.conj(x_col)[:, None] * spec, axis=0)[:n_taps]


def pilot_matrix(x_col: np.ndarray, n_taps: int) -> np.ndarray:
    """Dense N x L pilot matrix; columns are cyclic shifts of ifft(x)."""
    n = x_col.shape[0]
    chi = np.fft.ifft(x_col)
    rows = np.arange(n)[:, None]
    cols = np.arange(n_taps)[None, :]
    return chi[(rows - cols) % n]


def _cfo_shift_per_bin(params: OfdmParams, velocity_mps: float) -> float:
    """Fast-time ramp rate in DFT-bin units: fc * T * nu = v / cfo_cell."""
    return velocity_mps / params.cfo_cell_mps


def _cfo_deramp(params: OfdmParams, velocity_mps: float) -> np.ndarray:
    """conj of the ICI ramp for this velocity, length N."""
    xi = _cfo_shift_per_bin(params, velocity_mps)
    ell = np.arange(params.n_subcarriers)
    return np.exp(-2j * np.pi * xi * ell / params.n_subcarriers)


# ---------------------------------------------------------------------------
# Capon-type quadratic forms
# ---------------------------------------------------------------------------

def _capon_quadform(matrix: np.ndarray, steer: np.ndarray) -> float:
    """a^H (M^*)^{-1} a with a relative ridge; raises LinAlgError if singular."""
    conj_m = np.conj(matrix)
    dim = conj_m.shape[0]
    ridge = RIDGE * max(np.real(np.trace(conj_m)), 1e-300) / dim
    sol = np.linalg.solve(conj_m + ridge * np.eye(dim), steer)
    value = float(np.real(np.conj(steer) @ sol))
    if not np.isfinite(value):
        raise np.linalg.LinAlgError("non-finite quadratic form")
    return value


def normalized_glrt(scm_residue: np.ndarray, nullspace: np.ndarray,
                    steer: np.ndarray) -> float:
    """Detection statistic in [0, 1]: energy fraction the candidate explains.

    1 - [a^H (R^*)^{-1} a] / [a^H (Q^*)^{-1} a], clamped against rounding.
    """
    base = _capon_quadform(scm_residue, steer)
    peak = _capon_quadform(nullspace, steer)
    return float(np.clip(1.0 - base / peak, 0.0, 1.0))


def log_glrt(scm_residue: np.ndarray, nullspace: np.ndarray,
             steer: np.ndarray, beam_noise_power: float) -> float:
    """Unnormalized log-GLRT given the post-beamforming noise power.

    Reference only: the noise power after beamforming is never estimated by
    the pipeline, so decisions use `normalized_glrt` with a fixed threshold.
    """
    base = _capon_quadform(scm_residue, steer)
    peak = _capon_quadform(nullspace, steer)
    return (1.0 / base - 1.0 / peak) / beam_noise_power


# ---------------------------------------------------------------------------
# Null-space covariance as a function of the candidate CFO
# ---------------------------------------------------------------------------

def _projected_gram(residue: np.ndarray, symbols: SymbolGrid,
                    params: OfdmParams, deramp: np.ndarray) -> np.ndarray:
    """sum_m (pilot_adj of de-ramped residue)^H (same), the captured energy."""
    n_taps = params.n_taps
    ramped = np.fft.fft(deramp[None, :, None] * residue, axis=1)
    corr = np.fft.ifft(np.conj(symbols.symbols).T[:, :, None] * ramped, axis=1)
    taps = corr[:, :n_taps, :]
    if not symbols.unit_modulus:
        taps = _whiten_taps(taps, symbols, params)
    captured = np.einsum("mli,mlj->ij", np.conj(taps), taps)
    return captured


def _whiten_taps(taps: np.ndarray, symbols: SymbolGrid,
                 params: OfdmParams) -> np.ndarray:
    # general-alphabet fallback: weight by the inverse Cholesky of each
    # per-symbol pilot Gram so that sum A^H G^-1 A is accumulated
    out = np.empty_like(taps)
    for m in range(taps.shape[0]):
        gram = pilot_apply_adj(
            symbols.symbols[:, m],
            pilot_matrix(symbols.symbols[:, m], params.n_taps),
            params.n_taps,
        )
        gram = 0.5 * (gram + gram.conj().T)
        chol = np.linalg.cholesky(gram + RIDGE * np.trace(gram).real
                                  / params.n_taps * np.eye(params.n_taps))
        out[m] = scipy.linalg.solve_triangular(chol, taps[m], lower=True)
    return out


def nullspace_scm(residue: np.ndarray, symbols: SymbolGrid,
                  velocity_mps: float, params: OfdmParams,
                  scm_residue: np.ndarray | None = None) -> np.ndarray:
    """Q(nu): residue covariance after projecting out the de-ramped pilots.

    Computed as R - sum_m A_m^H A_m with A_m the whitened pilot correlation of
    the CFO-compensated residue (Gram = identity for unit-modulus symbols).
    """
    if scm_residue is None:
        scm_residue = scm_from_snapshots(residue)
    deramp = _cfo_deramp(params, velocity_mps)
    q = scm_residue - _projected_gram(residue, symbols, params, deramp)
    return 0.5 * (q + q.conj().T)


# ---------------------------------------------------------------------------
# CFO spectrum sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CfoGridSpec:
    """Velocity search grid for the CFO sweep.

    `span_mps` is one-sided; None means the full unambiguous CFO span. The
    grid places `oversample` points per CFO resolution cell, which makes the
    sweep a strided read of one zero-padded FFT. A bounded scalar refinement
    within one grid step recovers sub-cell accuracy at the peak.
    """

    span_mps: float | None = None
    oversample: int = 4
    refine: bool = True

    def validate(self, params: OfdmParams) -> float:
        span = self.span_mps if self.span_mps is not None else params.v_cfo_max_mps
        if span <= 0 or span > params.v_cfo_max_mps * (1 + 1e-12):
            raise ConfigError("CFO span must lie in (0, v_cfo_max]")
        if self.oversample < 1:
            raise ConfigError("CFO oversampling factor must be >= 1")
        return span


@dataclass
class CfoSpectrum:
    velocities_mps: np.ndarray
    glrt: np.ndarray                 # normalized statistic per grid point
    peak_velocity_mps: float
    peak_glrt: float
    n_skipped: int = 0


def cfo_spectrum(residue: np.ndarray, symbols: SymbolGrid, angle_deg: float,
                 params: OfdmParams, grid: CfoGridSpec | None = None,
                 scm_residue: np.ndarray | None = None) -> CfoSpectrum:
    """Sweep the normalized GLRT over the CFO velocity grid and refine the peak."""
    if grid is None:
        grid = CfoGridSpec()
    span = grid.validate(params)
    n, n_taps, os = params.n_subcarriers, params.n_taps, grid.oversample
    if scm_residue is None:
        scm_residue = scm_from_snapshots(residue)
    steer = rx_steering(params, angle_deg)
    base = _capon_quadform(scm_residue, steer)

    g_max = int(np.floor(span / params.cfo_cell_mps * os + 1e-9))
    g_values = np.arange(-g_max, g_max + 1)
    velocities = g_values * params.cfo_cell_mps / os

    # one zero-padded FFT serves every on-grid ramp as a strided bin read
    big = np.fft.fft(residue, n=os * n, axis=1)
    x_conj = np.conj(symbols.symbols).T[:, :, None]
    rows = np.arange(n) * os

    glrt = np.full(len(g_values), -np.inf)
    n_skipped = 0
    for gi, g in enumerate(g_values):
        sliced = big[:, (rows + g) % (os * n), :]
        taps = np.fft.ifft(x_conj * sliced, axis=1)[:, :n_taps, :]
        if not symbols.unit_modulus:
            taps = _whiten_taps(taps, symbols, params)
        captured = np.einsum("mli,mlj->ij", np.conj(taps), taps)
        q = scm_residue - captured
        q = 0.5 * (q + q.conj().T)
        try:
            peak = _capon_quadform(q, steer)
        except np.linalg.LinAlgError:
            n_skipped += 1
            continue
        glrt[gi] = np.clip(1.0 - base / peak, 0.0, 1.0)
    if n_skipped == len(g_values):
        raise ConfigError("every CFO grid point failed the covariance solve")

    best = int(np.argmax(glrt))
    peak_velocity = float(velocities[best])
    peak_glrt = float(glrt[best])

    if grid.refine:
        step = params.cfo_cell_mps / os

        def objective(v):
            q = nullspace_scm(residue, symbols, v, params, scm_residue)
            try:
                return -_capon_quadform(q, steer)
            except np.linalg.LinAlgError:
                return 0.0

        res = scipy.optimize.minimize_scalar(
            objective,
            bounds=(peak_velocity - step, peak_velocity + step),
            method="bounded",
            options={"xatol": step * 1e-3},
        )
        refined_glrt = float(np.clip(1.0 - base / (-res.fun), 0.0, 1.0))
        if refined_glrt >= peak_glrt:
            peak_velocity = float(res.x)
            peak_glrt = refined_glrt

    return CfoSpectrum(
        velocities_mps=velocities,
        glrt=glrt,
        peak_velocity_mps=peak_velocity,
        peak_glrt=peak_glrt,
        n_skipped=n_skipped,
    )


# ---------------------------------------------------------------------------
# Joint channel re-fit over the detected atom set
# ---------------------------------------------------------------------------

@dataclass
class ChannelUpdate:
    channels: list[np.ndarray]       # one (L, M) matrix per detected CFO
    stacked: np.ndarray              # (L*P, M) stacked taps per symbol
    nullspace: np.ndarray            # residue covariance after atom projection
    gram_condition: float


def _atom_blocks(x_col: np.ndarray, deramps: list[np.ndarray],
                 n_taps: int) -> np.ndarray:
    """Dense per-symbol atom matrix (N, L*P): ramped pilot blocks."""
    base = pilot_matrix(x_col, n_taps)
    return np.concatenate([np.conj(d)[:, None] * base for d in deramps], axis=1)


def joint_channel_update(snapshots: np.ndarray, symbols: SymbolGrid,
                         cfo_velocities_mps: list[float], angle_deg: float,
                         params: OfdmParams,
                         scm0: np.ndarray | None = None,
                         cond_limit: float = 1e12) -> ChannelUpdate:
    """Closed-form re-fit of every detected channel against the original data.

    Solves the per-symbol least squares over the stacked atoms with the
    Capon-optimal beam for the current atom set, returning the unstacked
    (L, M) channel estimates. Raises IllConditionedAtomsError when the atom
    Gram condition number exceeds `cond_limit` (CFOs too close).
    """
    n_sym, n, n_rx = snapshots.shape
    n_taps = params.n_taps
    p = len(cfo_velocities_mps)
    if p < 1:
        raise ConfigError("need at least one detected CFO")
    if p * n_taps > n:
        raise ConfigError("atom count exceeds the per-symbol dimension (P > N/L)")
    if scm0 is None:
        scm0 = scm_from_snapshots(snapshots)
    steer = rx_steering(params, angle_deg)
    deramps = [_cfo_deramp(params, v) for v in cfo_velocities_mps]

    eye_block = np.eye(n_taps)
    fits = np.empty((n_sym, p * n_taps, n_rx), dtype=complex)
    captured = np.zeros((n_rx, n_rx), dtype=complex)
    worst_cond = 1.0
    for m in range(n_sym):
        x_col = symbols.symbols[:, m]
        ymat = snapshots[m]
        # correlations Phi^H Y: adjoint pilot op on each de-ramped copy
        corr = np.concatenate(
            [pilot_apply_adj(x_col, d[:, None] * ymat, n_taps) for d in deramps],
            axis=0,
        )
        if p == 1 and symbols.unit_modulus:
            gram = eye_block
            fit = corr
            worst_cond = max(worst_cond, 1.0)
        else:
            atoms = _atom_blocks(x_col, deramps, n_taps)
            gram = np.empty((p * n_taps, p * n_taps), dtype=complex)
            for pi in range(p):
                cols = slice(pi * n_taps, (pi + 1) * n_taps)
                block = pilot_apply_adj(
                    x_col, np.conj(deramps[pi])[:, None]
                    * atoms, n_taps)
                gram[cols, :] = np.conj(block.conj())  # placeholder, fixed below
            # build Gram row-blocks properly: (D_pi Xbar)^H (D_pj Xbar)
            for pi in range(p):
                rows_ = slice(pi * n_taps, (pi + 1) * n_taps)
                ramped = deramps[pi][:, None] * atoms
                gram[rows_, :] = pilot_apply_adj(x_col, ramped, n_taps)
            gram = 0.5 * (gram + gram.conj().T)
            eigvals = np.linalg.eigvalsh(gram)
            cond = float(eigvals[-1] / max(eigvals[0], 1e-300))
            worst_cond = max(worst_cond, cond)
            if cond > cond_limit or eigvals[0] <= 0:
                raise IllConditionedAtomsError(
                    f"atom Gram condition {cond:.3e} beyond {cond_limit:.0e}"
                )
            ridge = RIDGE * np.trace(gram).real / gram.shape[0]
            cho = scipy.linalg.cho_factor(
                gram + ridge * np.eye(gram.shape[0]), lower=True)
            fit = scipy.linalg.cho_solve(cho, corr)
        captured += corr.conj().T @ fit
        fits[m] = fit

    nullspace = scm0 - captured
    nullspace = 0.5 * (nullspace + nullspace.conj().T)
    ridge = RIDGE * max(np.real(np.trace(nullspace)), 1e-300) / n_rx
    beam = np.linalg.solve(nullspace + ridge * np.eye(n_rx), np.conj(steer))
    denom = steer @ beam
    if abs(denom) < 1e-300:
        raise IllConditionedAtomsError("degenerate beamforming denominator")

    stacked = np.einsum("mki,i->km", fits, beam) / denom
    channels = [stacked[pi * n_taps:(pi + 1) * n_taps, :] for pi in range(p)]
    return ChannelUpdate(
        channels=channels,
        stacked=stacked,
        nullspace=nullspace,
        gram_condition=worst_cond,
    )


def subtract_fit(snapshots: np.ndarray, symbols: SymbolGrid,
                 cfo_velocities_mps: list[float], stacked: np.ndarray,
                 angle_deg: float, params: OfdmParams) -> np.ndarray:
    """Residue after removing the fitted atoms along the angle's steering row."""
    n_taps = params.n_taps
    steer = rx_steering(params, angle_deg)
    predicted = np.zeros((params.n_subcarriers, params.n_symbols), dtype=complex)
    for pi, velocity in enumerate(cfo_velocities_mps):
        block = stacked[pi * n_taps:(pi + 1) * n_taps, :]
        ramp = np.conj(_cfo_deramp(params, velocity))
        predicted += ramp[:, None] * pilot_apply(symbols.symbols, block)
    return snapshots - predicted.T[:, :, None] * steer[None, None, :]


# ---------------------------------------------------------------------------
# OMP detection loop
# ---------------------------------------------------------------------------

@dataclass
class CfoChannelEstimate:
    """One detected per-angle component."""

    cfo_velocity_mps: float
    channel: np.ndarray              # (L, M) time-domain channel
    glrt_value: float
    iteration: int
    angle_deg: float


@dataclass
class OmpResult:
    estimates: list[CfoChannelEstimate]
    spectra: list[CfoSpectrum]       # one per iteration, acceptances first
    residue_energy: list[float]      # trace of the residue covariance per step
    warnings: list[str] = field(default_factory=list)


def omp_detect(cube_or_snapshots, symbols: SymbolGrid, angle_deg: float,
               params: OfdmParams, grid: CfoGridSpec | None = None,
               eta: float = 0.3, p_max: int = 5) -> OmpResult:
    """Greedy multi-target CFO detection at one angle.

    Each iteration sweeps the CFO spectrum of the current residue; if the
    normalized statistic at the peak exceeds `eta`, the CFO is accepted, all
    channels are jointly re-fit, and the fit is subtracted. Stops on the first
    rejection, on reaching the atom budget, or on ill-conditioned atoms.
    """
    if isinstance(cube_or_snapshots, DataCube):
        snapshots = cube_or_snapshots.snapshots()
    else:
        snapshots = cube_or_snapshots
    if grid is None:
        grid = CfoGridSpec()
    p_cap = min(p_max, params.n_subcarriers // params.n_taps)
    scm0 = scm_from_snapshots(snapshots)

    residue = snapshots
    scm_res = scm0
    cfos: list[float] = []
    glrts: list[float] = []
    channels: list[np.ndarray] = []
    spectra: list[CfoSpectrum] = []
    energies = [float(np.real(np.trace(scm_res)))]
    notes: list[str] = []

    while len(cfos) < p_cap:
        spectrum = cfo_spectrum(residue, symbols, angle_deg, params, grid,
                                scm_residue=scm_res)
        spectra.append(spectrum)
        if spectrum.peak_glrt <= eta:
            break
        cfos.append(spectrum.peak_velocity_mps)
        glrts.append(spectrum.peak_glrt)
        try:
            update = joint_channel_update(snapshots, symbols, cfos, angle_deg,
                                          params, scm0=scm0)
        except IllConditionedAtomsError as exc:
            notes.append(f"stopped at iteration {len(cfos) - 1}: {exc}")
            cfos.pop()
            glrts.pop()
            break
        channels = update.channels
        residue = subtract_fit(snapshots, symbols, cfos, update.stacked,
                               angle_deg, params)
        scm_res = scm_from_snapshots(residue)
        energies.append(float(np.real(np.trace(scm_res))))

    estimates = [
        CfoChannelEstimate(
            cfo_velocity_mps=cfos[pi],
            channel=channels[pi],
            glrt_value=glrts[pi],
            iteration=pi,
            angle_deg=angle_deg,
        )
        for pi in range(len(cfos))
    ]
    return OmpResult(estimates=estimates, spectra=spectra,
                     residue_energy=energies, warnings=notes)
