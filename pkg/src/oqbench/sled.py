"""Numerically exact stochastic solver for the ohmic qubit-bath problem.

Each trajectory integrates a time-local Liouville equation whose drift
carries the high-temperature (white-noise) dephasing and the friction term,
while a single real colored Gaussian noise ``zeta(t)`` carries the remaining
quantum statistics of the reservoir:

    d rho / dt = -i [H, rho] - (eta/beta) [q, [q, rho]]
                 + (eta/2) [q, {[H, q], rho}] + i zeta(t) [q, rho].

Every term is trace-free and Hermiticity-preserving, so individual
trajectories conserve ``Tr rho`` and Hermiticity to rounding accuracy; the
physical density matrix is the ensemble mean.

Reproducibility contract: trajectory ``i`` of master seed ``s`` is generated
from a counter-based Philox stream keyed by ``(s, i)``, and ensemble means
are accumulated over fixed 64-trajectory blocks combined in a fixed pairwise
tree, so results are bit-identical for any worker count or chunking.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bath import BathSpec, spectral_density
from .operators import (
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    SystemSpec,
    build_hamiltonian,
    commutator_superoperator,
    coupling_operator,
    left_multiplier,
    right_multiplier,
    vectorize,
)

__all__ = [
    "TimeGrid",
    "SledDivergenceError",
    "EnsembleResult",
    "SledPropagators",
    "noise_spectrum",
    "generate_noise",
    "sled_step",
    "run_ensemble",
    "reconstruct_superoperator",
    "initial_state_matrix",
    "time_grid_for",
]

BLOCK = 64  # trajectories per deterministic accumulation block
MAX_CUTOFF_STEP = 0.5  # bound on dt * omega_c
MAX_HAMILTONIAN_STEP = 0.1  # bound on dt * ||H||
CHECKPOINT_VERSION = 1
_CHUNK_TARGET_BYTES = 256 * 1024 * 1024


class SledDivergenceError(RuntimeError):
    """A trajectory produced non-finite values."""

    def __init__(self, traj_index: int):
        super().__init__(f"trajectory {traj_index} diverged (NaN/inf state)")
        self.traj_index = traj_index


@dataclass(frozen=True)
class TimeGrid:
    """Uniform integration grid on ``[0, t_max]`` with ``n_steps`` steps."""

    t_max: float
    n_steps: int

    def __post_init__(self):
        if not self.t_max > 0:
            raise ValueError(f"t_max must be positive, got {self.t_max}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return self.t_max / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def validate_for(self, bath: BathSpec, h_norm: float | None = None) -> None:
        """Enforce the resolution invariants against bath and system scales."""
        if self.dt * bath.omega_c > MAX_CUTOFF_STEP * (1 + 1e-12):
            raise ValueError(
                f"dt*omega_c = {self.dt * bath.omega_c:.3f} exceeds "
                f"{MAX_CUTOFF_STEP}; cutoff-scale noise would be unresolved")
        if h_norm is not None and self.dt * h_norm > MAX_HAMILTONIAN_STEP * (1 + 1e-12):
            raise ValueError(
                f"dt*||H|| = {self.dt * h_norm:.3f} exceeds {MAX_HAMILTONIAN_STEP}")


def time_grid_for(spec: SystemSpec, bath: BathSpec, t_max: float) -> TimeGrid:
    """Smallest uniform grid satisfying the resolution invariants."""
    h_norm = float(np.linalg.norm(build_hamiltonian(spec), 2))
    dt_max = min(MAX_CUTOFF_STEP / bath.omega_c, MAX_HAMILTONIAN_STEP / h_norm)
    n_steps = int(np.ceil(t_max / dt_max))
    return TimeGrid(t_max=t_max, n_steps=n_steps)


def noise_spectrum(bath: BathSpec, omega) -> np.ndarray:
    """Power spectrum of the colored noise, even in omega and >= 0.

    ``P(w) = J(|w|) [coth(beta |w| / 2) - 2/(beta |w|)]`` with ``P(0) = 0``.
    The bracket subtracts the classical equipartition part already handled
    by the deterministic drift, and is positive because ``coth x > 1/x``.
    """
    omega = np.abs(np.asarray(omega, dtype=float))
    x = 0.5 * bath.beta * omega
    small = x < 1e-4
    bracket = np.empty_like(x)
    xs = x[small]
    bracket[small] = xs / 3.0 - xs ** 3 / 45.0  # series of coth(x) - 1/x
    xl = x[~small]
    with np.errstate(divide="ignore"):
        bracket[~small] = 1.0 / np.tanh(xl) - 1.0 / xl
    out = spectral_density(bath, omega) * bracket
    if out.ndim == 0:
        return float(out)
    return out


def _bin_amplitudes(bath: BathSpec, grid: TimeGrid) -> tuple[int, np.ndarray]:
    """Per-bin standard deviations of the spectral synthesis.

    A window of twice the trajectory length suppresses circular-correlation
    artifacts; bin ``k`` carries variance ``P(w_k) dw / pi`` so that the
    synthesized autocovariance is the Riemann sum of the target integral.
    """
    m = 2 * grid.n_steps
    d_omega = 2.0 * np.pi / (m * grid.dt)
    omegas = np.arange(1, m // 2 + 1) * d_omega
    sigmas = np.sqrt(np.asarray(noise_spectrum(bath, omegas)) * d_omega / np.pi)
    return m, sigmas


def _synthesize(sigmas: np.ndarray, m: int, master_seed: int,
                traj_index: int, n_keep: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(
        key=np.array([master_seed, traj_index], dtype=np.uint64)))
    draws = rng.standard_normal((2, sigmas.size))
    spectrum = np.zeros(m // 2 + 1, dtype=complex)
    spectrum[1:m // 2] = (0.5 * m) * sigmas[:-1] * (draws[0, :-1] - 1j * draws[1, :-1])
    spectrum[m // 2] = m * sigmas[-1] * draws[0, -1]
    return np.fft.irfft(spectrum, n=m)[:n_keep]


def generate_noise(bath: BathSpec, grid: TimeGrid, master_seed: int,
                   traj_index: int) -> np.ndarray:
    """Colored-noise samples ``zeta(t_k)`` for one trajectory.

    Fully determined by ``(master_seed, traj_index)``; an all-zero array for
    a decoupled bath.
    """
    grid.validate_for(bath)
    if bath.eta == 0.0:
        return np.zeros(grid.n_steps + 1)
    m, sigmas = _bin_amplitudes(bath, grid)
    return _synthesize(sigmas, m, master_seed, traj_index, grid.n_steps + 1)


class _Generator:
    """Precomputed stacked operator for the per-step update.

    ``lk`` stacks the deterministic drift on top of the noise coupling
    ``[q, .]`` so one matrix product per stage yields both pieces.
    """

    def __init__(self, h: np.ndarray, q: np.ndarray, bath: BathSpec):
        self.dim = h.shape[0]
        n2 = self.dim * self.dim
        k_q = commutator_superoperator(q)
        c = h @ q - q @ h  # friction enters through {[H, q], .}
        a_c = left_multiplier(c) + right_multiplier(c)
        l_det = (-1j * commutator_superoperator(h)
                 - (bath.eta / bath.beta) * (k_q @ k_q)
                 + 0.5 * bath.eta * (k_q @ a_c))
        self.l_det = l_det
        self.k_q = k_q
        self.lk = np.vstack([l_det, k_q])
        self.n2 = n2


def _rk4_chunk(lk: np.ndarray, y: np.ndarray, zeta: np.ndarray,
               zmid: np.ndarray, dt: float, n_init: int,
               step_lo: int, step_hi: int, bufs) -> None:
    """Advance ``y`` in place from step_lo to step_hi with per-column noise.

    ``y`` has one column per (trajectory, initial state); ``zeta``/``zmid``
    hold per-trajectory noise at grid points and midpoints.  The noise enters
    each Runge-Kutta stage through its piecewise-linear interpolant.
    """
    n2 = y.shape[0]
    n_traj = zeta.shape[0]
    big, y_tmp, acc = bufs
    top = big[:n2]
    bot3 = big[n2:].reshape(n2, n_traj, n_init)
    half = 0.5 * dt
    sixth = dt / 6.0

    def stage(src, z):
        np.matmul(lk, src, out=big)
        np.multiply(bot3, z[None, :, None], out=bot3)
        np.add(top, big[n2:], out=top)

    # divergence is detected from the state at sample points, not per step
    with np.errstate(over="ignore", invalid="ignore"):
        _rk4_steps(stage, y, zeta, zmid, half, sixth, y_tmp, acc, top,
                   step_lo, step_hi)


def _rk4_steps(stage, y, zeta, zmid, half, sixth, y_tmp, acc, top,
               step_lo, step_hi):
    dt = 2.0 * half
    for j in range(step_lo, step_hi):
        z0 = 1j * zeta[:, j]
        zh = 1j * zmid[:, j]
        z1 = 1j * zeta[:, j + 1]
        stage(y, z0)
        np.copyto(acc, top)
        np.multiply(top, half, out=y_tmp)
        y_tmp += y
        stage(y_tmp, zh)
        acc += top
        acc += top
        np.multiply(top, half, out=y_tmp)
        y_tmp += y
        stage(y_tmp, zh)
        acc += top
        acc += top
        np.multiply(top, dt, out=y_tmp)
        y_tmp += y
        stage(y_tmp, z1)
        acc += top
        acc *= sixth
        y += acc


def sled_step(rho: np.ndarray, h: np.ndarray, q: np.ndarray, bath: BathSpec,
              zeta_t: float, zeta_next: float, dt: float) -> np.ndarray:
    """One fixed-step Runge-Kutta update of a single trajectory.

    ``zeta_t`` and ``zeta_next`` are the noise samples bracketing the step;
    the midpoint stages use their average (piecewise-linear interpolation).
    """
    gen = _Generator(h, q, bath)
    y = vectorize(rho).astype(complex).reshape(-1, 1).copy()
    zeta = np.array([[zeta_t, zeta_next]])
    zmid = np.array([[0.5 * (zeta_t + zeta_next)]])
    n2 = gen.n2
    bufs = (np.empty((2 * n2, 1), complex), np.empty((n2, 1), complex),
            np.empty((n2, 1), complex))
    _rk4_chunk(gen.lk, y, zeta, zmid, dt, 1, 0, 1, bufs)
    return y[:, 0].reshape(rho.shape, order="F")


def initial_state_matrix(dim: int) -> np.ndarray:
    """Columns of vectorized initial states spanning operator space.

    Single qubit: the +1 eigenstate projectors of sigma_x, sigma_y, sigma_z
    plus the maximally mixed state.  Two qubits: the 16 tensor products of
    that set.  All states are Hermitian, unit trace and positive.
    """
    eye2 = np.eye(2, dtype=complex)
    base = [0.5 * (eye2 + SIGMA_X), 0.5 * (eye2 + SIGMA_Y),
            0.5 * (eye2 + SIGMA_Z), 0.5 * eye2]
    if dim == 2:
        states = base
    elif dim == 4:
        states = [np.kron(a, b) for a in base for b in base]
    else:
        raise ValueError(f"unsupported dimension {dim}")
    return np.stack([vectorize(s) for s in states], axis=1)


@dataclass
class _Job:
    """Everything a worker needs to integrate a span of trajectories."""

    lk: np.ndarray
    y0: np.ndarray  # (N^2, n_init)
    sigmas: np.ndarray
    m: int
    dt: float
    n_steps: int
    stride: int
    master_seed: int
    eta: float
    obs_vectors: np.ndarray | None  # (n_obs, N^2)
    dim: int


def _run_span(job: _Job, lo: int, hi: int):
    """Integrate trajectories ``[lo, hi)`` and reduce into 64-wide blocks.

    Returns block-aligned partial sums; ``lo`` is always a multiple of the
    block size so the reduction tree does not depend on chunking.
    """
    n2, n_init = job.y0.shape
    n_loc = hi - lo
    n_steps, stride = job.n_steps, job.stride
    n_out = n_steps // stride + 1
    n_keep = n_steps + 1

    zeta = np.empty((n_loc, n_keep))
    if job.eta == 0.0:
        zeta[:] = 0.0
    else:
        for i in range(n_loc):
            zeta[i] = _synthesize(job.sigmas, job.m, job.master_seed, lo + i, n_keep)
    zmid = 0.5 * (zeta[:, :-1] + zeta[:, 1:])

    ncols = n_loc * n_init
    y = np.tile(job.y0, (1, n_loc)).astype(complex)
    bufs = (np.empty((2 * n2, ncols), complex), np.empty((n2, ncols), complex),
            np.empty((n2, ncols), complex))

    n_blocks = (n_loc + BLOCK - 1) // BLOCK
    state_sums = np.zeros((n_blocks, n_out, n2, n_init), complex)
    n_obs = 0 if job.obs_vectors is None else job.obs_vectors.shape[0]
    obs_sum = np.zeros((n_blocks, n_obs, n_out))
    obs_sumsq = np.zeros((n_blocks, n_obs, n_out))
    trace_vec = vectorize(np.eye(job.dim, dtype=complex))
    max_trace_drift = 0.0
    max_herm_defect = 0.0

    def record(sample_idx: int):
        nonlocal max_trace_drift, max_herm_defect
        if not np.all(np.isfinite(y)):
            bad = int(np.argmax(~np.all(np.isfinite(y), axis=0)))
            raise SledDivergenceError(lo + bad // n_init)
        y3 = y.reshape(n2, n_loc, n_init)
        for b in range(n_blocks):
            sl = y3[:, b * BLOCK:(b + 1) * BLOCK, :]
            state_sums[b, sample_idx] = sl.sum(axis=1)
        traces = trace_vec @ y
        max_trace_drift = max(max_trace_drift, float(np.abs(traces - 1.0).max()))
        mats = y.reshape(job.dim, job.dim, ncols, order="F")
        defect = np.abs(mats - mats.transpose(1, 0, 2).conj()).max()
        max_herm_defect = max(max_herm_defect, float(defect))
        if n_obs:
            vals = (job.obs_vectors @ y).real  # (n_obs, ncols); n_init == 1
            for b in range(n_blocks):
                sl = vals[:, b * BLOCK:(b + 1) * BLOCK]
                obs_sum[b, :, sample_idx] = sl.sum(axis=1)
                obs_sumsq[b, :, sample_idx] = (sl * sl).sum(axis=1)

    record(0)
    for s in range(n_out - 1):
        _rk4_chunk(job.lk, y, zeta, zmid, job.dt, n_init,
                   s * stride, (s + 1) * stride, bufs)
        record(s + 1)
    return state_sums, obs_sum, obs_sumsq, max_trace_drift, max_herm_defect


def _tree_sum(arrays: np.ndarray) -> np.ndarray:
    """Pairwise reduction over the leading axis in fixed index order."""
    items = [arrays[i] for i in range(arrays.shape[0])]
    while len(items) > 1:
        nxt = []
        for i in range(0, len(items) - 1, 2):
            nxt.append(items[i] + items[i + 1])
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def _auto_chunk(n_traj: int, n_steps: int, n2: int, n_init: int) -> int:
    per_traj = 16.0 * (n_steps + 1) + 5 * 16.0 * 2 * n2 * n_init
    chunk = int(_CHUNK_TARGET_BYTES / per_traj)
    chunk = max(BLOCK, (chunk // BLOCK) * BLOCK)
    return min(chunk, max(BLOCK, ((n_traj + BLOCK - 1) // BLOCK) * BLOCK))


def _spans(n_traj: int, chunk: int) -> list[tuple[int, int]]:
    if chunk % BLOCK:
        raise ValueError(f"chunk size must be a multiple of {BLOCK}")
    return [(lo, min(lo + chunk, n_traj)) for lo in range(0, n_traj, chunk)]


def _collect(job: _Job, n_traj: int, chunk: int | None, n_workers: int,
             skip_blocks: np.ndarray | None = None):
    """Run all trajectory spans and return globally indexed block partials."""
    n2, n_init = job.y0.shape
    if chunk is None:
        chunk = _auto_chunk(n_traj, job.n_steps, n2, n_init)
    n_blocks = (n_traj + BLOCK - 1) // BLOCK
    n_out = job.n_steps // job.stride + 1
    n_obs = 0 if job.obs_vectors is None else job.obs_vectors.shape[0]

    state_sums = np.zeros((n_blocks, n_out, n2, n_init), complex)
    obs_sum = np.zeros((n_blocks, n_obs, n_out))
    obs_sumsq = np.zeros((n_blocks, n_obs, n_out))
    drift = 0.0
    herm = 0.0

    spans = _spans(n_traj, chunk)
    if skip_blocks is not None:
        spans = [(lo, hi) for lo, hi in spans
                 if not skip_blocks[lo // BLOCK:(hi + BLOCK - 1) // BLOCK].all()]

    def fold(lo, result):
        nonlocal drift, herm
        s_sums, o_sum, o_sq, d, h = result
        b0 = lo // BLOCK
        state_sums[b0:b0 + s_sums.shape[0]] = s_sums
        if n_obs:
            obs_sum[b0:b0 + s_sums.shape[0]] = o_sum
            obs_sumsq[b0:b0 + s_sums.shape[0]] = o_sq
        drift = max(drift, d)
        herm = max(herm, h)

    if n_workers <= 1:
        for lo, hi in spans:
            fold(lo, _run_span(job, lo, hi))
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            futures = [(lo, pool.submit(_run_span, job, lo, hi))
                       for lo, hi in spans]
            for lo, fut in futures:
                fold(lo, fut.result())
    return state_sums, obs_sum, obs_sumsq, drift, herm, chunk


@dataclass
class EnsembleResult:
    """Trajectory-averaged evolution of one initial state."""

    times: np.ndarray
    states: np.ndarray  # (n_out, N, N) ensemble means
    n_traj: int
    master_seed: int
    block_state_sums: np.ndarray  # (n_blocks, n_out, N^2, 1)
    observable_names: list[str]
    observable_means: np.ndarray  # (n_obs, n_out)
    observable_stderr: np.ndarray
    max_trace_drift: float
    max_hermiticity_defect: float

    def observable(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        k = self.observable_names.index(name)
        return self.observable_means[k], self.observable_stderr[k]


@dataclass
class SledPropagators:
    """Ensemble-mean evolution superoperators on a sampled time grid."""

    times: np.ndarray
    matrices: np.ndarray  # (n_out, N^2, N^2)
    n_traj: int
    master_seed: int
    initial_states: np.ndarray  # (N^2, N^2) columns of vec(rho_i(0))
    block_state_sums: np.ndarray  # (n_blocks, n_out, N^2, N^2)
    max_trace_drift: float
    max_hermiticity_defect: float

    def jackknife_matrices(self) -> np.ndarray:
        """Leave-one-block-out propagator estimates, for error bars."""
        n_blocks = self.block_state_sums.shape[0]
        total = _tree_sum(self.block_state_sums)
        counts = _block_counts(self.n_traj)
        out = np.empty((n_blocks,) + self.matrices.shape, complex)
        for b in range(n_blocks):
            mean = (total - self.block_state_sums[b]) / (self.n_traj - counts[b])
            out[b] = _solve_superoperators(mean, self.initial_states)
        return out


def _block_counts(n_traj: int) -> np.ndarray:
    n_blocks = (n_traj + BLOCK - 1) // BLOCK
    counts = np.full(n_blocks, BLOCK)
    if n_traj % BLOCK:
        counts[-1] = n_traj % BLOCK
    return counts


def _solve_superoperators(mean_states: np.ndarray, p0: np.ndarray) -> np.ndarray:
    """Recover T(t) from evolved means: T @ p0 = mean  =>  solve p0^T x = mean^T."""
    stacked = np.linalg.solve(p0.T, mean_states.transpose(0, 2, 1))
    return stacked.transpose(0, 2, 1)


def _validate_density_matrix(rho: np.ndarray, dim: int) -> None:
    if rho.shape != (dim, dim):
        raise ValueError(f"initial state must be {dim}x{dim}, got {rho.shape}")
    if np.abs(rho - rho.conj().T).max() > 1e-10:
        raise ValueError("initial state is not Hermitian")
    if abs(np.trace(rho) - 1.0) > 1e-10:
        raise ValueError(f"initial state trace {np.trace(rho)} != 1")


def _make_job(spec: SystemSpec, bath: BathSpec, grid: TimeGrid, y0: np.ndarray,
              master_seed: int, stride: int,
              observables: dict[str, np.ndarray] | None) -> _Job:
    h = build_hamiltonian(spec)
    q = coupling_operator(spec)
    grid.validate_for(bath, h_norm=float(np.linalg.norm(h, 2)))
    if grid.n_steps % stride:
        raise ValueError(
            f"sample stride {stride} must divide n_steps {grid.n_steps}")
    gen = _Generator(h, q, bath)
    if bath.eta == 0.0:
        m, sigmas = 2 * grid.n_steps, np.zeros(grid.n_steps)
    else:
        m, sigmas = _bin_amplitudes(bath, grid)
    obs_vectors = None
    if observables:
        obs_vectors = np.stack([vectorize(op.T) for op in observables.values()])
    return _Job(lk=gen.lk, y0=y0, sigmas=sigmas, m=m, dt=grid.dt,
                n_steps=grid.n_steps, stride=stride, master_seed=master_seed,
                eta=bath.eta, obs_vectors=obs_vectors, dim=spec.dim)


def run_ensemble(spec: SystemSpec, bath: BathSpec, rho0: np.ndarray,
                 grid: TimeGrid, n_traj: int, master_seed: int, *,
                 sample_stride: int = 1,
                 observables: dict[str, np.ndarray] | None = None,
                 n_workers: int = 1,
                 chunk_size: int | None = None,
                 checkpoint: str | os.PathLike | None = None) -> EnsembleResult:
    """Average ``n_traj`` independent trajectories from one initial state.

    Observables are Hermitian operators whose per-trajectory expectations are
    accumulated for mean and standard-error estimates.  ``sample_stride``
    thins the stored output grid without affecting integration accuracy.
    With ``checkpoint`` set, finished trajectory blocks are persisted and
    reused across interrupted runs.
    """
    _validate_density_matrix(rho0, spec.dim)
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    y0 = vectorize(rho0).astype(complex).reshape(-1, 1)
    observables = observables or {}
    job = _make_job(spec, bath, grid, y0, master_seed, sample_stride, observables)

    meta = _checkpoint_meta(spec, bath, grid, n_traj, master_seed,
                            sample_stride, extra=sorted(observables))
    stored = None
    if checkpoint is not None and Path(checkpoint).exists():
        stored = _load_checkpoint(Path(checkpoint), meta)
    if stored is not None:
        state_sums, obs_sum, obs_sumsq, done, drift, herm = stored
    else:
        n_blocks = (n_traj + BLOCK - 1) // BLOCK
        n_out = grid.n_steps // sample_stride + 1
        state_sums = np.zeros((n_blocks, n_out, spec.dim ** 2, 1), complex)
        obs_sum = np.zeros((n_blocks, len(observables), n_out))
        obs_sumsq = np.zeros_like(obs_sum)
        done = np.zeros(n_blocks, dtype=bool)
        drift = herm = 0.0

    if not done.all():
        new_states, new_obs, new_sq, d, h, _ = _collect(
            job, n_traj, chunk_size, n_workers, skip_blocks=done)
        state_sums[~done] = new_states[~done]
        if len(observables):
            obs_sum[~done] = new_obs[~done]
            obs_sumsq[~done] = new_sq[~done]
        drift = max(drift, d)
        herm = max(herm, h)
        done[:] = True
        if checkpoint is not None:
            _save_checkpoint(Path(checkpoint), meta, state_sums, done, drift,
                             herm, obs_sum=obs_sum, obs_sumsq=obs_sumsq)

    mean = _tree_sum(state_sums)[:, :, 0] / n_traj  # (n_out, N^2)
    n_out = mean.shape[0]
    states = mean.reshape(n_out, spec.dim, spec.dim).transpose(0, 2, 1)
    names = list(observables.keys())
    if names:
        total = _tree_sum(obs_sum)
        total_sq = _tree_sum(obs_sumsq)
        means = total / n_traj
        if n_traj > 1:
            var = np.maximum(total_sq - total * total / n_traj, 0.0) / (n_traj - 1)
            stderr = np.sqrt(var / n_traj)
        else:
            stderr = np.zeros_like(means)
    else:
        means = np.zeros((0, n_out))
        stderr = np.zeros((0, n_out))
    return EnsembleResult(
        times=grid.times[::sample_stride], states=states, n_traj=n_traj,
        master_seed=master_seed, block_state_sums=state_sums,
        observable_names=names, observable_means=means,
        observable_stderr=stderr, max_trace_drift=drift,
        max_hermiticity_defect=herm)


def reconstruct_superoperator(spec: SystemSpec, bath: BathSpec, grid: TimeGrid,
                              n_traj: int, master_seed: int, *,
                              sample_stride: int = 1,
                              n_workers: int = 1,
                              chunk_size: int | None = None,
                              checkpoint: str | os.PathLike | None = None
                              ) -> SledPropagators:
    """Ensemble-mean propagators from a spanning set of initial states.

    All initial states of one trajectory share a noise realization, so the
    recovered superoperator reproduces each evolved mean exactly (the linear
    solve has zero residual).  With ``checkpoint`` set, finished trajectory
    blocks are persisted and reused across interrupted runs.
    """
    p0 = initial_state_matrix(spec.dim)
    cond = np.linalg.cond(p0)
    if cond > 1e6:
        raise RuntimeError(f"initial-state matrix ill-conditioned (cond={cond:.2e})")
    job = _make_job(spec, bath, grid, p0, master_seed, sample_stride, None)
    times = grid.times[::sample_stride]

    meta = _checkpoint_meta(spec, bath, grid, n_traj, master_seed, sample_stride)
    state_sums = None
    done = None
    if checkpoint is not None and Path(checkpoint).exists():
        state_sums, _, _, done, drift0, herm0 = _load_checkpoint(
            Path(checkpoint), meta)
    if state_sums is None:
        n_blocks = (n_traj + BLOCK - 1) // BLOCK
        n_out = grid.n_steps // sample_stride + 1
        state_sums = np.zeros((n_blocks, n_out, spec.dim ** 2, spec.dim ** 2),
                              complex)
        done = np.zeros(n_blocks, dtype=bool)
        drift0 = herm0 = 0.0

    if not done.all():
        new_sums, _, _, drift, herm, _ = _collect(
            job, n_traj, chunk_size, n_workers, skip_blocks=done)
        state_sums[~done] = new_sums[~done]
        drift0 = max(drift0, drift)
        herm0 = max(herm0, herm)
        done[:] = True
        if checkpoint is not None:
            _save_checkpoint(Path(checkpoint), meta, state_sums, done,
                             drift0, herm0)

    mean = _tree_sum(state_sums) / n_traj
    matrices = _solve_superoperators(mean, p0)
    return SledPropagators(
        times=times, matrices=matrices, n_traj=n_traj, master_seed=master_seed,
        initial_states=p0, block_state_sums=state_sums,
        max_trace_drift=drift0, max_hermiticity_defect=herm0)


def _checkpoint_meta(spec, bath, grid, n_traj, master_seed, stride,
                     extra=()) -> str:
    return json.dumps({
        "version": CHECKPOINT_VERSION,
        "spec": {"type": type(spec).__name__,
                 **{k: getattr(spec, k) for k in spec.__dataclass_fields__}},
        "bath": {k: getattr(bath, k) for k in bath.__dataclass_fields__},
        "grid": {"t_max": grid.t_max, "n_steps": grid.n_steps},
        "n_traj": n_traj, "master_seed": master_seed, "stride": stride,
        "extra": list(extra),
    }, sort_keys=True)


def _save_checkpoint(path: Path, meta: str, state_sums, done, drift, herm,
                     obs_sum=None, obs_sumsq=None):
    payload = dict(meta=np.array(meta), state_sums=state_sums, done=done,
                   drift=drift, herm=herm)
    if obs_sum is not None:
        payload["obs_sum"] = obs_sum
        payload["obs_sumsq"] = obs_sumsq
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("wb") as fh:
        np.savez_compressed(fh, **payload)
    os.replace(tmp, path)


def _load_checkpoint(path: Path, meta: str):
    """Returns (state_sums, obs_sum, obs_sumsq, done, drift, herm)."""
    with np.load(path, allow_pickle=False) as data:
        if str(data["meta"]) != meta:
            raise ValueError(
                f"checkpoint {path} belongs to a different run configuration")
        obs_sum = data["obs_sum"].copy() if "obs_sum" in data else None
        obs_sumsq = data["obs_sumsq"].copy() if "obs_sumsq" in data else None
        return (data["state_sums"].copy(), obs_sum, obs_sumsq,
                data["done"].copy(), float(data["drift"]),
                float(data["herm"]))
