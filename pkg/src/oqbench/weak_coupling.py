"""Born-Markov Liouvillians: Redfield, global Lindblad, local Lindblad.

All three generators act on column-stacked density matrices in the fixed
computational basis, so their propagators can be compared directly with the
stochastic reference.  Conventions:

* the Redfield dissipator uses only the full Fourier transform of the bath
  correlator (the principal-value frequency shift is dropped, i.e. no
  built-in Lamb shift);
* the global Lindblad is assembled from jump operators grouped by Bohr
  frequency, which keeps populations and coherences mutually consistent and
  remains completely positive when Bohr frequencies coincide;
* the local Lindblad damps qubit 1 at its bare frequency while the coherent
  part keeps the full coupled Hamiltonian.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .bath import BathSpec, noise_power
from .operators import (
    SIGMA_MINUS,
    SIGMA_PLUS,
    SIGMA_X,
    EigenSystem,
    SingleQubit,
    SystemSpec,
    TwoQubit,
    build_hamiltonian,
    commutator_superoperator,
    coupling_operator,
    eigensystem,
    left_multiplier,
    right_multiplier,
)

__all__ = [
    "Liouvillian",
    "DegenerateSpectrumError",
    "redfield_liouvillian",
    "global_lindblad_liouvillian",
    "local_lindblad_liouvillian",
    "liouvillian",
    "liouvillian_with_energies",
    "dissipator",
    "propagator",
    "propagator_sequence",
    "steady_state",
    "steady_state_time",
    "rwa_rates",
]

KINDS = ("redfield", "lindblad_global", "lindblad_local")

# Bohr frequencies closer than this (times omega_ref) are treated as equal
# when grouping jump operators; energy levels this close abort the secular
# construction instead.
DEGENERACY_TOL = 1e-9


class DegenerateSpectrumError(ValueError):
    """Secular construction refused: energy levels coincide within tolerance."""


@dataclass(frozen=True)
class Liouvillian:
    """Generator of a quantum master equation on vectorized states."""

    matrix: np.ndarray
    dim: int
    kind: str

    @property
    def superop_dim(self) -> int:
        return self.dim * self.dim


def dissipator(jump: np.ndarray, rate: float) -> np.ndarray:
    """Lindblad dissipator ``rate * (L . L^+ - {L^+ L, .}/2)`` as a superoperator."""
    ldag_l = jump.conj().T @ jump
    return rate * (np.kron(jump.conj(), jump)
                   - 0.5 * (left_multiplier(ldag_l) + right_multiplier(ldag_l)))


def _rotate_to_computational(l_eig: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    w = np.kron(vectors.conj(), vectors)
    return w @ l_eig @ w.conj().T


def _redfield_matrix(eig: EigenSystem, q: np.ndarray, bath: BathSpec) -> np.ndarray:
    """Redfield generator in the computational basis.

    Built element-wise in the eigenbasis of the Hamiltonian:

        d rho_jk / dt = i w_jk rho_jk - sum_lm R_jklm rho_lm,

    with ``w_jk = E_k - E_j`` and

        R_jklm = 1/2 { d_km sum_n S(w_nl) q_jn q_nl
                     + d_jl sum_n S(-w_mn) q_mn q_nk
                     - [S(w_jl) + S(-w_mk)] q_jl q_mk }.
    """
    n = eig.dim
    v = eig.vectors
    q_eig = v.conj().T @ q @ v
    # s[a, b] = S(E_b - E_a); covers every S(+-w_xy) appearing above.
    s = noise_power(bath, eig.bohr)

    term1 = np.einsum("nl,jn,nl->jl", s, q_eig, q_eig)
    term2 = np.einsum("nm,mn,nk->mk", s, q_eig, q_eig)
    eye = np.eye(n)
    r = 0.5 * (
        np.einsum("jl,km->jklm", term1, eye)
        + np.einsum("mk,jl->jklm", term2, eye)
        - np.einsum("jl,jl,mk->jklm", s, q_eig, q_eig)
        - np.einsum("km,jl,mk->jklm", s, q_eig, q_eig)
    )
    # row (j,k) <-> flat j + n*k under column stacking
    r_mat = r.transpose(1, 0, 3, 2).reshape(n * n, n * n)
    h_eig = np.diag(eig.energies).astype(complex)
    l_eig = -1j * commutator_superoperator(h_eig) - r_mat
    return _rotate_to_computational(l_eig, v)


def _grouped_jump_operators(eig: EigenSystem, q: np.ndarray,
                            tol: float) -> list[tuple[float, np.ndarray]]:
    """Eigenoperators of the coupling, grouped by Bohr frequency.

    Returns ``(omega, A)`` pairs in the computational basis, where ``A``
    collects every matrix element of the coupling whose transition frequency
    matches ``omega`` within ``tol``.  The zero-frequency group carries the
    diagonal (pure-dephasing) part.
    """
    n = eig.dim
    v = eig.vectors
    q_eig = v.conj().T @ q @ v
    cut = 1e-14 * np.abs(q_eig).max()  # drop rotation round-off
    entries = []  # (bohr frequency of the jump, to-state, from-state)
    for to in range(n):
        for frm in range(n):
            if abs(q_eig[to, frm]) <= cut:
                continue
            entries.append((eig.energies[frm] - eig.energies[to], to, frm))
    entries.sort(key=lambda e: e[0])
    groups: list[tuple[float, np.ndarray]] = []
    i = 0
    while i < len(entries):
        j = i
        while j + 1 < len(entries) and entries[j + 1][0] - entries[i][0] <= tol:
            j += 1
        members = entries[i:j + 1]
        omega = float(np.mean([m[0] for m in members]))
        a_eig = np.zeros((n, n), dtype=complex)
        for _, to, frm in members:
            a_eig[to, frm] = q_eig[to, frm]
        groups.append((omega, v @ a_eig @ v.conj().T))
        i = j + 1
    return groups


def _global_lindblad_matrix(eig: EigenSystem, h: np.ndarray, q: np.ndarray,
                            bath: BathSpec) -> np.ndarray:
    tol = DEGENERACY_TOL * bath.omega_ref
    # energies may arrive reordered from a spectrum reparametrization, so
    # compare all pairs rather than adjacent gaps
    gaps = np.abs(eig.energies[:, None] - eig.energies[None, :])
    np.fill_diagonal(gaps, np.inf)
    if gaps.min() < tol:
        i, j = np.unravel_index(int(np.argmin(gaps)), gaps.shape)
        raise DegenerateSpectrumError(
            f"energy levels {min(i, j)} and {max(i, j)} coincide within "
            f"{tol:.1e} (gap {gaps[i, j]:.3e}); the secular construction "
            f"is ill-defined")
    l_mat = -1j * commutator_superoperator(h)
    for omega, a in _grouped_jump_operators(eig, q, tol):
        l_mat = l_mat + dissipator(a, float(noise_power(bath, omega)))
    return l_mat


def redfield_liouvillian(spec: SystemSpec, bath: BathSpec) -> Liouvillian:
    """Redfield generator for ``spec`` coupled to ``bath``."""
    h = build_hamiltonian(spec)
    q = coupling_operator(spec)
    return Liouvillian(matrix=_redfield_matrix(eigensystem(h), q, bath),
                       dim=spec.dim, kind="redfield")


def global_lindblad_liouvillian(spec: SystemSpec, bath: BathSpec) -> Liouvillian:
    """Secular (global) Lindblad generator in the full system eigenbasis."""
    h = build_hamiltonian(spec)
    q = coupling_operator(spec)
    mat = _global_lindblad_matrix(eigensystem(h), h, q, bath)
    return Liouvillian(matrix=mat, dim=spec.dim, kind="lindblad_global")


def local_lindblad_liouvillian(spec: SystemSpec, bath: BathSpec,
                               rwa_coupling: bool = False) -> Liouvillian:
    """Local Lindblad generator: dissipation on qubit 1 at its bare frequency.

    For a single qubit the local and global constructions coincide, so the
    global builder is returned.  ``rwa_coupling=True`` replaces the
    transverse qubit-qubit coupling by its rotating-wave form
    ``(g/2)(s1+ s2- + s1- s2+)`` in the coherent part; the dissipators are
    unaffected.
    """
    if isinstance(spec, SingleQubit):
        lv = global_lindblad_liouvillian(spec, bath)
        return Liouvillian(matrix=lv.matrix, dim=lv.dim, kind="lindblad_local")
    h = build_hamiltonian(spec)
    if rwa_coupling:
        h = (h - 0.5 * spec.g * np.kron(SIGMA_X, SIGMA_X)
             + 0.5 * spec.g * (np.kron(SIGMA_PLUS, SIGMA_MINUS)
                               + np.kron(SIGMA_MINUS, SIGMA_PLUS)))
    return Liouvillian(matrix=_local_lindblad_matrix(h, spec, bath),
                       dim=spec.dim, kind="lindblad_local")


def _local_lindblad_matrix(h: np.ndarray, spec: TwoQubit,
                           bath: BathSpec) -> np.ndarray:
    eye2 = np.eye(2, dtype=complex)
    s1_minus = np.kron(SIGMA_MINUS, eye2)
    s1_plus = np.kron(SIGMA_PLUS, eye2)
    # Down/up rates from the noise power at the bare qubit-1 frequency:
    # kappa (N+1) and kappa N up to the spectral cutoff factor.
    return (-1j * commutator_superoperator(h)
            + dissipator(s1_minus, float(noise_power(bath, spec.omega_1)))
            + dissipator(s1_plus, float(noise_power(bath, -spec.omega_1))))


def liouvillian(kind: str, spec: SystemSpec, bath: BathSpec) -> Liouvillian:
    """Dispatch on ``kind`` in {'redfield', 'lindblad_global', 'lindblad_local'}."""
    if kind == "redfield":
        return redfield_liouvillian(spec, bath)
    if kind == "lindblad_global":
        return global_lindblad_liouvillian(spec, bath)
    if kind == "lindblad_local":
        return local_lindblad_liouvillian(spec, bath)
    raise ValueError(f"unknown Liouvillian kind {kind!r}; expected one of {KINDS}")


def liouvillian_with_energies(kind: str, spec: SystemSpec, bath: BathSpec,
                              energies: np.ndarray) -> Liouvillian:
    """Rebuild a generator with the eigenvalues of H_S replaced.

    Used when the Hamiltonian is reparametrized by an operator that commutes
    with it (same eigenvectors, shifted spectrum): the commutator part and
    every Bohr frequency entering the rates are rebuilt from ``energies``.
    For the local Lindblad only the coherent part changes; qubit 1's bare
    dissipation frequency is a property of the system, not of the spectrum
    reparametrization.
    """
    h = build_hamiltonian(spec)
    q = coupling_operator(spec)
    eig0 = eigensystem(h)
    energies = np.asarray(energies, dtype=float)
    bohr = energies[None, :] - energies[:, None]
    eig = EigenSystem(energies=energies, vectors=eig0.vectors, bohr=bohr)
    h_new = (eig0.vectors @ np.diag(energies).astype(complex)
             @ eig0.vectors.conj().T)
    if kind == "redfield":
        return Liouvillian(matrix=_redfield_matrix(eig, q, bath),
                           dim=spec.dim, kind=kind)
    if kind == "lindblad_global":
        return Liouvillian(matrix=_global_lindblad_matrix(eig, h_new, q, bath),
                           dim=spec.dim, kind=kind)
    if kind == "lindblad_local":
        if isinstance(spec, SingleQubit):
            return Liouvillian(
                matrix=_global_lindblad_matrix(eig, h_new, q, bath),
                dim=spec.dim, kind=kind)
        return Liouvillian(matrix=_local_lindblad_matrix(h_new, spec, bath),
                           dim=spec.dim, kind=kind)
    raise ValueError(f"unknown Liouvillian kind {kind!r}; expected one of {KINDS}")


# condition-number cutoff above which the eigendecomposition route is not
# trusted and the scaling-and-squaring exponential is used instead
_EIG_COND_MAX = 1e8


def propagator(lv: Liouvillian, t: float) -> np.ndarray:
    """Evolution superoperator ``exp(L t)``."""
    if t < 0:
        raise ValueError(f"propagation time must be >= 0, got {t}")
    evals, evecs = np.linalg.eig(lv.matrix)
    cond = np.linalg.cond(evecs)
    if np.isfinite(cond) and cond < _EIG_COND_MAX:
        out = (evecs * np.exp(evals * t)) @ np.linalg.inv(evecs)
    else:
        out = expm(lv.matrix * t)
    if not np.all(np.isfinite(out)):
        raise OverflowError(f"propagator overflow at t={t} (|L| t too large)")
    return out


def propagator_sequence(lv: Liouvillian, times: np.ndarray) -> np.ndarray:
    """Propagators on a time grid, shape ``(n_times, N^2, N^2)``.

    Diagonalizable generators (the generic case) use one eigendecomposition
    for every grid point; otherwise a uniform grid is advanced by repeated
    multiplication with ``exp(L dt)``.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-d array")
    if np.any(times < 0):
        raise ValueError("propagation times must be >= 0")
    evals, evecs = np.linalg.eig(lv.matrix)
    cond = np.linalg.cond(evecs)
    if np.isfinite(cond) and cond < _EIG_COND_MAX:
        inv = np.linalg.inv(evecs)
        phases = np.exp(np.outer(times, evals))  # (nt, N^2)
        out = np.einsum("ab,tb,bc->tac", evecs, phases, inv, optimize=True)
    else:
        dts = np.diff(times)
        if times.size > 2 and not np.allclose(dts, dts[0], rtol=1e-10, atol=0.0):
            out = np.stack([expm(lv.matrix * t) for t in times])
        else:
            step = expm(lv.matrix * (dts[0] if dts.size else 0.0))
            mats = [expm(lv.matrix * times[0])]
            for _ in range(times.size - 1):
                mats.append(step @ mats[-1])
            out = np.stack(mats)
    if not np.all(np.isfinite(out)):
        raise OverflowError("propagator overflow on the requested grid")
    return out


def steady_state(lv: Liouvillian, tol: float = 1e-10) -> np.ndarray:
    """Density matrix spanning the kernel of the generator.

    Raises if the zero mode is not unique within ``tol * ||L||``.
    """
    evals, evecs = np.linalg.eig(lv.matrix)
    scale = max(np.abs(lv.matrix).max(), 1.0)
    near_zero = np.abs(evals.real) < tol * scale
    n_zero = int(np.count_nonzero(near_zero & (np.abs(evals.imag) < tol * scale)))
    if n_zero != 1:
        raise RuntimeError(
            f"expected a unique steady state, found {n_zero} candidate "
            f"eigenvalues within {tol * scale:.1e} of zero")
    idx = int(np.argmin(np.abs(evals)))
    rho = evecs[:, idx].reshape(lv.dim, lv.dim, order="F")
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def steady_state_time(lv: Liouvillian) -> float:
    """Relaxation-time estimate ``-3 / Re(lambda*)``.

    ``lambda*`` is the eigenvalue of largest real part among those strictly
    inside the left half plane; eigenvalues within ``1e-12 ||L||`` of the
    imaginary axis are treated as non-relaxing and excluded.
    """
    evals = np.linalg.eigvals(lv.matrix)
    eps = 1e-12 * max(np.abs(lv.matrix).max(), 1.0)
    decaying = evals[evals.real < -eps]
    if decaying.size == 0:
        raise RuntimeError("generator has no decaying modes; no relaxation time")
    lam = decaying[np.argmax(decaying.real)]
    return float(-3.0 / lam.real)


def rwa_rates(kappa: float, g: float, delta: float = 0.0) -> tuple[complex, complex]:
    """Complex decay rates of the indirectly damped qubit's coherence.

    Roots of ``lambda^2 - (i delta + kappa/2) lambda + g^2/4 = 0``; signals
    decay as ``exp(-lambda t)``.  On resonance this reduces to
    ``kappa/4 +- sqrt(kappa^2/4 - g^2)/2``.  Returned with the larger real
    part first.
    """
    b = 1j * delta + 0.5 * kappa
    disc = np.sqrt(complex(b * b - g * g))
    lam1 = 0.5 * (b + disc)
    lam2 = 0.5 * (b - disc)
    if lam2.real > lam1.real:
        lam1, lam2 = lam2, lam1
    return complex(lam1), complex(lam2)
