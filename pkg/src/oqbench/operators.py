"""Hilbert-space construction for one- and two-qubit systems.

Everything downstream (master-equation builders, the stochastic solver,
distance metrics) shares the conventions fixed here:

* natural units, ``hbar = k_B = 1``; frequencies and rates are quoted in
  units of the reference qubit frequency;
* basis ordering ``{|g>, |e>}`` for a single qubit and
  ``{|gg>, |ge>, |eg>, |ee>}`` (qubit 1 slowest index) for two qubits;
* column-stacking vectorization, ``vec(rho)[i + N*j] = rho[i, j]``, so that
  ``vec(A rho B) = kron(B.T, A) @ vec(rho)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "SIGMA_X",
    "SIGMA_Y",
    "SIGMA_Z",
    "SIGMA_PLUS",
    "SIGMA_MINUS",
    "SingleQubit",
    "TwoQubit",
    "SystemSpec",
    "EigenSystem",
    "build_hamiltonian",
    "coupling_operator",
    "eigensystem",
    "vectorize",
    "devectorize",
    "left_multiplier",
    "right_multiplier",
    "commutator_superoperator",
    "anticommutator_superoperator",
    "assert_hermitian",
]

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
# Basis order is {|g>, |e>} with index 0 = ground, so the raising operator
# |e><g| sits below the diagonal.
SIGMA_PLUS = np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex)
SIGMA_MINUS = SIGMA_PLUS.conj().T
_NUMBER = SIGMA_PLUS @ SIGMA_MINUS  # |e><e|
_ID2 = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class SingleQubit:
    """A single qubit of angular frequency ``omega_q`` coupled through sigma_x."""

    omega_q: float

    def __post_init__(self):
        if not self.omega_q > 0:
            raise ValueError(f"omega_q must be positive, got {self.omega_q}")

    @property
    def dim(self) -> int:
        return 2


@dataclass(frozen=True)
class TwoQubit:
    """Two exchange-coupled qubits; only qubit 1 talks to the bath.

    ``g`` multiplies the transverse coupling ``(g/2) sigma_1^x sigma_2^x``.
    """

    omega_1: float
    omega_2: float
    g: float

    def __post_init__(self):
        if not (self.omega_1 > 0 and self.omega_2 > 0):
            raise ValueError("qubit frequencies must be positive")
        if self.g < 0:
            raise ValueError(f"qubit-qubit coupling must be >= 0, got {self.g}")

    @property
    def dim(self) -> int:
        return 4


SystemSpec = Union[SingleQubit, TwoQubit]


@dataclass(frozen=True)
class EigenSystem:
    """Eigendecomposition of a system Hamiltonian.

    Attributes
    ----------
    energies : ndarray, shape (N,)
        Ascending eigenvalues.
    vectors : ndarray, shape (N, N)
        Unitary matrix whose columns are the eigenvectors, with the phase of
        each column fixed so its largest-magnitude component is real positive.
    bohr : ndarray, shape (N, N)
        Transition frequencies ``bohr[n, m] = energies[m] - energies[n]``.
    """

    energies: np.ndarray
    vectors: np.ndarray
    bohr: np.ndarray

    @property
    def dim(self) -> int:
        return self.energies.size


def assert_hermitian(op: np.ndarray, rtol: float = 1e-12, name: str = "operator"):
    """Raise ValueError if ``op`` is not Hermitian to relative tolerance."""
    scale = max(np.abs(op).max(), 1.0)
    defect = np.abs(op - op.conj().T).max()
    if defect > rtol * scale:
        raise ValueError(f"{name} is not Hermitian (defect {defect:.3e})")


def build_hamiltonian(spec: SystemSpec) -> np.ndarray:
    """Assemble the system Hamiltonian for ``spec`` in the computational basis.

    Single qubit: ``omega_q |e><e|`` -> ``diag(0, omega_q)``.
    Two qubits: ``omega_1 n_1 + omega_2 n_2 + (g/2) sigma_1^x sigma_2^x``.
    """
    if isinstance(spec, SingleQubit):
        return np.diag([0.0, spec.omega_q]).astype(complex)
    h = (
        spec.omega_1 * np.kron(_NUMBER, _ID2)
        + spec.omega_2 * np.kron(_ID2, _NUMBER)
        + 0.5 * spec.g * np.kron(SIGMA_X, SIGMA_X)
    )
    return h


def coupling_operator(spec: SystemSpec) -> np.ndarray:
    """Bath coupling operator: sigma^x for one qubit, sigma_1^x (x) I for two."""
    if isinstance(spec, SingleQubit):
        return SIGMA_X.copy()
    return np.kron(SIGMA_X, _ID2)


def eigensystem(h: np.ndarray, rtol: float = 1e-12) -> EigenSystem:
    """Diagonalize a Hermitian operator with a reproducible phase convention.

    Each eigenvector is rescaled by a pure phase so that its component of
    largest magnitude is real and positive.  This makes superoperators built
    in the eigenbasis identical across runs and BLAS builds.
    """
    assert_hermitian(h, rtol=rtol, name="Hamiltonian")
    energies, vectors = np.linalg.eigh(h)
    vectors = vectors.astype(complex).copy()
    for k in range(energies.size):
        col = vectors[:, k]
        pivot = col[np.argmax(np.abs(col))]
        vectors[:, k] = col * (abs(pivot) / pivot)
    bohr = energies[None, :] - energies[:, None]
    return EigenSystem(energies=energies, vectors=vectors, bohr=bohr)


def vectorize(rho: np.ndarray) -> np.ndarray:
    """Column-stack a matrix into a length-N^2 vector."""
    return np.ravel(rho, order="F")


def devectorize(vec: np.ndarray) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    n = int(round(np.sqrt(vec.size)))
    if n * n != vec.size:
        raise ValueError(f"vector length {vec.size} is not a perfect square")
    return vec.reshape((n, n), order="F")


def left_multiplier(a: np.ndarray) -> np.ndarray:
    """Superoperator of ``rho -> a @ rho``."""
    return np.kron(np.eye(a.shape[0], dtype=complex), a)


def right_multiplier(a: np.ndarray) -> np.ndarray:
    """Superoperator of ``rho -> rho @ a``."""
    return np.kron(a.T, np.eye(a.shape[0], dtype=complex))


def commutator_superoperator(a: np.ndarray) -> np.ndarray:
    """Superoperator of ``rho -> [a, rho]``."""
    return left_multiplier(a) - right_multiplier(a)


def anticommutator_superoperator(a: np.ndarray) -> np.ndarray:
    """Superoperator of ``rho -> {a, rho}``."""
    return left_multiplier(a) + right_multiplier(a)
