"""Superoperator norms, the normalized propagator distance, and CP checks."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .operators import devectorize

__all__ = [
    "DistanceCurve",
    "frobenius_norm",
    "normalize",
    "distance",
    "max_distance",
    "choi_matrix",
    "choi_min_eigenvalue",
    "kraus_operators",
    "channel_from_kraus",
]


def frobenius_norm(a: np.ndarray) -> float:
    """Entry-wise 2-norm, ``sqrt(sum |a_ij|^2)``."""
    return float(np.linalg.norm(a))


def normalize(a: np.ndarray) -> np.ndarray:
    """Scale a superoperator to unit Frobenius norm."""
    norm = frobenius_norm(a)
    if norm == 0.0:
        raise ValueError("cannot normalize a zero superoperator")
    return a / norm


def distance(a: np.ndarray, b: np.ndarray) -> float:
    """Half the Frobenius distance between unit-normalized superoperators.

    Invariant under rescaling either argument by a positive constant and
    bounded by 1 (antipodal points on the unit sphere).
    """
    return 0.5 * frobenius_norm(normalize(a) - normalize(b))


@dataclass
class DistanceCurve:
    """Distance samples Delta(t_k) between two propagator sequences."""

    times: np.ndarray
    values: np.ndarray
    delta_max: float
    argmax_time: float
    metadata: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "delta"])
            for t, d in zip(self.times, self.values):
                writer.writerow([repr(float(t)), repr(float(d))])

    def to_json(self, path) -> None:
        payload = {
            "times": [float(t) for t in self.times],
            "values": [float(v) for v in self.values],
            "delta_max": float(self.delta_max),
            "argmax_time": float(self.argmax_time),
            "metadata": self.metadata,
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def max_distance(times: np.ndarray, seq_a: np.ndarray, seq_b: np.ndarray,
                 metadata: dict | None = None) -> DistanceCurve:
    """Per-point distance and its maximum over a shared time grid.

    ``seq_a`` and ``seq_b`` are stacks of superoperators with shape
    ``(n_times, N^2, N^2)`` evaluated at the same ``times``.
    """
    times = np.asarray(times, dtype=float)
    if seq_a.shape != seq_b.shape or seq_a.shape[0] != times.size:
        raise ValueError(
            f"propagator sequences are not aligned: {seq_a.shape} vs "
            f"{seq_b.shape} on {times.size} times")
    values = np.array([distance(a, b) for a, b in zip(seq_a, seq_b)])
    k = int(np.argmax(values))
    return DistanceCurve(times=times, values=values,
                         delta_max=float(values[k]),
                         argmax_time=float(times[k]),
                         metadata=dict(metadata or {}))


def choi_matrix(t_super: np.ndarray) -> np.ndarray:
    """Choi matrix of a superoperator under the column-stacking convention.

    The reshuffle swaps the outer row index with the inner column index so
    that complete positivity of the channel is equivalent to positive
    semidefiniteness of the result.  The identity channel maps to
    ``N * |Omega><Omega|`` (rank one, trace N).
    """
    n2 = t_super.shape[0]
    n = int(round(np.sqrt(n2)))
    return (t_super.reshape(n, n, n, n).swapaxes(0, 3)
            .reshape(n2, n2))


def choi_min_eigenvalue(t_super: np.ndarray) -> float:
    """Smallest eigenvalue of the Choi matrix; negative witnesses a CP violation."""
    choi = choi_matrix(t_super)
    choi = 0.5 * (choi + choi.conj().T)
    return float(np.linalg.eigvalsh(choi)[0])


def kraus_operators(t_super: np.ndarray, tol: float = 1e-10) -> list[np.ndarray]:
    """Kraus decomposition via the Choi eigendecomposition.

    Only meaningful for (numerically) completely positive maps; eigenvalues
    below ``tol`` in magnitude are dropped, negative ones above it raise.
    """
    choi = choi_matrix(t_super)
    choi = 0.5 * (choi + choi.conj().T)
    evals, evecs = np.linalg.eigh(choi)
    if evals[0] < -tol:
        raise ValueError(
            f"channel is not completely positive (min Choi eigenvalue "
            f"{evals[0]:.3e}); no Kraus form exists")
    ops = []
    for lam, v in zip(evals, evecs.T):
        if lam > tol:
            ops.append(np.sqrt(lam) * devectorize(v))
    return ops


def channel_from_kraus(kraus: list[np.ndarray]) -> np.ndarray:
    """Superoperator ``sum_k kron(conj(K_k), K_k)`` of a Kraus set."""
    n = kraus[0].shape[0]
    out = np.zeros((n * n, n * n), dtype=complex)
    for k in kraus:
        out += np.kron(k.conj(), k)
    return out
