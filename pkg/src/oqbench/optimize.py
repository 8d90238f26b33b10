"""Derivative-free fitting of weak-coupling model parameters.

The exact (stochastic) reference propagators are computed once and frozen;
the optimizer then minimizes the maximum normalized distance between the
model propagator family and that reference.  Positivity of rates and
temperatures is enforced by an exponential reparametrization so the search
runs over all of R^n with a smooth objective.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .bath import BathSpec
from .metrics import max_distance
from .operators import (
    EigenSystem,
    SingleQubit,
    TwoQubit,
    build_hamiltonian,
    commutator_superoperator,
    eigensystem,
)
from .weak_coupling import (
    DegenerateSpectrumError,
    Liouvillian,
    liouvillian,
    liouvillian_with_energies,
    propagator_sequence,
)

# finite objective value returned where a secular construction is refused
# (above the distance bound of 1, so line searches back away smoothly)
DEGENERATE_PENALTY = 2.0

__all__ = [
    "NonFiniteObjectiveError",
    "OptimizeOutcome",
    "SingleQubitParams",
    "TwoQubitParams",
    "FitResult",
    "powell_minimize",
    "fit_single_qubit",
    "fit_two_qubit",
    "transition_shifts",
]


class NonFiniteObjectiveError(RuntimeError):
    """The objective returned NaN/inf during a line search."""

    def __init__(self, x: np.ndarray, value: float):
        super().__init__(f"objective is not finite at {x} (value {value})")
        self.x = np.asarray(x)
        self.value = value


@dataclass
class OptimizeOutcome:
    """Raw result of one direction-set minimization."""

    x: np.ndarray
    fun: float
    n_iterations: int
    n_evaluations: int
    converged: bool
    x0: np.ndarray


def powell_minimize(func, x0, *, xtol: float = 1e-6, ftol: float = 1e-6,
                    max_iter: int = 200) -> OptimizeOutcome:
    """Powell direction-set minimization without derivatives.

    Cycles of line minimizations along an updated direction set, terminating
    on relative function decrease below ``ftol``, parameter change below
    ``xtol``, or ``max_iter`` cycles (in which case ``converged`` is False).
    A non-finite objective value aborts with the offending parameter vector.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n_evals = 0

    def wrapped(x):
        nonlocal n_evals
        n_evals += 1
        val = float(func(x))
        if not np.isfinite(val):
            raise NonFiniteObjectiveError(x, val)
        return val

    res = minimize(wrapped, x0, method="Powell",
                   options=dict(xtol=xtol, ftol=ftol, maxiter=max_iter,
                                maxfev=10 ** 7))
    return OptimizeOutcome(x=np.atleast_1d(res.x), fun=float(res.fun),
                           n_iterations=int(res.nit), n_evaluations=n_evals,
                           converged=bool(res.success), x0=x0)


@dataclass(frozen=True)
class SingleQubitParams:
    """Model parameters fitted for the single-qubit system."""

    kappa: float
    beta: float
    omega_q: float

    def __post_init__(self):
        if self.kappa < 0 or self.beta <= 0 or self.omega_q <= 0:
            raise ValueError(f"invalid parameters {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.kappa, self.beta, self.omega_q])


@dataclass(frozen=True)
class TwoQubitParams:
    """Rate, temperature, and spectrum-polynomial coefficients.

    The coherent part is reparametrized as ``a1 H + a2 H^2 + a3 H^3``; the
    constant term is fixed to zero (a global phase is unobservable).
    """

    kappa: float
    beta: float
    a1: float
    a2: float
    a3: float

    def __post_init__(self):
        if self.kappa < 0 or self.beta <= 0:
            raise ValueError(f"invalid parameters {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.kappa, self.beta, self.a1, self.a2, self.a3])

    def energies(self, bare: np.ndarray) -> np.ndarray:
        return self.a1 * bare + self.a2 * bare ** 2 + self.a3 * bare ** 3


@dataclass
class FitResult:
    """Best fit plus bookkeeping for every start of a multistart search."""

    params: object
    delta_max_opt: float
    n_iterations: int
    n_evaluations: int
    converged: bool
    start_params: object
    start_delta_max: float
    attempts: list = field(default_factory=list)


def _reference_arrays(reference) -> tuple[np.ndarray, np.ndarray]:
    return np.asarray(reference.times, float), np.asarray(reference.matrices)


def single_qubit_liouvillian(kind: str, params: SingleQubitParams,
                             bath_template: BathSpec, *,
                             shift_rates: bool = True) -> Liouvillian:
    """Model generator at fitted parameters.

    ``shift_rates=False`` moves the fitted frequency only into the coherent
    part, keeping the noise-power arguments at the template's reference
    frequency (exposed for studying where the frequency shift acts).
    """
    bath = bath_template.with_(beta=params.beta,
                               eta=params.kappa / (2.0 * bath_template.omega_ref))
    if shift_rates:
        return liouvillian(kind, SingleQubit(params.omega_q), bath)
    base = liouvillian(kind, SingleQubit(bath_template.omega_ref), bath)
    h_old = build_hamiltonian(SingleQubit(bath_template.omega_ref))
    h_new = build_hamiltonian(SingleQubit(params.omega_q))
    mat = base.matrix + (-1j) * (commutator_superoperator(h_new)
                                 - commutator_superoperator(h_old))
    return Liouvillian(matrix=mat, dim=2, kind=kind)


def fit_single_qubit(reference, start: SingleQubitParams, kind: str,
                     bath_template: BathSpec, *, shift_rates: bool = True,
                     xtol: float = 1e-6, ftol: float = 1e-6,
                     max_iter: int = 200) -> FitResult:
    """Fit (kappa, beta, omega_q) to frozen reference propagators.

    The search runs in log space so all three parameters stay positive and
    line searches never cross invalid regions.
    """
    times, ref = _reference_arrays(reference)
    if start.kappa <= 0:
        raise ValueError("the log-space search needs a strictly positive "
                         "starting kappa")
    start_arr = start.as_array()

    def params_of(x):
        vals = start_arr * np.exp(x)
        return SingleQubitParams(*vals)

    def objective(x):
        try:
            lv = single_qubit_liouvillian(kind, params_of(x), bath_template,
                                          shift_rates=shift_rates)
        except DegenerateSpectrumError:
            return DEGENERATE_PENALTY
        seq = propagator_sequence(lv, times)
        return max_distance(times, seq, ref).delta_max

    f0 = objective(np.zeros(3))
    out = powell_minimize(objective, np.zeros(3), xtol=xtol, ftol=ftol,
                          max_iter=max_iter)
    return FitResult(params=params_of(out.x), delta_max_opt=out.fun,
                     n_iterations=out.n_iterations,
                     n_evaluations=out.n_evaluations, converged=out.converged,
                     start_params=start, start_delta_max=f0)


def two_qubit_liouvillian(kind: str, params: TwoQubitParams, spec: TwoQubit,
                          bath_template: BathSpec) -> Liouvillian:
    """Model generator with the spectrum-polynomial coherent part."""
    bath = bath_template.with_(beta=params.beta,
                               eta=params.kappa / (2.0 * bath_template.omega_ref))
    bare = eigensystem(build_hamiltonian(spec)).energies
    return liouvillian_with_energies(kind, spec, bath, params.energies(bare))


def _perturbed_starts(start: TwoQubitParams, n_starts: int,
                      seed: int) -> list[TwoQubitParams]:
    """Bare start plus random +-10% perturbations (additive for zero terms)."""
    starts = [start]
    rng = np.random.default_rng(seed)
    for _ in range(max(0, n_starts - 1)):
        f = 1.0 + rng.uniform(-0.1, 0.1, size=2)
        da = rng.uniform(-0.1, 0.1, size=3)
        starts.append(TwoQubitParams(
            kappa=start.kappa * f[0], beta=start.beta * f[1],
            a1=start.a1 * (1.0 + da[0]) if start.a1 else da[0],
            a2=start.a2 * (1.0 + da[1]) if start.a2 else 0.1 * da[1],
            a3=start.a3 * (1.0 + da[2]) if start.a3 else 0.1 * da[2]))
    return starts


def fit_two_qubit(reference, start: TwoQubitParams, kind: str,
                  spec: TwoQubit, bath_template: BathSpec, *,
                  n_starts: int = 9, perturbation_seed: int = 0,
                  xtol: float = 1e-6, ftol: float = 1e-6,
                  max_iter: int = 200) -> FitResult:
    """Fit (kappa, beta, a1, a2, a3) against frozen reference propagators.

    Multistart around the bare point guards against the local minima that
    appear at low temperature; every attempt is kept in ``attempts`` and the
    best final value wins.
    """
    times, ref = _reference_arrays(reference)
    if start.kappa <= 0:
        raise ValueError("the log-space search needs a strictly positive "
                         "starting kappa")

    def params_of(x):
        return TwoQubitParams(kappa=start.kappa * np.exp(x[0]),
                              beta=start.beta * np.exp(x[1]),
                              a1=x[2], a2=x[3], a3=x[4])

    def x_of(p: TwoQubitParams):
        return np.array([np.log(p.kappa / start.kappa),
                         np.log(p.beta / start.beta), p.a1, p.a2, p.a3])

    def objective(x):
        try:
            lv = two_qubit_liouvillian(kind, params_of(x), spec, bath_template)
        except DegenerateSpectrumError:
            return DEGENERATE_PENALTY
        seq = propagator_sequence(lv, times)
        return max_distance(times, seq, ref).delta_max

    f0 = objective(x_of(start))
    attempts = []
    best = None
    for s in _perturbed_starts(start, n_starts, perturbation_seed):
        out = powell_minimize(objective, x_of(s), xtol=xtol, ftol=ftol,
                              max_iter=max_iter)
        attempts.append((s, params_of(out.x), out.fun, out.converged))
        if best is None or out.fun < best[1].fun:
            best = (s, out)
    s_best, out = best
    return FitResult(params=params_of(out.x), delta_max_opt=out.fun,
                     n_iterations=out.n_iterations,
                     n_evaluations=out.n_evaluations, converged=out.converged,
                     start_params=start, start_delta_max=f0, attempts=attempts)


@dataclass(frozen=True)
class TransitionShift:
    """Fitted corrections to adjacent transition frequencies.

    ``values[j]`` is the shift of the ``j -> j+1`` transition; other
    transitions are combinations of the adjacent ones.
    """

    level_pairs: list
    values: np.ndarray


def transition_shifts(params: TwoQubitParams, eig: EigenSystem) -> TransitionShift:
    """Difference between reparametrized and bare adjacent transitions.

    With fitted energies ``E' = a1 E + a2 E^2 + a3 E^3`` the shift of the
    ``j -> j+1`` transition is ``(E'_{j+1} - E'_j) - (E_{j+1} - E_j)``,
    linear in ``(a1 - 1, a2, a3)``.
    """
    bare = eig.energies
    fitted = params.energies(bare)
    values = np.diff(fitted) - np.diff(bare)
    pairs = [(j, j + 1) for j in range(bare.size - 1)]
    return TransitionShift(level_pairs=pairs, values=values)
