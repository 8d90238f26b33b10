"""Solvers and benchmarking tools for dissipative one- and two-qubit systems.

Four descriptions of the same microscopic model are implemented side by
side: Redfield, global Lindblad, local Lindblad, and a stochastically exact
trajectory ensemble.  Their evolution superoperators are compared through a
normalized Frobenius distance, and the weak-coupling model parameters can be
refit against the exact dynamics by derivative-free minimization.
"""

from .bath import (
    BathSpec,
    LambShiftInputs,
    QuadratureError,
    bath_correlation,
    classical_response,
    lamb_shifted_frequency,
    lamb_shifted_qubit_frequency,
    mu,
    noise_power,
    occupation,
    spectral_density,
)
from .metrics import (
    DistanceCurve,
    channel_from_kraus,
    choi_matrix,
    choi_min_eigenvalue,
    distance,
    frobenius_norm,
    kraus_operators,
    max_distance,
    normalize,
)
from .operators import (
    EigenSystem,
    SingleQubit,
    SystemSpec,
    TwoQubit,
    build_hamiltonian,
    coupling_operator,
    devectorize,
    eigensystem,
    vectorize,
)
from .optimize import (
    FitResult,
    NonFiniteObjectiveError,
    SingleQubitParams,
    TransitionShift,
    TwoQubitParams,
    fit_single_qubit,
    fit_two_qubit,
    powell_minimize,
    transition_shifts,
)
from .sled import (
    EnsembleResult,
    SledDivergenceError,
    SledPropagators,
    TimeGrid,
    generate_noise,
    initial_state_matrix,
    noise_spectrum,
    reconstruct_superoperator,
    run_ensemble,
    sled_step,
    time_grid_for,
)
from .weak_coupling import (
    DegenerateSpectrumError,
    Liouvillian,
    global_lindblad_liouvillian,
    liouvillian,
    local_lindblad_liouvillian,
    propagator,
    propagator_sequence,
    redfield_liouvillian,
    rwa_rates,
    steady_state,
    steady_state_time,
)

__version__ = "0.1.0"
