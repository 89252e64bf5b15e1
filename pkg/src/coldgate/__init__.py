"""Collisional two-qubit phase gates in state-dependent 1D microtraps.

Desk-scale toolkit in trap units (hbar = m = 1, omega_ref = 1): split-step
Schrodinger propagation of one and two interacting atoms, microwave dressed
state-selective potentials, Krotov optimal control of gate and transport
schedules, and Bose-Hubbard ground-state scans.
"""

from .errors import (
    BoundaryContaminationError,
    BracketError,
    ColdgateError,
    ConvergenceError,
    DomainError,
    GridMismatchError,
    StabilityError,
    TruncationError,
    ValidityError,
)
from .grids import (
    EigenPair,
    Grid1D,
    TimeGrid,
    WaveFn1P,
    WaveFn2P,
    gaussian_packet,
    make_grid,
    overlap,
    product_state,
    stationary_states,
)
from .dynamics import (
    ContactCoupling,
    PropagationResult,
    TimeDriven,
    g1d_from_transverse,
    ground_state_2p,
    propagate_1p,
    propagate_2p,
)
from .optcontrol import (
    ControlChannel,
    ControlSet,
    Grid1PSystem,
    MatrixSystem,
    OptimizationTrace,
    backward_propagate,
    discrete_gradient,
    eta_profile,
    forward_trajectory,
    krotov_optimize,
    write_controls_csv,
    write_trace_csv,
)

__version__ = "0.1.0"
