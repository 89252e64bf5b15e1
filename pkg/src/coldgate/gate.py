"""Collisional two-qubit phase gates in state-dependent 1D microtraps.

A gate run propagates the four logical branches |00>, |01>, |10>, |11>
of two atoms held one per well in a double-well trap.  Each qubit state
k sees its own potential V_k(x, t), and atoms in states (k, l) interact
through a contact term g_kl delta(x1 - x2).  The conditional phase is
read off the full return amplitudes w_kl = <Psi_kl(0)|Psi_kl(tau_g)>,

    phi_g = phi_11 - phi_01 - phi_10 + phi_00   (mod 2 pi),

which is invariant under any state-independent energy offset and under
single-qubit phases, so it is exactly the entangling phase the gate
produces.  Fidelities are F_kl = |w_kl|^2, the motional return
probability of each branch, and the scalar figure of merit combines the
worst branch with the phase error:

    F_total = min_kl F_kl * cos^2((phi_g - phi_target) / 2).

Three protocols are implemented.  SuddenHarmonic switches the |1> atoms
from separated wells into one common harmonic well at t = 0 and lets
them oscillate through each other for n full periods.  The merged
frequency must divide the initial one so every branch rephases at
tau_g.  MicrowaveControlled morphs the potentials continuously,
V_k = u_c + lambda(t) u_k with a shared ramp lambda in [0, 1] that
starts and ends at zero; the ramp is the control the optimizer in
optcontrol shapes.  SwapThreeStep is the motional-state variant: ideal
Raman pulses map the qubit onto the two lowest vibrational doublets of
a static double well, the excited-band tunneling tails overlap under
the barrier and the |11> branch alone collects collisional phase, and
the inverse pulses map back.

Two-particle branches with both atoms in the same internal state are
bosonic symmetrized; mixed branches are distinguishable products (the
orthogonal internal states carry the exchange label), which is what
makes the |11> interaction energy twice the mixed one for the same
density overlap.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy.optimize import brentq
from scipy.signal import find_peaks, medfilt

from .dynamics import (
    Stepper1P,
    TimeDriven,
    g1d_from_transverse,
    position_expectation,
    propagate_2p,
    _static_samples,
)
from .errors import (
    BracketError,
    ColdgateError,
    ConvergenceError,
    DomainError,
    TruncationError,
    ValidityError,
)
from .grids import (
    Grid1D,
    TimeGrid,
    WaveFn1P,
    WaveFn2P,
    product_state,
    stationary_states,
)
from .potentials import Harmonic, SplitHarmonicPair

BRANCHES = ("00", "01", "10", "11")

# Edge-amplitude guard for non-interacting gate branches.  Branch initial
# states come from the dense eigensolver, whose far-field components sit at
# a noise floor around 1e-11; the split-step propagator transports and
# transiently refocuses that noise, and over a full gate the box-edge
# amplitude saturates near 1e-6 even when nothing physical moves (measured
# on a revival run; the true wavefunction tail there is below 1e-11).  One
# order above that ceiling still catches real escape, which climbs through
# 1e-3, while noise at 1e-5 amplitude biases fidelities by less than 1e-9.
# Interacting branches keep the looser contact default from dynamics.
GATE_BOUNDARY_TOL = 1e-5

# Normalized Boltzmann weight above which the highest thermal level is
# considered truncated too early.
THERMAL_TAIL_TOL = 1e-4


def wrap_phase(phi: float) -> float:
    """Map a phase to the branch (-pi, pi]; -pi is reported as +pi."""
    return float(math.pi - (math.pi - float(phi)) % (2.0 * math.pi))


def phase_distance(a: float, b: float) -> float:
    """Distance between two phases on the circle, in [0, pi]."""
    return abs(wrap_phase(float(a) - float(b)))


def compose_fidelity(fidelities, phi_g: float, phi_target: float) -> float:
    """F_total = min_kl F_kl * cos^2((phi_g - phi_target) / 2).

    The cosine factor is automatically 2 pi periodic, so phi_g may be
    passed wrapped or unwrapped.
    """
    if isinstance(fidelities, dict):
        values = list(fidelities.values())
    else:
        values = list(fidelities)
    if not values:
        raise DomainError("compose_fidelity needs at least one branch fidelity")
    worst = min(float(f) for f in values)
    return worst * math.cos(0.5 * (float(phi_g) - float(phi_target))) ** 2


def kinematic_transverse_phase(n_osc: int, omega_perp: float, omega: float) -> float:
    """Transverse zero-point phase over n full axial periods, 2 n pi w_perp / w.

    The transverse ground-state energy omega_perp (two directions at
    omega_perp / 2 each) runs for tau_g = 2 pi n / omega.  It is common
    to all four branches, so it cancels from phi_g; the helper exists
    for bookkeeping against lab conventions that track absolute phases.
    """
    if omega <= 0:
        raise DomainError(f"omega must be positive, got {omega}")
    return 2.0 * n_osc * math.pi * omega_perp / omega


def transverse_phase_in_pi(n_osc: int, omega_perp: float, omega: float) -> Fraction:
    """kinematic_transverse_phase / pi as an exact Fraction of the inputs."""
    if omega <= 0:
        raise DomainError(f"omega must be positive, got {omega}")
    return Fraction(2 * n_osc) * Fraction(omega_perp) / Fraction(omega)


# ---------------------------------------------------------------------------
# coupling table


@dataclass(frozen=True)
class CouplingTable:
    """Contact couplings g_kl per internal-state pair, symmetric in (k, l)."""

    g00: float
    g01: float
    g11: float

    def __post_init__(self):
        for name in ("g00", "g01", "g11"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0.0:
                raise DomainError(f"{name} must be finite and >= 0, got {value}")

    @classmethod
    def uniform(cls, g: float) -> "CouplingTable":
        return cls(g, g, g)

    @classmethod
    def from_scattering(cls, omega_perp: float, a00: float, a01: float,
                        a11: float) -> "CouplingTable":
        """1D couplings 2 omega_perp a_kl from transverse confinement."""
        return cls(
            g1d_from_transverse(omega_perp, a00).g,
            g1d_from_transverse(omega_perp, a01).g,
            g1d_from_transverse(omega_perp, a11).g,
        )

    def get(self, k: int, l: int) -> float:
        if k not in (0, 1) or l not in (0, 1):
            raise DomainError(f"qubit states must be 0 or 1, got ({k}, {l})")
        if k == l:
            return self.g00 if k == 0 else self.g11
        return self.g01

    def scaled(self, s: float) -> "CouplingTable":
        if not math.isfinite(s) or s < 0.0:
            raise DomainError(f"coupling scale must be finite and >= 0, got {s}")
        return CouplingTable(s * self.g00, s * self.g01, s * self.g11)

    def max_entry(self) -> float:
        return max(self.g00, self.g01, self.g11)


# ---------------------------------------------------------------------------
# localized well states


def localized_pair(potential, grid: Grid1D, band: int = 0):
    """Left/right localized states of vibrational doublet `band`.

    Diagonalizes the position operator inside the two-dimensional doublet
    subspace, which stays well defined even when the tunneling splitting
    is below the eigensolver's degeneracy resolution.  Returns
    (left, right, e_mean, splitting) with <x>_left < 0 < <x>_right.
    """
    if band < 0:
        raise DomainError(f"band index must be >= 0, got {band}")
    states = stationary_states(potential, grid, 2 * band + 2)
    lo, hi = states[2 * band], states[2 * band + 1]
    a, b = lo.state.amps, hi.state.amps
    x = grid.x
    dx = grid.dx
    xmat = np.empty((2, 2))
    xmat[0, 0] = np.real(np.sum(np.conj(a) * x * a)) * dx
    xmat[1, 1] = np.real(np.sum(np.conj(b) * x * b)) * dx
    xmat[0, 1] = xmat[1, 0] = np.real(np.sum(np.conj(a) * x * b)) * dx
    vals, vecs = np.linalg.eigh(xmat)
    pair = []
    for j in range(2):
        amps = vecs[0, j] * a + vecs[1, j] * b
        k = int(np.argmax(np.abs(amps)))
        if amps[k].real < 0:
            amps = -amps
        pair.append(WaveFn1P(grid, amps).normalized())
    left, right = pair  # eigh sorts <x> ascending
    x_l = position_expectation(left)
    x_r = position_expectation(right)
    if not x_l < 0.0 < x_r:
        raise ValidityError(
            f"band {band} does not form a left/right localized pair "
            f"(<x> = {x_l:.3g}, {x_r:.3g})"
        )
    e_mean = 0.5 * (lo.energy + hi.energy)
    splitting = hi.energy - lo.energy
    return left, right, e_mean, splitting


def _piecewise_from_samples(tg: TimeGrid, values):
    """Piecewise-constant control of t; values live on the step midpoints."""
    vals = np.asarray(values, dtype=float)
    if vals.shape != (tg.n_steps,):
        raise DomainError(
            f"control samples shape {vals.shape} does not match ({tg.n_steps},)"
        )
    t0 = tg.t_start
    dt = tg.dt
    n = tg.n_steps

    def value_at(t):
        i = int(math.floor((t - t0) / dt))
        if i < 0:
            i = 0
        elif i >= n:
            i = n - 1
        return vals[i]

    return value_at


# ---------------------------------------------------------------------------
# protocols


@dataclass(frozen=True)
class SuddenHarmonic:
    """Sudden merge of the |1> wells into one harmonic well for n periods.

    At t < 0 both atoms sit in mirror wells of frequency omega0 centered
    at +-half_separation.  At t = 0 the |1> potential becomes the single
    well omega**2 x**2 / 2 and the |0> potential stays put, so |1> atoms
    oscillate through the trap center and collide once per half period.
    tau_g = 2 pi n_osc / omega; omega must divide omega0 so the untouched
    |0> branches rephase at tau_g too.
    """

    omega0: float
    omega: float
    n_osc: int
    half_separation: float
    couplings: CouplingTable
    grid: Grid1D
    n_steps: int
    omega_perp: float = 0.0

    def __post_init__(self):
        if self.omega0 <= 0 or self.omega <= 0:
            raise DomainError("omega0 and omega must be positive")
        ratio = self.omega0 / self.omega
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise DomainError(
                f"omega must be omega0 / j for integer j >= 1, got ratio {ratio!r}"
            )
        if self.n_osc < 1 or self.n_osc != int(self.n_osc):
            raise DomainError(f"n_osc must be a positive integer, got {self.n_osc}")
        if self.half_separation <= 0:
            raise DomainError("half_separation must be positive")
        if self.n_steps < 1:
            raise DomainError("n_steps must be >= 1")
        if self.omega_perp < 0:
            raise DomainError("omega_perp must be >= 0")

    @property
    def tau_g(self) -> float:
        return 2.0 * math.pi * self.n_osc / self.omega

    def time_grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.tau_g, self.n_steps)

    def initial_potential(self):
        return SplitHarmonicPair(self.omega0, self.half_separation)

    def potential_for(self, state: int):
        if state not in (0, 1):
            raise DomainError(f"qubit state must be 0 or 1, got {state}")
        if state == 0:
            return self.initial_potential()
        return Harmonic(self.omega)


@dataclass(frozen=True)
class MicrowaveControlled:
    """State-selective gate V_k(x, t) = u_c(x) + lambda(t) u_k(x).

    u_c is the common double well holding one atom per site; u_0 and u_1
    are the microwave-dressed differences for the two qubit states.  The
    shared ramp lambda(t) is the single control channel (named "lambda",
    bounded in [0, 1], endpoints pinned at zero so the gate starts and
    ends in the storage trap).  Control samples live on the step
    midpoints of the channel's time grid and are held constant across
    each step, matching the propagator's sampling rule.
    """

    u_c: object
    u_0: object
    u_1: object
    couplings: CouplingTable
    grid: Grid1D
    controls: object

    def __post_init__(self):
        channels = getattr(self.controls, "channels", None)
        if not channels or len(channels) != 1 or channels[0].name != "lambda":
            raise DomainError(
                "controls must hold exactly one channel named 'lambda'"
            )
        lam = channels[0]
        if lam.lower < 0.0 or lam.upper > 1.0:
            raise DomainError(
                f"lambda bounds must lie within [0, 1], got [{lam.lower}, {lam.upper}]"
            )
        if lam.samples[0] != 0.0 or lam.samples[-1] != 0.0:
            raise DomainError("lambda must start and end at zero")
        if not lam.pinned:
            raise DomainError("the lambda channel endpoints must be pinned")

    @property
    def tau_g(self) -> float:
        tg = self.controls.tg
        return tg.t_end - tg.t_start

    def time_grid(self) -> TimeGrid:
        return self.controls.tg

    def initial_potential(self):
        return self.u_c

    def lambda_of_t(self):
        return _piecewise_from_samples(self.controls.tg, self.controls.channels[0].samples)


@dataclass(frozen=True)
class SwapThreeStep:
    """Motional-state gate: swap in, hold under the barrier, swap back.

    Step 1 maps |0> -> ground and |1> -> first excited vibrational state
    of each well with ideal (instantaneous, lossless) Raman pulses; the
    two atoms then share one internal state and a single coupling g00.
    Step 2 holds for `duration` under the double well, whose barrier is
    low enough that the excited-band tails overlap at the center while
    the ground band stays locked.  Step 3 is the inverse mapping.  An
    optional barrier_schedule(t) -> potential replaces the static well
    during step 2.
    """

    double_well: object
    couplings: CouplingTable
    grid: Grid1D
    duration: float
    n_steps: int
    barrier_schedule: object = None

    def __post_init__(self):
        if self.duration <= 0:
            raise DomainError("duration must be positive")
        if self.n_steps < 1:
            raise DomainError("n_steps must be >= 1")

    def time_grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.duration, self.n_steps)

    def initial_potential(self):
        return self.double_well

    def step2_potential(self):
        if self.barrier_schedule is None:
            return self.double_well
        return TimeDriven(self.barrier_schedule)


# ---------------------------------------------------------------------------
# report


@dataclass
class GateReport:
    """Phases, fidelities, and traces of one four-branch gate run.

    phi_branch holds the unwrapped final phase of each branch.  phi_g is
    the conditional phase in (-pi, pi], computed from the product of the
    final branch amplitudes and therefore free of unwrapping artifacts.
    phi_g_raw is the endpoint of the accumulated phi_g(t) trace; it
    agrees with phi_g mod 2 pi but can carry extra 2 pi windings picked
    up where a branch overlap passes close to zero, so treat it as a
    diagnostic, not as the gate phase.  f_traces are the return
    probabilities |<Psi_kl(0)|Psi_kl(t)>|^2 on the time-grid nodes, so
    every trace starts at exactly 1.
    """

    phi_branch: dict
    phi_g: float
    phi_g_raw: float
    phi_target: float
    fidelities: dict
    f_total: float
    times: np.ndarray
    f_traces: dict
    phi_g_trace: np.ndarray
    finals: dict
    extras: dict = field(default_factory=dict)

    @property
    def phi_00(self) -> float:
        return self.phi_branch["00"]

    @property
    def phi_01(self) -> float:
        return self.phi_branch["01"]

    @property
    def phi_10(self) -> float:
        return self.phi_branch["10"]

    @property
    def phi_11(self) -> float:
        return self.phi_branch["11"]

    def collision_steps(self, prominence: float = 0.25) -> int:
        return count_collision_steps(self.times, self.phi_g_trace,
                                     prominence=prominence)

    def to_json_dict(self) -> dict:
        return {
            "phi_00": float(self.phi_00),
            "phi_01": float(self.phi_01),
            "phi_10": float(self.phi_10),
            "phi_11": float(self.phi_11),
            "phi_g": float(self.phi_g),
            "phi_g_raw": float(self.phi_g_raw),
            "phi_target": float(self.phi_target),
            "fidelities": {k: float(v) for k, v in self.fidelities.items()},
            "f_total": float(self.f_total),
            "n_steps": int(len(self.times) - 1),
            "t_end": float(self.times[-1]),
            "extras": _json_safe(self.extras),
        }


def _json_safe(value):
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_json_safe(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        return float(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if value is None or isinstance(value, (str, bool)):
        return value
    return repr(value)


def write_gate_json(report: GateReport, path):
    with open(path, "w", newline="") as fh:
        json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_gate_csv(report: GateReport, path):
    """Branch fidelity and phase traces: t, F00, F01, F10, F11, phi_g."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "F00", "F01", "F10", "F11", "phi_g"])
        for i in range(len(report.times)):
            row = [repr(float(report.times[i]))]
            row += [repr(float(report.f_traces[lab][i])) for lab in BRANCHES]
            row.append(repr(float(report.phi_g_trace[i])))
            writer.writerow(row)


def count_collision_steps(times, phi_g_trace, *, prominence: float = 0.25) -> int:
    """Number of collisional steps in phi_g(t): local maxima of |dphi_g/dt|.

    Each pass of the oscillating atoms through each other advances the
    conditional phase in a burst; counting prominent extrema of the rate
    counts the collisions.  `prominence` is relative to the peak rate.
    A width-5 median filter removes single-point rate spikes, which the
    unwrapped trace can carry where a branch overlap grazes zero, while
    leaving the many-step-wide collisional bursts untouched.
    """
    phi = np.asarray(phi_g_trace, dtype=float)
    t = np.asarray(times, dtype=float)
    if phi.shape != t.shape or phi.size < 3:
        raise DomainError("need matching times and phi_g arrays with >= 3 points")
    rate = np.gradient(phi, t)
    direction = -1.0 if phi[-1] < phi[0] else 1.0
    rate *= direction
    if rate.size >= 5:
        rate = medfilt(rate, 5)
    top = float(rate.max())
    if not np.isfinite(top) or top <= 0.0:
        return 0
    peaks, _ = find_peaks(rate, prominence=prominence * top)
    return int(peaks.size)


# ---------------------------------------------------------------------------
# branch construction and the gate runner


def _initial_pair(protocol, band: int = 0):
    return localized_pair(protocol.initial_potential(), protocol.grid, band)


def _branch_specs(protocol, band: int = 0):
    """(label, psi0, v_a, v_b, g) for the four logical branches.

    Atom A (coordinate x1) starts in the left well, atom B in the right;
    branch kl puts A in qubit state k and B in state l.  Equal-state
    branches are bosonic symmetrized; mixed branches are distinguishable
    products because the internal states are orthogonal.
    """
    left, right, _, _ = _initial_pair(protocol, band)
    if isinstance(protocol, SuddenHarmonic):
        pots = {0: protocol.potential_for(0), 1: protocol.potential_for(1)}
    elif isinstance(protocol, MicrowaveControlled):
        grid = protocol.grid
        uc = _static_samples(protocol.u_c, grid)
        diffs = {
            0: _static_samples(protocol.u_0, grid),
            1: _static_samples(protocol.u_1, grid),
        }
        lam = protocol.lambda_of_t()

        def driven(state):
            u_k = diffs[state]

            def at_time(t, _u=u_k):
                return uc + lam(t) * _u

            return TimeDriven(at_time)

        pots = {0: driven(0), 1: driven(1)}
    else:
        raise DomainError(
            f"unsupported protocol type {type(protocol).__name__}"
        )
    specs = []
    for label in BRANCHES:
        k, l = int(label[0]), int(label[1])
        psi0 = product_state(left, right, symmetrize=(k == l))
        specs.append((label, psi0, pots[k], pots[l], protocol.couplings.get(k, l)))
    return specs


def _run_branches(specs, tg: TimeGrid, phi_target: float, boundary_tol,
                  extras: dict) -> GateReport:
    f_traces = {}
    phi_traces = {}
    finals = {}
    finals_w = {}
    for label, psi0, v_a, v_b, g in specs:
        tol = boundary_tol
        if tol is None and g == 0.0:
            tol = GATE_BOUNDARY_TOL
        try:
            result = propagate_2p(psi0, v_a, v_b, g, tg, record_energy=False,
                                  record_overlap=True, boundary_tol=tol)
        except ColdgateError as exc:
            exc.args = (f"{exc.args[0]} (branch |{label}>)",) + tuple(exc.args[1:])
            raise
        f_traces[label] = np.abs(result.overlaps) ** 2
        phi_traces[label] = np.unwrap(np.angle(result.overlaps))
        finals[label] = result.final
        finals_w[label] = complex(result.overlaps[-1])
    phi_g_trace = (phi_traces["11"] - phi_traces["01"]
                   - phi_traces["10"] + phi_traces["00"])
    phi_branch = {lab: float(phi_traces[lab][-1]) for lab in BRANCHES}
    fidelities = {lab: float(f_traces[lab][-1]) for lab in BRANCHES}
    phi_g_raw = float(phi_g_trace[-1])
    # The scalar phi_g comes from the product of final amplitudes, not from
    # the unwrapped traces: unwrapping through near-zero overlaps can pick
    # up spurious 2 pi windings, while the product is winding-free.
    w_prod = (finals_w["11"] * np.conj(finals_w["01"])
              * np.conj(finals_w["10"]) * finals_w["00"])
    return GateReport(
        phi_branch=phi_branch,
        phi_g=wrap_phase(float(np.angle(w_prod))),
        phi_g_raw=phi_g_raw,
        phi_target=float(phi_target),
        fidelities=fidelities,
        f_total=compose_fidelity(fidelities, phi_g_raw, phi_target),
        times=tg.times.copy(),
        f_traces=f_traces,
        phi_g_trace=phi_g_trace,
        finals=finals,
        extras=extras,
    )


def run_gate(protocol, *, phi_target: float = math.pi, boundary_tol=None,
             band: int = 0) -> GateReport:
    """Propagate the four logical branches and compose the gate report.

    `band` selects the vibrational doublet the atoms start in (0 is the
    ground pair; higher bands feed the thermal average).
    """
    specs = _branch_specs(protocol, band)
    tg = protocol.time_grid()
    extras = {"protocol": type(protocol).__name__, "band": band,
              "tau_g": tg.t_end - tg.t_start}
    if isinstance(protocol, SuddenHarmonic):
        extras["phi_transverse"] = kinematic_transverse_phase(
            protocol.n_osc, protocol.omega_perp, protocol.omega)
    return _run_branches(specs, tg, phi_target, boundary_tol, extras)


# ---------------------------------------------------------------------------
# swap gate


def swap_band_structure(protocol: SwapThreeStep):
    """Four lowest eigenstates and the barrier top; validates two doublets.

    Raises ValidityError when the well does not bind two vibrational
    doublets below the barrier, i.e. fewer than two bound states per well.
    """
    states = stationary_states(protocol.double_well, protocol.grid, 4)
    barrier_top = float(np.asarray(protocol.double_well(np.array([0.0])))[0])
    if states[3].energy >= barrier_top:
        raise ValidityError(
            f"double well binds fewer than 2 states per well: level 3 at "
            f"E = {states[3].energy:.6g} is above the barrier top {barrier_top:.6g}"
        )
    return states, barrier_top


def raman_swap_in(protocol: SwapThreeStep):
    """Step 1: ideal Raman map of the storage branches onto motional states.

    |0> -> ground band, |1> -> excited band, one atom per well; both
    atoms end in the same internal state, so every branch is bosonic
    symmetrized.  Step 3 is the formal inverse, a pure relabeling that
    carries the accumulated motional phases back onto the qubit.
    """
    swap_band_structure(protocol)
    g_left, g_right, _, _ = localized_pair(protocol.double_well, protocol.grid, 0)
    e_left, e_right, _, _ = localized_pair(protocol.double_well, protocol.grid, 1)
    orbitals = {"0": (g_left, g_right), "1": (e_left, e_right)}
    states = {}
    for label in BRANCHES:
        a = orbitals[label[0]][0]
        b = orbitals[label[1]][1]
        states[label] = product_state(a, b, symmetrize=True)
    return states


def swap_exposures(protocol: SwapThreeStep) -> dict:
    """Time-integrated density overlaps per branch, first order in g.

    X_kl = integral dt integral dx rho_a rho_b for the two orbitals of
    branch kl, each evolved independently (one-particle propagation, no
    interaction).  The first-order collisional phase of a symmetrized
    branch is -2 g X, so X_gg and X_ge quantify how well the geometry
    confines the phase to |11>.
    """
    grid = protocol.grid
    tg = protocol.time_grid()
    g_left, g_right, _, _ = localized_pair(protocol.double_well, grid, 0)
    e_left, e_right, _, _ = localized_pair(protocol.double_well, grid, 1)
    amps = [w.amps.copy() for w in (g_left, g_right, e_left, e_right)]
    pairs = {"00": (0, 1), "01": (0, 3), "10": (2, 1), "11": (2, 3)}
    potential = protocol.step2_potential()
    if isinstance(potential, TimeDriven):
        sample = lambda t: _static_samples(potential.at(t), grid)
    else:
        v_static = _static_samples(potential, grid)
        sample = lambda t: v_static
    stepper = Stepper1P(grid, tg.dt)
    totals = {lab: 0.0 for lab in pairs}

    def accumulate(weight):
        dens = [np.abs(a) ** 2 for a in amps]
        for lab, (i, j) in pairs.items():
            totals[lab] += weight * float(np.sum(dens[i] * dens[j])) * grid.dx

    accumulate(0.5 * tg.dt)
    for i, t_mid in enumerate(tg.midpoints):
        v = sample(t_mid)
        for j in range(4):
            amps[j] = stepper.step(amps[j], v)
        accumulate(tg.dt if i < tg.n_steps - 1 else 0.5 * tg.dt)
    return totals


def run_swap_gate(protocol: SwapThreeStep, *, phi_target: float = math.pi,
                  boundary_tol=None) -> GateReport:
    """Run the three-step motional gate and report storage-basis phases.

    With zero coupling the branch overlaps factorize into one-particle
    band-diagonal amplitudes and phi_g composes to zero; with coupling,
    phase accumulates where the orbital densities meet, which the
    barrier design restricts to the |11> branch (see swap_exposures).
    """
    initial = raman_swap_in(protocol)
    potential = protocol.step2_potential()
    tg = protocol.time_grid()
    g_op = protocol.couplings.g00
    specs = [(label, initial[label], potential, potential, g_op)
             for label in BRANCHES]
    states, barrier_top = swap_band_structure(protocol)
    extras = {
        "protocol": type(protocol).__name__,
        "tau_g": protocol.duration,
        "g_op": g_op,
        "barrier_top": barrier_top,
        "band_energies": [s.energy for s in states],
        "splitting_g": states[1].energy - states[0].energy,
        "splitting_e": states[3].energy - states[2].energy,
        "exposures": swap_exposures(protocol),
    }
    return _run_branches(specs, tg, phi_target, boundary_tol, extras)


# ---------------------------------------------------------------------------
# tuning the conditional phase


def _knob_value(protocol, knob: str, scale: float) -> float:
    if knob == "omega_perp" and hasattr(protocol, "omega_perp"):
        return scale * protocol.omega_perp
    return scale * protocol.couplings.max_entry()


def _apply_knob(protocol, knob: str, scale: float):
    tuned = replace(protocol, couplings=protocol.couplings.scaled(scale))
    if knob == "omega_perp" and hasattr(protocol, "omega_perp"):
        tuned = replace(tuned, omega_perp=scale * protocol.omega_perp)
    return tuned


def tune_to_pi(protocol, knob: str = "g", *, scale_max: float = 64.0,
               tol: float = 1e-3, band: int = 0):
    """Scale the coupling knob until |phi_g| = pi (circular distance <= tol).

    knob "g" scales the whole coupling table; knob "omega_perp" does the
    same (the 1D couplings are linear in the transverse frequency) and
    also rescales the omega_perp field on protocols that carry one.

    The gate reports phi_g only mod 2 pi, so the scan keeps its own
    continuous branch: starting from the exact anchor phi_g(0) = 0, the
    knob scale is doubled and every interval whose wrapped phase moves
    by more than pi/2 is bisected until the increments are unambiguous,
    which unwraps phi_g(s) along the scan.  The pi crossing is then
    bracketed and polished by root finding on the unwrapped branch.
    Raises BracketError, listing the sampled (knob value, phi_g) pairs,
    when the ladder exhausts scale_max without reaching pi, or when the
    sampled unwrapped phase is not monotone.
    """
    if knob not in ("g", "omega_perp"):
        raise DomainError(f"knob must be 'g' or 'omega_perp', got {knob!r}")
    if protocol.couplings.max_entry() <= 0.0:
        raise DomainError("cannot tune a protocol with an all-zero coupling table")

    cache = {}

    def phi_wrapped(scale):
        if scale not in cache:
            report = run_gate(_apply_knob(protocol, knob, scale), band=band)
            cache[scale] = report.phi_g
        return cache[scale]

    max_refine = 40

    def extend(s_prev, phi_prev, unwrapped_prev, s_next, depth=0):
        """Unwrapped phase at s_next, verified at interval midpoints.

        A small wrapped increment is not proof against aliasing (a swing
        of 2 pi - x wraps to -x), so every interval is also sampled at
        its midpoint: the two half-steps must stay below pi/2 and compose
        to the direct step exactly (their mismatch is a multiple of
        2 pi).  Inconsistent intervals are unwrapped recursively.
        """
        w = phi_wrapped(s_next)
        step = wrap_phase(w - phi_prev)
        if depth >= max_refine:
            return unwrapped_prev + step
        mid = 0.5 * (s_prev + s_next)
        w_mid = phi_wrapped(mid)
        step_a = wrap_phase(w_mid - phi_prev)
        step_b = wrap_phase(w - w_mid)
        if (abs(step) <= 0.5 * math.pi and abs(step_a) <= 0.5 * math.pi
                and abs(step_b) <= 0.5 * math.pi
                and abs(step_a + step_b - step) < 1e-9):
            return unwrapped_prev + step
        u_mid = extend(s_prev, phi_prev, unwrapped_prev, mid, depth + 1)
        return extend(mid, w_mid, u_mid, s_next, depth + 1)

    # Doubling ladder with the zero-coupling anchor; phases unwrapped in s.
    trail = [(0.0, 0.0)]  # (scale, unwrapped phi_g); phi_g(0) = 0 exactly
    scale = 1.0
    while True:
        s_prev, u_prev = trail[-1]
        u = extend(s_prev, phi_wrapped(s_prev) if s_prev > 0.0 else 0.0,
                   u_prev, scale)
        trail.append((scale, u))
        if abs(u) >= math.pi:
            break
        if abs(u) < abs(u_prev) - 1e-9:
            pairs = [(_knob_value(protocol, knob, s), p) for s, p in trail]
            raise BracketError(
                "phi_g is not monotone in the sampled knob values: "
                + ", ".join(f"({k:.6g}, {p:.6g})" for k, p in pairs),
                samples=pairs,
            )
        scale *= 2.0
        if scale > scale_max:
            pairs = [(_knob_value(protocol, knob, s), p) for s, p in trail]
            raise BracketError(
                "no |phi_g| >= pi crossing up to scale_max: "
                + ", ".join(f"({k:.6g}, {p:.6g})" for k, p in pairs),
                samples=pairs,
            )
    target = math.copysign(math.pi, trail[-1][1])
    s_lo, u_lo = trail[-2]
    s_hi, u_hi = trail[-1]
    # Shrink the bracket until it spans at most half a turn, so that every
    # interior point sits within pi/2 of one endpoint and its unwrapped
    # value is unambiguous (monotonicity is a documented precondition).
    while abs(u_hi - u_lo) > math.pi:
        mid = 0.5 * (s_lo + s_hi)
        u_mid = extend(s_lo, phi_wrapped(s_lo) if s_lo > 0.0 else 0.0,
                       u_lo, mid)
        if abs(u_mid) >= math.pi:
            s_hi, u_hi = mid, u_mid
        else:
            s_lo, u_lo = mid, u_mid
    phi_lo_wrapped = phi_wrapped(s_lo) if s_lo > 0.0 else 0.0

    def unwrapped(s):
        # Anchor on whichever bracket endpoint gives the smaller wrapped
        # increment.
        d_lo = wrap_phase(phi_wrapped(s) - phi_lo_wrapped)
        d_hi = wrap_phase(phi_wrapped(s) - phi_wrapped(s_hi))
        if abs(d_lo) <= abs(d_hi):
            return u_lo + d_lo
        return u_hi + d_hi

    slope = (u_hi - u_lo) / (s_hi - s_lo)
    xtol = max(0.25 * tol / abs(slope), 1e-13) if slope != 0.0 else 1e-6
    root = s_hi
    for _ in range(4):
        root = brentq(lambda s: unwrapped(s) - target, s_lo, s_hi, xtol=xtol,
                      rtol=8.9e-16)
        if phase_distance(phi_wrapped(root), target) <= tol:
            return _apply_knob(protocol, knob, root)
        xtol *= 0.1
    raise ConvergenceError(
        f"root polish did not reach |phi_g - pi| <= {tol:g}",
        residual=phase_distance(phi_wrapped(root), target),
    )


def retune_phase(protocol, *, phi_target: float = math.pi, knob: str = "g",
                 tol: float = 1e-3, step: float = 0.01, max_iter: int = 12,
                 band: int = 0):
    """Secant polish of the coupling knob for |phi_g - phi_target| <= tol.

    A local refinement for protocols already within a quarter turn of the
    target, typically after waveform optimization has dragged phi_g a few
    hundredths of a radian off pi.  The knob semantics match tune_to_pi,
    but the circular-distance residual is smooth across the +-pi cut, so
    no unwrapping ladder is needed; each residual evaluation is one full
    gate simulation.  Raises DomainError when the starting phase is too
    far out for a local polish, ConvergenceError when the secant fails.
    """
    cache = {}

    def residual(scale):
        if scale not in cache:
            report = run_gate(_apply_knob(protocol, knob, scale), band=band)
            cache[scale] = wrap_phase(report.phi_g - phi_target)
        return cache[scale]

    r0 = residual(1.0)
    if abs(r0) > 0.5 * math.pi:
        raise DomainError(
            f"phi_g is {abs(r0):.3f} rad from the target, too far for a "
            "local polish; run tune_to_pi first")
    if abs(r0) <= tol:
        return protocol
    s0, s1 = 1.0, 1.0 + step
    r1 = residual(s1)
    for _ in range(max_iter):
        if abs(r1) <= tol:
            return _apply_knob(protocol, knob, s1)
        if r1 == r0:
            break
        s0, s1, r0 = s1, s1 - r1 * (s1 - s0) / (r1 - r0), r1
        if s1 <= 0.0:
            break
        r1 = residual(s1)
    raise ConvergenceError(
        f"secant polish did not reach |phi_g - target| <= {tol:g}",
        residual=abs(r1),
    )


# ---------------------------------------------------------------------------
# thermal average


def boltzmann_weights(energies, temperature: float) -> np.ndarray:
    """Normalized Boltzmann weights over the given levels (k_B = 1)."""
    if temperature <= 0.0 or not math.isfinite(temperature):
        raise DomainError(f"temperature must be positive, got {temperature}")
    e = np.asarray(energies, dtype=float)
    if e.ndim != 1 or e.size == 0:
        raise DomainError("energies must be a non-empty 1D sequence")
    w = np.exp(-(e - e.min()) / temperature)
    return w / w.sum()


def thermal_fidelity(protocol, temperature: float, n_levels: int, *,
                     phi_target: float = math.pi) -> float:
    """Thermal gate fidelity F(T) = sum_n p_n F(level n).

    Both atoms start in vibrational doublet n of their wells with the
    Boltzmann weight of the doublet's mean energy; F(level n) is the
    F_total of the gate run from that band.  Raises TruncationError when
    the normalized weight of the highest included level is not below
    1e-4, i.e. when n_levels truncates the sum too early.
    """
    if n_levels < 1 or n_levels != int(n_levels):
        raise DomainError(f"n_levels must be a positive integer, got {n_levels}")
    states = stationary_states(protocol.initial_potential(), protocol.grid,
                               2 * n_levels)
    energies = [0.5 * (states[2 * n].energy + states[2 * n + 1].energy)
                for n in range(n_levels)]
    weights = boltzmann_weights(energies, temperature)
    if weights[-1] >= THERMAL_TAIL_TOL:
        raise TruncationError(
            f"highest included level carries weight {weights[-1]:.3e} >= "
            f"{THERMAL_TAIL_TOL:.0e}; increase n_levels or lower the temperature"
        )
    total = 0.0
    for n in range(n_levels):
        if weights[n] == 0.0:
            continue
        report = run_gate(protocol, phi_target=phi_target, band=n)
        total += weights[n] * report.f_total
    return float(total)
