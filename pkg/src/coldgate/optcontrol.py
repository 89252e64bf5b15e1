"""Krotov iterative optimal control over piecewise-constant channels.

The optimizer runs the classic five-step loop: seed guess, forward
propagation of psi, auxiliary state chi(tau_g) = |psiT><psiT|psi(tau_g)>
propagated backwards, then a joint forward sweep that applies the
sequential update

    u(t_i) <- u(t_i) + (2 / eta(t_i)) Im <chi(t_i)| dH/du |psi(t_i)>

channel by channel with clamping to bounds, and repeats until the target
fidelity, stagnation, or the iteration cap.  chi is not stored as a
trajectory: during the joint sweep it is propagated forward under the
previous controls, which by unitarity retraces the backward pass exactly
and keeps memory flat for grid systems.

Controls are sampled on TimeGrid midpoints, one value per step, matching
the propagator's sampling convention.  "Pinned endpoints" freeze the
first and last samples of a channel across all iterations.

Exact Krotov monotonicity holds for the continuous-time update; after
Strang discretization tiny decreases can occur for aggressive weights,
so every iteration re-checks the objective and, on a decrease beyond
1e-12, retries the update at doubled weight until it is accepted or
shrinks to nothing.  The recorded fidelity sequence is therefore
non-decreasing up to that 1e-12 acceptance slack.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ColdgateError, ConvergenceError, DomainError
from .grids import TimeGrid

MONOTONICITY_TOL = 1e-12
STAGNATION_TOL = 1e-10
STAGNATION_SPAN = 5
ETA_CAP = 1e6
# How far below its calibrated value the gate optimizer's trust-region
# scheme may shrink eta (i.e. grow the step) on retry-free sweeps.  Kept
# moderate: very bold steps chase the product objective into corners of
# the branch simplex where the worst branch fidelity degrades even as J
# grows (J weighs the doubly-degenerate 01 branch twice).
ETA_SHRINK_SPAN = 8.0


@dataclass
class ControlChannel:
    """One control channel: midpoint samples with bounds and pinning."""

    name: str
    samples: np.ndarray
    lower: float
    upper: float
    pinned: bool = True

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float).copy()
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise DomainError(f"channel '{self.name}' needs a 1D sample array")
        if not self.lower < self.upper:
            raise DomainError(
                f"channel '{self.name}' bounds must satisfy lower < upper, "
                f"got [{self.lower}, {self.upper}]"
            )
        if np.any(self.samples < self.lower) or np.any(self.samples > self.upper):
            raise DomainError(f"channel '{self.name}' samples leave [{self.lower}, {self.upper}]")

    @property
    def span(self) -> float:
        return self.upper - self.lower

    def copy(self) -> "ControlChannel":
        return ControlChannel(self.name, self.samples.copy(), self.lower, self.upper, self.pinned)


@dataclass
class ControlSet:
    """Control channels plus the Krotov weight eta(t), all on tg midpoints.

    eta = None requests the default endpoint-heavy profile with the
    overall scale auto-calibrated so the first iteration moves no sample
    by more than 5% of its channel's range.
    """

    tg: TimeGrid
    channels: list
    eta: np.ndarray | None = None

    def __post_init__(self):
        if not self.channels:
            raise DomainError("ControlSet needs at least one channel")
        n = self.tg.n_steps
        for ch in self.channels:
            if ch.samples.shape != (n,):
                raise DomainError(
                    f"channel '{ch.name}' has {ch.samples.shape[0]} samples, "
                    f"expected one per step ({n})"
                )
        if self.eta is not None:
            self.eta = np.asarray(self.eta, dtype=float)
            if self.eta.shape != (n,):
                raise DomainError(f"eta needs {n} samples, got {self.eta.shape}")
            if np.any(self.eta <= 0.0):
                raise DomainError("eta must be positive everywhere")

    def copy(self) -> "ControlSet":
        eta = None if self.eta is None else self.eta.copy()
        return ControlSet(self.tg, [ch.copy() for ch in self.channels], eta)

    def sample_matrix(self) -> np.ndarray:
        """Channel samples stacked as (n_channels, n_steps)."""
        return np.stack([ch.samples for ch in self.channels])


def eta_profile(tg: TimeGrid, amp: float = 1.0, cap: float = ETA_CAP) -> np.ndarray:
    """Endpoint-heavy weight shape 1 + amp * min(1/sin^2(pi t/T), cap).

    Evaluated on step midpoints, so the 1/sin^2 divergence is never hit;
    the cap bounds the first and last samples instead.
    """
    frac = (tg.midpoints - tg.t_start) / (tg.t_end - tg.t_start)
    bump = 1.0 / np.sin(np.pi * frac) ** 2
    return 1.0 + amp * np.minimum(bump, cap)


def triangle_seed(tg: TimeGrid, n_ramps: int, amp: float = 1.0) -> np.ndarray:
    """n_ramps back-to-back symmetric triangles of height amp on tg midpoints.

    The usual merge-and-hold initial guess: each triangle raises the
    control linearly from 0 to amp and back.  The first and last samples
    are forced to exactly zero so pinned channels start and end closed.
    """
    if n_ramps < 1 or n_ramps != int(n_ramps):
        raise DomainError(f"n_ramps must be a positive integer, got {n_ramps}")
    if not 0.0 < amp:
        raise DomainError(f"triangle amplitude must be positive, got {amp}")
    period = (tg.t_end - tg.t_start) / n_ramps
    tt = (tg.midpoints - tg.t_start) % period
    lam = amp * (1.0 - np.abs(2.0 * tt / period - 1.0))
    lam[0] = 0.0
    lam[-1] = 0.0
    return lam


def read_controls_csv(path, tg: TimeGrid | None = None) -> dict:
    """Read a write_controls_csv file back into {channel name: samples}.

    When tg is given, the row count and the time column are checked
    against its midpoints (to 1e-9), guarding against loading a waveform
    onto the wrong time grid.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][0] != "t":
        raise DomainError(f"{path}: not a controls CSV (header must start with 't')")
    names = rows[0][1:]
    data = np.asarray([[float(cell) for cell in row] for row in rows[1:]])
    if data.ndim != 2 or data.shape[1] != len(names) + 1:
        raise DomainError(f"{path}: malformed controls CSV")
    if tg is not None:
        if data.shape[0] != tg.n_steps:
            raise DomainError(
                f"{path}: {data.shape[0]} samples do not fit a grid of "
                f"{tg.n_steps} steps")
        if np.max(np.abs(data[:, 0] - tg.midpoints)) > 1e-9:
            raise DomainError(f"{path}: time column does not match the grid midpoints")
    return {name: data[:, 1 + i].copy() for i, name in enumerate(names)}


@dataclass
class OptimizationTrace:
    """Per-iteration record of one optimization run.

    fidelities[0] is the seed objective; stop_reason is one of
    "target reached", "max iterations", "stagnation".  eta_doublings
    lists iterations whose update was reverted by the monotonicity
    safeguard.  extras carries optimizer-specific series (the gate
    optimizer logs phi_g and the worst branch fidelity).
    """

    fidelities: np.ndarray
    stop_reason: str
    snapshots: list = field(default_factory=list)
    eta_doublings: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def n_iterations(self) -> int:
        return len(self.fidelities) - 1


class MatrixSystem:
    """Finite-dimensional H(u) = H0 + sum_c u_c C_c with exact stepping.

    States are bare complex vectors; each step exponentiates the frozen
    Hamiltonian through its eigendecomposition, so the only time
    discretization error is the piecewise-constant control sampling.
    """

    def __init__(self, h0, couplings):
        self.h0 = np.asarray(h0, dtype=complex)
        d = self.h0.shape[0]
        if self.h0.shape != (d, d):
            raise DomainError("h0 must be square")
        self.couplings = [np.asarray(c, dtype=complex) for c in couplings]
        for c in self.couplings:
            if c.shape != (d, d):
                raise DomainError("coupling shape does not match h0")
        for m in [self.h0, *self.couplings]:
            if not np.allclose(m, m.conj().T, atol=1e-12):
                raise DomainError("MatrixSystem operators must be Hermitian")

    def hamiltonian(self, values) -> np.ndarray:
        h = self.h0.copy()
        for c, v in zip(self.couplings, values):
            h += v * c
        return h

    def step(self, state, values, dt):
        w, vec = scipy.linalg.eigh(self.hamiltonian(values))
        return vec @ (np.exp(-1j * dt * w) * (vec.conj().T @ state))

    def dh(self, state, c, values):
        return self.couplings[c] @ state

    def overlap(self, a, b) -> complex:
        return complex(np.vdot(a, b))

    def norm(self, state) -> float:
        return float(np.linalg.norm(state))


class Grid1PSystem:
    """One atom on a Grid1D with potential V(x; u_1..u_m), split stepping.

    v_of(values) -> potential samples; dv_of(c, values) -> dV/du_c samples
    when the derivative is known analytically.  Without dv_of a centered
    finite difference with the per-channel steps fd_steps is used, which
    only differentiates the potential (the kinetic term carries no
    control dependence).
    """

    gradient_rule = "strang-nodes"

    def __init__(self, grid, v_of, dv_of=None, fd_steps=None):
        self.grid = grid
        self.v_of = v_of
        self.dv_of = dv_of
        self.fd_steps = None if fd_steps is None else np.asarray(fd_steps, dtype=float)
        self._kin_cache = {}

    def _kinetic_phase(self, dt):
        cached = self._kin_cache.get(dt)
        if cached is None:
            k = self.grid.wavenumbers
            cached = np.exp(-0.5j * dt * k * k)
            self._kin_cache[dt] = cached
        return cached

    def step(self, state, values, dt):
        half = np.exp(-0.5j * dt * np.asarray(self.v_of(values), dtype=float))
        out = half * state
        out = np.fft.ifft(self._kinetic_phase(dt) * np.fft.fft(out))
        out *= half
        return out

    def dh(self, state, c, values):
        if self.dv_of is not None:
            dv = np.asarray(self.dv_of(c, values), dtype=float)
        else:
            if self.fd_steps is None:
                raise DomainError("Grid1PSystem needs dv_of or fd_steps for gradients")
            step = self.fd_steps[c]
            up = np.array(values, dtype=float)
            dn = up.copy()
            up[c] += step
            dn[c] -= step
            dv = (np.asarray(self.v_of(up), dtype=float) - np.asarray(self.v_of(dn), dtype=float)) / (
                2.0 * step
            )
        return dv * state

    def overlap(self, a, b) -> complex:
        return complex(np.sum(np.conj(a) * b) * self.grid.dx)

    def norm(self, state) -> float:
        return float(np.sqrt(np.sum(np.abs(state) ** 2) * self.grid.dx))


def _require_unit(system, state, what):
    if abs(system.norm(state) - 1.0) > 1e-9:
        raise DomainError(f"{what} must be normalized")


def forward_trajectory(psi0, system, controls: ControlSet) -> list:
    """All time-node states [psi(t_0), ..., psi(t_N)] under the controls."""
    samples = controls.sample_matrix()
    dt = controls.tg.dt
    traj = [np.array(psi0, dtype=complex)]
    psi = traj[0]
    for i in range(controls.tg.n_steps):
        psi = system.step(psi, samples[:, i], dt)
        traj.append(psi)
    return traj


def backward_propagate(chi_t, system, controls: ControlSet) -> list:
    """Backward trajectory [chi(t_0), ..., chi(t_N)] from chi(t_N) = chi_t.

    Propagation runs under the frozen current controls with reversed
    time steps, so re-forward-propagating chi(t_0) reproduces chi_t up
    to roundoff.
    """
    samples = controls.sample_matrix()
    dt = controls.tg.dt
    n = controls.tg.n_steps
    traj = [None] * (n + 1)
    chi = np.array(chi_t, dtype=complex)
    traj[n] = chi
    for i in range(n - 1, -1, -1):
        chi = system.step(chi, samples[:, i], -dt)
        traj[i] = chi
    return traj


def discrete_gradient(system, psi_traj, chi_traj, controls: ControlSet) -> np.ndarray:
    """Exact-objective gradient dF/du[c, i] for F = |<psi_t|psi(T)>|^2.

    chi_traj must be seeded per Krotov, chi(T) = <psi_t|psi(T)> psi_t, and
    propagated backward under the same controls as psi_traj.  The rule
    depends on how the system steps.  For exact-exponential steppers
    (MatrixSystem) the derivative of the discrete objective is the Duhamel
    integral

        dF/du_i = 2 dt Integral_0^1 Im<chi(t_i + s dt)|dH/du|psi(t_i + s dt)> ds,

    evaluated by Simpson's rule on the node states plus one half-step from
    each node (error O(dt^4)).  For Strang split steppers the diagonal
    half-potential phases cancel between bra and ket, and the exact
    discrete derivative collapses to the two-node trapezoid

        dF/du_i = dt (Im<chi_i|dH|psi_i> + Im<chi_i+1|dH|psi_i+1>);

    systems declare their rule via the gradient_rule attribute.  The plain
    per-node Krotov numerator 2 Im<chi(t_i)|dH|psi(t_i)> is exact only to
    O(dt); the optimizer uses it as an update direction, not as this
    gradient.
    """
    samples = controls.sample_matrix()
    n_ch = len(controls.channels)
    n = controls.tg.n_steps
    dt = controls.tg.dt
    rule = getattr(system, "gradient_rule", "duhamel-simpson")
    grad = np.empty((n_ch, n))
    for i in range(n):
        vals = samples[:, i]
        if rule == "strang-nodes":
            for c in range(n_ch):
                lo = system.overlap(chi_traj[i], system.dh(psi_traj[i], c, vals)).imag
                hi = system.overlap(chi_traj[i + 1], system.dh(psi_traj[i + 1], c, vals)).imag
                grad[c, i] = dt * (lo + hi)
            continue
        psi_mid = system.step(psi_traj[i], vals, 0.5 * dt)
        chi_mid = system.step(chi_traj[i], vals, 0.5 * dt)
        for c in range(n_ch):
            lo = system.overlap(chi_traj[i], system.dh(psi_traj[i], c, vals)).imag
            mid = system.overlap(chi_mid, system.dh(psi_mid, c, vals)).imag
            hi = system.overlap(chi_traj[i + 1], system.dh(psi_traj[i + 1], c, vals)).imag
            grad[c, i] = 2.0 * dt * (lo + 4.0 * mid + hi) / 6.0
    return grad


def _updatable(channel: ControlChannel, i: int, n: int) -> bool:
    return not (channel.pinned and (i == 0 or i == n - 1))


def krotov_optimize(
    system,
    psi0,
    psi_t,
    controls: ControlSet,
    max_iter: int = 200,
    f_target: float = 1.0 - 1e-9,
    *,
    update: str = "immediate",
    eta_amp: float = 1.0,
    first_update_fraction: float = 0.05,
    snapshot_every: int | None = None,
):
    """Maximize F = |<psi_t|psi(tau_g)>|^2 over the control samples.

    Returns (optimized ControlSet, OptimizationTrace).  The input
    ControlSet is not modified.  update = "immediate" applies the
    sequential Krotov scheme (new psi against re-forwarded old chi);
    "deferred" computes all updates from the stored old trajectories
    and applies them at once, useful for cross-checks on small systems.
    """
    if update not in ("immediate", "deferred"):
        raise DomainError(f"unknown update scheme '{update}'")
    _require_unit(system, psi0, "psi0")
    _require_unit(system, psi_t, "target state")

    work = controls.copy()
    tg = work.tg
    n = tg.n_steps
    dt = tg.dt
    channels = work.channels

    psi0 = np.array(psi0, dtype=complex)
    psi_t = np.array(psi_t, dtype=complex)

    def forward_final(samples):
        psi = psi0
        for i in range(n):
            psi = system.step(psi, samples[:, i], dt)
        return psi

    samples = work.sample_matrix()
    psi_final = forward_final(samples)
    o = system.overlap(psi_t, psi_final)
    fid = abs(o) ** 2
    fidelities = [fid]
    snapshots = []
    doublings = []

    def snap(j):
        if snapshot_every and (j % snapshot_every == 0):
            snapshots.append((j, {ch.name: samples[c].copy() for c, ch in enumerate(channels)}))

    snap(0)
    stop_reason = "max iterations"
    if fid >= f_target:
        stop_reason = "target reached"
        max_iter = 0

    # eta bookkeeping: explicit eta is used as given; otherwise the default
    # profile with eta0 calibrated on the first backward pass so no sample
    # moves more than first_update_fraction of its channel range.
    auto_eta = work.eta is None
    profile = eta_profile(tg, amp=eta_amp) if auto_eta else work.eta
    eta0 = None if auto_eta else 1.0
    if auto_eta:
        for ch in channels:
            if not np.isfinite(ch.span):
                raise DomainError(
                    f"channel '{ch.name}' needs finite bounds for eta auto-calibration"
                )

    max_retries = 60

    for j in range(1, max_iter + 1):
        try:
            chi = o * psi_t
            if auto_eta and eta0 is None:
                # first backward pass: co-propagate psi backward (retraces the
                # forward path by unitarity) and collect the raw numerators.
                psi_back = psi_final
                numerators = np.zeros((len(channels), n))
                for i in range(n - 1, -1, -1):
                    chi = system.step(chi, samples[:, i], -dt)
                    psi_back = system.step(psi_back, samples[:, i], -dt)
                    for c in range(len(channels)):
                        num = 2.0 * system.overlap(chi, system.dh(psi_back, c, samples[:, i])).imag
                        numerators[c, i] = num
                scale = 0.0
                for c, ch in enumerate(channels):
                    allowed = first_update_fraction * ch.span
                    scale = max(scale, np.max(np.abs(numerators[c]) / profile) / allowed)
                eta0 = scale if scale > 0.0 else 1.0
            else:
                for i in range(n - 1, -1, -1):
                    chi = system.step(chi, samples[:, i], -dt)
            chi0 = chi
            if update == "deferred":
                psi_traj = forward_trajectory(psi0, system, work)
                chi_traj = backward_propagate(o * psi_t, system, work)

            # A decrease beyond tolerance is retried within the iteration at
            # doubled eta until the update is accepted or shrinks to nothing;
            # the recorded fidelity sequence stays non-decreasing.
            for attempt in range(max_retries + 1):
                eta = eta0 * profile
                new_samples = samples.copy()
                if update == "immediate":
                    psi = psi0
                    chi = chi0
                    for i in range(n):
                        vals = samples[:, i].copy()
                        for c, ch in enumerate(channels):
                            if _updatable(ch, i, n):
                                num = 2.0 * system.overlap(chi, system.dh(psi, c, vals)).imag
                                vals[c] = np.clip(samples[c, i] + num / eta[i], ch.lower, ch.upper)
                        new_samples[:, i] = vals
                        psi = system.step(psi, vals, dt)
                        chi = system.step(chi, samples[:, i], dt)
                    psi_new = psi
                else:
                    for i in range(n):
                        vals = samples[:, i]
                        for c, ch in enumerate(channels):
                            if _updatable(ch, i, n):
                                num = 2.0 * system.overlap(
                                    chi_traj[i], system.dh(psi_traj[i], c, vals)
                                ).imag
                                new_samples[c, i] = np.clip(
                                    vals[c] + num / eta[i], ch.lower, ch.upper
                                )
                    psi_new = forward_final(new_samples)

                o_new = system.overlap(psi_t, psi_new)
                fid_new = abs(o_new) ** 2
                if fid_new >= fid - MONOTONICITY_TOL:
                    break
                eta0 *= 2.0
                doublings.append(j)
            else:
                # update direction exhausted; keep the current controls
                new_samples, psi_new, o_new, fid_new = samples, psi_final, o, fid
        except ColdgateError as exc:
            exc.args = (f"{exc.args[0]} (during Krotov iteration {j})", *exc.args[1:])
            raise

        samples = new_samples
        for c, ch in enumerate(channels):
            ch.samples = samples[c]
        psi_final = psi_new
        o = o_new
        fid = fid_new
        fidelities.append(fid)
        snap(j)

        if fid >= f_target:
            stop_reason = "target reached"
            break
        if (
            len(fidelities) > STAGNATION_SPAN
            and fidelities[-1] - fidelities[-1 - STAGNATION_SPAN] < STAGNATION_TOL
        ):
            stop_reason = "stagnation"
            break

    work.eta = eta0 * profile if eta0 is not None else None
    trace = OptimizationTrace(
        fidelities=np.asarray(fidelities),
        stop_reason=stop_reason,
        snapshots=snapshots,
        eta_doublings=doublings,
    )
    return work, trace


# ---------------------------------------------------------------------------
# collisional gate optimization
#
# The gate functional couples three branch overlaps w_kl = <psi_kl(0)|
# psi_kl(tau_g)> (the 10 branch mirrors 01 exactly and is not propagated):
#
#     J = Re[ exp(-i phi_target) w00 conj(w01)^2 w11 ],
#
# which is 1 exactly when every branch returns with unit fidelity and the
# composed conditional phase arg(w11 conj(w01)^2 w00) equals the target.
# J is invariant under a global potential offset (the single-particle
# phases cancel in the composition), so the optimizer cannot cheat with
# uniform phase shifts.  Varying J branch by branch gives the Krotov
# costates chi_b(tau_g) = (1/2) conj(dJ/dw_b) |psi_b(0)>, after which the
# multi-branch update is the usual one with the numerator summed over
# branches.  J is multilinear rather than concave in the final states, so
# exact monotonicity is not guaranteed; the same retry-at-doubled-eta
# safeguard as in krotov_optimize keeps the recorded sequence
# non-decreasing.


def _gate_branches(protocol, band: int = 0):
    """Optimization-ready data for the 00, 01, 11 branches.

    Each branch entry carries the raw initial amplitudes, the coupling
    constant, and the control derivative dH/dlambda, which for the
    state pair (k, l) is the sampled surface u_k(x1) + u_l(x2).
    """
    from . import gate as _gate
    from .dynamics import _static_samples
    from .grids import product_state

    if not isinstance(protocol, _gate.MicrowaveControlled):
        raise DomainError(
            "gate optimization drives the microwave lambda channel; got "
            f"{type(protocol).__name__}"
        )
    grid = protocol.grid
    uc = _static_samples(protocol.u_c, grid)
    u_state = {
        0: _static_samples(protocol.u_0, grid),
        1: _static_samples(protocol.u_1, grid),
    }
    left, right, _, _ = _gate._initial_pair(protocol, band)
    branches = []
    for label in ("00", "01", "11"):
        k, l = int(label[0]), int(label[1])
        psi0 = product_state(left, right, symmetrize=(k == l))
        branches.append({
            "label": label,
            "psi0": np.array(psi0.amps, dtype=complex),
            "g": protocol.couplings.get(k, l),
            "ua": u_state[k],
            "ub": u_state[l],
            "dh": u_state[k][:, None] + u_state[l][None, :],
        })
    return uc, branches


class _GateWork:
    """Steppers and overlap plumbing for one gate-optimization session."""

    def __init__(self, protocol, band: int = 0):
        from .dynamics import Stepper2P

        self.uc, self.branches = _gate_branches(protocol, band)
        grid = protocol.grid
        tg = protocol.controls.tg
        self.tg = tg
        self.dx2 = grid.dx * grid.dx
        self._steppers = {}
        for br in self.branches:
            for dt in (tg.dt, -tg.dt, 0.5 * tg.dt):
                key = (br["g"], dt)
                if key not in self._steppers:
                    self._steppers[key] = Stepper2P(grid, dt, br["g"])

    def stepper(self, branch, dt):
        return self._steppers[(branch["g"], dt)]

    def step(self, branch, state, lam_i, dt):
        v_a = self.uc + lam_i * branch["ua"]
        v_b = self.uc + lam_i * branch["ub"]
        return self.stepper(branch, dt).step(state, v_a, v_b)

    def overlap(self, a, b) -> complex:
        return complex(np.vdot(a, b) * self.dx2)

    def finals(self, lam) -> dict:
        """Branch overlaps w_b after a plain forward propagation."""
        out = {}
        for br in self.branches:
            psi = br["psi0"].copy()
            for i in range(self.tg.n_steps):
                psi = self.step(br, psi, lam[i], self.tg.dt)
            out[br["label"]] = self.overlap(br["psi0"], psi)
        return out

    @staticmethod
    def composition(w: dict) -> complex:
        return w["00"] * np.conj(w["01"]) ** 2 * w["11"]

    @staticmethod
    def objective(w: dict, phi_target: float) -> float:
        return float(np.real(np.exp(-1j * phi_target) * _GateWork.composition(w)))

    @staticmethod
    def chi_finals(w: dict, phi_target: float) -> dict:
        """chi_b(tau_g) coefficients: (1/2) conj(dJ/dw_b).

        The 01 derivative carries a factor 2 from conj(w01)^2, which the
        1/2 of the seeding convention cancels exactly.
        """
        ph = np.exp(-1j * phi_target)
        return {
            "00": 0.5 * np.conj(ph * np.conj(w["01"]) ** 2 * w["11"]),
            "01": ph * w["00"] * np.conj(w["01"]) * w["11"],
            "11": 0.5 * np.conj(ph * w["00"] * np.conj(w["01"]) ** 2),
        }

    def report_numbers(self, w: dict, phi_target: float):
        """(f_total, phi_g, worst branch fidelity) from the overlaps."""
        from . import gate as _gate

        fid = {lab: abs(w[lab if lab != "10" else "01"]) ** 2
               for lab in ("00", "01", "10", "11")}
        phi_g = _gate.wrap_phase(float(np.angle(self.composition(w))))
        return (_gate.compose_fidelity(fid, phi_g, phi_target), phi_g,
                min(fid.values()))


def gate_objective(protocol, *, phi_target: float = np.pi, band: int = 0):
    """Gate functional J and branch overlaps for the current controls."""
    work = _GateWork(protocol, band)
    lam = protocol.controls.channels[0].samples
    w = work.finals(lam)
    return work.objective(w, phi_target), w


def gate_objective_gradient(protocol, *, phi_target: float = np.pi,
                            band: int = 0):
    """(J, dJ/dlambda) for the discrete objective, streamed in memory.

    For a Strang step A K A with diagonal half-potential phases A, the
    stage phases cancel between bra and ket (dV/dlambda is diagonal and
    real), leaving the exact derivative of the discrete objective as the
    node trapezoid

        dJ/dlambda_i = dt * ( Im<chi_i|dH|psi_i> + Im<chi_i+1|dH|psi_i+1> ),

    summed over branches; no quadrature beyond the two nodes is involved.
    psi and chi are re-propagated on the fly instead of stored, so the
    memory stays at a few grid states.
    """
    work = _GateWork(protocol, band)
    tg = work.tg
    lam = protocol.controls.channels[0].samples
    n = tg.n_steps

    w = work.finals(lam)
    coeff = work.chi_finals(w, phi_target)

    psi = {}
    chi = {}
    for br in work.branches:
        lab = br["label"]
        back = coeff[lab] * br["psi0"]
        for i in range(n - 1, -1, -1):
            back = work.step(br, back, lam[i], -tg.dt)
        chi[lab] = back
        psi[lab] = br["psi0"].copy()

    def node_term():
        total = 0.0
        for br in work.branches:
            lab = br["label"]
            total += work.overlap(chi[lab], br["dh"] * psi[lab]).imag
        return total

    grad = np.empty(n)
    dt = tg.dt
    prev = node_term()
    for i in range(n):
        for br in work.branches:
            lab = br["label"]
            psi[lab] = work.step(br, psi[lab], lam[i], dt)
            chi[lab] = work.step(br, chi[lab], lam[i], dt)
        nxt = node_term()
        grad[i] = dt * (prev + nxt)
        prev = nxt
    return work.objective(w, phi_target), grad


def optimize_gate(
    protocol,
    max_iter: int = 60,
    f_target: float = 0.995,
    *,
    phi_target: float = np.pi,
    eta_amp: float = 1.0,
    first_update_fraction: float = 0.05,
    snapshot_every: int | None = None,
    band: int = 0,
):
    """Krotov-optimize the microwave lambda waveform of a collisional gate.

    Maximizes J (see module notes) over the lambda samples within their
    bounds, endpoints pinned.  Returns (optimized protocol, trace); the
    trace's fidelity series is the J sequence (the monotone quantity),
    while extras carry "f_total", "phi_g" and "f_min" per iteration.
    J and the composed gate fidelity are distinct figures of merit, so
    the returned protocol carries the waveform with the best f_total
    seen, not necessarily the last one.  Stops when f_total reaches
    f_target, on stagnation of J, or at max_iter.
    """
    from dataclasses import replace as _replace

    work = _GateWork(protocol, band)
    tg = work.tg
    n = tg.n_steps
    dt = tg.dt
    controls = protocol.controls.copy()
    channel = controls.channels[0]
    lam = channel.samples

    w = work.finals(lam)
    jval = work.objective(w, phi_target)
    f_total, phi_g, f_min = work.report_numbers(w, phi_target)
    jseries = [jval]
    extras = {"f_total": [f_total], "phi_g": [phi_g], "f_min": [f_min]}
    snapshots = []
    doublings = []
    # J and f_total are distinct figures of merit (J is the monotone one),
    # so the best composed fidelity seen is remembered and returned.
    best_f, best_lam = f_total, lam.copy()

    def snap(j):
        if snapshot_every and (j % snapshot_every == 0):
            snapshots.append((j, {channel.name: lam.copy()}))

    snap(0)
    stop_reason = "max iterations"
    if f_total >= f_target:
        stop_reason = "target reached"
        max_iter = 0

    auto_eta = controls.eta is None
    profile = eta_profile(tg, amp=eta_amp) if auto_eta else controls.eta
    eta0 = None if auto_eta else 1.0
    eta_floor = None if eta0 is None else eta0 / ETA_SHRINK_SPAN
    max_retries = 60

    for j in range(1, max_iter + 1):
        try:
            coeff = work.chi_finals(w, phi_target)
            chi0 = {}
            if auto_eta and eta0 is None:
                # Calibration backward pass: retrace psi alongside chi and
                # record the raw numerators, then set eta0 so the first
                # sweep moves no sample by more than the allowed fraction.
                numerators = np.zeros(n)
                psi_back = {}
                for br in work.branches:
                    lab = br["label"]
                    psi = br["psi0"].copy()
                    for i in range(n):
                        psi = work.step(br, psi, lam[i], dt)
                    psi_back[lab] = psi
                chi_back = {br["label"]: coeff[br["label"]] * br["psi0"]
                            for br in work.branches}
                for i in range(n - 1, -1, -1):
                    for br in work.branches:
                        lab = br["label"]
                        chi_back[lab] = work.step(br, chi_back[lab], lam[i], -dt)
                        psi_back[lab] = work.step(br, psi_back[lab], lam[i], -dt)
                        numerators[i] += 2.0 * work.overlap(
                            chi_back[lab], br["dh"] * psi_back[lab]).imag
                chi0 = chi_back
                allowed = first_update_fraction * channel.span
                scale = np.max(np.abs(numerators) / profile) / allowed
                eta0 = scale if scale > 0.0 else 1.0
                eta_floor = eta0 / ETA_SHRINK_SPAN
            else:
                for br in work.branches:
                    lab = br["label"]
                    back = coeff[lab] * br["psi0"]
                    for i in range(n - 1, -1, -1):
                        back = work.step(br, back, lam[i], -dt)
                    chi0[lab] = back

            for attempt in range(max_retries + 1):
                eta = eta0 * profile
                new_lam = lam.copy()
                psi = {br["label"]: br["psi0"].copy() for br in work.branches}
                chi = {lab: state.copy() for lab, state in chi0.items()}
                for i in range(n):
                    if _updatable(channel, i, n):
                        num = 0.0
                        for br in work.branches:
                            lab = br["label"]
                            num += 2.0 * work.overlap(
                                chi[lab], br["dh"] * psi[lab]).imag
                        new_lam[i] = np.clip(lam[i] + num / eta[i],
                                             channel.lower, channel.upper)
                    for br in work.branches:
                        lab = br["label"]
                        psi[lab] = work.step(br, psi[lab], new_lam[i], dt)
                        chi[lab] = work.step(br, chi[lab], lam[i], dt)
                w_new = {br["label"]: work.overlap(br["psi0"], psi[br["label"]])
                         for br in work.branches}
                j_new = work.objective(w_new, phi_target)
                if j_new >= jval - MONOTONICITY_TOL:
                    # Trust-region step control: a sweep accepted without
                    # retries earns a bolder eta for the next one, so the
                    # step size rides the edge of monotonicity instead of
                    # staying at the conservative calibration value.
                    if attempt == 0:
                        eta0 = max(eta_floor, 0.5 * eta0)
                    break
                eta0 *= 2.0
                doublings.append(j)
            else:
                new_lam, w_new, j_new = lam, w, jval
        except ColdgateError as exc:
            exc.args = (f"{exc.args[0]} (during gate Krotov iteration {j})",
                        *exc.args[1:])
            raise

        lam = new_lam
        channel.samples = lam
        w = w_new
        jval = j_new
        jseries.append(jval)
        f_total, phi_g, f_min = work.report_numbers(w, phi_target)
        extras["f_total"].append(f_total)
        extras["phi_g"].append(phi_g)
        extras["f_min"].append(f_min)
        if f_total > best_f:
            best_f, best_lam = f_total, lam.copy()
        snap(j)

        if best_f >= f_target:
            stop_reason = "target reached"
            break
        if (len(jseries) > STAGNATION_SPAN
                and jseries[-1] - jseries[-1 - STAGNATION_SPAN] < STAGNATION_TOL):
            stop_reason = "stagnation"
            break

    channel.samples = best_lam
    controls.eta = eta0 * profile if eta0 is not None else None
    trace = OptimizationTrace(
        fidelities=np.asarray(jseries),
        stop_reason=stop_reason,
        snapshots=snapshots,
        eta_doublings=doublings,
        extras={k: np.asarray(v) for k, v in extras.items()},
    )
    return _replace(protocol, controls=controls), trace


def write_trace_csv(trace: OptimizationTrace, path):
    """CSV export (iteration, fidelity), plus any extras columns."""
    names = sorted(trace.extras)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "fidelity", *names])
        for i, f in enumerate(trace.fidelities):
            writer.writerow([i, repr(float(f)), *(repr(float(trace.extras[k][i])) for k in names)])


def write_controls_csv(controls: ControlSet, path):
    """CSV export of the control samples: t plus one column per channel."""
    times = controls.tg.midpoints
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", *(ch.name for ch in controls.channels)])
        for i, t in enumerate(times):
            writer.writerow(
                [repr(float(t)), *(repr(float(ch.samples[i])) for ch in controls.channels)]
            )
