"""Krotov optimizer: control plumbing, TLS benchmark, gradient checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coldgate.errors import ColdgateError, ConvergenceError, DomainError
from coldgate.grids import Grid1D, TimeGrid, gaussian_packet, stationary_states
from coldgate.optcontrol import (
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

from oracles import tls_three_segment_best

SZ = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
UP = np.array([1.0, 0.0], dtype=complex)
DOWN = np.array([0.0, 1.0], dtype=complex)

# frozen from the oracle itself: 41-point grid, u in [-2, 2], tau = 3
TLS_GRID41_BEST = 0.999973606624


def tls_system():
    return MatrixSystem(SZ, [SX])


def tls_controls(n_steps=150, seed_value=0.3, pinned=False):
    tg = TimeGrid(0.0, 3.0, n_steps)
    ch = ControlChannel("u", seed_value * np.ones(n_steps), -2.0, 2.0, pinned=pinned)
    return ControlSet(tg, [ch])


class TestControlPlumbing:
    def test_samples_must_respect_bounds(self):
        with pytest.raises(DomainError):
            ControlChannel("u", np.array([0.0, 3.0]), -2.0, 2.0)

    def test_bounds_must_be_ordered(self):
        with pytest.raises(DomainError):
            ControlChannel("u", np.zeros(4), 1.0, -1.0)

    def test_sample_count_must_match_steps(self):
        tg = TimeGrid(0.0, 1.0, 10)
        with pytest.raises(DomainError):
            ControlSet(tg, [ControlChannel("u", np.zeros(9), -1.0, 1.0)])

    def test_eta_must_be_positive(self):
        tg = TimeGrid(0.0, 1.0, 4)
        ch = ControlChannel("u", np.zeros(4), -1.0, 1.0)
        with pytest.raises(DomainError):
            ControlSet(tg, [ch], eta=np.array([1.0, -1.0, 1.0, 1.0]))

    def test_sample_matrix_shape(self):
        cs = tls_controls(12)
        assert cs.sample_matrix().shape == (1, 12)

    def test_eta_profile_endpoint_heavy(self):
        tg = TimeGrid(0.0, 3.0, 100)
        prof = eta_profile(tg)
        assert np.all(prof > 0.0)
        assert prof[0] == pytest.approx(prof[-1], rel=1e-12)  # symmetric sampling
        assert prof[0] > 50.0 * prof.min()  # endpoints strongly weighted

    def test_eta_profile_cap(self):
        tg = TimeGrid(0.0, 3.0, 100000)
        prof = eta_profile(tg, amp=1.0, cap=1e6)
        assert prof.max() == pytest.approx(1.0 + 1e6)

    @given(st.floats(-1.9, 1.9))
    @settings(max_examples=20, deadline=None)
    def test_channel_copy_is_deep(self, v):
        ch = ControlChannel("u", v * np.ones(8), -2.0, 2.0)
        clone = ch.copy()
        clone.samples[0] = 2.0
        assert ch.samples[0] == v


class TestMatrixSystem:
    def test_requires_hermitian(self):
        with pytest.raises(DomainError):
            MatrixSystem(np.array([[0.0, 1.0], [0.0, 0.0]]), [])

    def test_step_is_unitary(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        h0 = 0.5 * (a + a.conj().T)
        sys4 = MatrixSystem(h0, [np.eye(4)])
        psi = rng.normal(size=4) + 1j * rng.normal(size=4)
        psi /= np.linalg.norm(psi)
        out = sys4.step(psi, [0.7], 0.05)
        assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)

    def test_step_matches_expm(self):
        import scipy.linalg

        sys2 = tls_system()
        psi = np.array([0.6, 0.8j])
        got = sys2.step(psi, [1.3], 0.21)
        want = scipy.linalg.expm(-0.21j * (SZ + 1.3 * SX)) @ psi
        assert np.max(np.abs(got - want)) < 1e-12


class TestBackwardPropagate:
    def test_reforward_reproduces_terminal_state(self):
        sys2 = tls_system()
        cs = tls_controls(80)
        psi_traj = forward_trajectory(UP, sys2, cs)
        o = sys2.overlap(DOWN, psi_traj[-1])
        chi_traj = backward_propagate(o * DOWN, sys2, cs)
        re_fwd = forward_trajectory(chi_traj[0] / np.linalg.norm(chi_traj[0]), sys2, cs)
        rebuilt = re_fwd[-1] * np.linalg.norm(chi_traj[0])
        assert np.max(np.abs(rebuilt - o * DOWN)) < 1e-9

    def test_backward_forward_identity_static(self):
        sys2 = tls_system()
        cs = tls_controls(60, seed_value=0.5)
        chi_traj = backward_propagate(DOWN, sys2, cs)
        again = forward_trajectory(chi_traj[0], sys2, cs)
        assert np.max(np.abs(again[-1] - DOWN)) < 1e-10

    def test_chi_norm_is_overlap_modulus(self):
        sys2 = tls_system()
        cs = tls_controls(80)
        psi_traj = forward_trajectory(UP, sys2, cs)
        o = sys2.overlap(DOWN, psi_traj[-1])
        chi_traj = backward_propagate(o * DOWN, sys2, cs)
        norms = [np.linalg.norm(chi) for chi in chi_traj]
        assert np.max(np.abs(np.array(norms) - abs(o))) < 1e-10


class TestKrotovTLS:
    def test_target_equals_start_returns_immediately(self):
        # sz drive on |up>: pure phase evolution, so the seed already wins
        sys2 = MatrixSystem(SZ, [SZ])
        cs = tls_controls(40)
        opt, trace = krotov_optimize(sys2, UP, UP, cs, 50, 0.999)
        assert trace.n_iterations == 0
        assert trace.stop_reason == "target reached"
        assert trace.fidelities[0] == pytest.approx(1.0, abs=1e-12)
        assert np.array_equal(opt.sample_matrix(), cs.sample_matrix())

    def test_spin_flip_beats_segment_oracle(self):
        oracle = tls_three_segment_best(-2.0, 2.0, 41, 3.0)
        assert oracle == pytest.approx(TLS_GRID41_BEST, abs=1e-10)
        sys2 = tls_system()
        opt, trace = krotov_optimize(sys2, UP, DOWN, tls_controls(), 400, 1.0 - 1e-7)
        f_final = trace.fidelities[-1]
        assert f_final >= 0.9999
        # fine piecewise-constant controls contain every 3-segment pulse
        assert f_final >= oracle
        assert np.all(np.diff(trace.fidelities) >= -1e-10)

    def test_deferred_update_also_converges(self):
        sys2 = tls_system()
        opt, trace = krotov_optimize(
            sys2, UP, DOWN, tls_controls(), 400, 1.0 - 1e-7, update="deferred"
        )
        assert trace.fidelities[-1] >= 0.9999
        assert np.all(np.diff(trace.fidelities) >= -1e-10)

    def test_bounds_respected_after_optimization(self):
        sys2 = tls_system()
        opt, _ = krotov_optimize(sys2, UP, DOWN, tls_controls(), 100, 1.0 - 1e-7)
        for ch in opt.channels:
            assert np.all(ch.samples >= ch.lower)
            assert np.all(ch.samples <= ch.upper)

    def test_pinned_endpoints_frozen(self):
        sys2 = tls_system()
        cs = tls_controls(pinned=True)
        opt, trace = krotov_optimize(sys2, UP, DOWN, cs, 60, 1.0 - 1e-7)
        assert opt.channels[0].samples[0] == 0.3
        assert opt.channels[0].samples[-1] == 0.3
        assert trace.fidelities[-1] > 0.999  # interior samples still do the work

    def test_unnormalized_input_rejected(self):
        sys2 = tls_system()
        with pytest.raises(DomainError):
            krotov_optimize(sys2, 2.0 * UP, DOWN, tls_controls(), 5, 0.9)

    def test_orthogonal_target_gives_zero_update_and_stagnates(self):
        # sz drive commutes with sz, so the overlap with |down> stays 0 and
        # chi(T) = 0: step 4 must leave every sample untouched.
        sys2 = MatrixSystem(SZ, [SZ])
        cs = tls_controls(40)
        opt, trace = krotov_optimize(sys2, UP, DOWN, cs, 30, 0.999)
        assert np.array_equal(opt.sample_matrix(), cs.sample_matrix())
        assert trace.stop_reason == "stagnation"
        assert np.all(trace.fidelities == 0.0)

    def test_unknown_scheme_rejected(self):
        with pytest.raises(DomainError):
            krotov_optimize(tls_system(), UP, DOWN, tls_controls(), 5, 0.9, update="magic")

    def test_propagation_error_carries_iteration(self):
        class FragileSystem(MatrixSystem):
            def step(self, state, values, dt):
                if abs(values[0]) > 0.35:
                    raise ConvergenceError("blew up")
                return super().step(state, values, dt)

        sys2 = FragileSystem(SZ, [SX])
        with pytest.raises(ColdgateError, match="during Krotov iteration"):
            krotov_optimize(sys2, UP, DOWN, tls_controls(seed_value=0.34), 10, 0.9999)

    def test_trace_snapshots_thinned(self):
        sys2 = tls_system()
        _, trace = krotov_optimize(
            sys2, UP, DOWN, tls_controls(), 9, 2.0, snapshot_every=3
        )
        iterations = [j for j, _ in trace.snapshots]
        assert iterations == [0, 3, 6, 9]
        assert set(trace.snapshots[0][1]) == {"u"}


class TestGradient:
    def test_matches_finite_differences_at_random_times(self):
        sys2 = tls_system()
        cs = tls_controls(150)
        tg = cs.tg
        psi_traj = forward_trajectory(UP, sys2, cs)
        o = sys2.overlap(DOWN, psi_traj[-1])
        chi_traj = backward_propagate(o * DOWN, sys2, cs)
        grad = discrete_gradient(sys2, psi_traj, chi_traj, cs)

        def objective(samples):
            psi = UP
            for i in range(tg.n_steps):
                psi = sys2.step(psi, samples[:, i], tg.dt)
            return abs(sys2.overlap(DOWN, psi)) ** 2

        rng = np.random.default_rng(7)
        delta = 1e-4 * 4.0  # 1e-4 of the control range
        for i in rng.choice(tg.n_steps, size=20, replace=False):
            s = cs.sample_matrix()
            s[0, i] += delta
            f_plus = objective(s)
            s[0, i] -= 2.0 * delta
            f_minus = objective(s)
            fd = (f_plus - f_minus) / (2.0 * delta)
            assert grad[0, i] == pytest.approx(fd, rel=1e-5)


class TestGrid1PSystem:
    def grid_setup(self):
        grid = Grid1D(-8.0, 8.0, 64)

        def v_of(values):
            return 0.5 * (grid.x - values[0]) ** 2

        def dv_of(c, values):
            return -(grid.x - values[0])

        return grid, v_of, dv_of

    def test_fd_fallback_matches_analytic_derivative(self):
        grid, v_of, dv_of = self.grid_setup()
        analytic = Grid1PSystem(grid, v_of, dv_of=dv_of)
        numeric = Grid1PSystem(grid, v_of, fd_steps=[1e-6 * 2.0])
        psi = gaussian_packet(grid, 0.3, 0.8, 0.0).amps
        got = numeric.dh(psi, 0, [0.2])
        want = analytic.dh(psi, 0, [0.2])
        assert np.max(np.abs(got - want)) < 1e-6

    def test_fd_fallback_requires_steps(self):
        grid, v_of, _ = self.grid_setup()
        bare = Grid1PSystem(grid, v_of)
        with pytest.raises(DomainError):
            bare.dh(np.zeros(64, dtype=complex), 0, [0.0])

    def test_packet_steering_improves_fidelity(self):
        grid, v_of, dv_of = self.grid_setup()
        system = Grid1PSystem(grid, v_of, dv_of=dv_of)
        ground = stationary_states(lambda x: 0.5 * x**2, grid, 1)[0].state.amps
        target = stationary_states(lambda x: 0.5 * (x - 0.6) ** 2, grid, 1)[0].state.amps
        tg = TimeGrid(0.0, 2.0, 200)
        cs = ControlSet(tg, [ControlChannel("c", np.zeros(200), -1.0, 1.0, pinned=False)])
        seed_final = forward_trajectory(ground, system, cs)[-1]
        f_seed = abs(system.overlap(target, seed_final)) ** 2
        opt, trace = krotov_optimize(system, ground, target, cs, 80, 0.995)
        assert trace.fidelities[0] == pytest.approx(f_seed, abs=1e-12)
        assert trace.fidelities[-1] > 0.98
        assert trace.fidelities[-1] > f_seed
        assert np.all(np.diff(trace.fidelities) >= -1e-10)


class TestCsvExports:
    def test_trace_csv_layout(self, tmp_path):
        trace = OptimizationTrace(
            fidelities=np.array([0.25, 0.5, 1.0 / 3.0]),
            stop_reason="max iterations",
            extras={"phi_g": np.array([0.1, 0.2, 0.3])},
        )
        path = tmp_path / "trace.csv"
        write_trace_csv(trace, path)
        raw = path.read_bytes()
        assert b"\r" not in raw
        lines = raw.decode().splitlines()
        assert lines[0] == "iteration,fidelity,phi_g"
        assert lines[1] == "0,0.25,0.1"
        assert len(lines) == 4
        assert "." in lines[3] and "," in lines[3]

    def test_controls_csv_layout(self, tmp_path):
        cs = tls_controls(4, seed_value=0.5)
        path = tmp_path / "controls.csv"
        write_controls_csv(cs, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,u"
        assert len(lines) == 5
        t0 = float(lines[1].split(",")[0])
        assert t0 == pytest.approx(cs.tg.midpoints[0])
