"""Trap potentials: analytic families, state-selective combinations, and
microwave dressed potentials for the 87Rb 5S_1/2 hyperfine manifold.

Potentials are small frozen dataclasses evaluating pointwise via __call__;
anything accepting a potential also accepts a bare callable x -> V(x).

The microwave part works on the ground-state manifold of an alkali with
nuclear spin I = 3/2 and electronic J = 1/2 (g_J ~ 2), qubit states
|0> = |F=1, mF=-1> and |1> = |F=2, mF=+1>. A microwave field B_mw detuned by
Delta0 from the hyperfine splitting dresses the levels; in the rotating-wave
approximation and for large detuning every |1,m1> -> |2,m2> transition with
|m2 - m1| <= 1 contributes +|Omega|^2 / (4 Delta) to the F=1 level and the
opposite sign to the F=2 level. A static field B_s(x) Zeeman-shifts the
transitions, making the dressing position dependent, which is what produces
state-selective wells on a chip. All profiles here are 1D axial cuts
tabulated on a Grid1D, in trap units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ValidityError
from .grids import Grid1D

# ---------------------------------------------------------------------------
# analytic potential families


@dataclass(frozen=True)
class Harmonic:
    """V(x) = omega^2 (x - center)^2 / 2."""

    omega: float
    center: float = 0.0

    def __call__(self, x):
        return 0.5 * self.omega**2 * (np.asarray(x, dtype=float) - self.center) ** 2


@dataclass(frozen=True)
class Uniform:
    """Constant potential V(x) = value (useful as an energy offset)."""

    value: float = 0.0

    def __call__(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.value)


@dataclass(frozen=True)
class QuarticDoubleWell:
    """V(x) = barrier_height * ((x/a)^2 - 1)^2 with minima at +-a.

    a = well_separation / 2; V(+-a) = 0 and V(0) = barrier_height.
    """

    barrier_height: float
    well_separation: float

    def __post_init__(self):
        if self.barrier_height <= 0 or self.well_separation <= 0:
            raise DomainError("barrier_height and well_separation must be positive")

    @property
    def half_separation(self) -> float:
        return 0.5 * self.well_separation

    def __call__(self, x):
        a = self.half_separation
        return self.barrier_height * ((np.asarray(x, dtype=float) / a) ** 2 - 1.0) ** 2


@dataclass(frozen=True)
class SplitHarmonicPair:
    """Two mirror-image harmonic wells, V(x) = omega^2 (|x| - x0)^2 / 2.

    Stand-in for "the double well seen by the untouched qubit state": the
    cusp at x = 0 is exponentially outside the occupied region for x0 more
    than a few oscillator lengths.
    """

    omega: float
    half_separation: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.omega**2 * (np.abs(x) - self.half_separation) ** 2


@dataclass(frozen=True)
class AnharmonicPerturbed:
    """Base potential plus cubic and quartic corrections about x = 0."""

    base: object
    c3: float = 0.0
    c4: float = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.base(x) + self.c3 * x**3 + self.c4 * x**4


@dataclass(frozen=True)
class Tabulated:
    """Samples on a grid, linearly interpolated off the nodes."""

    grid: Grid1D
    samples: tuple

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        if arr.shape != (self.grid.n_points,):
            raise DomainError(
                f"samples shape {arr.shape} does not match grid ({self.grid.n_points},)"
            )
        if not np.all(np.isfinite(arr)):
            raise DomainError("tabulated samples must be finite")
        object.__setattr__(self, "samples", tuple(float(v) for v in arr))

    def __call__(self, x):
        return np.interp(np.asarray(x, dtype=float), self.grid.x, np.asarray(self.samples))


@dataclass(frozen=True)
class Composite:
    """Weighted sum of potentials."""

    terms: tuple
    weights: tuple

    def __post_init__(self):
        if len(self.terms) != len(self.weights) or not self.terms:
            raise DomainError("Composite needs equally many terms and weights, at least one")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for w, term in zip(self.weights, self.terms):
            total = total + w * term(x)
        return total


def anharmonic(base_omega: float, c3: float, c4: float) -> AnharmonicPerturbed:
    """V(x) = omega^2 x^2 / 2 + c3 x^3 + c4 x^4."""
    return AnharmonicPerturbed(Harmonic(base_omega), c3, c4)


# ---------------------------------------------------------------------------
# state-selective combination


@dataclass(frozen=True)
class StateSelective:
    """V_k(x; lambda) = u_c(x) + lambda * u_k(x) for qubit state k in {0, 1}.

    lambda is the shared control knob, clamped to [0, 1] by validation:
    lambda = 0 restores the common potential for both states.
    """

    u_c: object
    u_0: object
    u_1: object

    def potential(self, state: int, lam: float) -> Composite:
        if state not in (0, 1):
            raise DomainError(f"qubit state must be 0 or 1, got {state}")
        if not 0.0 <= lam <= 1.0:
            raise DomainError(f"lambda must lie in [0, 1], got {lam}")
        u_k = self.u_0 if state == 0 else self.u_1
        return Composite((self.u_c, u_k), (1.0, float(lam)))


def state_selective(u_c, u_0, u_1, lam: float, state: int) -> Composite:
    """Evaluated state-selective potential u_c + lambda * u_k."""
    return StateSelective(u_c, u_0, u_1).potential(state, lam)


# ---------------------------------------------------------------------------
# hyperfine structure: I = 3/2 (x) J = 1/2 -> F = 1, 2

M_I_VALUES = (-1.5, -0.5, 0.5, 1.5)
M_J_VALUES = (-0.5, 0.5)


@dataclass(frozen=True)
class HyperfineLevel:
    """|F, mF> label in the 5S_1/2 manifold."""

    f: int
    m_f: int

    def __post_init__(self):
        if self.f not in (1, 2):
            raise DomainError(f"F must be 1 or 2, got {self.f}")
        if abs(self.m_f) > self.f:
            raise DomainError(f"|mF| must not exceed F, got mF = {self.m_f} for F = {self.f}")


QUBIT_ZERO = HyperfineLevel(1, -1)
QUBIT_ONE = HyperfineLevel(2, 1)

# Clebsch-Gordan expansion |F, mF> = sum_c c * |m_I = mF - m_J, m_J>, exact
# rationals under the square roots (Condon-Shortley phases, stretching
# |2, +2> = |m_I=3/2, up>). Keys (F, mF), entries (m_I, m_J, coefficient).
CLEBSCH_GORDAN_3HALF_HALF = {
    (2, 2): ((1.5, 0.5, 1.0),),
    (2, 1): ((0.5, 0.5, math.sqrt(3.0 / 4.0)), (1.5, -0.5, math.sqrt(1.0 / 4.0))),
    (2, 0): ((-0.5, 0.5, math.sqrt(2.0 / 4.0)), (0.5, -0.5, math.sqrt(2.0 / 4.0))),
    (2, -1): ((-1.5, 0.5, math.sqrt(1.0 / 4.0)), (-0.5, -0.5, math.sqrt(3.0 / 4.0))),
    (2, -2): ((-1.5, -0.5, 1.0),),
    (1, 1): ((0.5, 0.5, -math.sqrt(1.0 / 4.0)), (1.5, -0.5, math.sqrt(3.0 / 4.0))),
    (1, 0): ((-0.5, 0.5, -math.sqrt(2.0 / 4.0)), (0.5, -0.5, math.sqrt(2.0 / 4.0))),
    (1, -1): ((-1.5, 0.5, -math.sqrt(3.0 / 4.0)), (-0.5, -0.5, math.sqrt(1.0 / 4.0))),
}

F1_M = (-1, 0, 1)
F2_M = (-2, -1, 0, 1, 2)


def ms_weights(level: HyperfineLevel) -> dict:
    """Marginal |coefficient|^2 on m_J = -1/2, +1/2 for a hyperfine state."""
    w = {-0.5: 0.0, 0.5: 0.0}
    for m_i, m_j, c in CLEBSCH_GORDAN_3HALF_HALF[(level.f, level.m_f)]:
        w[m_j] += c * c
    return w


# ---------------------------------------------------------------------------
# lin-theta-lin standing-wave lattice


@dataclass(frozen=True)
class LinThetaLin:
    """State-dependent standing wave, V_{ms}(z) = depth * sin^2(kappa z +- theta).

    Two counter-propagating linear polarizations enclosing angle 2 theta
    give the two electron-spin components opposite lattice displacements;
    a hyperfine state sees the ms_weights-weighted mix. The convention
    |0> = |1,+1>, |1> = |2,+2> makes state |1> ride the m_s = +1/2 lattice
    alone while |0> sees the 1/4 : 3/4 mixture.
    """

    depth: float
    kappa: float
    theta: float
    level: HyperfineLevel

    def component(self, m_s: float):
        sign = 1.0 if m_s > 0 else -1.0

        def v(z):
            return self.depth * np.sin(self.kappa * np.asarray(z, dtype=float) + sign * self.theta) ** 2

        return v

    def __call__(self, z):
        w = ms_weights(self.level)
        z = np.asarray(z, dtype=float)
        return w[0.5] * self.component(0.5)(z) + w[-0.5] * self.component(-0.5)(z)


def lin_theta_lin(depth: float, kappa: float, theta: float, level: HyperfineLevel) -> LinThetaLin:
    if depth < 0 or kappa <= 0:
        raise DomainError("depth must be >= 0 and kappa > 0")
    return LinThetaLin(depth, kappa, theta, level)


# ---------------------------------------------------------------------------
# microwave dressing


def _spin_half_matrix(b_vec):
    """J . B for J = 1/2 in the (down, up) basis; B may be complex (RWA phasor)."""
    bx, by, bz = b_vec
    return 0.5 * np.array(
        [
            [-bz, bx + 1j * by],
            [bx - 1j * by, bz],
        ],
        dtype=complex,
    )


@dataclass
class MicrowaveConfig:
    """Axial field profiles and coupling constants for microwave dressing.

    b_static: |B_s|(x) on the grid, (n,).
    b_mw: complex Cartesian microwave amplitude (3, n) in the rotating frame.
    e_mw: |E_mw|(x) on the grid (the co-propagating electric field), (n,).
    delta0: carrier detuning from the zero-field hyperfine splitting.
    alpha: scalar polarizability for the common Stark term -(alpha/4)|E|^2.
    mu_b: Bohr magneton in trap units (energy per field).
    g_j: electronic g-factor, ~2 for 5S_1/2.
    min_detuning_ratio: validity floor for |Delta|^2 / |Omega|^2, pointwise.

    Construction evaluates the Rabi matrix and fails with ValidityError if
    any coupled transition violates the large-detuning condition anywhere.
    """

    grid: Grid1D
    b_static: np.ndarray
    b_mw: np.ndarray
    e_mw: np.ndarray
    delta0: float
    alpha: float = 0.0
    mu_b: float = 1.0
    g_j: float = 2.0
    min_detuning_ratio: float = 100.0

    def __post_init__(self):
        n = self.grid.n_points
        self.b_static = np.asarray(self.b_static, dtype=float)
        self.b_mw = np.asarray(self.b_mw, dtype=complex)
        self.e_mw = np.asarray(self.e_mw, dtype=float)
        if self.b_static.shape != (n,):
            raise DomainError(f"b_static must have shape ({n},), got {self.b_static.shape}")
        if self.b_mw.shape != (3, n):
            raise DomainError(f"b_mw must have shape (3, {n}), got {self.b_mw.shape}")
        if self.e_mw.shape != (n,):
            raise DomainError(f"e_mw must have shape ({n},), got {self.e_mw.shape}")
        if self.min_detuning_ratio <= 0:
            raise DomainError("min_detuning_ratio must be positive")
        _check_detuning_validity(self)

    @classmethod
    def uniform(cls, grid, b_static, b_mw_vec, e_mw, delta0, **kw):
        """Spatially constant fields; b_mw_vec is a Cartesian 3-vector."""
        n = grid.n_points
        return cls(
            grid=grid,
            b_static=np.full(n, float(b_static)),
            b_mw=np.outer(np.asarray(b_mw_vec, dtype=complex), np.ones(n)),
            e_mw=np.full(n, float(e_mw)),
            delta0=float(delta0),
            **kw,
        )


def rabi_frequencies(config: MicrowaveConfig) -> np.ndarray:
    """Omega[i1, i2, :] = <2, m2| mu_B g_J J.B_mw(x) |1, m1> over the grid.

    i1 indexes m1 over F1_M, i2 indexes m2 over F2_M. Entries with
    |m2 - m1| >= 2 vanish identically: J.B changes m_J by at most one and
    leaves m_I alone.
    """
    n = config.grid.n_points
    omega = np.zeros((len(F1_M), len(F2_M), n), dtype=complex)
    # J.B in the m_J basis, per grid point: shape (2, 2, n)
    jb = np.zeros((2, 2, n), dtype=complex)
    for p in range(n):
        jb[:, :, p] = _spin_half_matrix(config.b_mw[:, p])
    mj_index = {-0.5: 0, 0.5: 1}
    scale = config.mu_b * config.g_j
    for i1, m1 in enumerate(F1_M):
        for i2, m2 in enumerate(F2_M):
            acc = np.zeros(n, dtype=complex)
            for mi2, mj2, c2 in CLEBSCH_GORDAN_3HALF_HALF[(2, m2)]:
                for mi1, mj1, c1 in CLEBSCH_GORDAN_3HALF_HALF[(1, m1)]:
                    if mi1 != mi2:
                        continue  # J acts only on the electron spin
                    acc += c2 * c1 * jb[mj_index[mj2], mj_index[mj1], :]
            omega[i1, i2, :] = scale * acc
    return omega


def detuning(config: MicrowaveConfig, m1: int, m2: int) -> np.ndarray:
    """Delta(x) = delta0 - (mu_B / 2) (m1 + m2) |B_s(x)| for |1,m1> -> |2,m2>."""
    if m1 not in F1_M or m2 not in F2_M:
        raise DomainError(f"no transition (1,{m1}) -> (2,{m2})")
    return config.delta0 - 0.5 * config.mu_b * (m1 + m2) * np.abs(config.b_static)


def _check_detuning_validity(config: MicrowaveConfig):
    omega = rabi_frequencies(config)
    ratio = config.min_detuning_ratio
    for i1, m1 in enumerate(F1_M):
        for i2, m2 in enumerate(F2_M):
            if abs(m2 - m1) > 1:
                continue
            w2 = np.abs(omega[i1, i2, :]) ** 2
            if not np.any(w2 > 0):
                continue
            d2 = detuning(config, m1, m2) ** 2
            bad = d2 < ratio * w2
            if np.any(bad):
                x_bad = config.grid.x[np.argmax(bad)]
                raise ValidityError(
                    f"large-detuning condition |Delta|^2 >= {ratio} |Omega|^2 fails "
                    f"for (1,{m1})->(2,{m2}) near x = {x_bad:.3f}"
                )
    return omega


def microwave_potentials(config: MicrowaveConfig):
    """Dressed shifts for every level: (V1[i1, :], V2[i2, :]).

    V^{1,m1} = +1/4 sum_m2 |Omega|^2 / Delta, V^{2,m2} = -1/4 sum_m1 (same
    summand): each coupled pair is pushed apart symmetrically.
    """
    omega = rabi_frequencies(config)
    n = config.grid.n_points
    v1 = np.zeros((len(F1_M), n))
    v2 = np.zeros((len(F2_M), n))
    for i1, m1 in enumerate(F1_M):
        for i2, m2 in enumerate(F2_M):
            if abs(m2 - m1) > 1:
                continue
            w2 = np.abs(omega[i1, i2, :]) ** 2
            if not np.any(w2 > 0):
                continue
            term = 0.25 * w2 / detuning(config, m1, m2)
            v1[i1, :] += term
            v2[i2, :] -= term
    return v1, v2


def stark_shift(config: MicrowaveConfig) -> np.ndarray:
    """Common scalar light shift -(alpha/4) |E_mw|^2, state independent."""
    return -0.25 * config.alpha * config.e_mw**2


def qubit_potentials(config: MicrowaveConfig):
    """(u_0, u_1) for the qubit pair |0> = |1,-1>, |1> = |2,+1>.

    u_0 = stark + (1/4) sum_{m2=-2..0} |Omega_{1,-1}^{2,m2}|^2 / Delta,
    u_1 = stark - (1/4) sum_{m1=0..+1} |Omega_{1,m1}^{2,+1}|^2 / Delta.
    The sums run over exactly the selection-rule-allowed transitions.
    """
    omega = rabi_frequencies(config)
    stark = stark_shift(config)
    i1_qubit = F1_M.index(-1)
    u0 = stark.copy()
    for m2 in (-2, -1, 0):
        i2 = F2_M.index(m2)
        w2 = np.abs(omega[i1_qubit, i2, :]) ** 2
        u0 += 0.25 * w2 / detuning(config, -1, m2)
    i2_qubit = F2_M.index(1)
    u1 = stark.copy()
    for m1 in (0, 1):
        i1 = F1_M.index(m1)
        w2 = np.abs(omega[i1, i2_qubit, :]) ** 2
        u1 -= 0.25 * w2 / detuning(config, m1, 1)
    return u0, u1
