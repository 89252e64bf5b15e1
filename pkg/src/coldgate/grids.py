"""Spatial and temporal grids, wavefunction containers, bound states.

Everything in the package works in trap units: hbar = m = 1 and a reference
axial frequency omega_ref = 1, so lengths are in sqrt(hbar / (m omega_ref)),
times in 1 / omega_ref and energies in hbar omega_ref. SI values only exist
at the CLI boundary (see config.py).

The position grid includes both endpoints, dx = (x_max - x_min) / (n - 1).
Wavefunctions are assumed negligible at the grid edge; propagators enforce
that (amplitude below 1e-10), which makes the periodic spectral kinetic step
and the hard-wall bound-state operator agree to the same tolerance.

Bound states come from a hard-wall sine-DVR kinetic matrix (box just outside
the grid endpoints) plus the diagonal potential, diagonalized by the LAPACK
subset driver. That operator is spectrally accurate: doubling the grid moves
converged harmonic eigenvalues by less than 1e-8, which a low-order
finite-difference stencil cannot do at these grid sizes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, DomainError, GridMismatchError

NORM_TOL = 1e-12
RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class Grid1D:
    """Uniform 1D position grid, endpoints included."""

    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise DomainError(f"x_max must exceed x_min, got ({self.x_min}, {self.x_max})")
        if self.n_points < 8 or self.n_points % 2 != 0:
            raise DomainError(f"n_points must be even and >= 8, got {self.n_points}")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)

    @property
    def wavenumbers(self) -> np.ndarray:
        # Periodic wrap one dx past x_max; fine for states that vanish there.
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)

    def same_as(self, other: "Grid1D") -> bool:
        return (
            self.n_points == other.n_points
            and np.isclose(self.x_min, other.x_min)
            and np.isclose(self.x_max, other.x_max)
        )


def make_grid(x_min: float, x_max: float, n_points: int) -> Grid1D:
    """Validated Grid1D constructor."""
    return Grid1D(float(x_min), float(x_max), int(n_points))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid for propagation, t = t_start .. t_end in n_steps steps."""

    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise DomainError(f"t_end must exceed t_start, got ({self.t_start}, {self.t_end})")
        if self.n_steps < 1:
            raise DomainError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.n_steps + 1)

    @property
    def midpoints(self) -> np.ndarray:
        """Per-step sampling times for piecewise-constant controls."""
        return self.times[:-1] + 0.5 * self.dt


def _check_norm(norm_sq: float, what: str):
    if abs(norm_sq - 1.0) > NORM_TOL:
        raise DomainError(f"{what} must be normalized: |psi|^2 = {norm_sq!r}")


@dataclass
class WaveFn1P:
    """Single-particle wavefunction sampled on a Grid1D."""

    grid: Grid1D
    amps: np.ndarray

    def __post_init__(self):
        self.amps = np.asarray(self.amps, dtype=np.complex128)
        if self.amps.shape != (self.grid.n_points,):
            raise DomainError(
                f"amps shape {self.amps.shape} does not match grid ({self.grid.n_points},)"
            )

    def norm_sq(self) -> float:
        return float(np.sum(np.abs(self.amps) ** 2) * self.grid.dx)

    def normalized(self) -> "WaveFn1P":
        n = np.sqrt(self.norm_sq())
        if n == 0.0:
            raise DomainError("cannot normalize a zero wavefunction")
        return WaveFn1P(self.grid, self.amps / n)

    def require_normalized(self):
        _check_norm(self.norm_sq(), "WaveFn1P")

    def copy(self) -> "WaveFn1P":
        return WaveFn1P(self.grid, self.amps.copy())


@dataclass
class WaveFn2P:
    """Two-particle wavefunction on the tensor grid, amps[i, j] ~ psi(x_i, x_j).

    For two atoms in the same internal state set symmetrize=True to project
    onto the bosonic sector, amps[i, j] = amps[j, i].
    """

    grid: Grid1D
    amps: np.ndarray
    symmetrize: bool = False

    def __post_init__(self):
        self.amps = np.asarray(self.amps, dtype=np.complex128)
        n = self.grid.n_points
        if self.amps.shape != (n, n):
            raise DomainError(f"amps shape {self.amps.shape} does not match grid ({n}, {n})")
        if self.symmetrize:
            self.amps = 0.5 * (self.amps + self.amps.T)

    def norm_sq(self) -> float:
        return float(np.sum(np.abs(self.amps) ** 2) * self.grid.dx**2)

    def normalized(self) -> "WaveFn2P":
        n = np.sqrt(self.norm_sq())
        if n == 0.0:
            raise DomainError("cannot normalize a zero wavefunction")
        return WaveFn2P(self.grid, self.amps / n)

    def require_normalized(self):
        _check_norm(self.norm_sq(), "WaveFn2P")

    def exchange_asymmetry(self) -> float:
        """Max |amps - amps.T|, zero for a bosonic pair."""
        return float(np.max(np.abs(self.amps - self.amps.T)))

    def copy(self) -> "WaveFn2P":
        return WaveFn2P(self.grid, self.amps.copy())


@dataclass(frozen=True)
class EigenPair:
    """Bound state with its energy and the residual of the eigenproblem."""

    energy: float
    state: WaveFn1P
    residual: float = 0.0


def overlap(a, b) -> complex:
    """<a|b> with the grid measure (dx for one particle, dx^2 for two)."""
    if type(a) is not type(b):
        raise GridMismatchError(f"cannot overlap {type(a).__name__} with {type(b).__name__}")
    if not a.grid.same_as(b.grid):
        raise GridMismatchError("overlap requires matching grids")
    if isinstance(a, WaveFn1P):
        return complex(np.sum(np.conj(a.amps) * b.amps) * a.grid.dx)
    if isinstance(a, WaveFn2P):
        return complex(np.sum(np.conj(a.amps) * b.amps) * a.grid.dx**2)
    raise DomainError(f"unsupported operand type {type(a).__name__}")


def _sine_dvr_kinetic(grid: Grid1D) -> np.ndarray:
    """Hard-wall kinetic matrix (particle-in-box DVR), walls one dx outside."""
    n = grid.n_points
    dx = grid.dx
    m = n + 1  # number of intervals in the box [x_min - dx, x_max + dx]
    i = np.arange(1, n + 1)
    pref = np.pi**2 / (4.0 * (m * dx) ** 2)
    diag = pref * ((2.0 * m**2 + 1.0) / 3.0 - 1.0 / np.sin(np.pi * i / m) ** 2)
    t = np.empty((n, n))
    ii, jj = np.meshgrid(i, i, indexing="ij")
    with np.errstate(divide="ignore"):
        off = (
            pref
            * (-1.0) ** (ii - jj)
            * (
                1.0 / np.sin(np.pi * (ii - jj) / (2.0 * m)) ** 2
                - 1.0 / np.sin(np.pi * (ii + jj) / (2.0 * m)) ** 2
            )
        )
    t[:, :] = off
    t[np.arange(n), np.arange(n)] = diag
    return t  # prefactor already carries hbar^2 / 2m = 1/2


def hamiltonian_matrix(potential, grid: Grid1D) -> np.ndarray:
    """Dense Hamiltonian for bound-state work: sine-DVR kinetic + diagonal V."""
    v = potential_values(potential, grid)
    h = _sine_dvr_kinetic(grid)
    h[np.arange(grid.n_points), np.arange(grid.n_points)] += v
    return h


def potential_values(potential, grid: Grid1D) -> np.ndarray:
    """Evaluate a potential (callable or object with .values) on the grid."""
    if hasattr(potential, "values"):
        v = potential.values(grid)
    else:
        v = potential(grid.x)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (grid.n_points,):
        raise DomainError(f"potential evaluated to shape {v.shape}, expected ({grid.n_points},)")
    if not np.all(np.isfinite(v)):
        raise DomainError("potential evaluated to non-finite values")
    return v


def stationary_states(potential, grid: Grid1D, count: int) -> list[EigenPair]:
    """Lowest `count` bound states of -(1/2) d^2/dx^2 + V(x), hard-wall box.

    Residuals ||H phi - E phi|| / ||phi|| are checked against 1e-8; failure
    raises ConvergenceError with the worst offender.
    """
    if count < 1:
        raise DomainError(f"count must be >= 1, got {count}")
    if count > grid.n_points // 4:
        raise DomainError(
            f"count = {count} too large for n_points = {grid.n_points} (need count <= n/4)"
        )
    h = hamiltonian_matrix(potential, grid)
    try:
        energies, vecs = scipy.linalg.eigh(h, subset_by_index=(0, count - 1))
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK rarely fails
        raise ConvergenceError(f"eigensolver failed: {exc}") from exc
    dx = grid.dx
    pairs = []
    for k in range(count):
        vec = vecs[:, k]
        # LAPACK normalizes sum |v|^2 = 1; convert to the dx measure.
        amps = vec / np.sqrt(dx)
        resid = np.linalg.norm(h @ vec - energies[k] * vec) / np.linalg.norm(vec)
        if resid > RESIDUAL_TOL:
            raise ConvergenceError(
                f"eigenpair {k} residual {resid:.3e} exceeds {RESIDUAL_TOL}",
                iterations=None,
                residual=float(resid),
            )
        # Fix the overall sign: make the largest-magnitude sample positive.
        peak = np.argmax(np.abs(amps))
        if amps[peak].real < 0:
            amps = -amps
        pairs.append(EigenPair(float(energies[k]), WaveFn1P(grid, amps), float(resid)))
    return pairs


def gaussian_packet(grid: Grid1D, x0: float, sigma: float, k0: float = 0.0) -> WaveFn1P:
    """Normalized Gaussian, center x0, width sigma (of |psi|^2), momentum k0."""
    if sigma <= 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    x = grid.x
    amps = np.exp(-((x - x0) ** 2) / (4.0 * sigma**2) + 1j * k0 * x)
    return WaveFn1P(grid, amps).normalized()


def product_state(a: WaveFn1P, b: WaveFn1P, symmetrize: bool = False) -> WaveFn2P:
    """Two-particle product a(x1) b(x2), optionally bosonic symmetrized."""
    if not a.grid.same_as(b.grid):
        raise GridMismatchError("product_state requires matching grids")
    amps = np.outer(a.amps, b.amps)
    psi = WaveFn2P(a.grid, amps, symmetrize=symmetrize)
    return psi.normalized()
