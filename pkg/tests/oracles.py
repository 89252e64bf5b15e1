"""Independent numerical oracles used by the test suite.

These deliberately avoid the package's own operators: Numerov shooting for
bound states, adaptive quadrature for perturbative phases, direct Fock-space
enumeration for lattice checks. Agreement between package and oracle is the
point, so nothing here may import coldgate internals beyond plain grids.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq


def numerov_shoot(v_func, energy, x, parity):
    """Integrate psi'' = 2 (V - E) psi from the left wall to x = 0.

    Returns the matching residual at the symmetry point: psi'(0) for even
    parity, psi(0) for odd. x must be increasing, symmetric about 0, and
    include 0 and at least two points beyond it.
    """
    h = x[1] - x[0]
    f = 2.0 * (v_func(x) - energy)
    c = 1.0 - h * h * f / 12.0  # Numerov weights for psi'' = f psi
    psi = np.zeros_like(x)
    psi[0] = 0.0
    psi[1] = 1e-8
    for i in range(1, len(x) - 1):
        psi[i + 1] = ((12.0 - 10.0 * c[i]) * psi[i] - c[i - 1] * psi[i - 1]) / c[i + 1]
        if abs(psi[i + 1]) > 1e100:  # rescale to dodge overflow in forbidden regions
            psi[: i + 2] /= abs(psi[i + 1])
    i0 = int(np.argmin(np.abs(x)))
    if parity == "even":
        # O(h^4) centered derivative at the symmetry point
        return (8.0 * (psi[i0 + 1] - psi[i0 - 1]) - (psi[i0 + 2] - psi[i0 - 2])) / (12.0 * h)
    return psi[i0]


def shooting_levels(v_func, x_half, e_grid, parities=("even", "odd")):
    """Bound-state energies by bisecting sign changes of the Numerov residual.

    x_half: positive half-width of the integration box (walls at +-x_half).
    e_grid: energies at which the residual is sampled to bracket roots.
    Returns a sorted list of (energy, parity).
    """
    n = 20001  # Numerov is O(h^4); this gives ~1e-10 energies for smooth wells
    x = np.linspace(-x_half, x_half, n)
    found = []
    for parity in parities:
        r = np.array([numerov_shoot(v_func, e, x, parity) for e in e_grid])
        for i in range(len(e_grid) - 1):
            if np.sign(r[i]) != np.sign(r[i + 1]) and np.isfinite(r[i]) and np.isfinite(r[i + 1]):
                e_root = brentq(
                    lambda e: numerov_shoot(v_func, e, x, parity),
                    e_grid[i],
                    e_grid[i + 1],
                    xtol=1e-12,
                    rtol=1e-14,
                )
                found.append((e_root, parity))
    return sorted(found)


def relative_cusp_shoot(g, omega, r_max, energy, n=40001):
    """Matching defect for the two-atom relative problem.

    Relative coordinate r = x1 - x2 of two unit masses in a common harmonic
    well omega, reduced mass 1/2:
    -psi'' + (omega^2 / 4) r^2 psi + g delta(r) psi = E psi.
    The contact term is the cusp condition psi'(0+) - psi'(0-) = g psi(0)
    (even sector; odd states never feel the delta).

    Integrates inward from r_max with psi ~ 0 in the forbidden region and
    returns 2 psi'(0+) - g psi(0), whose roots are even-sector eigenvalues.
    """
    x = np.linspace(r_max, 0.0, n)  # inward sweep, h < 0
    h = x[1] - x[0]
    f = omega**2 / 4.0 * x**2 - energy  # psi'' = f psi away from r = 0
    c = 1.0 - h * h * f / 12.0
    psi = np.zeros_like(x)
    psi[0] = 0.0
    psi[1] = 1e-10
    for i in range(1, n - 1):
        psi[i + 1] = ((12.0 - 10.0 * c[i]) * psi[i] - c[i - 1] * psi[i - 1]) / c[i + 1]
        if abs(psi[i + 1]) > 1e100:
            psi[: i + 2] /= abs(psi[i + 1])
    # one-sided O(h^3) derivative toward r -> 0+; psi[-1] = psi(0)
    hp = abs(h)
    dpsi0 = (-11.0 * psi[-1] + 18.0 * psi[-2] - 9.0 * psi[-3] + 2.0 * psi[-4]) / (6.0 * hp)
    return 2.0 * dpsi0 - g * psi[-1]


def two_atom_relative_energy(g, omega, r_max=12.0, bracket=None):
    """Even-sector relative ground energy with the contact cusp, by shooting."""
    if bracket is None:
        # noninteracting even ground energy is omega/2; repulsion pushes it up
        lo, hi = 0.5 * omega * (1.0 - 1e-9), 1.49 * omega
        if g < 0:
            lo, hi = -2.0 * abs(g) ** 2 - omega, 0.5 * omega * (1.0 - 1e-9)
    else:
        lo, hi = bracket
    return brentq(
        lambda e: relative_cusp_shoot(g, omega, r_max, e),
        lo,
        hi,
        xtol=1e-12,
        rtol=1e-14,
    )


def lowest_hopping_energy(length, periodic=False):
    """Single-particle ground energy of the tight-binding chain at J = 1."""
    h = np.zeros((length, length))
    for j in range(length - 1):
        h[j, j + 1] = h[j + 1, j] = -1.0
    if periodic and length > 2:
        h[0, -1] = h[-1, 0] = -1.0
    return float(np.linalg.eigvalsh(h)[0])


# ---------------------------------------------------------------------------
# hyperfine product-basis oracle (I = 3/2, J = 1/2)

PRODUCT_BASIS = [(m_i, m_j) for m_i in (-1.5, -0.5, 0.5, 1.5) for m_j in (-0.5, 0.5)]


def _ladder(s):
    """(S+, Sz) for spin s in the basis m = -s .. +s."""
    dim = int(round(2 * s)) + 1
    m = -s + np.arange(dim)
    sp = np.zeros((dim, dim))
    for k in range(dim - 1):
        sp[k + 1, k] = np.sqrt(s * (s + 1) - m[k] * (m[k] + 1))
    return sp, np.diag(m)


def hyperfine_states_oracle():
    """|F, mF> vectors in the product basis, by diagonalizing F^2 block-wise.

    Independent of any tabulated Clebsch-Gordan coefficients. Phases follow
    Condon-Shortley: for F = 2 the (m_I = mF - 1/2, up) component is made
    positive (falling back to the down component for stretched states), for
    F = 1 the (m_I = mF + 1/2, down) component is made positive.
    """
    ip, iz = _ladder(1.5)
    jp, jz = _ladder(0.5)
    i4, j2 = np.eye(4), np.eye(2)
    # operators on the product space, ordering PRODUCT_BASIS = (m_i, m_j)
    def kron(a, b):
        return np.kron(a, b)

    iz_f = kron(iz, j2)
    jz_f = kron(i4, jz)
    idotj = kron(iz, jz) + 0.5 * (kron(ip, jp.T) + kron(ip.T, jp))
    f2 = (1.5 * 2.5 + 0.5 * 1.5) * np.eye(8) + 2.0 * idotj
    fz = iz_f + jz_f

    states = {}
    mf_diag = np.diag(fz)
    for mf in (-2, -1, 0, 1, 2):
        idx = np.where(np.isclose(mf_diag, mf))[0]
        block = f2[np.ix_(idx, idx)]
        vals, vecs = np.linalg.eigh(block)
        for val, col in zip(vals, vecs.T):
            f = 2 if np.isclose(val, 6.0) else 1
            if f == 1 and abs(mf) > 1:
                raise AssertionError("F=1 block leaked outside |mF| <= 1")
            vec = np.zeros(8)
            vec[idx] = col
            # phase convention
            lookup = {b: k for k, b in enumerate(PRODUCT_BASIS)}
            if f == 2:
                key = (mf - 0.5, 0.5)
                if key in lookup and abs(vec[lookup[key]]) > 1e-12:
                    if vec[lookup[key]] < 0:
                        vec = -vec
                else:
                    key = (mf + 0.5, -0.5)
                    if vec[lookup[key]] < 0:
                        vec = -vec
            else:
                key = (mf + 0.5, -0.5)
                if vec[lookup[key]] < 0:
                    vec = -vec
            states[(f, mf)] = vec
    return states


def rabi_matrix_oracle(b_mw_vec, mu_b, g_j):
    """Omega[(m1, m2)] from brute-force 8x8 conjugation, complex field allowed."""
    jp, jz = _ladder(0.5)
    jx = 0.5 * (jp + jp.T)
    jy = (jp - jp.T) / 2j
    bx, by, bz = b_mw_vec
    jb = bx * jx + by * jy + bz * jz
    m8 = mu_b * g_j * np.kron(np.eye(4), jb)
    states = hyperfine_states_oracle()
    out = {}
    for m1 in (-1, 0, 1):
        for m2 in (-2, -1, 0, 1, 2):
            v1 = states[(1, m1)]
            v2 = states[(2, m2)]
            out[(m1, m2)] = complex(v2 @ m8 @ v1)
    return out


def tls_three_segment_best(u_lo, u_hi, m, total_time):
    """Best spin-flip fidelity for H = sz + u sx over 3-segment pulses.

    Exhaustive search on an m-point amplitude grid per segment, segment
    propagators from the closed-form SU(2) rotation (axis (u, 0, 1),
    angle 2 T sqrt(1 + u^2)), so nothing here touches the package.
    """
    sz = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
    sx = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    us = np.linspace(u_lo, u_hi, m)
    t_seg = total_time / 3.0

    def segment(u):
        h = np.sqrt(1.0 + u * u)
        return np.cos(t_seg * h) * np.eye(2) - 1j * np.sin(t_seg * h) * (sz + u * sx) / h

    props = np.array([segment(u) for u in us])
    pairs = np.einsum("bij,ajk->baik", props, props)
    # spin-flip amplitude <down| P_c P_b P_a |up> for every triple
    amps = np.einsum("ck,bak->cba", props[:, 1, :], pairs[..., 0])
    return float(np.max(np.abs(amps) ** 2))
