"""Transmon diagonalization and multi-level Purcell decay rates.

The transmon is diagonalized in the charge basis to obtain level energies
and charge dipole elements; the qubit-cavity ladder couplings scale with
the dipole ratios.  Purcell rates come from the dressed eigenstates of
the excitation-number-conserving ladder Hamiltonian: the decay of the
dressed excited state is kappa times the squared photon matrix element
between neighboring excitation subspaces.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import root

from .telegraph import ParameterError


class ConvergenceError(RuntimeError):
    pass


class DressedStateError(RuntimeError):
    """Dressed-state identification by bare-state overlap was ambiguous."""


@dataclass
class TransmonSpec:
    """Charge-basis transmon: energies in angular rad/us."""

    e_j: float
    e_c: float
    n_gate: float = 0.0
    charge_cutoff: int = 30

    def __post_init__(self):
        if self.e_j <= 0 or self.e_c <= 0:
            raise ParameterError("e_j and e_c must be positive")
        if self.charge_cutoff < 10:
            raise ParameterError("charge_cutoff must be at least 10")


@dataclass
class TransmonLevels:
    """Level energies (relative to ground), dipole elements, couplings."""

    omega: np.ndarray  # omega[0] = 0
    dipole: np.ndarray  # <i|n|i+1>, length n_levels - 1
    g: np.ndarray  # per-transition couplings, length n_levels - 1

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        self.dipole = np.asarray(self.dipole, dtype=float)
        self.g = np.asarray(self.g, dtype=float)

    @property
    def n_levels(self) -> int:
        return self.omega.size

    def with_coupling(self, g0: float) -> "TransmonLevels":
        """Scale couplings so the 0-1 transition couples at g0."""
        scale = self.dipole / self.dipole[0]
        return TransmonLevels(self.omega.copy(), self.dipole.copy(), g0 * scale)


@dataclass
class PurcellResult:
    n: float
    rate: float
    n_levels_used: int


def two_level_system(omega01: float, g0: float) -> TransmonLevels:
    """Plain two-level qubit, for dispersive-limit studies."""
    return TransmonLevels(omega=[0.0, omega01], dipole=[1.0], g=[g0])


def diagonalize_transmon(spec: TransmonSpec, n_levels: int,
                         g0: float | None = None) -> TransmonLevels:
    """Lowest transmon eigenstates from the charge-basis Hamiltonian.

    H = 4 E_C (n - n_g)^2 - (E_J/2) sum(|n><n+1| + h.c.) on charge states
    |n| <= cutoff.  Energies are shifted so the ground level is zero;
    dipole elements are the charge operator between consecutive
    eigenstates.  Raises ConvergenceError if the requested states reach
    the edge of the charge truncation.
    """
    cutoff = spec.charge_cutoff
    if n_levels > 2 * cutoff - 2:
        raise ParameterError("n_levels too large for the charge cutoff")
    n = np.arange(-cutoff, cutoff + 1)
    diag = 4.0 * spec.e_c * (n - spec.n_gate) ** 2
    off = np.full(n.size - 1, -spec.e_j / 2.0)
    vals, vecs = eigh_tridiagonal(diag, off, select="i",
                                  select_range=(0, n_levels - 1))
    edge = np.abs(vecs[0, :]) ** 2 + np.abs(vecs[-1, :]) ** 2
    if np.any(edge > 1e-8):
        raise ConvergenceError("increase cutoff: charge truncation reached")
    omega = vals - vals[0]
    dipole = np.array([vecs[:, i] @ (n * vecs[:, i + 1])
                       for i in range(n_levels - 1)])
    # fix gauge so dipole elements are positive
    dipole = np.abs(dipole)
    if g0 is None:
        g = np.zeros(n_levels - 1)
    else:
        g = g0 * dipole / dipole[0]
    return TransmonLevels(omega=omega, dipole=dipole, g=g)


def fit_ej_ec(target_omega01: float, target_anharmonicity: float,
              n_gate: float = 0.0, charge_cutoff: int = 30) -> TransmonSpec:
    """Find (E_J, E_C) reproducing a 0-1 frequency and anharmonicity.

    Seeds from the deep-transmon asymptotics E_C ~ -anharmonicity,
    omega01 ~ sqrt(8 E_J E_C) - E_C and refines with a 2-d root find
    until both targets are matched to 1e-6 relative.
    """
    if target_anharmonicity >= 0:
        raise ParameterError("anharmonicity target must be negative")
    ec0 = -target_anharmonicity
    ej0 = (target_omega01 + ec0) ** 2 / (8.0 * ec0)

    def residuals(x):
        ej, ec = np.exp(x)
        try:
            lv = diagonalize_transmon(
                TransmonSpec(ej, ec, n_gate, charge_cutoff), 3)
        except (ParameterError, ConvergenceError):
            return [1e3, 1e3]
        w01 = lv.omega[1]
        anh = lv.omega[2] - 2.0 * lv.omega[1]
        return [(w01 - target_omega01) / target_omega01,
                (anh - target_anharmonicity) / abs(target_anharmonicity)]

    sol = root(residuals, np.log([ej0, ec0]), method="hybr", tol=1e-12)
    res = residuals(sol.x)
    if not sol.success or max(abs(r) for r in res) > 1e-6:
        raise ConvergenceError(f"transmon fit failed, residuals {res}")
    ej, ec = np.exp(sol.x)
    return TransmonSpec(ej, ec, n_gate, charge_cutoff)


def subspace_hamiltonian(n: int, levels: TransmonLevels, omega_r: float):
    """Symmetric tridiagonal ladder Hamiltonian of the n-excitation subspace.

    Basis index k is the product state |qubit level k, n - k photons>.
    Returns (diag, offdiag): diag[k] = omega_k - k * omega_r, offdiag[k]
    = sqrt(n - k) * g_k.
    """
    if n < 1:
        raise ParameterError("subspace requires at least one excitation")
    dim = min(n, levels.n_levels - 1) + 1
    k = np.arange(dim)
    diag = levels.omega[:dim] - k * omega_r
    off = np.sqrt(n - k[:-1]) * levels.g[:dim - 1]
    return diag, off


def _dressed_vector(n: int, levels: TransmonLevels, omega_r: float,
                    bare_index: int) -> np.ndarray:
    """Eigenvector of the n-excitation subspace continued from one bare state.

    The dressed branch is labeled by adiabatic continuation in the
    coupling: the ladder Hamiltonian is tridiagonal with nonzero
    off-diagonals, so its spectrum is simple for every coupling strength
    and eigenvalue ranks never cross.  The branch that starts at bare
    energy diag[bare_index] at zero coupling therefore keeps that
    energy's rank.  Degenerate bare energies (an exact ladder resonance)
    make the labeling ambiguous and raise.
    """
    if n == 0:
        if bare_index != 0:
            raise ParameterError("zero-excitation subspace only holds the ground state")
        return np.ones(1)
    diag, off = subspace_hamiltonian(n, levels, omega_r)
    if off.size == 0:
        return np.ones(1)
    gaps = np.abs(np.delete(diag, bare_index) - diag[bare_index])
    scale = max(np.max(np.abs(diag)), np.max(np.abs(off)))
    if np.min(gaps) <= 1e-9 * scale:
        raise DressedStateError(
            "dressed-state labeling ambiguous: bare ladder energies degenerate")
    rank = int(np.sum(diag < diag[bare_index]))
    _, vecs = eigh_tridiagonal(diag, off, select="i",
                               select_range=(rank, rank))
    v = vecs[:, 0]
    i_max = int(np.argmax(np.abs(v)))
    if v[i_max] < 0:
        v = -v
    return v


def purcell_rate_fock(n: int, levels: TransmonLevels, omega_r: float,
                      kappa: float) -> PurcellResult:
    """Dressed-qubit decay rate with n photons in the cavity.

    Diagonalizes the n- and (n+1)-excitation subspaces and evaluates
    kappa |sum_k sqrt(n+1-k) b_k c_k|^2, where b and c are the dressed
    ground- and excited-branch coefficients.
    """
    if n < 0:
        raise ParameterError("photon number must be non-negative")
    if np.all(levels.g == 0):
        return PurcellResult(n=n, rate=0.0, n_levels_used=levels.n_levels)
    b = _dressed_vector(n, levels, omega_r, bare_index=0)
    c = _dressed_vector(n + 1, levels, omega_r, bare_index=1)
    k = np.arange(min(b.size, c.size))
    element = np.sum(np.sqrt(n + 1 - k) * b[k] * c[k])
    return PurcellResult(n=n, rate=kappa * element ** 2,
                         n_levels_used=levels.n_levels)


def purcell_rate_coherent(n_bar: float, levels: TransmonLevels, omega_r: float,
                          kappa: float, truncation: int | None = None) -> PurcellResult:
    """Poisson-averaged decay rate for a coherent cavity state.

    Weights P(n) = exp(-nbar) nbar^n / n! are summed until the cumulative
    weight reaches 1 - 1e-8, extending automatically if needed.
    """
    if n_bar < 0:
        raise ParameterError("mean photon number must be non-negative")
    if n_bar == 0:
        return purcell_rate_fock(0, levels, omega_r, kappa)
    n_max = truncation if truncation is not None else int(n_bar + 10 * np.sqrt(n_bar) + 10)
    while True:
        ns = np.arange(n_max + 1)
        logw = -n_bar + ns * np.log(n_bar) - np.array(
            [np.sum(np.log(np.arange(1, m + 1))) if m else 0.0 for m in ns])
        w = np.exp(logw)
        if w.sum() >= 1.0 - 1e-8:
            break
        n_max *= 2
    rates = np.array([purcell_rate_fock(int(m), levels, omega_r, kappa).rate
                      for m in ns])
    return PurcellResult(n=n_bar, rate=float(np.sum(w * rates) / np.sum(w)),
                         n_levels_used=levels.n_levels)
