"""Analytic measurement-backaction predictions for a dispersively read qubit.

Covers the discrete and continuous measurement-suppressed transition
rates, steady-state pointer fields and the induced dephasing/measurement
rates, dispersive derived quantities, the adiabatically eliminated Bloch
fixed point, and background-rate subtraction.

Unit convention: time in us; all frequencies stored as angular
(rad/us).  Helpers converting from MHz multiply by 2 pi at the boundary.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .telegraph import ParameterError

TWO_PI = 2.0 * np.pi


def mhz(value: float) -> float:
    """Ordinary frequency in MHz -> angular rad/us."""
    return TWO_PI * value


@dataclass
class QubitCavityParams:
    """Static qubit/cavity physics parameters (angular units, rad/us)."""

    omega_r: float
    omega_q: float
    g: float
    kappa: float
    gamma_1: float
    gamma_phi: float
    anharmonicity: float = 0.0

    def __post_init__(self):
        delta = self.delta
        if delta != 0 and abs(delta) / self.g < 5:
            warnings.warn("dispersive validity marginal: |delta|/g < 5")

    @property
    def delta(self) -> float:
        return self.omega_r - self.omega_q

    @property
    def gamma_2(self) -> float:
        return self.gamma_1 / 2.0 + self.gamma_phi


@dataclass
class DriveParams:
    omega_ro: float = 0.0
    epsilon_ro: float = 0.0
    omega_d: float = 0.0
    Omega: float = 0.0

    def __post_init__(self):
        if self.epsilon_ro < 0 or self.Omega < 0:
            raise ParameterError("drive amplitudes must be non-negative")


@dataclass
class MeasurementStrength:
    alpha_g: complex
    alpha_e: complex
    beta: complex
    n_bar_g: float
    n_bar_e: float
    gamma_d: float
    gamma_m: float


@dataclass
class BackgroundRates:
    """Drive-independent excitation background (dressed dephasing + thermal)."""

    gamma_up_dd: float = 0.0
    gamma_up_th: float = 0.0

    def __post_init__(self):
        if self.gamma_up_dd < 0 or self.gamma_up_th < 0:
            raise ParameterError("background rates must be non-negative")

    @property
    def total(self) -> float:
        return self.gamma_up_dd + self.gamma_up_th


def reference_device_params() -> QubitCavityParams:
    """Parameters of the reference transmon/cavity device (angular rad/us)."""
    t1 = 0.575  # us
    t_phi = 7.9  # us
    return QubitCavityParams(
        omega_r=mhz(6272.4),
        omega_q=mhz(5355.6),  # Lamb-shifted 0-1 frequency
        g=mhz(105.3),
        kappa=mhz(7.0),
        gamma_1=1.0 / t1,
        gamma_phi=1.0 / t_phi,
        anharmonicity=mhz(-258.0),
    )


REFERENCE_OMEGA_RO = mhz(6282.0)
REFERENCE_SAMPLE_DT = 0.01  # us, 10 ns digitization


def zeno_rate_discrete(Omega: float, f_m: float) -> float:
    """Jump rate under repeated projective measurement: Omega^2 / (4 f_m).

    Omega is angular (rad/us); f_m is the ordinary measurement repetition
    frequency (1/us).
    """
    if f_m <= 0:
        raise ParameterError("measurement frequency must be positive")
    return Omega ** 2 / (4.0 * f_m)


def zeno_rate_continuous(Omega: float, gamma_2: float, gamma_d: float) -> float:
    """Drive-induced transition rate under continuous measurement.

    Omega^2 / (2 (gamma_2 + gamma_d)): stronger dephasing freezes the
    driven evolution.
    """
    denom = gamma_2 + gamma_d
    if denom <= 0:
        raise ParameterError("gamma_2 + gamma_d must be positive")
    return Omega ** 2 / (2.0 * denom)


def dispersive_derived(p: QubitCavityParams):
    """(chi, Lamb-shifted qubit frequency, critical photon number).

    With delta = omega_r - omega_q, level repulsion pushes the qubit-like
    branch away from the cavity: the dressed qubit frequency is
    omega_q - chi (and the ground-state cavity pull is omega_r + chi,
    consistent with pointer_states).
    """
    if p.delta == 0:
        raise ParameterError("qubit-cavity detuning must be nonzero")
    chi = p.g ** 2 / p.delta
    return chi, p.omega_q - chi, p.delta ** 2 / (4.0 * p.g ** 2)


def pointer_states(p: QubitCavityParams, d: DriveParams) -> MeasurementStrength:
    """Steady-state cavity pointer fields and the derived measurement rates.

    Linear two-level dispersive model: the cavity pull is -chi for ground
    and +chi for excited, and each conditioned amplitude is the driven
    steady state of a damped mode.
    """
    chi, _, _ = dispersive_derived(p)
    det = d.omega_ro - p.omega_r
    alpha_g = (d.epsilon_ro / 2.0) / ((det - chi) + 1j * p.kappa / 2.0)
    alpha_e = (d.epsilon_ro / 2.0) / ((det + chi) + 1j * p.kappa / 2.0)
    beta = alpha_e - alpha_g
    gamma_d = 0.5 * p.kappa * abs(beta) ** 2
    return MeasurementStrength(alpha_g=alpha_g, alpha_e=alpha_e, beta=beta,
                               n_bar_g=abs(alpha_g) ** 2,
                               n_bar_e=abs(alpha_e) ** 2,
                               gamma_d=gamma_d, gamma_m=2.0 * gamma_d)


def epsilon_for_gamma_m(p: QubitCavityParams, omega_ro: float,
                        gamma_m_target: float) -> float:
    """Readout amplitude giving a target measurement rate (Gm scales as eps^2)."""
    if gamma_m_target < 0:
        raise ParameterError("target measurement rate must be non-negative")
    probe = pointer_states(p, DriveParams(omega_ro=omega_ro, epsilon_ro=1.0))
    if probe.gamma_m == 0:
        raise ParameterError("zero dispersive shift: no measurement possible")
    return np.sqrt(gamma_m_target / probe.gamma_m)


def bloch_steady(Omega: float, gamma_2: float, gamma_d: float,
                 gamma_up: float, gamma_down: float):
    """Fixed point of the adiabatically eliminated Bloch dynamics.

    Returns (sigma_z_steady, Gamma_up_total, Gamma_down_total) where the
    drive contributes Omega^2 / (2 (gamma_2 + gamma_d)) to both
    directions on top of the dissipative rates.
    """
    if min(gamma_up, gamma_down) < 0:
        raise ParameterError("rates must be non-negative")
    drive = 0.0
    if Omega != 0.0:
        drive = zeno_rate_continuous(Omega, gamma_2, gamma_d)
    g_up = drive + gamma_up
    g_down = drive + gamma_down
    if g_up + g_down == 0:
        raise ParameterError("undefined fixed point: no rates and no drive")
    sigma_z = (gamma_up - gamma_down) / (g_up + g_down)
    return sigma_z, g_up, g_down


def subtract_background(gamma_up_total: float, background: BackgroundRates):
    """Remove the drive-independent excitation background.

    Returns (gamma_up_drive, underflow_flag); negative results clamp to 0.
    """
    if gamma_up_total < 0:
        raise ParameterError("total rate must be non-negative")
    value = gamma_up_total - background.total
    if value < 0:
        return 0.0, True
    return value, False
