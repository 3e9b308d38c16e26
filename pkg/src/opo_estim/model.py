"""State-space model of a degenerate OPO read out by homodyne detection.

The cavity quadratures ``x = (q, p)`` obey ``dx = A(eps) x dt + B dv`` and the
detectors record ``y dt = C x dt + M dv`` where ``dv`` is a 6-dimensional vacuum
noise increment with covariance ``(hbar/2) I dt``.  The noise ordering is
``(v1, v2)`` for the measured cavity port, ``(v3, v4)`` for the loss port and
``(v5, v6)`` for the vacuum entering the beamsplitter.

Two measurement configurations are supported:

* ``"single"``: homodyne on the transmitted beam only (what the estimators see);
* ``"complete"``: homodyne on all three outputs ``(m, lb, lc)``, used to build
  the reference state trajectory.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, ContractViolation

logger = logging.getLogger(__name__)

SYMPLECTIC = np.array([[0.0, 1.0], [-1.0, 0.0]])
SYMPLECTIC.setflags(write=False)

# d A / d eps
DRIFT_SENSITIVITY = np.array([1.0, -1.0])
DRIFT_SENSITIVITY.setflags(write=False)

NOISE_DIM = 6

BNormalization = Literal["consistent", "paper"]
MeasurementKind = Literal["single", "complete"]


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PhysicalParams:
    """Physical constants of one OPO + beamsplitter instance.

    Parameters
    ----------
    gamma1 : float
        Decay rate of the cavity port that goes to the detector (rad/s).
    gamma2 : float
        Decay rate of the loss port (rad/s).
    transmittance : float
        Beamsplitter transmittance ``T`` in [0, 1] (measurement efficiency).
    theta_m : float
        Homodyne phase of the measured beam (rad).
    hbar : float
        Reduced Planck constant in simulation units.
    """

    gamma1: float = 0.95
    gamma2: float = 0.05
    transmittance: float = 1.0
    theta_m: float = np.pi / 12
    hbar: float = 1.0

    def __post_init__(self):
        if not self.gamma1 > 0:
            raise ConfigurationError(f"gamma1 must be > 0, got {self.gamma1}")
        if not self.gamma2 >= 0:
            raise ConfigurationError(f"gamma2 must be >= 0, got {self.gamma2}")
        if not 0.0 <= self.transmittance <= 1.0:
            raise ConfigurationError(
                f"transmittance must lie in [0, 1], got {self.transmittance}"
            )
        if not self.hbar > 0:
            raise ConfigurationError(f"hbar must be > 0, got {self.hbar}")

    @property
    def gamma(self) -> float:
        """Total cavity decay rate."""
        return self.gamma1 + self.gamma2


@dataclass(frozen=True)
class StateSpaceModel:
    """Matrices of ``dx = A x dt + B dv``, ``y dt = C x dt + M dv`` at fixed eps.

    ``d``, ``gamma_corr`` and ``r`` are the increment covariance rates
    ``Cov(B dv) = d dt``, ``Cov(B dv, M dv) = gamma_corr.T dt`` and
    ``Cov(M dv) = r dt``.  Instances are immutable; use :meth:`with_epsilon`
    to move the pump.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    m: np.ndarray
    d: np.ndarray
    gamma_corr: np.ndarray
    r: np.ndarray
    epsilon: float
    gamma: float
    hbar: float
    kind: str = "single"

    @property
    def above_threshold(self) -> bool:
        """True when ``A`` is not Hurwitz (pump at or above oscillation threshold)."""
        return self.epsilon >= self.gamma

    @property
    def n_channels(self) -> int:
        return self.c.shape[0]

    @property
    def r_inv(self) -> np.ndarray:
        return np.linalg.inv(self.r)

    def with_epsilon(self, epsilon: float) -> "StateSpaceModel":
        return dataclasses.replace(
            self, a=_frozen(_drift(epsilon, self.gamma)), epsilon=float(epsilon)
        )


def _drift(epsilon, gamma):
    return np.diag([epsilon - gamma, -epsilon - gamma])


def build_drift(epsilon: float, params: PhysicalParams) -> np.ndarray:
    """Return the drift ``diag(eps - gamma, -eps - gamma)``.

    Any real ``epsilon`` is accepted.  For ``epsilon >= gamma`` the matrix has a
    non-negative eigenvalue; callers that care check
    :attr:`StateSpaceModel.above_threshold`.
    """
    return _drift(float(epsilon), params.gamma)


def build_input_matrix(
    params: PhysicalParams, b_normalization: BNormalization = "consistent"
) -> np.ndarray:
    """Return the 2x6 noise input matrix ``B``.

    ``"consistent"`` uses the couplings ``sqrt(2 gamma_i)`` of the Langevin
    equation for the mode operator, which gives the vacuum steady state
    ``(hbar/2) I``.  ``"paper"`` keeps the literal ``sqrt(hbar gamma_i)`` entries,
    kept only for comparison; that model fails the physical consistency checks.
    """
    if b_normalization == "consistent":
        k1, k2 = np.sqrt(2.0 * params.gamma1), np.sqrt(2.0 * params.gamma2)
    elif b_normalization == "paper":
        k1 = np.sqrt(params.hbar * params.gamma1)
        k2 = np.sqrt(params.hbar * params.gamma2)
    else:
        raise ConfigurationError(f"unknown b_normalization {b_normalization!r}")
    b = np.zeros((2, NOISE_DIM))
    b[0, 0] = b[1, 1] = k1
    b[0, 2] = b[1, 3] = k2
    return b


def _measured_row(params: PhysicalParams, theta: float):
    t = params.transmittance
    cos, sin = np.cos(theta), np.sin(theta)
    c_row = 2.0 * np.sqrt(t * params.gamma1 / params.hbar) * np.array([cos, sin])
    m_row = -np.sqrt(2.0 / params.hbar) * np.array(
        [np.sqrt(t) * cos, np.sqrt(t) * sin, 0.0, 0.0,
         np.sqrt(1.0 - t) * cos, np.sqrt(1.0 - t) * sin]
    )
    return c_row, m_row


def build_measurement_single(params: PhysicalParams) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(C, M)`` of shapes (1, 2) and (1, 6) for homodyne on the measured beam."""
    c_row, m_row = _measured_row(params, params.theta_m)
    return c_row[None, :], m_row[None, :]


def build_measurement_complete(
    params: PhysicalParams, theta_lb: float | None = None, theta_lc: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(C, M)`` of shapes (3, 2) and (3, 6) for homodyne on all outputs.

    Rows are ordered ``(m, lb, lc)``: the measured beam, the beam reflected by
    the beamsplitter, and the cavity loss port.  Phases default to ``theta_m``.
    Row ``m`` is computed exactly as in :func:`build_measurement_single` so the
    two records agree bitwise.
    """
    theta_lb = params.theta_m if theta_lb is None else theta_lb
    theta_lc = params.theta_m if theta_lc is None else theta_lc
    t, hbar = params.transmittance, params.hbar
    c_m, m_m = _measured_row(params, params.theta_m)

    u_lb = np.array([np.cos(theta_lb), np.sin(theta_lb)])
    u_lc = np.array([np.cos(theta_lc), np.sin(theta_lc)])
    c_lb = 2.0 * np.sqrt(params.gamma1 * (1.0 - t) / hbar) * u_lb
    c_lc = 2.0 * np.sqrt(params.gamma2 / hbar) * u_lc
    scale = -np.sqrt(2.0 / hbar)
    m_lb = scale * np.concatenate(
        [np.sqrt(1.0 - t) * u_lb, [0.0, 0.0], -np.sqrt(t) * u_lb]
    )
    m_lc = scale * np.concatenate([[0.0, 0.0], u_lc, [0.0, 0.0]])
    return np.vstack([c_m, c_lb, c_lc]), np.vstack([m_m, m_lb, m_lc])


def derive_noise_correlations(b: np.ndarray, m: np.ndarray, hbar: float):
    """Return ``(D, Gamma, R)`` for vacuum noise of covariance ``(hbar/2) I``.

    ``D = (hbar/2) B B^T``, ``Gamma^T = (hbar/2) B M^T`` and ``R = (hbar/2) M M^T``.
    ``Gamma`` is returned with shape (k, 2).
    """
    b = np.atleast_2d(np.asarray(b, dtype=float))
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if b.shape[1] != m.shape[1]:
        raise ConfigurationError(
            f"B and M must share the noise dimension, got {b.shape} and {m.shape}"
        )
    half = hbar / 2.0
    return half * b @ b.T, half * m @ b.T, half * m @ m.T


def build_model(
    params: PhysicalParams,
    epsilon: float,
    kind: MeasurementKind = "single",
    b_normalization: BNormalization = "consistent",
    theta_lb: float | None = None,
    theta_lc: float | None = None,
) -> StateSpaceModel:
    """Assemble a :class:`StateSpaceModel` for one measurement configuration."""
    if kind == "single":
        c, m = build_measurement_single(params)
    elif kind == "complete":
        c, m = build_measurement_complete(params, theta_lb, theta_lc)
    else:
        raise ConfigurationError(f"unknown measurement kind {kind!r}")
    b = build_input_matrix(params, b_normalization)
    d, gamma_corr, r = derive_noise_correlations(b, m, params.hbar)
    model = StateSpaceModel(
        a=_frozen(build_drift(epsilon, params)),
        b=_frozen(b),
        c=_frozen(c),
        m=_frozen(m),
        d=_frozen(d),
        gamma_corr=_frozen(gamma_corr),
        r=_frozen(r),
        epsilon=float(epsilon),
        gamma=params.gamma,
        hbar=params.hbar,
        kind=kind,
    )
    if model.above_threshold:
        logger.warning(
            "eps=%.4g >= gamma=%.4g: drift is not Hurwitz (above threshold)",
            epsilon, params.gamma,
        )
    return model


def unconditioned_steady_state(model: StateSpaceModel) -> np.ndarray:
    """Stationary covariance of the unmeasured system, ``A V + V A^T + D = 0``."""
    if model.above_threshold:
        raise ConfigurationError("no stationary covariance above threshold")
    return scipy.linalg.solve_continuous_lyapunov(model.a, -model.d)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    margin: float

    def __bool__(self):
        return self.passed


def psd_tolerance(mat) -> float:
    return 1e-9 * (1.0 + abs(float(np.real(np.trace(mat)))))


def _require_symmetric(v, what="matrix"):
    v = np.asarray(v, dtype=float)
    if v.shape != (2, 2):
        raise ContractViolation(f"{what} must be 2x2, got shape {v.shape}")
    if not np.allclose(v, v.T, rtol=0.0, atol=1e-12 * (1.0 + np.abs(v).max())):
        raise ContractViolation(f"{what} is not symmetric: {v.tolist()}")
    return v


def check_uncertainty(v, hbar: float, tol: float = 1e-9) -> CheckResult:
    """Heisenberg bound ``det(V) >= hbar^2 / 4``; margin is ``det(V) - hbar^2/4``."""
    v = _require_symmetric(v, "covariance")
    margin = float(np.linalg.det(v) - hbar**2 / 4.0)
    return CheckResult("uncertainty", margin >= -tol, margin)


def check_fluctuation_dissipation(a, d, hbar: float) -> CheckResult:
    """``D - i hbar (A S - S^T A^T) / 2 >= 0`` with ``S`` the symplectic form."""
    a = np.asarray(a, dtype=float)
    d = np.asarray(d, dtype=float)
    s = SYMPLECTIC
    h = d - 0.5j * hbar * (a @ s - s.T @ a.T)
    lam = float(np.linalg.eigvalsh(h).min())
    return CheckResult("fluctuation-dissipation", lam >= -psd_tolerance(h), lam)


def check_fluctuation_observation(d, gamma_corr, c_mat, hbar: float) -> CheckResult:
    """``D - Gamma^T Gamma - (hbar^2/4) S C^T C S^T >= 0``."""
    d = np.asarray(d, dtype=float)
    g = np.atleast_2d(np.asarray(gamma_corr, dtype=float))
    c = np.atleast_2d(np.asarray(c_mat, dtype=float))
    s = SYMPLECTIC
    h = d - g.T @ g - hbar**2 / 4.0 * s @ c.T @ c @ s.T
    h = 0.5 * (h + h.T)
    lam = float(np.linalg.eigvalsh(h).min())
    return CheckResult("fluctuation-observation", lam >= -psd_tolerance(d), lam)
