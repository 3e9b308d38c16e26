"""Estimators for the quadratures and the pump power.

Step functions (``*_step``) are plain numpy and advance a belief by one step
of length ``dt`` given the measurement increment ``y dt`` over that step.
They are pure: beliefs go in, new beliefs come out.  The mean takes an Euler
step with the pre-step gain; the covariance takes the linear-fractional step
of :func:`riccati_step`.  Run functions (``*_run``)
apply the same recursions over a whole record with the compiled loops in
:mod:`opo_estim._kernels`.

Estimators
----------
* Kalman-Bucy filter at a fixed, assumed pump (``kalman_bucy_step``,
  ``kf_baseline_run``);
* dual KF: the state filter runs at the current pump estimate while a scalar
  Kalman-Bucy filter updates the pump from the same innovation, linearized
  through ``C (dA/d eps) x_c``;
* joint EKF on ``z = (q, p, eps - c)``.

In the dual KF both filters form gains and innovations from the *pre-update*
``(x_c, eps_c)`` and commit together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigurationError, NumericalError
from .model import (
    DRIFT_SENSITIVITY,
    NOISE_DIM,
    BNormalization,
    PhysicalParams,
    StateSpaceModel,
    build_input_matrix,
    build_measurement_single,
    derive_noise_correlations,
)
from .sde import PumpProcess, Trajectory

CLIP_TOL = _kernels.CLIP_TOL


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def vacuum(cls, hbar: float = 1.0, mean=(0.0, 0.0)) -> "GaussianBelief":
        return cls(np.asarray(mean, float), 0.5 * hbar * np.eye(2))


@dataclass(frozen=True)
class ParamBelief:
    mean: float
    var: float


@dataclass(frozen=True)
class JointBelief:
    """Belief over ``z = (q, p, eps - c)``."""

    mean: np.ndarray
    cov: np.ndarray


def clean_covariance(v: np.ndarray) -> tuple[np.ndarray, bool]:
    """Symmetrize, then clip eigenvalues below ``-CLIP_TOL`` to zero.

    Returns the cleaned matrix and whether clipping happened.
    """
    v = 0.5 * (v + v.T)
    lam, vec = np.linalg.eigh(v)
    if lam[0] >= -CLIP_TOL:
        return v, False
    lam = np.clip(lam, 0.0, None)
    return (vec * lam) @ vec.T, True


def _gain(cov, c, gamma_corr, r_inv):
    s = cov @ c.T + gamma_corr.T
    return s @ r_inv, s


def riccati_step(v, a, c, gamma_corr, r_inv, d, dt):
    """First-order linear-fractional step of the Riccati equation.

    The equation ``dV/dt = A V + V A^T + D - (V C^T + Gamma^T) R^-1 (C V + Gamma)``
    is linear in ``(X, Y)`` with ``V = X Y^-1``:

    ``X' = Abar X + Dbar Y``, ``Y' = C^T R^-1 C X - Abar^T Y``,

    where ``Abar = A - Gamma^T R^-1 C`` and ``Dbar = D - Gamma^T R^-1 Gamma``.
    One Euler step of that linear system from ``(V, I)`` gives

    ``V' = (V + (Abar V + Dbar) dt) (I + (C^T R^-1 C V - Abar^T) dt)^-1``.

    It agrees with the explicit Euler step to first order and has the same fixed
    points (the algebraic Riccati solutions).  Unlike explicit Euler, it does not
    drift below the uncertainty bound when the state is pure: starting from
    vacuum the product of the two variances is preserved exactly.
    """
    l_mat = gamma_corr.T @ r_inv
    a_bar = a - l_mat @ c
    d_bar = d - l_mat @ gamma_corr
    s_mat = c.T @ r_inv @ c
    n = v.shape[0]
    x = v + (a_bar @ v + d_bar) * dt
    y = np.eye(n) + (s_mat @ v - a_bar.T) * dt
    out = np.linalg.solve(y.T, x.T).T
    return 0.5 * (out + out.T)


def kalman_bucy_step(
    belief: GaussianBelief, model: StateSpaceModel, y_increment, dt: float
) -> GaussianBelief:
    """One step of the conditional mean and covariance.

    ``K = (V C^T + Gamma^T) R^-1``, ``dw = y dt - C m dt``, ``dm = A m dt + K dw``;
    the covariance follows ``dV = (A V + V A^T + D - K R K^T) dt`` through
    :func:`riccati_step`.
    """
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    dy = np.atleast_1d(np.asarray(y_increment, dtype=float))
    gain, s = _gain(belief.cov, model.c, model.gamma_corr, model.r_inv)
    innov = dy - model.c @ belief.mean * dt
    mean = belief.mean + model.a @ belief.mean * dt + gain @ innov
    cov = riccati_step(belief.cov, model.a, model.c, model.gamma_corr, model.r_inv, model.d, dt)
    cov, _ = clean_covariance(cov)
    return GaussianBelief(mean, cov)


def dual_kf_step(
    state: GaussianBelief,
    param: ParamBelief,
    model: StateSpaceModel,
    pump: PumpProcess,
    y_increment,
    dt: float,
) -> tuple[GaussianBelief, ParamBelief]:
    """Advance the coupled state and pump filters by one step.

    ``model`` supplies ``B, C, M`` and the noise correlations; its drift is
    replaced by ``A(eps_c)``.  The pump noise is independent of the optical
    noise, so the pump filter has no cross-correlation term.
    """
    dy = np.atleast_1d(np.asarray(y_increment, dtype=float))
    x_c = state.mean
    c_eps = model.c @ (DRIFT_SENSITIVITY * x_c)
    innov = dy - model.c @ x_c * dt
    k_eps = param.var * c_eps @ model.r_inv

    new_state = kalman_bucy_step(state, model.with_epsilon(param.mean), dy, dt)

    eps = param.mean + pump.mu * (param.mean - pump.c) * dt + k_eps @ innov
    var = param.var + (2.0 * pump.mu * param.var + pump.g**2 - k_eps @ model.r @ k_eps) * dt
    if var < -CLIP_TOL:
        var = 0.0
    return new_state, ParamBelief(float(eps), float(var))


@dataclass(frozen=True)
class JointModel:
    """Augmented model for ``z = (q, p, eps - c)`` with noise ``v_z = (v, v_eps)``.

    ``r_z``, ``r_zy`` and ``r_yz`` are the blocks of the increment covariance of
    ``(B_z dv_z, M_z dv_z)`` divided by ``dt``, for ``dv_z`` of covariance
    ``blockdiag((hbar/2) I_6, 1) dt``.
    """

    b_z: np.ndarray
    c_z: np.ndarray
    m_z: np.ndarray
    r_z: np.ndarray
    r_zy: np.ndarray
    r_yz: np.ndarray
    gamma: float
    mu: float
    c_level: float
    hbar: float

    def a_z(self, epsilon: float) -> np.ndarray:
        return np.diag([epsilon - self.gamma, -epsilon - self.gamma, self.mu])

    def jacobian(self, z) -> np.ndarray:
        """``d(A_z(eps) z)/dz`` at ``z``, with ``eps = z[2] + c``."""
        e = z[2] + self.c_level
        return np.array([
            [e - self.gamma, 0.0, z[0]],
            [0.0, -e - self.gamma, -z[1]],
            [0.0, 0.0, self.mu],
        ])


def build_joint_model(
    params: PhysicalParams, pump: PumpProcess, b_normalization: BNormalization = "consistent"
) -> JointModel:
    b = build_input_matrix(params, b_normalization)
    c, m = build_measurement_single(params)
    b_z = np.zeros((3, NOISE_DIM + 1))
    b_z[:2, :NOISE_DIM] = b
    b_z[2, NOISE_DIM] = pump.g
    c_z = np.hstack([c, np.zeros((c.shape[0], 1))])
    m_z = np.hstack([m, np.zeros((m.shape[0], 1))])
    noise_cov = np.diag([0.5 * params.hbar] * NOISE_DIM + [1.0])
    return JointModel(
        b_z=b_z,
        c_z=c_z,
        m_z=m_z,
        r_z=b_z @ noise_cov @ b_z.T,
        r_zy=b_z @ noise_cov @ m_z.T,
        r_yz=m_z @ noise_cov @ m_z.T,
        gamma=params.gamma,
        mu=pump.mu,
        c_level=pump.c,
        hbar=params.hbar,
    )


def joint_ekf_step(belief: JointBelief, model: JointModel, y_increment, dt: float) -> JointBelief:
    """One joint-EKF step: mean with ``A_z(eps_c)``, covariance with the Jacobian."""
    dy = np.atleast_1d(np.asarray(y_increment, dtype=float))
    z, v = belief.mean, belief.cov
    s = v @ model.c_z.T + model.r_zy
    gain = s @ np.linalg.inv(model.r_yz)
    innov = dy - model.c_z @ z * dt
    mean = z + model.a_z(z[2] + model.c_level) @ z * dt + gain @ innov
    cov = riccati_step(
        v, model.jacobian(z), model.c_z, model.r_zy.T, np.linalg.inv(model.r_yz), model.r_z, dt
    )
    cov, _ = clean_covariance(cov)
    return JointBelief(mean, cov)


@dataclass(frozen=True)
class FilterOutput:
    """Path of one estimator over a record.

    ``means`` holds the quadrature estimates, ``eps`` the pump estimate (a
    constant for the baseline), ``covs`` the state covariance (3x3 for the
    joint EKF).
    """

    means: np.ndarray
    covs: np.ndarray
    eps: np.ndarray
    eps_var: np.ndarray | None = None
    n_clipped: int = 0

    @property
    def state_covs(self) -> np.ndarray:
        return self.covs[:, :2, :2]

    def first_nonfinite(self) -> int | None:
        bad = ~(np.isfinite(self.means).all(axis=1) & np.isfinite(self.eps))
        idx = np.flatnonzero(bad)
        return int(idx[0]) if idx.size else None


def _kernel_args(model: StateSpaceModel):
    return (
        np.ascontiguousarray(model.c),
        np.ascontiguousarray(model.gamma_corr.T),
        model.r_inv,
        np.ascontiguousarray(model.d),
    )


def _record(trajectory: Trajectory, model: StateSpaceModel) -> np.ndarray:
    if model.n_channels == 1:
        y = trajectory.y_single[:, None]
    else:
        y = trajectory.y_complete
    if y.shape[1] != model.n_channels:
        raise ConfigurationError("record does not match the model's channel count")
    return np.ascontiguousarray(y)


def _initial(mean0, cov0, hbar):
    mean0 = np.array(mean0, dtype=float)
    cov0 = 0.5 * hbar * np.eye(2) if cov0 is None else np.array(cov0, dtype=float)
    return mean0, cov0


def kf_baseline_run(
    trajectory: Trajectory, model: StateSpaceModel, c: float, mean0=(0.0, 0.0), cov0=None
) -> FilterOutput:
    """Kalman-Bucy filter on the single record assuming ``eps = c`` throughout."""
    y = _record(trajectory, model)
    mean0, cov0 = _initial(mean0, cov0, model.hbar)
    eps = np.full(len(y), float(c))
    means, covs, n_clip = _kernels.kalman_bucy_path(
        eps, model.gamma, *_kernel_args(model), y, mean0, cov0, trajectory.dt
    )
    return FilterOutput(means, covs, eps, None, n_clip)


def dual_kf_run(
    trajectory: Trajectory,
    model: StateSpaceModel,
    pump: PumpProcess,
    mean0=(0.0, 0.0),
    cov0=None,
    eps0: float | None = None,
    var0: float = 0.0,
) -> FilterOutput:
    """Dual KF over the single record; ``eps0`` defaults to the pump's ``c``."""
    y = _record(trajectory, model)
    mean0, cov0 = _initial(mean0, cov0, model.hbar)
    eps0 = pump.c if eps0 is None else float(eps0)
    means, covs, eps, eps_var, n_clip = _kernels.dual_kf_path(
        model.gamma, pump.mu, pump.g, pump.c, *_kernel_args(model),
        y, mean0, cov0, eps0, float(var0), trajectory.dt,
    )
    return FilterOutput(means, covs, eps, eps_var, n_clip)


def joint_ekf_run(
    trajectory: Trajectory,
    model: StateSpaceModel,
    pump: PumpProcess,
    mean0=(0.0, 0.0),
    cov0=None,
    eps0: float | None = None,
    var0: float = 0.0,
) -> FilterOutput:
    """Joint EKF over the single record.

    The initial joint covariance is block diagonal: ``cov0`` for the
    quadratures and ``var0`` for the pump offset.
    """
    y = _record(trajectory, model)
    mean0, cov0 = _initial(mean0, cov0, model.hbar)
    eps0 = pump.c if eps0 is None else float(eps0)
    z0 = np.array([mean0[0], mean0[1], eps0 - pump.c])
    v0 = np.zeros((3, 3))
    v0[:2, :2] = cov0
    v0[2, 2] = var0
    zs, covs, n_clip = _kernels.joint_ekf_path(
        model.gamma, pump.mu, pump.g, pump.c, *_kernel_args(model),
        y, z0, v0, trajectory.dt,
    )
    return FilterOutput(
        np.ascontiguousarray(zs[:, :2]), covs, zs[:, 2] + pump.c, covs[:, 2, 2].copy(), n_clip
    )


def riccati_rhs(v: np.ndarray, model: StateSpaceModel) -> np.ndarray:
    """Right-hand side of the conditional covariance equation at ``v``."""
    gain, s = _gain(v, model.c, model.gamma_corr, model.r_inv)
    return model.a @ v + v @ model.a.T + model.d - gain @ s.T


def _lyapunov(a: np.ndarray, q: np.ndarray) -> np.ndarray:
    # solve a X + X a^T + q = 0 via the Kronecker form
    n = a.shape[0]
    eye = np.eye(n)
    op = np.kron(eye, a) + np.kron(a, eye)
    x = np.linalg.solve(op, -q.reshape(-1, order="F")).reshape(n, n, order="F")
    return 0.5 * (x + x.T)


def steady_state_riccati(
    model: StateSpaceModel, v0=None, tol: float = 1e-10, max_iter: int = 100_000
) -> np.ndarray:
    """Stationary conditional covariance by damped Newton-Kleinman iteration.

    Each iteration freezes the gain ``K`` at the current iterate and solves the
    closed-loop Lyapunov equation
    ``(A - K C) X + X (A - K C)^T + D + K R K^T - K Gamma - Gamma^T K^T = 0``;
    the step towards ``X`` is halved until the Riccati residual decreases.
    Raises :class:`NumericalError` (with ``residual``) if the Frobenius residual
    does not drop below ``tol`` within ``max_iter`` iterations.
    """
    if model.above_threshold:
        raise ConfigurationError("steady state requires a Hurwitz drift (eps < gamma)")
    v = 0.5 * model.hbar * np.eye(2) if v0 is None else np.array(v0, dtype=float)
    c, g, r = model.c, model.gamma_corr, model.r
    res = np.linalg.norm(riccati_rhs(v, model))
    for _ in range(max_iter):
        if res < tol:
            return v
        gain, _ = _gain(v, c, g, model.r_inv)
        a_cl = model.a - gain @ c
        q = model.d + gain @ r @ gain.T - gain @ g - g.T @ gain.T
        step = _lyapunov(a_cl, q) - v
        beta = 1.0
        while True:
            trial = v + beta * step
            trial_res = np.linalg.norm(riccati_rhs(trial, model))
            if trial_res < res or beta < 1e-8:
                break
            beta *= 0.5
        if not np.isfinite(trial_res):
            raise NumericalError("Riccati iteration produced non-finite values", res)
        v, res = 0.5 * (trial + trial.T), trial_res
    if res < tol:
        return v
    raise NumericalError(f"Riccati iteration did not converge (residual {res:.3e})", res)
