"""Stochastic realizations: pump path, latent quadratures, measurement records.

All randomness goes through :func:`make_rng`, which wraps a counter-based
Philox generator.  Per-trial streams are derived from a master seed with
:func:`trial_streams`: ``SeedSequence(master_seed, spawn_key=(trial_index,))``
spawned into one child for the pump and one for the optical noise.  Every
function here is a pure function of its inputs and seed.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import ConfigurationError
from .model import StateSpaceModel


def make_rng(seed) -> np.random.Generator:
    """Return a Philox-backed generator; generators are passed through unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def trial_streams(master_seed: int, trial_index: int):
    """Independent ``(pump, optical)`` seed sequences for one Monte Carlo trial."""
    root = np.random.SeedSequence(master_seed, spawn_key=(int(trial_index),))
    pump, optical = root.spawn(2)
    return pump, optical


@dataclass(frozen=True)
class PumpProcess:
    """Ornstein-Uhlenbeck pump ``d eps = mu (eps - c) dt + g dv_eps``.

    ``epsilon0=None`` starts the path at the tendency constant ``c``.
    """

    mu: float = -0.01
    c: float = 0.5
    g: float = 0.028
    epsilon0: float | None = None

    def __post_init__(self):
        if not self.mu < 0:
            raise ConfigurationError(f"mu must be < 0 (mean reverting), got {self.mu}")
        if not self.g >= 0:
            raise ConfigurationError(f"g must be >= 0, got {self.g}")

    @property
    def initial(self) -> float:
        return self.c if self.epsilon0 is None else float(self.epsilon0)

    @property
    def stationary_variance(self) -> float:
        return self.g**2 / (2.0 * abs(self.mu))


@dataclass(frozen=True)
class SimGrid:
    dt: float = 1e-3
    n_steps: int = 100_000

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be > 0, got {self.dt}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigurationError(f"n_steps must be a positive integer, got {self.n_steps}")

    @classmethod
    def from_final_time(cls, dt: float, t_final: float) -> "SimGrid":
        if not (np.isfinite(dt) and dt > 0):
            raise ConfigurationError(f"dt must be finite and > 0, got {dt}")
        if not (np.isfinite(t_final) and t_final > 0):
            raise ConfigurationError(f"t_final must be finite and > 0, got {t_final}")
        return cls(dt=dt, n_steps=max(1, int(round(t_final / dt))))

    @property
    def t_final(self) -> float:
        return self.dt * self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.dt


@dataclass(frozen=True)
class Trajectory:
    """One simulated trial on a shared grid of ``n_steps`` points.

    ``y_single[k]`` and ``y_complete[k]`` are the increments over
    ``[t_k, t_k + dt]``.  ``x_truth``/``v_truth`` are filled in by
    :func:`ground_truth_filter` (see :meth:`with_truth`).
    """

    times: np.ndarray
    epsilon_true: np.ndarray
    x_latent: np.ndarray
    y_single: np.ndarray
    y_complete: np.ndarray
    dt: float
    x_truth: np.ndarray | None = None
    v_truth: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.times)
        for name in ("epsilon_true", "x_latent", "y_single", "y_complete", "x_truth", "v_truth"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise ConfigurationError(f"{name} has length {len(arr)}, grid has {n}")

    def with_truth(self, x_truth, v_truth) -> "Trajectory":
        return dataclasses.replace(self, x_truth=x_truth, v_truth=v_truth)


def simulate_pump(pump: PumpProcess, grid: SimGrid, rng_seed) -> np.ndarray:
    """Euler-Maruyama path of the pump, one value per grid point."""
    rng = make_rng(rng_seed)
    xi = rng.standard_normal(grid.n_steps - 1)
    return _kernels.ou_path(pump.initial, pump.mu, pump.c, pump.g, grid.dt, xi)


def _check_pair(single: StateSpaceModel, complete: StateSpaceModel):
    if single.kind != "single" or complete.kind != "complete":
        raise ConfigurationError("expected a (single, complete) model pair")
    if not (np.array_equal(single.b, complete.b) and single.hbar == complete.hbar
            and single.gamma == complete.gamma):
        raise ConfigurationError("single and complete models describe different systems")


def simulate_latent(
    single: StateSpaceModel,
    complete: StateSpaceModel,
    epsilon_path: np.ndarray,
    grid: SimGrid,
    rng_seed,
    x0_mean=(0.0, 0.0),
    x0_cov=None,
) -> Trajectory:
    """Simulate ``dx = A(eps) x dt + B dv`` and both measurement records.

    One 6-dimensional vacuum increment ``dv_k ~ N(0, (hbar/2) I dt)`` per step
    drives the state, the single-channel record and the three complete
    channels, so process/measurement correlations are preserved and every
    estimator later sees the same realization.  The initial state is drawn
    from ``N(x0_mean, x0_cov)`` (vacuum covariance by default).
    """
    _check_pair(single, complete)
    eps = np.ascontiguousarray(epsilon_path, dtype=float)
    if eps.shape != (grid.n_steps,):
        raise ConfigurationError(
            f"pump path has shape {eps.shape}, grid expects ({grid.n_steps},)"
        )
    hbar = single.hbar
    x0_cov = 0.5 * hbar * np.eye(2) if x0_cov is None else np.asarray(x0_cov, float)
    rng = make_rng(rng_seed)
    x0 = np.asarray(x0_mean, float) + np.linalg.cholesky(x0_cov) @ rng.standard_normal(2)
    dv = rng.standard_normal((grid.n_steps, single.b.shape[1]))
    dv *= np.sqrt(0.5 * hbar * grid.dt)

    c_all = np.ascontiguousarray(np.vstack([single.c, complete.c]))
    m_all = np.ascontiguousarray(np.vstack([single.m, complete.m]))
    x, dy = _kernels.latent_path(
        eps, single.gamma, x0, np.ascontiguousarray(single.b), c_all, m_all, dv, grid.dt
    )
    return Trajectory(
        times=grid.times,
        epsilon_true=eps,
        x_latent=x,
        y_single=np.ascontiguousarray(dy[:, 0]),
        y_complete=np.ascontiguousarray(dy[:, 1:]),
        dt=grid.dt,
    )


def ground_truth_filter(
    complete: StateSpaceModel,
    y_complete: np.ndarray,
    epsilon_true: np.ndarray,
    grid: SimGrid,
    mean0=(0.0, 0.0),
    cov0=None,
):
    """Conditional mean/covariance from all three outputs with the true pump.

    Returns ``(x_truth, v_truth)`` with shapes ``(n, 2)`` and ``(n, 2, 2)``.
    """
    y = np.ascontiguousarray(y_complete, dtype=float)
    eps = np.ascontiguousarray(epsilon_true, dtype=float)
    if y.shape != (grid.n_steps, complete.n_channels) or eps.shape != (grid.n_steps,):
        raise ConfigurationError("record/pump length does not match the grid")
    cov0 = 0.5 * complete.hbar * np.eye(2) if cov0 is None else np.asarray(cov0, float)
    means, covs, _ = _kernels.kalman_bucy_path(
        eps, complete.gamma,
        np.ascontiguousarray(complete.c), np.ascontiguousarray(complete.gamma_corr.T),
        complete.r_inv, np.ascontiguousarray(complete.d),
        y, np.asarray(mean0, float), np.array(cov0, float), grid.dt,
    )
    return means, covs


TRAJECTORY_COLUMNS = (
    "t", "eps_true", "q_latent", "p_latent", "y_m", "y_lb", "y_lc",
    "q_truth", "p_truth", "det_V",
)


def write_trajectory_csv(traj: Trajectory, path, stride: int = 1) -> Path:
    """Dump a trajectory, one row every ``stride`` grid points."""
    path = Path(path)
    idx = np.arange(0, len(traj.times), max(1, int(stride)))
    nan2 = np.full((len(traj.times), 2), np.nan)
    x_truth = nan2 if traj.x_truth is None else traj.x_truth
    det_v = (np.full(len(traj.times), np.nan) if traj.v_truth is None
             else np.linalg.det(traj.v_truth))
    cols = np.column_stack([
        traj.times, traj.epsilon_true, traj.x_latent, traj.y_complete, x_truth, det_v,
    ])[idx]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAJECTORY_COLUMNS)
        for row in cols:
            writer.writerow([f"{v:.12g}" for v in row])
    return path
