"""Monte Carlo experiments: single trials, the case study, parameter sweeps.

Every trial draws its noise from ``trial_streams(master_seed, index)``, so a
trial's result depends only on the configuration and its index; aggregation
is keyed by index and independent of execution order or worker count.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np

from . import sde
from .config import ExperimentConfig
from .errors import UndefinedMetricError
from .filters import (
    dual_kf_run,
    joint_ekf_run,
    kf_baseline_run,
    riccati_rhs,
    steady_state_riccati,
)
from .metrics import METHODS, QUANTITIES, RpiSummary, rpi
from .model import (
    build_model,
    check_fluctuation_dissipation,
    check_fluctuation_observation,
    check_uncertainty,
    unconditioned_steady_state,
)

logger = logging.getLogger(__name__)

CASE_STUDY_COLUMNS = ("method", "quantity", "mean_rpi", "sem", "n_trials", "n_diverged")
SWEEP_COLUMNS = ("param_name", "param_value") + CASE_STUDY_COLUMNS
DIVERGENCE_WARN_FRACTION = 0.01


def build_models(config: ExperimentConfig):
    """``(single, complete)`` models at ``eps = c`` for ``config``."""
    params, pump = config.physical, config.pump
    single = build_model(params, pump.c, "single", config.b_normalization)
    complete = build_model(
        params, pump.c, "complete", config.b_normalization, config.theta_lb, config.theta_lc
    )
    return single, complete


def _det_margin(covs, hbar):
    det = covs[:, 0, 0] * covs[:, 1, 1] - covs[:, 0, 1] * covs[:, 1, 0]
    return float(np.min(det) - hbar**2 / 4.0)


@dataclass
class TrialResult:
    index: int
    rpis: dict
    diverged: dict
    min_det_margin: dict
    n_clipped: dict
    above_threshold_steps: int
    trajectory: sde.Trajectory | None = None
    outputs: dict | None = None


def run_single_trial(
    config: ExperimentConfig, trial_index: int, keep_paths: bool = False
) -> TrialResult:
    """Simulate one trial and run all estimators on the same records.

    Returns the six RPIs keyed by ``(method, quantity)``; entries for a method
    whose belief became non-finite are NaN and ``diverged[method]`` holds the
    first bad step.
    """
    pump, hbar = config.pump, config.physical.hbar
    grid = config.grid()
    single, complete = build_models(config)
    pump_seed, optical_seed = sde.trial_streams(config.master_seed, trial_index)

    eps_true = sde.simulate_pump(pump, grid, pump_seed)
    x0, cov0 = np.asarray(config.x0, float), config.initial_covariance
    traj = sde.simulate_latent(single, complete, eps_true, grid, optical_seed, x0, cov0)
    x_truth, v_truth = sde.ground_truth_filter(complete, traj.y_complete, eps_true, grid, x0, cov0)
    traj = traj.with_truth(x_truth, v_truth)

    base = kf_baseline_run(traj, single, pump.c, x0, cov0)
    runs = {
        "dual-KF": dual_kf_run(traj, single, pump, x0, cov0, pump.initial, config.pump_prior_var),
        "joint-EKF": joint_ekf_run(traj, single, pump, x0, cov0, pump.initial, config.pump_prior_var),
    }

    rpis, diverged = {}, {}
    for method, out in runs.items():
        bad = out.first_nonfinite()
        diverged[method] = bad
        if bad is not None:
            logger.warning("trial %d: %s diverged at step %d", trial_index, method, bad)
        pairs = {
            "eps": (out.eps, eps_true, base.eps),
            "q": (out.means[:, 0], x_truth[:, 0], base.means[:, 0]),
            "p": (out.means[:, 1], x_truth[:, 1], base.means[:, 1]),
        }
        for quantity, (est, tru, ref) in pairs.items():
            if bad is not None:
                rpis[(method, quantity)] = math.nan
                continue
            try:
                rpis[(method, quantity)] = rpi(est, tru, ref, grid.dt, config.burn_in)
            except UndefinedMetricError:
                logger.warning("trial %d: RPI of %s/%s undefined", trial_index, method, quantity)
                rpis[(method, quantity)] = math.nan

    covs = {"truth": v_truth, "KF": base.covs, **{m: o.covs for m, o in runs.items()}}
    margins = {name: _det_margin(c, hbar) for name, c in covs.items()}
    clipped = {"KF": base.n_clipped, **{m: o.n_clipped for m, o in runs.items()}}
    above = int(np.count_nonzero(eps_true >= config.physical.gamma))
    if above:
        logger.info("trial %d: pump above threshold for %d steps", trial_index, above)

    result = TrialResult(trial_index, rpis, diverged, margins, clipped, above)
    if keep_paths:
        result.trajectory = traj
        result.outputs = {"KF": base, **runs}
    return result


def run_trials(config: ExperimentConfig, indices) -> list[TrialResult]:
    indices = list(indices)
    if config.workers <= 1 or len(indices) < 2:
        return [run_single_trial(config, i) for i in indices]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        results = list(pool.map(partial(run_single_trial, config), indices, chunksize=4))
    return sorted(results, key=lambda r: r.index)


def summarize(results: list[TrialResult]) -> RpiSummary:
    per_key = {(m, q): [r.rpis[(m, q)] for r in results] for m in METHODS for q in QUANTITIES}
    n_div = {m: sum(r.diverged[m] is not None for r in results) for m in METHODS}
    return RpiSummary.from_trials(per_key, n_div)


def divergence_warnings(summary: RpiSummary, n_total: int) -> list[str]:
    out = []
    for method in METHODS:
        n_div = summary[(method, "eps")].n_diverged
        if n_div > DIVERGENCE_WARN_FRACTION * n_total:
            out.append(f"WARNING: {method} diverged in {n_div}/{n_total} trials")
    return out


def _fmt(x) -> str:
    return "nan" if not math.isfinite(x) else f"{x:.10g}"


def _summary_rows(summary: RpiSummary, prefix=()):
    for method, quantity, st in summary.rows():
        yield (*prefix, method, quantity, _fmt(st.mean), _fmt(st.sem), st.n_trials, st.n_diverged)


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


@dataclass
class CaseStudyResult:
    summary: RpiSummary
    trials: list
    warnings: list = field(default_factory=list)
    files: list = field(default_factory=list)


def run_case_study(
    config: ExperimentConfig,
    n_trials: int | None = None,
    out_dir=None,
    figure: bool = True,
) -> CaseStudyResult:
    """Monte Carlo over ``n_trials`` trials (default ``config.n_trials``).

    With ``out_dir`` set, writes ``case_study.csv``, per-trial RPIs in
    ``case_study_trials.csv`` and, if ``figure``, a three-panel SVG of trial
    ``config.figure_trial``.
    """
    n = config.n_trials if n_trials is None else int(n_trials)
    results = run_trials(config, range(n))
    summary = summarize(results)
    warnings = divergence_warnings(summary, n)
    for w in warnings:
        logger.warning(w)
    res = CaseStudyResult(summary, results, warnings)
    if out_dir is None:
        return res

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res.files.append(_write_csv(out / "case_study.csv", CASE_STUDY_COLUMNS, _summary_rows(summary)))
    keys = [(m, q) for m in METHODS for q in QUANTITIES]
    trial_rows = (
        (r.index, *(_fmt(r.rpis[k]) for k in keys)) for r in results
    )
    res.files.append(_write_csv(
        out / "case_study_trials.csv",
        ("trial", *(f"{m}:{q}" for m, q in keys)),
        trial_rows,
    ))
    if warnings:
        (out / "case_study_warnings.txt").write_text("\n".join(warnings) + "\n")
    if figure:
        from .plotting import plot_trial

        trial = run_single_trial(config, config.figure_trial, keep_paths=True)
        res.files.append(plot_trial(trial, config, out / "case_study_trial.svg", banner=warnings))
    return res


@dataclass
class SweepResult:
    param: str
    values: list
    summaries: list
    warnings: list = field(default_factory=list)
    files: list = field(default_factory=list)

    def series(self, method: str, quantity: str):
        means = np.array([s[(method, quantity)].mean for s in self.summaries])
        sems = np.array([s[(method, quantity)].sem for s in self.summaries])
        return means, sems


def run_sweep(
    config: ExperimentConfig,
    param: str | None = None,
    values=None,
    n_trials: int | None = None,
    out_dir=None,
    figure: bool = True,
) -> SweepResult:
    """Full Monte Carlo at every grid point of one swept parameter."""
    spec = config.sweep
    param = param or spec.param
    if values is None:
        values = spec.grid if param == spec.param else type(spec)(param).grid
    fixed = spec.fixed if param == spec.param else type(spec)(param).fixed
    base = config
    for name, value in fixed.items():
        base = base.with_param(name, value)
    n = config.n_trials if n_trials is None else int(n_trials)

    summaries, warnings = [], []
    for value in values:
        cfg = base.with_param(param, value)
        summary = summarize(run_trials(cfg, range(n)))
        summaries.append(summary)
        for w in divergence_warnings(summary, n):
            warnings.append(f"{param}={value}: {w}")
            logger.warning(warnings[-1])
        logger.info("sweep %s=%g done", param, value)
    res = SweepResult(param, [float(v) for v in values], summaries, warnings)
    if out_dir is None:
        return res

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = (
        row
        for value, summary in zip(res.values, summaries)
        for row in _summary_rows(summary, (param, _fmt(value)))
    )
    res.files.append(_write_csv(out / f"sweep_{param}.csv", SWEEP_COLUMNS, rows))
    if figure:
        from .plotting import plot_sweep

        res.files.append(plot_sweep(res, out / f"sweep_{param}.svg"))
    return res


@dataclass(frozen=True)
class InvariantItem:
    name: str
    passed: bool
    detail: str
    expected_fail: bool = False

    @property
    def ok(self) -> bool:
        return self.passed != self.expected_fail


@dataclass
class InvariantReport:
    items: list

    @property
    def ok(self) -> bool:
        return all(item.ok for item in self.items)

    def lines(self):
        for it in self.items:
            if it.expected_fail:
                status = "XFAIL" if not it.passed else "XPASS"
            else:
                status = "PASS" if it.passed else "FAIL"
            yield f"[{status}] {it.name}: {it.detail}"


# checks that the literal input matrix is known to break
PAPER_B_EXPECTED_FAILURES = {
    "vacuum steady state",
    "fluctuation-dissipation",
    "fluctuation-observation (single)",
    "fluctuation-observation (complete)",
    "uncertainty at steady state (single)",
    "uncertainty at steady state (complete)",
}


def check_invariants(
    config: ExperimentConfig, ou_paths: int = 50, ou_t_final: float = 5000.0
) -> InvariantReport:
    """Model consistency, vacuum state, Riccati cross-validation and OU statistics."""
    params, pump, hbar = config.physical, config.pump, config.physical.hbar
    single, complete = build_models(config)
    xfail = PAPER_B_EXPECTED_FAILURES if config.b_normalization == "paper" else set()
    items = []

    def add(name, passed, detail):
        items.append(InvariantItem(name, bool(passed), detail, name in xfail))

    vac = unconditioned_steady_state(single.with_epsilon(0.0))
    err = float(np.abs(vac - 0.5 * hbar * np.eye(2)).max())
    add("vacuum steady state", err <= 1e-10, f"max |V - (hbar/2) I| = {err:.3e}")

    fd = check_fluctuation_dissipation(single.a, single.d, hbar)
    add("fluctuation-dissipation", fd.passed, f"min eigenvalue {fd.margin:.3e}")
    for label, m in (("single", single), ("complete", complete)):
        fo = check_fluctuation_observation(m.d, m.gamma_corr, m.c, hbar)
        add(f"fluctuation-observation ({label})", fo.passed, f"min eigenvalue {fo.margin:.3e}")

    if single.above_threshold:
        add("riccati cross-validation", False, "eps = c is above threshold")
    else:
        from . import _kernels

        for label, m in (("single", single), ("complete", complete)):
            v_ss = steady_state_riccati(m)
            v_int = _integrated_covariance(m, _kernels)
            diff = float(np.abs(v_ss - v_int).max())
            add(f"riccati cross-validation ({label})", diff <= 1e-8,
                f"max |V_fixed_point - V_integrated| = {diff:.3e}, "
                f"residual {np.linalg.norm(riccati_rhs(v_ss, m)):.1e}")
            unc = check_uncertainty(v_ss, hbar, tol=1e-9)
            add(f"uncertainty at steady state ({label})", unc.passed,
                f"det(V) - hbar^2/4 = {unc.margin:.3e}")

    ok, detail = _ou_check(pump, ou_paths, ou_t_final, config.master_seed)
    add("pump stationary variance", ok, detail)
    return InvariantReport(items)


def _integrated_covariance(model, kernels, t_final=60.0, dt=1e-3):
    n = int(round(t_final / dt))
    eps = np.full(n, model.epsilon)
    dy = np.zeros((n, model.n_channels))
    _, covs, _ = kernels.kalman_bucy_path(
        eps, model.gamma, np.ascontiguousarray(model.c),
        np.ascontiguousarray(model.gamma_corr.T), model.r_inv,
        np.ascontiguousarray(model.d), dy, np.zeros(2), 0.5 * model.hbar * np.eye(2), dt,
    )
    return covs[-1]


def ou_sample_variance(pump, n_paths, t_final, dt, seed, discard=None):
    """Pooled sample variance of pump paths after discarding ``discard`` seconds."""
    grid = sde.SimGrid.from_final_time(dt, t_final)
    discard = 5.0 / abs(pump.mu) if discard is None else discard
    start = int(round(discard / dt))
    total, total_sq, count = 0.0, 0.0, 0
    for child in np.random.SeedSequence(seed).spawn(n_paths):
        path = sde.simulate_pump(pump, grid, child)[start:] - pump.c
        total += float(path.sum())
        total_sq += float(np.dot(path, path))
        count += path.size
    mean = total / count
    return (total_sq - count * mean**2) / (count - 1)


def _ou_check(pump, n_paths, t_final, seed, dt=1e-2):
    expected = pump.stationary_variance
    got = ou_sample_variance(pump, n_paths, t_final, dt, seed)
    if expected == 0.0:
        return got == 0.0, f"sample variance {got:.3e} (expected 0)"
    rel = abs(got / expected - 1.0)
    return rel <= 0.1, f"sample {got:.5f} vs g^2/(2|mu|) = {expected:.5f} (rel. err {rel:.3f})"
