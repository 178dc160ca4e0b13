"""Command-line experiment runner.

    fpf-lab simulate --config run.ini [--out DIR]
    fpf-lab filter   --config run.ini --obs obs.csv [--out DIR]
    fpf-lab compare  --config run.ini --obs obs.csv [--out DIR]
    fpf-lab verify   SUITE [--out DIR]          (suite may also come from
                                                 [verify] suite = ... in
                                                 a --config file)

Exit codes: 0 success, 1 verification failures, 2 configuration error,
3 model/precondition error, 4 runtime filter abort.

Every command is a deterministic function of its configuration file: all
randomness flows from the explicit seeds. FPF_LAB_THREADS caps the worker
pool used for multi-seed compare runs (0 or unset = automatic).
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional

import numpy as np

from .config import ConfigError, ExperimentConfig, load_config
from .divergence import f_divergence_grid, get_generator, kde_density
from .filter import FilterAbortError, run_filter, write_trace_csv
from .grid import GridDensity, GridNegativityError
from .model import ModelValidationError, sample_initial_ensemble, validate_model
from .reference import (KalmanState, WeightCollapseError, bootstrap_pf_step,
                        kalman_bucy_step, kushner_grid_step, weighted_stats)
from .sde import (read_observations_csv, simulate_truth,
                  synthesize_observations, write_observations_csv,
                  write_truth_csv)
from .verify import SUITE_NAMES, CheckRow, run_suite, write_suite_csv

_FMT = "%.12g"


def max_workers_from_env() -> Optional[int]:
    """Worker cap from FPF_LAB_THREADS; 0 or unset means automatic."""
    raw = os.environ.get("FPF_LAB_THREADS", "").strip()
    if raw in ("", "0"):
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(
            f"FPF_LAB_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("FPF_LAB_THREADS must be >= 0")
    return n


def _out_dir(args, cfg: Optional[ExperimentConfig]) -> str:
    out = args.out or (cfg.out_dir if cfg is not None else ".")
    os.makedirs(out, exist_ok=True)
    return out


def _load_observations(path: str, cfg: ExperimentConfig):
    try:
        obs = read_observations_csv(path)
    except OSError as exc:
        raise ConfigError(f"cannot read observations {path}: {exc}") from None
    if len(obs) == 0:
        raise ModelValidationError(f"observation file {path} is empty")
    dt_obs = float(obs.times[0])
    if len(obs.times) > 1:
        dt_obs = float(np.median(np.diff(obs.times)))
    if not np.isclose(dt_obs, cfg.dt, rtol=1e-9, atol=0.0):
        raise ModelValidationError(
            f"observation spacing {dt_obs:g} does not match config dt "
            f"{cfg.dt:g}")
    return obs


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    validate_model(cfg.model)
    out = _out_dir(args, cfg)
    truth = simulate_truth(cfg.model, cfg.x0, cfg.dt, cfg.t_end,
                           cfg.seed_truth)
    obs = synthesize_observations(cfg.model, truth, cfg.seed_observation)
    truth_path = os.path.join(out, "truth.csv")
    obs_path = os.path.join(out, "obs.csv")
    write_truth_csv(truth_path, truth)
    write_observations_csv(obs_path, obs)
    print(f"wrote {truth_path} ({len(truth.times)} rows) and "
          f"{obs_path} ({len(obs)} rows)")
    return 0


def cmd_filter(args) -> int:
    cfg = load_config(args.config)
    validate_model(cfg.model)
    out = _out_dir(args, cfg)
    obs = _load_observations(args.obs, cfg)
    trace, _ = run_filter(cfg.model, obs, cfg.n_particles, cfg.seed_filter,
                          cfg.filter_cfg, cfg.prior_mean, cfg.prior_cov)
    trace_path = os.path.join(out, "fpf_trace.csv")
    write_trace_csv(trace_path, trace)
    flagged = int(trace.n_flagged.sum())
    print(f"wrote {trace_path} ({len(trace.times)} rows, "
          f"{flagged} flagged particle updates)")
    return 0


def _rmse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean((a - b) ** 2)))


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    validate_model(cfg.model)
    out = _out_dir(args, cfg)
    obs = _load_observations(args.obs, cfg)
    model, d, dt = cfg.model, cfg.model.dim, cfg.dt
    m = len(obs)

    def run_fpf(seed: int):
        return run_filter(model, obs, cfg.n_particles, seed,
                          cfg.filter_cfg, cfg.prior_mean, cfg.prior_cov)

    with ThreadPoolExecutor(max_workers=max_workers_from_env()) as pool:
        fpf_runs = list(pool.map(run_fpf, cfg.compare_seeds))
    fpf_trace, fpf_final = fpf_runs[0]

    kb_means = kb_vars = None
    if model.drift_matrix is not None and model.obs_vector is not None:
        state = KalmanState(cfg.prior_mean.copy(), cfg.prior_cov.copy())
        kb_means = np.empty((m + 1, d))
        kb_vars = np.empty((m + 1, d))
        kb_means[0], kb_vars[0] = state.mean, np.diag(state.cov)
        for n in range(m):
            state = kalman_bucy_step(state, model, float(obs.dz[n]), dt)
            kb_means[n + 1], kb_vars[n + 1] = state.mean, np.diag(state.cov)

    bpf_ens = sample_initial_ensemble(d, cfg.n_particles, cfg.prior_mean,
                                      cfg.prior_cov, cfg.seed_filter)
    log_w = np.zeros(cfg.n_particles)
    bpf_means = np.empty((m + 1, d))
    bpf_vars = np.empty((m + 1, d))
    mean, cov = weighted_stats(bpf_ens.states, log_w)
    bpf_means[0], bpf_vars[0] = mean, np.diag(cov)
    for n in range(m):
        bpf_ens, log_w, _ = bootstrap_pf_step(model, bpf_ens, log_w,
                                              float(obs.dz[n]), dt)
        mean, cov = weighted_stats(bpf_ens.states, log_w)
        bpf_means[n + 1], bpf_vars[n + 1] = mean, np.diag(cov)

    grid_means = grid_vars = grid_density = None
    if d == 1:
        x = np.linspace(-cfg.grid_halfwidth, cfg.grid_halfwidth,
                        cfg.grid_points)
        grid_density = GridDensity.gaussian(x, float(cfg.prior_mean[0]),
                                            float(cfg.prior_cov[0, 0]))
        grid_means = np.empty(m + 1)
        grid_vars = np.empty(m + 1)
        grid_means[0], grid_vars[0] = grid_density.mean(), grid_density.var()
        for n in range(m):
            kushner_grid_step(grid_density, model, float(obs.dz[n]), dt)
            grid_means[n + 1] = grid_density.mean()
            grid_vars[n + 1] = grid_density.var()

    compare_path = os.path.join(out, "compare.csv")
    header = ["t"]
    columns = [fpf_trace.times]
    for i in range(d):
        header += [f"fpf_mean_{i + 1}"]
        columns += [fpf_trace.means[:, i]]
    for i in range(d):
        header += [f"fpf_var_{i + 1}"]
        columns += [fpf_trace.covs[:, i, i]]
    if kb_means is not None:
        for i in range(d):
            header += [f"kb_mean_{i + 1}"]
            columns += [kb_means[:, i]]
        for i in range(d):
            header += [f"kb_var_{i + 1}"]
            columns += [kb_vars[:, i]]
    for i in range(d):
        header += [f"bpf_mean_{i + 1}"]
        columns += [bpf_means[:, i]]
    for i in range(d):
        header += [f"bpf_var_{i + 1}"]
        columns += [bpf_vars[:, i]]
    if grid_means is not None:
        header += ["grid_mean_1", "grid_var_1"]
        columns += [grid_means, grid_vars]
    table = np.column_stack(columns)
    with open(compare_path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in table:
            fh.write(",".join(_FMT % v for v in row) + "\n")

    lines: List[str] = [
        f"model={cfg.model_name}",
        f"dt={_FMT % cfg.dt}",
        f"t_end={_FMT % cfg.t_end}",
        f"n_particles={cfg.n_particles}",
        f"gain={cfg.filter_cfg.gain_method}",
        f"n_compare_seeds={len(cfg.compare_seeds)}",
    ]
    if kb_means is not None:
        rmses = []
        for seed, (trace, _) in zip(cfg.compare_seeds, fpf_runs):
            r = _rmse(trace.means, kb_means)
            rmses.append(r)
            lines.append(f"fpf_rmse_vs_kb_seed_{seed}={_FMT % r}")
        lines.append(f"fpf_mean_rmse_vs_kb={_FMT % float(np.mean(rmses))}")
        lines.append(f"bpf_rmse_vs_kb={_FMT % _rmse(bpf_means, kb_means)}")
        if grid_means is not None:
            lines.append("grid_mean_rmse_vs_kb="
                         + _FMT % _rmse(grid_means, kb_means[:, 0]))
    total_flagged = sum(int(trace.n_flagged.sum())
                        for trace, _ in fpf_runs)
    lines.append(f"n_flagged_total={total_flagged}")
    lines.append(f"fpf_final_var_11={_FMT % fpf_trace.covs[-1, 0, 0]}")
    if kb_vars is not None:
        lines.append(f"kb_final_var_11={_FMT % kb_vars[-1, 0]}")
    if grid_density is not None:
        fpf_density = kde_density(fpf_final.states[:, 0], grid_density.x)
        for gen in ("kl", "hellinger", "tv"):
            val = f_divergence_grid(fpf_density, grid_density,
                                    get_generator(gen))
            lines.append(f"{gen}_fpf_vs_grid={_FMT % val}")
    summary_path = os.path.join(out, "summary.txt")
    with open(summary_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {compare_path} and {summary_path}")
    for line in lines:
        print("  " + line)
    return 0


def _resolve_suite(args) -> str:
    suite = args.suite
    if args.config is not None:
        cp = configparser.ConfigParser()
        try:
            with open(args.config) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") \
                from None
        if cp.has_option("verify", "suite"):
            from_file = cp.get("verify", "suite")
            if suite is not None and suite != from_file:
                raise ConfigError(
                    f"suite given both on the command line ({suite!r}) and "
                    f"in the config ({from_file!r})")
            suite = from_file
    if suite is None:
        raise ConfigError(
            "no suite given; pass one as an argument or via [verify] suite")
    if suite not in SUITE_NAMES:
        raise ConfigError(
            f"unknown suite {suite!r}; available: {', '.join(SUITE_NAMES)}")
    return suite


def cmd_verify(args) -> int:
    suite = _resolve_suite(args)
    rows: List[CheckRow] = run_suite(suite)
    out = _out_dir(args, None)
    csv_path = os.path.join(out, f"verify_{suite}.csv")
    write_suite_csv(csv_path, rows)

    by_check: dict = {}
    for row in rows:
        passed, total, worst = by_check.get(row.check, (0, 0, 0.0))
        by_check[row.check] = (passed + int(row.passed), total + 1,
                               max(worst, row.residual))
    all_pass = True
    for check in sorted(by_check):
        passed, total, worst = by_check[check]
        status = "pass" if passed == total else "FAIL"
        all_pass &= passed == total
        print(f"{check}: {passed}/{total} {status} "
              f"(worst residual {worst:.3e})")
    print(f"suite {suite}: {'PASS' if all_pass else 'FAIL'} "
          f"({len(rows)} checks, results in {csv_path})")
    return 0 if all_pass else 1


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fpf-lab",
        description="Feedback particle filter experiments and verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate",
                           help="simulate a truth path and observations")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", default=None)
    p_sim.set_defaults(func=cmd_simulate)

    p_filt = sub.add_parser("filter",
                            help="run the feedback particle filter")
    p_filt.add_argument("--config", required=True)
    p_filt.add_argument("--obs", required=True)
    p_filt.add_argument("--out", default=None)
    p_filt.set_defaults(func=cmd_filter)

    p_cmp = sub.add_parser("compare",
                           help="run FPF against the reference filters")
    p_cmp.add_argument("--config", required=True)
    p_cmp.add_argument("--obs", required=True)
    p_cmp.add_argument("--out", default=None)
    p_cmp.set_defaults(func=cmd_compare)

    p_ver = sub.add_parser("verify", help="run an identity-check suite")
    p_ver.add_argument("suite", nargs="?", default=None,
                       metavar="|".join(SUITE_NAMES))
    p_ver.add_argument("--config", default=None)
    p_ver.add_argument("--out", default=None)
    p_ver.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"fpf-lab: config error: {exc}", file=sys.stderr)
        return 2
    except ModelValidationError as exc:
        print(f"fpf-lab: model error: {exc}", file=sys.stderr)
        return 3
    except (FilterAbortError, WeightCollapseError,
            GridNegativityError) as exc:
        print(f"fpf-lab: filter aborted: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
