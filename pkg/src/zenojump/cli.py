"""Command-line interface for simulation, extraction, fitting, and experiments.

Exit codes: 0 success, 2 configuration error, 3 completed with failed
grid cells.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import qsim, zeno
from .experiments import (ConfigError, ExperimentConfig, run_calibration,
                          run_t1_experiment, run_zeno_experiment,
                          _build_levels, _measurement_setup, _write_csv)
from .filterbank import optimal_filter
from .jumps import extract_dwells, read_dwell_csv, thresholds_from_stats, write_dwell_csv
from .rates import fit_rates
from .telegraph import RtsParams, gen_noisy_trace, read_trace, write_trace
from .transmon_purcell import purcell_rate_coherent


def _load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_yaml(args.config)
    else:
        cfg = ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _cmd_simulate_rts(args) -> int:
    cfg = _load_config(args)
    tel = cfg.telegraph
    params = RtsParams(gamma_a=args.gamma_a, gamma_b=args.gamma_b,
                       snr=args.snr, noise_bw_3db=tel.noise_bw_3db,
                       sample_rate=tel.sample_rate, duration=args.duration)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for i in range(args.n_traces):
        seed = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(i,))
        trace, _ = gen_noisy_trace(params, seed)
        write_trace(outdir / f"trace_{i:05d}.ztrc", trace)
    print(f"wrote {args.n_traces} traces to {outdir}")
    return 0


def _cmd_simulate_sme(args) -> int:
    cfg = _load_config(args)
    setup = _build_levels(cfg)
    meas = _measurement_setup(setup, args.gamma_m)
    sme = cfg.sme
    params = qsim.SimParams(levels=setup["levels"], omega_r=setup["omega_r"],
                            kappa=setup["kappa"], omega_ro=setup["omega_ro"],
                            epsilon_ro=meas["eps_ro"], omega_d=meas["omega_d"],
                            gamma_1=cfg.physics.gamma_1,
                            gamma_phi=cfg.physics.gamma_phi,
                            eta=cfg.physics.eta, phi_lo=meas["phi_lo"])
    hilbert = qsim.HilbertConfig(sme.n_qubit_levels, sme.n_fock,
                                 dt=sme.dt, duration=sme.duration)
    if args.omega_mhz > 0:
        params.epsilon_q = qsim.calibrate_qubit_drive(
            params, hilbert, zeno.mhz(args.omega_mhz))
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for i in range(args.n_traj):
        seed = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(i,))
        rec = qsim.simulate_trajectory(params, hilbert, seed,
                                       record_dt=sme.record_dt,
                                       ringup=sme.ringup)
        from .telegraph import Trace
        write_trace(outdir / f"homodyne_{i:05d}.ztrc",
                    Trace(rec.homodyne / rec.dt, dt=rec.dt))
        header = ["time_us"] + [f"p{k}" for k in range(sme.n_qubit_levels)]
        rows = [[float(t)] + [float(p) for p in pops]
                for t, pops in zip(rec.times, rec.populations)]
        _write_csv(outdir / f"populations_{i:05d}.csv", header, rows)
    print(f"wrote {args.n_traj} trajectories to {outdir}")
    return 0


def _cmd_extract(args) -> int:
    traces = [read_trace(p) for p in sorted(args.traces)]
    order, stats, filtered = optimal_filter(traces)
    th = thresholds_from_stats(stats)
    dwells = []
    for i, tr in enumerate(filtered):
        dwells.extend(extract_dwells(tr, th, stats.v_m, trace_id=i))
    write_dwell_csv(args.out, dwells)
    print(f"filter order {order}, filtered SNR {stats.snr:.3g}, "
          f"{len(dwells)} dwells -> {args.out}")
    return 0


def _cmd_fit(args) -> int:
    dwells = read_dwell_csv(args.dwells)
    fit = fit_rates(dwells, compute_ci=not args.no_ci)
    fit.to_json(args.out)
    m = fit.model
    print(f"gamma_a={m.gamma_a:.6g} gamma_b={m.gamma_b:.6g} "
          f"gamma_det={m.gamma_det:.6g} -> {args.out}")
    return 0


def _cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    run_calibration(cfg, threads=args.threads)
    print(f"calibration table written to {cfg.outdir}")
    return 0


def _cmd_zeno_predict(args) -> int:
    cfg = _load_config(args)
    rows = []
    for gm in cfg.grids.gamma_m:
        for om in cfg.grids.omega_mhz:
            rate = zeno.zeno_rate_continuous(zeno.mhz(om),
                                             cfg.physics.gamma_2, gm / 2.0)
            rows.append([float(om), float(gm), rate])
            print(f"Omega/2pi={om:g} MHz, Gamma_m={gm:g}/us -> "
                  f"Gamma_up={rate:.6g}/us")
    if args.out:
        _write_csv(args.out, ["omega_mhz", "gamma_m", "gamma_up_predicted"], rows)
    return 0


def _cmd_purcell(args) -> int:
    cfg = _load_config(args)
    setup = _build_levels(cfg)
    nbars = np.linspace(0.0, args.nbar_max, args.points)
    rows = []
    for nb in nbars:
        r = purcell_rate_coherent(float(nb), setup["levels"],
                                  setup["omega_r"], setup["kappa"])
        rows.append([float(nb), r.rate, r.n_levels_used])
        print(f"nbar={nb:.3g} -> Gamma={r.rate:.6g}/us")
    if args.out:
        _write_csv(args.out, ["nbar", "gamma_down", "n_levels"], rows)
    return 0


def _cmd_run_experiment(args) -> int:
    cfg = _load_config(args)
    if args.kind == "zeno":
        _, n_failed = run_zeno_experiment(cfg, threads=args.threads)
    elif args.kind == "t1":
        _, n_failed = run_t1_experiment(cfg, threads=args.threads)
    else:
        _, n_failed = run_calibration(cfg, threads=args.threads), 0
    print(f"experiment {args.kind} complete, {n_failed} failed cells "
          f"-> {cfg.outdir}")
    return 3 if n_failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="zenojump",
        description="Telegraph-signal jump detection, rate estimation, and "
                    "measurement-backaction experiments.")
    p.add_argument("--seed", type=int, default=None,
                   help="master seed (overrides the config)")
    p.add_argument("--threads", type=int, default=1,
                   help="worker processes for grid cells")
    p.add_argument("--config", default=None, help="YAML config file")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate-rts", help="generate noisy telegraph traces")
    s.add_argument("--gamma-a", type=float, default=1.0)
    s.add_argument("--gamma-b", type=float, default=1.0)
    s.add_argument("--snr", type=float, default=3.0)
    s.add_argument("--duration", type=float, default=10.0)
    s.add_argument("--n-traces", type=int, default=10)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_simulate_rts)

    s = sub.add_parser("simulate-sme", help="run homodyne SME trajectories")
    s.add_argument("--gamma-m", type=float, default=20.0,
                   help="target measurement rate (1/us)")
    s.add_argument("--omega-mhz", type=float, default=0.0,
                   help="qubit Rabi drive (MHz, 0 = off)")
    s.add_argument("--n-traj", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_simulate_sme)

    s = sub.add_parser("extract", help="filter traces and extract dwells")
    s.add_argument("traces", nargs="+", help="binary trace files")
    s.add_argument("--out", required=True, help="output dwell CSV")
    s.set_defaults(func=_cmd_extract)

    s = sub.add_parser("fit", help="fit transition rates to a dwell CSV")
    s.add_argument("--dwells", required=True)
    s.add_argument("--out", required=True, help="output JSON")
    s.add_argument("--no-ci", action="store_true")
    s.set_defaults(func=_cmd_fit)

    s = sub.add_parser("calibrate", help="measure pipeline bias on a grid")
    s.set_defaults(func=_cmd_calibrate)

    s = sub.add_parser("zeno-predict", help="analytic suppressed-rate table")
    s.add_argument("--out", default=None)
    s.set_defaults(func=_cmd_zeno_predict)

    s = sub.add_parser("purcell", help="photon-number-dependent decay curve")
    s.add_argument("--nbar-max", type=float, default=40.0)
    s.add_argument("--points", type=int, default=21)
    s.add_argument("--out", default=None)
    s.set_defaults(func=_cmd_purcell)

    s = sub.add_parser("run-experiment", help="full experiment pipelines")
    s.add_argument("--kind", choices=["zeno", "t1", "calibration"],
                   required=True)
    s.set_defaults(func=_cmd_run_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
