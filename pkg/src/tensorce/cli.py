"""Command-line entry point: ``tensorce {simulate,estimate,sweep,bench}``."""

import argparse
import json
import logging
import sys
import time

import numpy as np

from . import __version__
from .channel import STREAM_INIT, STREAM_PATHS, sample_paths, substream
from .dataset import load_dataset, save_dataset
from .estimators import bcd_solve, ls_channels
from .harness import (
    ALGORITHMS,
    ExperimentConfig,
    ResultRow,
    emit_results,
    emit_traces,
    median_seconds,
    mean_mse,
    observations_at,
    run_monte_carlo,
    trial_data,
)
from .metrics import mse
from .vi import vi_solve

log = logging.getLogger("tensorce")


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _names(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def cmd_simulate(args):
    cfg = ExperimentConfig(
        dims=_ints(args.dims),
        n_users=args.users,
        true_rank=args.paths,
        pilot_lengths=[args.pilots],
        snr_db=[args.snr],
        algorithms=["vi"],
        trials=1,
        seed=args.seed,
    )
    data = trial_data(cfg, args.trial)
    paths = sample_paths(cfg.n_users, cfg.true_rank, substream(cfg.seed, args.trial, STREAM_PATHS))
    obs = observations_at(data, args.pilots, args.snr, args.seed)
    save_dataset(args.out, data.geometry, paths, obs, data.channels)
    print(f"wrote {args.out}: L={obs.n_pilots} N={obs.n_users} dims={tuple(obs.dims)} snr={args.snr} dB")


def cmd_estimate(args):
    _, _, obs, H = load_dataset(args.inp)
    rng = substream(obs.seed, 0, STREAM_INIT) if args.init_seed is None else args.init_seed
    t0 = time.perf_counter()
    counts, iters, conv = [], 0, True
    if args.algo == "ls":
        est = ls_channels(obs)
    elif args.algo == "bcd":
        max_iters = args.max_iters or 1000
        tol = 1e-8 if args.tol is None else args.tol
        st = bcd_solve(obs, args.rank, rng, max_iters=max_iters, rel_tol=tol)
        est, iters, conv = st.estimates, st.iterations, st.converged
    else:
        max_iters = args.max_iters or 500
        tol = 1e-6 if args.tol is None else args.tol
        res = vi_solve(obs, args.rank, init=rng, max_iters=max_iters, rel_tol=tol, truth=H)
        est, iters, conv, counts = res.estimates, res.iterations, res.converged, res.path_counts
        if args.trace:
            emit_traces(res, args.trace)
    secs = time.perf_counter() - t0
    rank = 0 if args.algo == "ls" else args.rank
    row = ResultRow(0, args.algo, obs.snr_db, obs.n_pilots, rank, mse(est, H), iters, secs, counts, conv, obs.seed)
    emit_results([row], args.out)
    print(f"{args.algo}: mse={row.mse:.4g} iters={iters} seconds={secs:.3f}")


def _sweep_config(args):
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
    overrides = {
        "trials": args.trials,
        "seed": args.seed,
        "snr_db": _floats(args.snr) if args.snr else None,
        "pilot_lengths": _ints(args.pilots) if args.pilots else None,
        "rank_bounds": _ints(args.rank_bounds) if args.rank_bounds else None,
        "algorithms": _names(args.algos) if args.algos else None,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(data)


def _progress(done, total):
    log.info("trial %d/%d done", done, total)


def cmd_sweep(args):
    cfg = _sweep_config(args)
    rows = run_monte_carlo(cfg, workers=args.workers, progress=_progress)
    emit_results(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")


def cmd_bench(args):
    if args.kernels:
        from .bench import kernel_table

        print(kernel_table(repeats=args.repeats))
        return
    cfg = ExperimentConfig(
        algorithms=["bcd-genie", "bcd-bound", "vi"],
        rank_bounds=[args.rank],
        snr_db=_floats(args.snr),
        trials=args.trials,
        seed=args.seed,
    )
    rows = run_monte_carlo(cfg, workers=1)
    if args.out:
        emit_results(rows, args.out)
    print(f"{'algo':<10} {'snr_db':>7} {'median_s':>10} {'mean_mse':>11}")
    for snr in cfg.snr_db:
        for algo in cfg.algorithms:
            sec = median_seconds(rows, algo=algo, snr_db=snr)
            err = mean_mse(rows, algo=algo, snr_db=snr)
            print(f"{algo:<10} {snr:>7g} {sec:>10.4f} {err:>11.4g}")
        ratio = median_seconds(rows, algo="vi", snr_db=snr) / median_seconds(rows, algo="bcd-bound", snr_db=snr)
        print(f"vi / bcd-bound median time ratio at {snr:g} dB: {ratio:.2f}")


def build_parser():
    p = argparse.ArgumentParser(prog="tensorce", description="Tensor-based multi-user channel estimation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a simulated dataset file")
    s.add_argument("--out", required=True)
    s.add_argument("--dims", default="8,8,8")
    s.add_argument("--users", type=int, default=5)
    s.add_argument("--paths", type=int, default=3, help="true paths per user")
    s.add_argument("--pilots", type=int, default=10, help="pilot length L")
    s.add_argument("--snr", type=float, default=20.0, help="SNR in dB (inf for noiseless)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trial", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="estimate channels from a dataset file")
    e.add_argument("--algo", choices=("ls", "bcd", "vi"), required=True)
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--rank", type=int, default=8, help="rank (bcd) or rank bound (vi)")
    e.add_argument("--max-iters", type=int, default=None)
    e.add_argument("--tol", type=float, default=None)
    e.add_argument("--init-seed", type=int, default=None)
    e.add_argument("--trace", default=None, help="VI per-iteration trace CSV")
    e.set_defaults(func=cmd_estimate)

    w = sub.add_parser("sweep", help="run a Monte-Carlo sweep")
    w.add_argument("--config", default=None, help="JSON file with ExperimentConfig fields")
    w.add_argument("--out", required=True)
    w.add_argument("--trials", type=int, default=None)
    w.add_argument("--seed", type=int, default=None)
    w.add_argument("--snr", default=None, help="comma-separated SNR list in dB")
    w.add_argument("--pilots", default=None, help="comma-separated pilot lengths")
    w.add_argument("--rank-bounds", default=None, help="comma-separated rank bounds")
    w.add_argument("--algos", default=None, help=f"comma-separated subset of {','.join(ALGORITHMS)}")
    w.add_argument("--workers", type=int, default=None, help="process count (default $TENSORCE_WORKERS or 1)")
    w.set_defaults(func=cmd_sweep)

    b = sub.add_parser("bench", help="timing table for BCD and VI")
    b.add_argument("--trials", type=int, default=20)
    b.add_argument("--snr", default="10,20")
    b.add_argument("--rank", type=int, default=8)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default=None)
    b.add_argument("--kernels", action="store_true", help="compare numba and numpy kernels instead")
    b.add_argument("--repeats", type=int, default=20)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (OSError, ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError, KeyError) as exc:
        print(f"tensorce {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
