"""Monte-Carlo experiment harness.

Every trial draws its own paths, pilots and noise from independent
substreams of the master seed (see :func:`tensorce.channel.substream`):

* paths: ``(trial, STREAM_PATHS)``
* pilots: ``(trial, STREAM_PILOTS, L)``
* unit-variance noise: ``(trial, STREAM_NOISE, L)``, rescaled per SNR
* solver initialization: ``(trial, STREAM_INIT)``

so a given (seed, trial, L) cell sees the same data whatever else is in
the sweep, and all algorithms of a trial share one observation batch.
"""

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .channel import (
    STREAM_INIT,
    STREAM_NOISE,
    STREAM_PATHS,
    STREAM_PILOTS,
    ObservationBatch,
    build_geometry,
    complex_normal,
    generate_pilots,
    noiseless_observations,
    sample_paths,
    substream,
    synthesize_channels,
)
from .estimators import bcd_solve, ls_channels
from .metrics import mse
from .vi import vi_solve

log = logging.getLogger(__name__)

ALGORITHMS = ("ls", "bcd-genie", "bcd-bound", "vi")
CSV_COLUMNS = (
    "trial",
    "algo",
    "snr_db",
    "pilot_len",
    "rank_bound",
    "mse",
    "iters",
    "seconds",
    "path_counts",
    "converged",
    "seed",
)
WORKERS_ENV = "TENSORCE_WORKERS"


@dataclass
class ExperimentConfig:
    dims: tuple = (8, 8, 8)
    spacing: float = 0.5
    wavelength: float = 1.0
    n_users: int = 5
    true_rank: int = 3
    rank_bounds: list = field(default_factory=lambda: [8])
    pilot_lengths: list = field(default_factory=lambda: [10])
    snr_db: list = field(default_factory=lambda: [20.0])
    algorithms: list = field(default_factory=lambda: ["ls", "bcd-genie", "bcd-bound", "vi"])
    trials: int = 100
    seed: int = 0
    bcd_max_iters: int = 1000
    bcd_tol: float = 1e-8
    vi_max_iters: int = 500
    vi_tol: float = 1e-6
    eps: float = 1e-6

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.rank_bounds = [int(r) for r in self.rank_bounds]
        self.pilot_lengths = [int(L) for L in self.pilot_lengths]
        self.snr_db = [float(s) for s in self.snr_db]
        self.algorithms = list(self.algorithms)
        self.validate()

    def validate(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        bad = [a for a in self.algorithms if a not in ALGORITHMS]
        if bad:
            raise ValueError(f"unknown algorithms {bad}; choose from {ALGORITHMS}")
        if not self.algorithms:
            raise ValueError("select at least one algorithm")
        for name in ("rank_bounds", "pilot_lengths", "snr_db"):
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        if min(self.rank_bounds) < 1 or self.true_rank < 1:
            raise ValueError("ranks must be positive")
        if "ls" in self.algorithms and min(self.pilot_lengths) < self.n_users:
            raise ValueError("LS needs pilot length >= number of users")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        out = asdict(self)
        out["dims"] = list(self.dims)
        return out

    def n_rows(self):
        return (
            self.trials
            * len(self.algorithms)
            * len(self.snr_db)
            * len(self.pilot_lengths)
            * len(self.rank_bounds)
        )


@dataclass
class ResultRow:
    trial: int
    algo: str
    snr_db: float
    pilot_len: int
    rank_bound: int
    mse: float
    iters: int
    seconds: float
    path_counts: list
    converged: bool
    seed: int


@dataclass
class TrialData:
    geometry: object
    channels: np.ndarray
    pilots: dict
    noise: dict


def trial_data(cfg, trial):
    """Ground-truth channels plus pilots and unit noise for every pilot length."""
    geom = build_geometry(cfg.dims, cfg.spacing, cfg.wavelength)
    paths = sample_paths(cfg.n_users, cfg.true_rank, substream(cfg.seed, trial, STREAM_PATHS))
    H = synthesize_channels(geom, paths)
    pilots, noise = {}, {}
    for L in cfg.pilot_lengths:
        pilots[L] = generate_pilots(L, cfg.n_users, substream(cfg.seed, trial, STREAM_PILOTS, L))
        noise[L] = complex_normal(substream(cfg.seed, trial, STREAM_NOISE, L), (L,) + geom.dims)
    return TrialData(geom, H, pilots, noise)


def observations_at(data, L, snr_db, seed=0):
    """Observation batch for pilot length ``L`` at ``snr_db`` built from the
    trial's shared unit-variance noise."""
    S = data.pilots[L]
    G = noiseless_observations(data.channels, S)
    if math.isinf(snr_db) and snr_db > 0:
        return ObservationBatch(G, S.copy(), math.inf, snr_db, seed)
    signal = float(np.vdot(G, G).real)
    noise_var = signal / (G.size * 10.0 ** (snr_db / 10.0))
    Y = G + math.sqrt(noise_var) * data.noise[L]
    return ObservationBatch(Y, S.copy(), 1.0 / noise_var, snr_db, seed)


def run_algorithm(algo, obs, cfg, rank_bound, trial, truth):
    """Run one estimator and return ``(estimates, iters, converged, counts)``."""
    init = substream(cfg.seed, trial, STREAM_INIT)
    if algo == "ls":
        return ls_channels(obs), 0, True, []
    if algo in ("bcd-genie", "bcd-bound"):
        rank = cfg.true_rank if algo == "bcd-genie" else rank_bound
        st = bcd_solve(obs, rank, init, max_iters=cfg.bcd_max_iters, rel_tol=cfg.bcd_tol)
        return st.estimates, st.iterations, st.converged, []
    res = vi_solve(obs, rank_bound, cfg.eps, init, max_iters=cfg.vi_max_iters, rel_tol=cfg.vi_tol)
    return res.estimates, res.iterations, res.converged, res.path_counts


def _depends_on_bound(algo):
    return algo in ("bcd-bound", "vi")


def run_trial(cfg, trial):
    """All result rows of one trial."""
    data = trial_data(cfg, trial)
    rows = []
    for algo in sorted(cfg.algorithms):
        for snr in cfg.snr_db:
            for L in cfg.pilot_lengths:
                obs = observations_at(data, L, snr, cfg.seed)
                cached = None
                for rb in cfg.rank_bounds:
                    if cached is None or _depends_on_bound(algo):
                        t0 = time.perf_counter()
                        try:
                            est, iters, conv, counts = run_algorithm(algo, obs, cfg, rb, trial, data.channels)
                            err = mse(est, data.channels)
                        except Exception as exc:  # recorded, not fatal to the sweep
                            log.warning("trial %d %s failed: %s", trial, algo, exc)
                            err, iters, conv, counts = math.nan, 0, False, []
                        cached = (err, iters, time.perf_counter() - t0, counts, conv)
                    err, iters, secs, counts, conv = cached
                    rows.append(ResultRow(trial, algo, snr, L, rb, err, iters, secs, list(counts), conv, cfg.seed))
    return rows


def _run_trial_star(args):
    return run_trial(*args)


def default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def run_monte_carlo(cfg, workers=None, progress=None):
    """Run every trial of ``cfg`` and return rows sorted by (trial, algo).

    ``workers`` > 1 runs trials in a process pool; defaults to the
    ``TENSORCE_WORKERS`` environment variable (1 if unset).
    """
    workers = default_workers() if workers is None else max(1, int(workers))
    jobs = [(cfg, t) for t in range(cfg.trials)]
    rows = []
    if workers == 1:
        for i, job in enumerate(jobs):
            rows.extend(_run_trial_star(job))
            if progress:
                progress(i + 1, cfg.trials)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i, part in enumerate(pool.map(_run_trial_star, jobs)):
                rows.extend(part)
                if progress:
                    progress(i + 1, cfg.trials)
    # stable sort keeps the axis order within (trial, algo)
    rows.sort(key=lambda r: (r.trial, r.algo))
    return rows


# ----------------------------------------------------------------------
# CSV


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ";".join(str(int(v)) for v in value)
    return str(value)


def emit_results(rows, path):
    """Write rows as CSV with the fixed column set."""
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in rows:
                w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc


def read_results(path):
    """Parse a file written by :func:`emit_results` back into rows."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path} does not have the expected columns")
        for rec in reader:
            rows.append(
                ResultRow(
                    trial=int(rec["trial"]),
                    algo=rec["algo"],
                    snr_db=float(rec["snr_db"]),
                    pilot_len=int(rec["pilot_len"]),
                    rank_bound=int(rec["rank_bound"]),
                    mse=float(rec["mse"]),
                    iters=int(rec["iters"]),
                    seconds=float(rec["seconds"]),
                    path_counts=[int(x) for x in rec["path_counts"].split(";") if x],
                    converged=rec["converged"] == "true",
                    seed=int(rec["seed"]),
                )
            )
    return rows


def emit_traces(result, path):
    """Per-iteration VI traces in long form: one line per (iteration, user)
    with the MSE, ``E[beta]`` and that user's ``E[gamma]`` spectrum."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("iter", "mse", "beta_mean", "user", "gamma_means"))
        for i, (beta, gammas) in enumerate(zip(result.beta_trace, result.gamma_trace)):
            err = result.mse_trace[i] if result.mse_trace else math.nan
            for n, g in enumerate(gammas):
                w.writerow((i + 1, repr(float(err)), repr(float(beta)), n, ";".join(repr(float(x)) for x in g)))


# ----------------------------------------------------------------------
# aggregation helpers


def mean_mse(rows, **match):
    """Mean MSE over rows whose attributes equal ``match``."""
    vals = [r.mse for r in rows if all(getattr(r, k) == v for k, v in match.items())]
    if not vals:
        raise KeyError(f"no rows match {match}")
    return float(np.mean(vals))


def median_seconds(rows, **match):
    vals = [r.seconds for r in rows if all(getattr(r, k) == v for k, v in match.items())]
    if not vals:
        raise KeyError(f"no rows match {match}")
    return float(np.median(vals))
