"""Command line interface: ``emcmc simulate | tune | run | compare``.

Configuration comes from a YAML (or JSON) file and/or flags; flags win.
Every run writes its fully resolved configuration to ``metadata.json``,
which can be passed back with ``--config`` to reproduce the run.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.  On
failure a one-line JSON error document is written to stderr.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import datetime as _dt
import json
import logging
import math
import multiprocessing
import os
import sys
from dataclasses import dataclass, field
from importlib import metadata as _metadata
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from emcmc.core import ConfigError, Dataset, DimensionError, DomainError, EmcmcError
from emcmc.diagnostics import EfficiencySummary, efficiency_summary, loglik_noise_probe
from emcmc.filters import ESTIMATOR_KINDS, KALMAN_EXACT, LikelihoodEstimator
from emcmc.mcmc import (
    ChainTrace,
    ProposalSpec,
    correlated_emcmc_run,
    pilot_proposal,
    pmmh_run,
    tune_particles,
)
from emcmc.models import build_model, simulate_dataset
from emcmc.rand import RngStream

log = logging.getLogger("emcmc")

OUTPUT_ROOT_ENV = "EMCMC_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
CORRELATED = "enkf-correlated"
RUN_ESTIMATORS = tuple(k for k in ESTIMATOR_KINDS) + (CORRELATED,)
_FMT = "%.17g"


def _version() -> str:
    try:
        return _metadata.version("artifact")
    except _metadata.PackageNotFoundError:
        return "0+unknown"


def _derive_seed(master: int, purpose: int) -> int:
    return RngStream(master).spawn(purpose).integer(2**63)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    """Everything needed to reproduce one experiment."""

    model: str = "ricker"
    model_overrides: dict = field(default_factory=dict)
    data: dict = field(default_factory=lambda: {"source": "simulate", "steps": 100})
    estimator: str = "enkf"
    n_particles: int = 100
    sigma_u: Optional[float] = None
    density: str = "plugin"
    proposal: dict = field(default_factory=lambda: {"pilot": {"iters": 2000}})
    scale: float = 1.0
    iterations: int = 1000
    burn_in: float = 0.1
    init: Optional[list] = None
    seeds: dict = field(default_factory=lambda: {"master": 1})
    early_rejection: bool = False
    chains: int = 1
    tau_replicates: int = 20
    output_dir: Optional[str] = None

    @classmethod
    def from_mapping(cls, raw: dict) -> "RunConfig":
        if "config" in raw and isinstance(raw["config"], dict):
            raw = raw["config"]  # a metadata.json from an earlier run
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        return cls(**copy.deepcopy(raw))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def resolved_seeds(self) -> dict:
        seeds = dict(self.seeds or {})
        master = int(seeds.get("master", 1))
        seeds["master"] = master
        seeds.setdefault("data", _derive_seed(master, 1))
        seeds.setdefault("chain", _derive_seed(master, 2))
        seeds.setdefault("tune", _derive_seed(master, 3))
        return {k: int(v) for k, v in seeds.items()}

    def validate(self, model) -> None:
        if self.estimator not in RUN_ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}; choose from {RUN_ESTIMATORS}")
        if self.iterations < 1:
            raise ConfigError("iterations must be positive")
        if not 0.0 <= self.burn_in < 1.0:
            raise ConfigError("burn_in must lie in [0, 1)")
        if self.chains < 1:
            raise ConfigError("chains must be positive")
        if self.density not in ("plugin", "unbiased"):
            raise ConfigError("density must be 'plugin' or 'unbiased'")
        if self.estimator == CORRELATED:
            if model.normal_draw_count is None:
                raise ConfigError(
                    f"{model.name} has no fixed-size normal driver; {CORRELATED} is unavailable"
                )
            if self.sigma_u is None or not 0.0 < float(self.sigma_u) <= 1.0:
                raise ConfigError("enkf-correlated needs sigma_u in (0, 1]")
            if self.early_rejection:
                raise ConfigError("early rejection is not combined with the correlated sampler")
        else:
            try:
                est = LikelihoodEstimator(self.estimator, int(self.n_particles))
                est.check_model(model)
            except DomainError as exc:
                raise ConfigError(str(exc)) from exc
            if self.early_rejection and not est.supports_early_rejection:
                raise ConfigError("early rejection needs the enkf or enkf-rqmc estimator")
        if self.init is not None and len(self.init) != model.n_params:
            raise ConfigError(f"init must have {model.n_params} entries")


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a mapping")
    return raw


def _parse_overrides(pairs: Sequence[str]) -> dict:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, value = pair.split("=", 1)
        out[key.strip()] = yaml.safe_load(value)
    return out


def _floats(text: Optional[str]) -> Optional[list]:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma separated numbers, got {text!r}") from exc


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def write_dataset(path: Path, data: Dataset) -> None:
    header = "t," + ",".join(f"y{i + 1}" for i in range(data.dim_y))
    np.savetxt(path, np.column_stack([data.times, data.y]), delimiter=",", header=header,
               comments="", fmt=["%d"] + [_FMT] * data.dim_y)


def write_truth(path: Path, data: Dataset) -> None:
    states = np.asarray(data.states)
    header = "t," + ",".join(f"x{i + 1}" for i in range(states.shape[1]))
    np.savetxt(path, np.column_stack([data.times, states]), delimiter=",", header=header,
               comments="", fmt=["%d"] + [_FMT] * states.shape[1])


def read_dataset(path) -> Dataset:
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from exc
    if not header or header[0] != "t" or arr.shape[1] != len(header):
        raise ConfigError(f"dataset {path} must have header t,y1,...,yd")
    try:
        return Dataset(arr[:, 0].astype(int), arr[:, 1:])
    except DimensionError as exc:
        raise ConfigError(f"invalid dataset {path}: {exc}") from exc


def trace_rows(trace: ChainTrace, upto: Optional[int] = None):
    n = trace.n_iters if upto is None else upto
    for i in range(n):
        yield [str(i)] + [_FMT % v for v in trace.samples[i]] + [
            _FMT % trace.log_like[i], str(int(trace.accepted[i])), str(int(trace.early_stop_t[i]))
        ]


def write_trace(path: Path, trace: ChainTrace, upto: Optional[int] = None,
                failure: Optional[str] = None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["iteration", *trace.param_names, "log_like", "accepted", "early_stop_t"]) + "\n")
        for row in trace_rows(trace, upto):
            fh.write(",".join(row) + "\n")
        if failure is not None:
            fh.write(f"# FAILED: {failure}\n")


@dataclass
class LoadedTrace:
    label: str
    param_names: tuple[str, ...]
    samples: np.ndarray


def read_trace(path) -> LoadedTrace:
    try:
        with open(path) as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    except OSError as exc:
        raise ConfigError(f"cannot read trace {path}: {exc}") from exc
    if not rows or rows[0][0] != "iteration":
        raise ConfigError(f"{path} is not a trace file")
    header = rows[0]
    names = tuple(header[1:-3])
    body = np.array([[float(v) for v in r[1:-3]] for r in rows[1:]]).reshape(-1, len(names))
    return LoadedTrace(Path(path).stem if Path(path).stem != "trace" else str(Path(path).parent.name),
                       names, body)


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


def _fail(kind: str, exc: BaseException) -> int:
    sys.stderr.write(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}) + "\n")
    return EXIT_CONFIG if kind == "config" else EXIT_NUMERICAL


# ---------------------------------------------------------------------------
# Experiment
# ---------------------------------------------------------------------------


def prepare_data(cfg: RunConfig, model, seeds: dict) -> tuple[Dataset, bool]:
    spec = dict(cfg.data or {})
    source = spec.get("source", "simulate")
    if source == "csv":
        if "path" not in spec:
            raise ConfigError("data.source=csv needs data.path")
        data = read_dataset(spec["path"])
        data.check(model)
        return data, False
    if source != "simulate":
        raise ConfigError("data.source must be 'simulate' or 'csv'")
    theta = spec.get("theta")
    theta = model.default_theta() if theta is None else np.asarray(theta, dtype=float)
    if theta.shape != (model.n_params,):
        raise ConfigError(f"data.theta must have {model.n_params} entries")
    steps = int(spec.get("steps", 100))
    data = simulate_dataset(model, theta, steps, RngStream(seeds["data"]),
                            include_y0=bool(spec.get("include_y0", False)))
    return data, True


def _resolve_proposal(cfg: RunConfig, model, data, init, seeds) -> ProposalSpec:
    spec = cfg.proposal or {}
    if "covariance" in spec:
        cov = spec["covariance"]
        if isinstance(cov, str):
            cov = np.loadtxt(cov, delimiter=",", ndmin=2)
        try:
            prop = ProposalSpec(np.asarray(cov, dtype=float), float(cfg.scale))
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
    elif "sd" in spec:
        prop = ProposalSpec.diagonal(spec["sd"], float(cfg.scale))
    elif "pilot" in spec:
        pilot = dict(spec["pilot"] or {})
        kind = pilot.get("estimator", "enkf" if cfg.estimator == CORRELATED else cfg.estimator)
        est = LikelihoodEstimator(kind, int(pilot.get("n_particles", cfg.n_particles)))
        initial = pilot.get("initial_sd")
        initial = None if initial is None else ProposalSpec.diagonal(initial)
        cov_spec, _ = pilot_proposal(model, data, est, init, int(pilot.get("iters", 2000)),
                                     RngStream(seeds["chain"], 1 << 40), initial)
        prop = ProposalSpec(cov_spec.covariance, float(cfg.scale))
    else:
        raise ConfigError("proposal needs 'covariance', 'sd' or 'pilot'")
    if prop.dim != model.n_params:
        raise ConfigError(f"proposal dimension {prop.dim} != {model.n_params} parameters")
    return prop


def run_chain(cfg: RunConfig, model, data, proposal, init, seed: int, chain: int) -> ChainTrace:
    rng = RngStream(seed, chain)
    if cfg.estimator == CORRELATED:
        return correlated_emcmc_run(model, data, int(cfg.n_particles), float(cfg.sigma_u), proposal,
                                    int(cfg.iterations), init, rng, density=cfg.density)
    est = LikelihoodEstimator(cfg.estimator, int(cfg.n_particles))
    return pmmh_run(model, data, est, proposal, int(cfg.iterations), init, rng,
                    early_rejection=bool(cfg.early_rejection))


def _run_chain_guarded(args):
    cfg_dict, data_arrays, proposal_cov, scale, init, seed, chain = args
    cfg = RunConfig.from_mapping(cfg_dict)
    model = build_model(cfg.model, cfg.model_overrides)
    data = Dataset(*data_arrays)
    proposal = ProposalSpec(proposal_cov, scale)
    return run_chain(cfg, model, data, proposal, init, seed, chain)


def _tau(cfg, model, data, trace, seeds) -> float:
    if cfg.estimator == KALMAN_EXACT:
        return 0.0
    kind = "enkf" if cfg.estimator == CORRELATED else cfg.estimator
    if cfg.estimator == CORRELATED and cfg.density == "unbiased":
        kind = "enkf-unbiased"
    theta_rep = np.median(trace.samples[int(cfg.burn_in * trace.n_iters):], axis=0)
    try:
        probe = loglik_noise_probe(model, data, theta_rep, LikelihoodEstimator(kind, int(cfg.n_particles)),
                                   max(10, int(cfg.tau_replicates)), RngStream(seeds["tune"]))
    except EmcmcError:
        return float("nan")
    return probe.sd


def run_experiment(cfg: RunConfig, out_dir: Path) -> int:
    """Run a configured experiment and write its output files into ``out_dir``."""
    start = _dt.datetime.now(_dt.timezone.utc)
    model = build_model(cfg.model, cfg.model_overrides)
    cfg.validate(model)
    seeds = cfg.resolved_seeds()
    data, simulated = prepare_data(cfg, model, seeds)
    init = np.asarray(cfg.init, dtype=float) if cfg.init is not None else model.default_theta()
    out_dir.mkdir(parents=True, exist_ok=True)
    if simulated:
        write_dataset(out_dir / "dataset.csv", data)
        write_truth(out_dir / "truth.csv", data)
    proposal = _resolve_proposal(cfg, model, data, init, seeds)

    meta = {
        "config": cfg.to_dict(),
        "resolved": {"seeds": seeds, "proposal_covariance": proposal.covariance.tolist(),
                     "init": init.tolist(), "n_obs": data.n_obs},
        "version": _version(),
        "start": start.isoformat(),
    }
    traces: list[ChainTrace] = []
    status, error, partial = "ok", None, None
    try:
        if cfg.chains == 1:
            traces.append(run_chain(cfg, model, data, proposal, init, seeds["chain"], 0))
        else:
            jobs = [(cfg.to_dict(), (data.times, data.y), proposal.covariance, proposal.scale, init,
                     seeds["chain"], c) for c in range(cfg.chains)]
            ctx = multiprocessing.get_context("spawn")
            with ctx.Pool(min(cfg.chains, os.cpu_count() or 1)) as pool:
                traces.extend(pool.map(_run_chain_guarded, jobs))
    except (ConfigError, DomainError):
        raise
    except (EmcmcError, FloatingPointError, np.linalg.LinAlgError, OverflowError) as exc:
        status, error = "failed", f"{type(exc).__name__}: {exc}"
        partial = getattr(exc, "partial_trace", None)

    names = ["trace.csv"] if cfg.chains == 1 else [f"trace_chain{c}.csv" for c in range(cfg.chains)]
    if status == "failed":
        if partial is None:
            partial = ChainTrace.empty(model.param_names, 0)
        write_trace(out_dir / names[0], partial, failure=error)
    for name, trace in zip(names, traces):
        write_trace(out_dir / name, trace)

    summaries = []
    for trace in traces:
        tau = _tau(cfg, model, data, trace, seeds)
        summaries.append(efficiency_summary(trace, tau, cfg.burn_in))
    meta["efficiency"] = [s.as_dict() for s in summaries]
    meta["status"] = status
    if error:
        meta["error"] = error
    meta["end"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    (out_dir / "metadata.json").write_text(json.dumps(meta, indent=2, default=float) + "\n")
    with open(out_dir / "summary.txt", "w") as fh:
        fh.write(f"model: {cfg.model}  estimator: {cfg.estimator}  iterations: {cfg.iterations}\n")
        fh.write(EfficiencySummary.table_header() + "\n")
        for s in summaries:
            fh.write(s.table_row() + "\n")
        if error:
            fh.write(f"FAILED: {error}\n")
    if status == "failed":
        sys.stderr.write(json.dumps({"error": "numerical", "message": error}) + "\n")
        return EXIT_NUMERICAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# Kernel density comparison
# ---------------------------------------------------------------------------


def silverman_bandwidth(x: np.ndarray) -> float:
    """``0.9 min(sd, IQR / 1.34) n^(-1/5)``.

    Raises:
        ConfigError: when fewer than two draws or no spread make the bandwidth zero.
    """
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise ConfigError("kernel density needs at least two draws")
    sd = float(x.std(ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    h = 0.9 * spread * x.size ** -0.2
    if not h > 0:
        raise ConfigError("kernel density bandwidth is zero (constant draws)")
    return h


def gaussian_kde(x: np.ndarray, grid: np.ndarray, bandwidth: float) -> np.ndarray:
    out = np.zeros_like(grid)
    for chunk in np.array_split(x, max(1, x.size // 4096)):
        d = (grid[:, None] - chunk[None, :]) / bandwidth
        out += np.exp(-0.5 * d * d).sum(axis=1)
    return out / (x.size * bandwidth * math.sqrt(2 * math.pi))


def compare_traces(traces: Sequence[LoadedTrace], burn_in: float, points: int):
    names = traces[0].param_names
    for tr in traces[1:]:
        if tr.param_names != names:
            raise ConfigError(f"parameter sets differ: {names} vs {tr.param_names}")
    kept = [tr.samples[int(burn_in * tr.samples.shape[0]):] for tr in traces]
    density_rows, stats = [], []
    for k, name in enumerate(names):
        cols = [s[:, k] for s in kept]
        bws = [silverman_bandwidth(c) for c in cols]
        lo = min(c.min() - 3 * h for c, h in zip(cols, bws))
        hi = max(c.max() + 3 * h for c, h in zip(cols, bws))
        grid = np.linspace(lo, hi, points)
        dens = [gaussian_kde(c, grid, h) for c, h in zip(cols, bws)]
        for g, row in zip(grid, np.column_stack(dens)):
            density_rows.append([name, g, *row])
        for tr, c in zip(traces, cols):
            stats.append((tr.label, name, float(c.mean()), float(c.std(ddof=1))))
    return density_rows, stats


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _default_out(kind: str, cfg_like: str) -> Path:
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / f"{kind}-{cfg_like}"


def _merged_config(args) -> RunConfig:
    raw = load_config(args.config)
    if "config" in raw and isinstance(raw["config"], dict):
        raw = raw["config"]
    raw = copy.deepcopy(raw)
    if getattr(args, "model", None):
        raw["model"] = args.model
    if getattr(args, "set", None):
        raw.setdefault("model_overrides", {}).update(_parse_overrides(args.set))
    for flag, key in (("estimator", "estimator"), ("n_particles", "n_particles"),
                      ("sigma_u", "sigma_u"), ("iters", "iterations"), ("burn_in", "burn_in"),
                      ("chains", "chains"), ("density", "density"), ("scale", "scale")):
        value = getattr(args, flag, None)
        if value is not None:
            raw[key] = value
    if getattr(args, "early_rejection", False):
        raw["early_rejection"] = True
    if getattr(args, "seed", None) is not None:
        raw["seeds"] = {"master": args.seed}
    if getattr(args, "data", None):
        raw["data"] = {"source": "csv", "path": args.data}
    elif getattr(args, "steps", None) is not None:
        raw.setdefault("data", {"source": "simulate"})
        raw["data"] = {**raw["data"], "source": "simulate", "steps": args.steps}
    if getattr(args, "include_y0", False):
        raw.setdefault("data", {"source": "simulate"})["include_y0"] = True
    theta = _floats(getattr(args, "theta", None))
    if theta is not None:
        raw.setdefault("data", {"source": "simulate"})["theta"] = theta
    init = _floats(getattr(args, "init", None))
    if init is not None:
        raw["init"] = init
    if getattr(args, "proposal_sd", None):
        raw["proposal"] = {"sd": _floats(args.proposal_sd)}
    elif getattr(args, "proposal_cov", None):
        raw["proposal"] = {"covariance": args.proposal_cov}
    elif getattr(args, "pilot_iters", None):
        raw["proposal"] = {"pilot": {"iters": args.pilot_iters}}
    if getattr(args, "out", None):
        raw["output_dir"] = args.out
    return RunConfig.from_mapping(raw)


def cmd_run(args) -> int:
    cfg = _merged_config(args)
    out = Path(cfg.output_dir) if cfg.output_dir else _default_out(cfg.model, cfg.estimator)
    return run_experiment(cfg, out)


def cmd_simulate(args) -> int:
    cfg = _merged_config(args)
    model = build_model(cfg.model, cfg.model_overrides)
    seeds = cfg.resolved_seeds()
    data, _ = prepare_data(cfg, model, seeds)
    out = Path(cfg.output_dir) if cfg.output_dir else _default_out("data", cfg.model)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out / "dataset.csv", data)
    write_truth(out / "truth.csv", data)
    meta = {"config": cfg.to_dict(), "resolved": {"seeds": seeds}, "version": _version()}
    (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(out / "dataset.csv")
    return EXIT_OK


def cmd_tune(args) -> int:
    cfg = _merged_config(args)
    model = build_model(cfg.model, cfg.model_overrides)
    seeds = cfg.resolved_seeds()
    candidates = [int(c) for c in (_floats(args.candidates) or [])]
    if not candidates:
        raise ConfigError("give at least one candidate N with --candidates")
    if args.rep_theta is not None:
        theta = np.asarray(_floats(args.rep_theta))
    elif args.pilot_trace is not None:
        tr = read_trace(args.pilot_trace)
        theta = np.median(tr.samples[int(cfg.burn_in * tr.samples.shape[0]):], axis=0)
    else:
        raise ConfigError("tune needs --rep-theta or --pilot-trace")
    if theta.shape != (model.n_params,):
        raise ConfigError(f"representative theta needs {model.n_params} entries")
    data, _ = prepare_data(cfg, model, seeds)
    kind = cfg.estimator
    try:
        LikelihoodEstimator(kind, max(candidates)).check_model(model)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    result = tune_particles(model, data, theta, kind, candidates, args.replicates,
                            RngStream(seeds["tune"]), target_sd=args.target_sd)
    out = Path(cfg.output_dir) if cfg.output_dir else _default_out("tune", f"{cfg.model}-{kind}")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "tau.csv", "w") as fh:
        fh.write("N,tau,frac_neg_inf\n")
        for row in result.rows():
            fh.write(f"{row['N']},{_FMT % row['tau']},{_FMT % row['frac_neg_inf']}\n")
    (out / "tune.json").write_text(json.dumps(
        {"recommended_N": result.n, "met_target": result.met_target, "theta_rep": theta.tolist(),
         "estimator": kind, "replicates": args.replicates, "seeds": seeds}, indent=2) + "\n")
    for row in result.rows():
        print(f"N={row['N']:>7d}  tau={row['tau']:.3f}  frac_neg_inf={row['frac_neg_inf']:.3f}")
    print(f"recommended N: {result.n}" + ("" if result.met_target else " (target not met)"))
    return EXIT_OK


def cmd_compare(args) -> int:
    traces = [read_trace(p) for p in args.traces]
    labels = [Path(p).stem if Path(p).stem != "trace" else Path(p).parent.name for p in args.traces]
    seen: dict[str, int] = {}
    for tr, label in zip(traces, labels):
        k = seen.get(label, 0)
        seen[label] = k + 1
        tr.label = label if k == 0 else f"{label}_{k}"
    rows, stats = compare_traces(traces, args.burn_in, args.points)
    out = Path(args.out) if args.out else _default_out("compare", "traces")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "density.csv", "w") as fh:
        fh.write("parameter,x," + ",".join(tr.label for tr in traces) + "\n")
        for name, x, *dens in rows:
            fh.write(f"{name},{_FMT % x}," + ",".join(_FMT % d for d in dens) + "\n")
    with open(out / "summary.csv", "w") as fh:
        fh.write("trace,parameter,mean,sd\n")
        for label, name, mean, sd in stats:
            fh.write(f"{label},{name},{_FMT % mean},{_FMT % sd}\n")
    print(f"{'parameter':<14}{'trace':<24}{'mean':>14}{'sd':>14}")
    for label, name, mean, sd in stats:
        print(f"{name:<14}{label:<24}{mean:>14.6g}{sd:>14.6g}")
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML or JSON config file (a metadata.json also works)")
    p.add_argument("--model", help="model name")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="model override")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--data", help="dataset CSV (t,y1,...) instead of simulating")
    p.add_argument("--steps", type=int, help="simulate this many time steps")
    p.add_argument("--include-y0", action="store_true", help="also observe the initial state")
    p.add_argument("--theta", help="comma separated parameters for simulation")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emcmc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a dataset")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tune", help="log-likelihood noise table over candidate N")
    _add_common(p)
    p.add_argument("--estimator", choices=ESTIMATOR_KINDS)
    p.add_argument("--candidates", required=True, help="comma separated particle numbers")
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--target-sd", type=float, default=1.5)
    p.add_argument("--rep-theta", help="representative parameter value")
    p.add_argument("--pilot-trace", help="trace whose marginal medians give the representative value")
    p.add_argument("--burn-in", type=float)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("run", help="run a PMMH / eMCMC chain")
    _add_common(p)
    p.add_argument("--estimator", choices=RUN_ESTIMATORS)
    p.add_argument("--n-particles", type=int)
    p.add_argument("--sigma-u", type=float)
    p.add_argument("--density", choices=("plugin", "unbiased"))
    p.add_argument("--iters", type=int)
    p.add_argument("--burn-in", type=float)
    p.add_argument("--chains", type=int)
    p.add_argument("--scale", type=float)
    p.add_argument("--init", help="comma separated initial parameters")
    p.add_argument("--early-rejection", action="store_true")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--proposal-sd", help="comma separated random-walk sds")
    group.add_argument("--proposal-cov", help="CSV file holding the proposal covariance")
    group.add_argument("--pilot-iters", type=int, help="tune the proposal with an adaptive pilot")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="compare posterior traces")
    p.add_argument("traces", nargs="+")
    p.add_argument("--burn-in", type=float, default=0.1)
    p.add_argument("--points", type=int, default=256)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DomainError, DimensionError) as exc:
        return _fail("config", exc)
    except (EmcmcError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail("numerical", exc)


if __name__ == "__main__":
    sys.exit(main())
