"""Configuration parsing, sweeps, model-vs-simulator reports and file output."""
from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .aacpt import DEFAULT_BETAS, DEFAULT_LAMBDAS, TuningGrid, fit_optimal_line, run_aacpt
from .flow_simulator import EndCause, SimReport, run_flow, total_average_rate
from .markov_model import (
    DEFAULT_ITERATIONS,
    CcaParams,
    ModelError,
    NetworkConfig,
    average_throughput,
)

SWEEP_COLUMNS = (
    "sweep_variable",
    "sweep_value",
    "cca",
    "beta",
    "lambda_max",
    "buffer_packets",
    "loss_rate",
    "rtt_ms",
    "ath_kbps",
    "normalized",
    "mean_epoch_s",
    "source",
    "seed_count",
)
TRACE_COLUMNS = (
    "epoch",
    "cycle",
    "cwnd",
    "lambda",
    "duration_s",
    "packets_sent",
    "end_cause",
)
SWEEP_VARIABLES = ("buffer", "loss_rate", "rtt", "lambda_max", "beta")
MODES = ("model", "simulate", "both")
NORMALIZATION = "rate / capacity_kbps"
SIG_DIGITS = 12

# config key -> sweep variable it drives when given a list
_SWEEP_KEYS = {
    "buffer_packets": "buffer",
    "loss_rate": "loss_rate",
    "rtt_ms": "rtt",
    "lambda_max": "lambda_max",
    "beta": "beta",
}
_KEY_FOR_VARIABLE = {v: k for k, v in _SWEEP_KEYS.items()}

_DEFAULTS = {
    "capacity_kbps": 1e6,
    "rtt_ms": 10.0,
    "packet_size_bytes": 1000.0,
    "buffer_packets": 4,
    "loss_rate": 1e-8,
    "min_window": 2,
    "beta": 0.5,
    "lambda_min": 1.0,
    "lambda_max": 5.0,
    "iterations": DEFAULT_ITERATIONS,
    "mode": "model",
    "seeds": tuple(range(1, 11)),
    "duration_s": 100.0,
    "betas": DEFAULT_BETAS,
    "lambdas": DEFAULT_LAMBDAS,
}
_INT_KEYS = {"buffer_packets", "min_window", "iterations"}
_LIST_KEYS = {"sweep_values", "seeds", "betas", "lambdas"}
KNOWN_KEYS = set(_DEFAULTS) | {"sweep_variable", "sweep_values"}


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), f".{SIG_DIGITS}g")
    return str(x)


@dataclass
class SweepSpec:
    variable: str
    values: tuple
    base_config: NetworkConfig = field(default_factory=NetworkConfig)
    base_params: CcaParams = field(default_factory=CcaParams)
    mode: str = "model"
    seeds: tuple = tuple(range(1, 11))
    duration_s: float = 100.0
    iterations: int = DEFAULT_ITERATIONS

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ConfigError("sweep_variable", f"must be one of {SWEEP_VARIABLES}, got {self.variable!r}")
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {self.mode!r}")
        self.values = tuple(sorted(float(v) for v in self.values))
        if not self.values:
            raise ConfigError("sweep_values", "must not be empty")
        if self.mode != "model" and not self.seeds:
            raise ConfigError("seeds", "must not be empty when simulating")
        for v in self.values:
            self.point(v)

    def point(self, value: float) -> tuple[NetworkConfig, CcaParams]:
        """Config and Agile-SD params with the swept variable set to ``value``."""
        config, params = self.base_config, self.base_params
        key = _KEY_FOR_VARIABLE[self.variable]
        try:
            if self.variable == "buffer":
                if value != int(value):
                    raise ModelError(f"buffer must be whole packets, got {value}")
                config = replace(config, buffer_packets=int(value))
            elif self.variable == "loss_rate":
                config = replace(config, loss_rate=value)
            elif self.variable == "rtt":
                config = replace(config, rtt_s=value / 1000.0)
            elif self.variable == "lambda_max":
                params = replace(params, lambda_max=value)
            else:
                params = replace(params, beta=value)
        except ModelError as exc:
            raise ConfigError(key, str(exc)) from None
        return config, params


@dataclass
class RunConfig:
    network: NetworkConfig
    params: CcaParams
    iterations: int = DEFAULT_ITERATIONS
    mode: str = "model"
    seeds: tuple = tuple(range(1, 11))
    duration_s: float = 100.0
    sweep: SweepSpec | None = None
    betas: tuple = DEFAULT_BETAS
    lambdas: tuple = DEFAULT_LAMBDAS


def _parse_scalar(key: str, raw: str):
    try:
        if key in _INT_KEYS or key == "seeds":
            f = float(raw)
            if f != int(f):
                raise ValueError
            return int(f)
        if key in ("mode", "sweep_variable"):
            return raw
        return float(raw)
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r}") from None


def parse_config(data: str | bytes = "") -> RunConfig:
    """Parse ``key = value`` text (lists comma-separated, ``#`` comments).

    Missing keys take the defaults of the reference setup: 1 Gbps, 10 ms,
    1000-byte packets, 4-packet buffer, loss rate 1e-8, minimum window 2,
    10 000 iterations, beta 0.5 and lambda in [1, 5].  A list given to
    ``buffer_packets``, ``loss_rate``, ``rtt_ms``, ``lambda_max`` or ``beta``
    turns that key into the sweep variable.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    raw: dict[str, list] = {}
    for lineno, line in enumerate(data.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(key, "unknown key")
        items = [s.strip() for s in value.split(",") if s.strip()]
        if not items and key not in _LIST_KEYS:
            raise ConfigError(key, "missing value")
        raw[key] = [_parse_scalar(key, s) for s in items]

    sweep_variable = raw.pop("sweep_variable", [None])[0]
    sweep_values = raw.pop("sweep_values", None)
    for key, var in _SWEEP_KEYS.items():
        if key in raw and len(raw[key]) > 1:
            if sweep_variable not in (None, var) or sweep_values is not None:
                raise ConfigError(key, "only one swept variable is allowed")
            sweep_variable, sweep_values = var, raw[key]
            raw[key] = raw[key][:1]
    for key, values in raw.items():
        if key not in _LIST_KEYS and len(values) > 1:
            raise ConfigError(key, "expects a single value")

    vals = dict(_DEFAULTS)
    for key, values in raw.items():
        vals[key] = tuple(values) if key in _LIST_KEYS else values[0]

    def build(key, factory):
        try:
            return factory()
        except ModelError as exc:
            raise ConfigError(key, str(exc)) from None

    for key in ("capacity_kbps", "rtt_ms", "packet_size_bytes"):
        if not vals[key] > 0:
            raise ConfigError(key, f"must be > 0, got {vals[key]}")
    if not 0 < vals["beta"] < 1:
        raise ConfigError("beta", f"must lie in (0, 1), got {vals['beta']}")
    if vals["lambda_min"] < 1:
        raise ConfigError("lambda_min", f"must be >= 1, got {vals['lambda_min']}")
    if vals["lambda_max"] < vals["lambda_min"]:
        raise ConfigError("lambda_max", f"must be >= lambda_min, got {vals['lambda_max']}")
    if vals["iterations"] < 1:
        raise ConfigError("iterations", f"must be >= 1, got {vals['iterations']}")
    if not vals["duration_s"] > 0:
        raise ConfigError("duration_s", f"must be > 0, got {vals['duration_s']}")
    if vals["mode"] not in MODES:
        raise ConfigError("mode", f"must be one of {MODES}, got {vals['mode']!r}")
    if vals["buffer_packets"] < 0:
        raise ConfigError("buffer_packets", f"must be >= 0, got {vals['buffer_packets']}")
    if vals["loss_rate"] < 0:
        raise ConfigError("loss_rate", f"must be >= 0, got {vals['loss_rate']}")
    if vals["min_window"] < 1:
        raise ConfigError("min_window", f"must be >= 1, got {vals['min_window']}")

    network = build(
        "buffer_packets",
        lambda: NetworkConfig(
            capacity_kbps=vals["capacity_kbps"],
            rtt_s=vals["rtt_ms"] / 1000.0,
            packet_size_kbits=vals["packet_size_bytes"] * 8 / 1000.0,
            buffer_packets=vals["buffer_packets"],
            loss_rate=vals["loss_rate"],
            min_window=vals["min_window"],
        ),
    )
    params = build(
        "beta",
        lambda: CcaParams(vals["beta"], vals["lambda_min"], vals["lambda_max"]),
    )
    sweep = None
    if sweep_variable is not None or sweep_values is not None:
        if sweep_variable is None:
            raise ConfigError("sweep_variable", "required when sweep_values is given")
        sweep = SweepSpec(
            variable=sweep_variable,
            values=tuple(sweep_values or ()),
            base_config=network,
            base_params=params,
            mode=vals["mode"],
            seeds=vals["seeds"],
            duration_s=vals["duration_s"],
            iterations=vals["iterations"],
        )
    return RunConfig(
        network=network,
        params=params,
        iterations=vals["iterations"],
        mode=vals["mode"],
        seeds=vals["seeds"],
        duration_s=vals["duration_s"],
        sweep=sweep,
        betas=vals["betas"],
        lambdas=vals["lambdas"],
    )


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return parse_config("")
    return parse_config(Path(path).read_bytes())


# ---------------------------------------------------------------- sweeps


def _model_row(config, params, iterations):
    rep = average_throughput(config, params, iterations)
    return rep.ath_kbps, rep.normalized_ath, math.nan, 0


def _sim_row(config, params, seeds, duration_s):
    reports = [run_flow(config, params, duration_s, s) for s in seeds]
    ath = float(np.mean([r.tatr_kbps for r in reports]))
    epoch = [r.mean_epoch_duration_s for r in reports if not math.isnan(r.mean_epoch_duration_s)]
    return ath, ath / config.capacity_kbps, float(np.mean(epoch)) if epoch else math.nan, len(reports)


def run_sweep(spec: SweepSpec, n_jobs: int | None = None) -> list[dict]:
    """One row per (sweep value, CCA, source); NewReno is ``lambda_max = 1``."""
    jobs = []
    for value in spec.values:
        config, agile = spec.point(value)
        newreno = CcaParams.newreno(agile.beta)
        for cca, params in (("agile", agile), ("newreno", newreno)):
            if spec.mode in ("model", "both"):
                jobs.append((value, cca, params, config, "model"))
            if spec.mode in ("simulate", "both"):
                jobs.append((value, cca, params, config, "sim"))

    def work(config, params, source):
        if source == "model":
            return _model_row(config, params, spec.iterations)
        return _sim_row(config, params, spec.seeds, spec.duration_s)

    try:
        results = Parallel(n_jobs=n_jobs)(delayed(work)(c, p, s) for _, _, p, c, s in jobs)
    except (ModelError, ValueError) as exc:
        raise ValueError(f"sweep {spec.variable} failed: {exc}") from exc

    rows = []
    for (value, cca, params, config, source), (ath, norm, epoch_s, n_seeds) in zip(jobs, results):
        rows.append(
            {
                "sweep_variable": spec.variable,
                "sweep_value": value,
                "cca": cca,
                "beta": params.beta,
                "lambda_max": params.lambda_max,
                "buffer_packets": config.buffer_packets,
                "loss_rate": config.loss_rate,
                "rtt_ms": config.rtt_s * 1000.0,
                "ath_kbps": ath,
                "normalized": norm,
                "mean_epoch_s": epoch_s,
                "source": source,
                "seed_count": n_seeds,
            }
        )
    return rows


@dataclass
class PointComparison:
    label: str
    model: float
    sim_mean: float
    sim_std: float
    rel_error: float


@dataclass
class ValidationReport:
    points: list[PointComparison]
    median_rel_error: float
    max_rel_error: float

    def passed(self, median_tol: float = 0.15, max_tol: float = 0.30) -> bool:
        return self.median_rel_error <= median_tol and self.max_rel_error <= max_tol


def _compare_one(label, config, params, seeds, duration_s, iterations):
    model = average_throughput(config, params, iterations).normalized_ath
    sims = [run_flow(config, params, duration_s, s).normalized for s in seeds]
    mean = float(np.mean(sims))
    std = float(np.std(sims, ddof=1)) if len(sims) > 1 else 0.0
    return PointComparison(label, model, mean, std, abs(mean - model) / model)


def compare_points(
    points, seeds=range(1, 11), duration_s=100.0, iterations=DEFAULT_ITERATIONS, n_jobs=None
) -> ValidationReport:
    """``points`` is an iterable of ``(label, NetworkConfig, CcaParams)``."""
    seeds = tuple(seeds)
    if not seeds:
        raise ValueError("validation needs at least one seed")
    comps = Parallel(n_jobs=n_jobs)(
        delayed(_compare_one)(label, c, p, seeds, duration_s, iterations) for label, c, p in points
    )
    if not comps:
        raise ValueError("validation needs at least one point")
    errs = [c.rel_error for c in comps]
    return ValidationReport(list(comps), statistics.median(errs), max(errs))


def compare_model_vs_sim(spec: SweepSpec, n_jobs: int | None = None) -> ValidationReport:
    points = [(f"{spec.variable}={v:g}", *spec.point(v)) for v in spec.values]
    return compare_points(points, spec.seeds, spec.duration_s, spec.iterations, n_jobs)


# ---------------------------------------------------------------- output


def write_table(rows: list[dict], path_or_buf, columns=None, fmt_="csv") -> None:
    columns = list(columns or (rows[0].keys() if rows else ()))
    own = isinstance(path_or_buf, (str, Path))
    buf = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        if fmt_ == "json":
            json.dump([{k: _jsonable(r[k]) for k in columns} for r in rows], buf, indent=2)
            buf.write("\n")
        else:
            w = csv.writer(buf)
            w.writerow(columns)
            for r in rows:
                w.writerow([fmt(r[k]) for k in columns])
    finally:
        if own:
            buf.close()


def _jsonable(x):
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return None if math.isnan(x) else x
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x]
    return x


def read_sweep_csv(path_or_text) -> list[dict]:
    text = Path(path_or_text).read_text() if isinstance(path_or_text, Path) else path_or_text
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        out = {}
        for k, v in r.items():
            if k in ("sweep_variable", "cca", "source"):
                out[k] = v
            elif k in ("buffer_packets", "seed_count"):
                out[k] = int(v)
            else:
                out[k] = float(v)
        rows.append(out)
    return rows


def emit_trace(report: SimReport, path) -> Path:
    """Per-cycle CSV with ``# key=value`` metadata lines on top."""
    path = Path(path)
    meta = {
        "packet_size_kbits": report.packet_size_kbits,
        "rtt_s": report.rtt_s,
        "capacity_kbps": report.capacity_kbps,
        "seed": report.seed,
        "duration_s": report.duration_s,
        "tatr_kbps": report.tatr_kbps,
        "normalization": NORMALIZATION,
    }
    with open(path, "w", newline="") as fh:
        for k, v in meta.items():
            fh.write(f"# {k}={fmt(v)}\n")
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for j, epoch in enumerate(report.epochs, 1):
            for i, (cw, lam, d, p) in enumerate(
                zip(epoch.windows, epoch.lambdas, epoch.durations, epoch.packets)
            ):
                w.writerow([j, i, fmt(cw), fmt(lam), fmt(d), fmt(p), epoch.end_cause.value])
    return path


def read_trace(path) -> tuple[dict, list[dict]]:
    meta: dict = {}
    body = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                k, v = line[1:].strip().split("=", 1)
                meta[k] = v
            else:
                body.append(line)
    for k in ("packet_size_kbits", "rtt_s", "capacity_kbps", "duration_s", "tatr_kbps"):
        meta[k] = float(meta[k])
    meta["seed"] = int(meta["seed"])
    rows = []
    for r in csv.DictReader(io.StringIO("".join(body))):
        rows.append(
            {
                "epoch": int(r["epoch"]),
                "cycle": int(r["cycle"]),
                "cwnd": float(r["cwnd"]),
                "lambda": float(r["lambda"]),
                "duration_s": float(r["duration_s"]),
                "packets_sent": float(r["packets_sent"]),
                "end_cause": EndCause(r["end_cause"]),
            }
        )
    return meta, rows


def trace_tatr(path) -> float:
    meta, rows = read_trace(path)
    sent = math.fsum(r["packets_sent"] for r in rows)
    elapsed = math.fsum(r["duration_s"] for r in rows)
    return meta["packet_size_kbits"] * sent / elapsed


# ---------------------------------------------------------------- tuning


def run_aacpt_command(cfg: RunConfig, out_dir, n_jobs: int | None = None) -> dict[str, Path]:
    """Write ``at_matrix.csv``, ``lambda_opt.csv`` and ``fit.json`` into ``out_dir``."""
    grid = TuningGrid(cfg.betas, cfg.lambdas, cfg.network, cfg.iterations)
    result = run_aacpt(grid, n_jobs=n_jobs)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "at_matrix": out_dir / "at_matrix.csv",
        "lambda_opt": out_dir / "lambda_opt.csv",
        "fit": out_dir / "fit.json",
    }
    with open(paths["at_matrix"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beta", *[fmt(x) for x in result.lambdas]])
        for beta, row in zip(result.betas, result.at_matrix):
            w.writerow([fmt(beta), *[fmt(x) for x in row]])

    lam_index = {float(x): j for j, x in enumerate(result.lambdas)}
    with open(paths["lambda_opt"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beta", "lambda_opt", "formula_lambda", "at_opt", "at_lambda1"])
        for i, beta in enumerate(result.betas):
            opt = float(result.lambda_opt[i])
            w.writerow(
                [
                    fmt(beta),
                    fmt(opt),
                    fmt(result.formula_lambda[i]),
                    fmt(result.at_matrix[i, lam_index[opt]]),
                    fmt(result.at_matrix[i, 0]),
                ]
            )

    fit = {"normalization": NORMALIZATION, "base_config": asdict(cfg.network), "iterations": cfg.iterations}
    if len(result.betas) >= 2:
        slope, intercept = fit_optimal_line(result.betas, result.lambda_opt)
        refit = [math.ceil(round(intercept + slope * b, 9)) for b in result.betas]
        fit.update(
            slope=slope,
            intercept=intercept,
            ceiling_matches=int(np.sum(np.array(refit) == result.lambda_opt)),
        )
    fit["lambda_opt"] = result.lambda_opt.tolist()
    fit["formula_lambda"] = result.formula_lambda.tolist()
    with open(paths["fit"], "w") as fh:
        json.dump(fit, fh, indent=2)
        fh.write("\n")
    return paths
