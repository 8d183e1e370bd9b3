"""Config-driven benchmark CLI: simulate, fit, adapt, risk, rate, check, plot.

Experiments are described by a single JSON file (a documented key-value
tree, see :class:`ExperimentConfig`); every command resolves replication
seeds from the master seed via ``SeedSequence`` spawn keys, so re-running a
command with the same config and seed reproduces primary outputs
byte-identically.  Exit codes: 0 success, 1 config validation error,
2 diagnostic check failure, 3 runtime error.

Example config::

    {
      "truth": "quadratic_terminal",
      "n_list": [500, 1000, 2000, 4000],
      "path_steps": 512,
      "grid_size": 64,
      "max_order": 2,
      "s_star_hi": 2.0,
      "s_star_lo": 0.5,
      "majorant": {"mu4": 0.66, "class_bound": 1.0},
      "bandwidths": {"mode": "theoretical", "s": [1.0, 1.0], "lam": [1.0, 1.0]},
      "risk_p": 2.0,
      "risk": {"method": "isometry", "n_mc": 400},
      "replications": 20,
      "seed": 20240801
    }

Inline truths replace the string by an object with ``a``, ``components``
(entries ``{"order", "kind": "constant"|"poly", ...}``), ``noise`` and
``class``; polynomial components give power-basis coefficients of the
univariate factor.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from ._util import derive_seed
from .chaoscalc import GriddedFunction, chaos_constant, isometry_report, moment_bound_report
from .chaosreg import (
    FittedModel,
    Sample,
    fit_chaos_kernel,
    estimate_mean,
    model_from_json,
    model_to_json,
    risk_isometry,
    risk_monte_carlo,
)
from .errors import ConfigError, GridEmptyError
from .glselect import MajorantParams, adaptive_fit, trace_to_csv
from .kernelkit import MomentKernel, build_kernel, kernel_moment
from .mappingzoo import (
    ClassParams,
    ConstantComponent,
    EqualFactorComponent,
    GaussianNoise,
    GriddedComponent,
    MappingSpec,
    UniformNoise,
    quadratic_terminal,
    synthesize,
)
from .pathlab import make_grid


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BandwidthPlan:
    mode: str  # fixed | theoretical | theorem41 | adaptive
    fixed: dict = field(default_factory=dict)  # order -> h
    s: tuple[float, ...] = ()
    lam: tuple[float, ...] = ()
    practical: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    truth: MappingSpec
    truth_doc: object
    n_list: tuple[int, ...]
    path_steps: int
    grid_size: int
    max_order: int
    s_star_hi: float
    s_star_lo: float
    majorant_mu4: float
    majorant_bound: float
    bandwidths: BandwidthPlan
    risk_p: float
    risk_method: str
    risk_n_mc: int
    replications: int
    seed: int
    check_n_mc: int = 10_000
    check_kernel_perturbation: float = 0.0

    def kernel(self) -> MomentKernel:
        return build_kernel(self.s_star_hi)

    def majorant_params(self) -> MajorantParams:
        return MajorantParams(
            self.majorant_mu4, self.majorant_bound, self.max_order, self.kernel().l2_norm
        )

    def rep_seed(self, n_index: int, rep: int) -> int:
        return derive_seed(self.seed, n_index, rep)


def _require(doc: dict, key: str, kind, where: str):
    if key not in doc:
        raise ConfigError(f"{where}: missing required key '{key}'")
    value = doc[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{where}.{key}: expected a number, got {value!r}")
        return float(value)
    if kind is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{where}.{key}: expected an integer, got {value!r}")
        return value
    if not isinstance(value, kind):
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}, got {value!r}")
    return value


def _parse_noise(doc: dict):
    kind = _require(doc, "kind", str, "truth.noise")
    if kind == "gaussian":
        return GaussianNoise(_require(doc, "sigma", float, "truth.noise"))
    if kind == "uniform":
        return UniformNoise(_require(doc, "half_width", float, "truth.noise"))
    raise ConfigError(f"truth.noise.kind: unknown noise '{kind}'")


def _parse_component(doc: dict, i: int):
    where = f"truth.components[{i}]"
    order = _require(doc, "order", int, where)
    kind = _require(doc, "kind", str, where)
    if kind == "constant":
        return ConstantComponent(order, _require(doc, "value", float, where))
    if kind == "poly":
        coeffs = _require(doc, "coeffs", list, where)
        return EqualFactorComponent(order, np.polynomial.Polynomial(coeffs))
    if kind == "gridded":
        g = _require(doc, "grid_size", int, where)
        flat = _require(doc, "values", list, where)
        if len(flat) != g**order:
            raise ConfigError(f"{where}.values: expected {g**order} entries, got {len(flat)}")
        values = np.asarray(flat, dtype=float).reshape((g,) * order)
        return GriddedComponent(order, GriddedFunction(order, g, values))
    raise ConfigError(f"{where}.kind: unknown component kind '{kind}'")


def _parse_truth(doc) -> MappingSpec:
    if isinstance(doc, str):
        if doc == "quadratic_terminal":
            return quadratic_terminal()
        raise ConfigError(f"truth: unknown named truth '{doc}'")
    if not isinstance(doc, dict):
        raise ConfigError("truth: expected a name or an object")
    a = _require(doc, "a", float, "truth")
    comps = tuple(
        _parse_component(c, i) for i, c in enumerate(_require(doc, "components", list, "truth"))
    )
    noise = _parse_noise(_require(doc, "noise", dict, "truth"))
    cls = doc.get("class", {})
    declared = ClassParams(
        s=tuple(cls.get("s", ())),
        lam=tuple(cls.get("lam", ())),
        max_order=int(cls.get("max_order", max((c.order for c in comps), default=0))),
        class_bound=float(cls.get("class_bound", 1.0)),
        gamma=cls.get("gamma"),
    )
    return MappingSpec(a, comps, noise, declared)


def _parse_bandwidths(doc: dict, max_order: int) -> BandwidthPlan:
    mode = _require(doc, "mode", str, "bandwidths")
    if mode == "fixed":
        raw = _require(doc, "values", dict, "bandwidths")
        fixed = {}
        for key, value in raw.items():
            order = int(key)
            h = float(value)
            if not 0.0 < h < 1.0:
                raise ConfigError(f"bandwidths.values[{key}]: bandwidth must lie in (0, 1)")
            fixed[order] = h
        missing = [o for o in range(1, max_order + 1) if o not in fixed]
        if missing:
            raise ConfigError(f"bandwidths.values: missing orders {missing}")
        return BandwidthPlan("fixed", fixed=fixed)
    if mode in ("theoretical", "theorem41"):
        s = tuple(float(v) for v in _require(doc, "s", list, "bandwidths"))
        lam = tuple(float(v) for v in _require(doc, "lam", list, "bandwidths"))
        if not s or not lam:
            raise ConfigError("bandwidths: 's' and 'lam' must be non-empty")
        if any(v <= 0 for v in s) or any(v <= 0 for v in lam):
            raise ConfigError("bandwidths: 's' and 'lam' entries must be positive")
        return BandwidthPlan(mode, s=s, lam=lam, practical=bool(doc.get("practical", False)))
    if mode == "adaptive":
        return BandwidthPlan("adaptive")
    raise ConfigError(f"bandwidths.mode: unknown mode '{mode}'")


def parse_config(doc: dict) -> ExperimentConfig:
    """Validate a config document; raises ConfigError with field-level messages."""
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object")
    truth_doc = doc.get("truth", "quadratic_terminal")
    truth = _parse_truth(truth_doc)
    n_list = _require(doc, "n_list", list, "config")
    if not n_list:
        raise ConfigError("n_list: must be non-empty")
    if any(not isinstance(n, int) or n < 2 for n in n_list):
        raise ConfigError("n_list: entries must be integers >= 2")
    if list(n_list) != sorted(set(n_list)):
        raise ConfigError("n_list: must be strictly increasing")
    path_steps = _require(doc, "path_steps", int, "config")
    grid_size = doc.get("grid_size", 64)  # default evaluation grid, 64 per axis
    if not isinstance(grid_size, int) or isinstance(grid_size, bool):
        raise ConfigError(f"grid_size: expected an integer, got {grid_size!r}")
    if path_steps < 1 or grid_size < 2:
        raise ConfigError("path_steps must be >= 1 and grid_size >= 2")
    if path_steps % grid_size != 0:
        raise ConfigError(
            f"grid_size: {grid_size} does not divide path_steps {path_steps}"
        )
    max_order = _require(doc, "max_order", int, "config")
    if max_order < 1:
        raise ConfigError("max_order: must be >= 1")
    s_star_hi = _require(doc, "s_star_hi", float, "config")
    s_star_lo = float(doc.get("s_star_lo", 0.5))
    if s_star_hi <= 0 or s_star_lo <= 0:
        raise ConfigError("s_star_hi and s_star_lo must be positive")
    maj = _require(doc, "majorant", dict, "config")
    mu4 = _require(maj, "mu4", float, "majorant")
    bound = _require(maj, "class_bound", float, "majorant")
    if mu4 <= 0 or bound <= 0:
        raise ConfigError("majorant: mu4 and class_bound must be positive")
    plan = _parse_bandwidths(_require(doc, "bandwidths", dict, "config"), max_order)
    risk_p = float(doc.get("risk_p", 2.0))
    if risk_p < 2:
        raise ConfigError("risk_p: must be >= 2")
    risk = doc.get("risk", {})
    risk_method = risk.get("method", "isometry" if risk_p == 2.0 else "monte_carlo")
    if risk_method not in ("isometry", "monte_carlo"):
        raise ConfigError(f"risk.method: unknown method '{risk_method}'")
    if risk_method == "isometry" and risk_p != 2.0:
        raise ConfigError("risk.method: isometry risk is only available for p = 2")
    if plan.mode == "theorem41" and risk_method != "isometry":
        raise ConfigError(
            "risk.method: the growing-truncation bandwidth mode may fit orders "
            "beyond the predictor's reach; only isometry risk (p = 2) is supported"
        )
    risk_n_mc = int(risk.get("n_mc", 400))
    replications = _require(doc, "replications", int, "config")
    if replications < 1:
        raise ConfigError("replications: must be >= 1")
    seed = _require(doc, "seed", int, "config")
    check = doc.get("check", {})
    return ExperimentConfig(
        truth=truth,
        truth_doc=truth_doc,
        n_list=tuple(n_list),
        path_steps=path_steps,
        grid_size=grid_size,
        max_order=max_order,
        s_star_hi=s_star_hi,
        s_star_lo=s_star_lo,
        majorant_mu4=mu4,
        majorant_bound=bound,
        bandwidths=plan,
        risk_p=risk_p,
        risk_method=risk_method,
        risk_n_mc=risk_n_mc,
        replications=replications,
        seed=seed,
        check_n_mc=int(check.get("n_mc", 10_000)),
        check_kernel_perturbation=float(check.get("kernel_coeff_perturbation", 0.0)),
    )


def load_config(path: str | Path, seed_override: int | None = None) -> ExperimentConfig:
    """Load a config file; a RunManifest is accepted and replays its config."""
    with open(path) as fp:
        try:
            doc = json.load(fp)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from exc
    if isinstance(doc, dict) and "command" in doc and "config" in doc:
        doc = doc["config"]
    if seed_override is not None:
        doc = dict(doc)
        doc["seed"] = seed_override
    return parse_config(doc)


# ---------------------------------------------------------------------------
# bandwidth rules
# ---------------------------------------------------------------------------


def theoretical_bandwidth(order: int, n: int, s: float, lam: float) -> float:
    """Optimal fixed-order bandwidth (1 / (lam^2 n))^(1/(2s + l))."""
    return (1.0 / (lam**2 * n)) ** (1.0 / (2.0 * s + order))


def truncation_order(n: int) -> int:
    """Growing truncation level: integer part of sqrt(log n)."""
    return int(math.floor(math.sqrt(math.log(n))))


def growing_order_bandwidth(
    order: int, n: int, s: float, lam: float, l_n: int, p: float,
    kernel_l2: float, practical: bool = False,
) -> float:
    """Bandwidth for the growing-truncation regime, (C^(2 L_n) / (lam^2 n))^(1/(2s+l)).

    C = sqrt(6 (p - 1)) ||k||; the conservative C^(2 L_n) factor is dropped in
    practical mode.
    """
    c2 = math.sqrt(6.0 * (p - 1.0)) * kernel_l2
    numerator = 1.0 if practical else c2 ** (2 * l_n)
    return (numerator / (lam**2 * n)) ** (1.0 / (2.0 * s + order))


def _per_order(seq: Sequence[float], order: int) -> float:
    return seq[order - 1] if order - 1 < len(seq) else seq[-1]


def plan_bandwidths(config: ExperimentConfig, n: int) -> dict[int, float]:
    """Resolve the per-order bandwidth vector for sample size n (non-adaptive modes)."""
    plan = config.bandwidths
    if plan.mode == "fixed":
        return dict(plan.fixed)
    if plan.mode == "theoretical":
        orders = range(1, config.max_order + 1)
        hs = {
            o: theoretical_bandwidth(o, n, _per_order(plan.s, o), _per_order(plan.lam, o))
            for o in orders
        }
    elif plan.mode == "theorem41":
        l_n = max(1, truncation_order(n))
        hs = {
            o: growing_order_bandwidth(
                o, n, _per_order(plan.s, o), _per_order(plan.lam, o), l_n,
                config.risk_p, config.kernel().l2_norm, plan.practical,
            )
            for o in range(1, l_n + 1)
        }
    else:
        raise ConfigError("bandwidths.mode: adaptive mode has no fixed bandwidth vector")
    for order, h in hs.items():
        if not 0.0 < h < 1.0:
            raise ConfigError(
                f"bandwidths: resolved h={h:.6g} for order {order} at n={n} "
                "lies outside (0, 1)"
            )
    return hs


# ---------------------------------------------------------------------------
# shared replication machinery
# ---------------------------------------------------------------------------


def _sample_for(config: ExperimentConfig, n: int, n_index: int, rep: int,
                data_dir: Path | None = None) -> Sample:
    if data_dir is not None:
        rep_dir = data_dir / f"n_{n:06d}" / f"rep_{rep:03d}"
        if not rep_dir.exists():
            raise ConfigError(f"missing dataset directory {rep_dir}")
        return load_dataset(rep_dir, config.path_steps)
    grid = make_grid(config.path_steps)
    return synthesize(config.truth, n, grid, config.rep_seed(n_index, rep))


def _fit_one(config: ExperimentConfig, n: int, n_index: int, rep: int,
             data_dir: Path | None = None) -> FittedModel:
    sample = _sample_for(config, n, n_index, rep, data_dir)
    kernel = config.kernel()
    if config.bandwidths.mode == "adaptive":
        return adaptive_fit(
            sample, config.max_order, config.majorant_params(), config.s_star_lo,
            config.grid_size, kernel,
        )
    hs = plan_bandwidths(config, n)
    estimates = tuple(
        fit_chaos_kernel(sample, order, h, config.grid_size, kernel)
        for order, h in sorted(hs.items())
    )
    return FittedModel(estimate_mean(sample), estimates)


def _risk_of_model(config: ExperimentConfig, model: FittedModel, n_index: int, rep: int):
    if config.risk_method == "isometry":
        return risk_isometry(model, config.truth, config.grid_size)
    return risk_monte_carlo(
        model, config.truth, config.risk_p, config.risk_n_mc,
        derive_seed(config.seed, 1_000_000 + n_index, rep),
        config.grid_size, config.path_steps,
    )


def _parallel_map(fn, items, threads: int):
    if threads <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fp:
        for chunk in iter(lambda: fp.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out_dir: Path, command: str, config: ExperimentConfig,
                    started: float, outputs: list[Path]) -> Path:
    manifest = {
        "command": command,
        "library_version": __version__,
        "seed": config.seed,
        "config": _config_doc(config),
        "replication_seeds": {
            f"n={n}": [config.rep_seed(i, r) for r in range(config.replications)]
            for i, n in enumerate(config.n_list)
        },
        "wall_clock_s": round(time.time() - started, 3),
        "outputs": {str(p.relative_to(out_dir)): _sha256(p) for p in sorted(outputs)},
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fp:
        json.dump(manifest, fp, indent=2, sort_keys=True)
        fp.write("\n")
    return path


def _config_doc(config: ExperimentConfig) -> dict:
    plan = config.bandwidths
    bw: dict = {"mode": plan.mode}
    if plan.mode == "fixed":
        bw["values"] = {str(k): v for k, v in plan.fixed.items()}
    elif plan.mode in ("theoretical", "theorem41"):
        bw["s"] = list(plan.s)
        bw["lam"] = list(plan.lam)
        if plan.mode == "theorem41":
            bw["practical"] = plan.practical
    return {
        "truth": config.truth_doc,
        "n_list": list(config.n_list),
        "path_steps": config.path_steps,
        "grid_size": config.grid_size,
        "max_order": config.max_order,
        "s_star_hi": config.s_star_hi,
        "s_star_lo": config.s_star_lo,
        "majorant": {"mu4": config.majorant_mu4, "class_bound": config.majorant_bound},
        "bandwidths": bw,
        "risk_p": config.risk_p,
        "risk": {"method": config.risk_method, "n_mc": config.risk_n_mc},
        "replications": config.replications,
        "seed": config.seed,
        "check": {
            "n_mc": config.check_n_mc,
            "kernel_coeff_perturbation": config.check_kernel_perturbation,
        },
    }


def _rep_dirs(out_dir: Path, config: ExperimentConfig):
    for n_index, n in enumerate(config.n_list):
        for rep in range(config.replications):
            yield n_index, n, rep, out_dir / f"n_{n:06d}" / f"rep_{rep:03d}"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_simulate(config: ExperimentConfig, out_dir: Path, threads: int = 1) -> Path:
    """Write per-replication datasets (responses + paths CSV) and a manifest."""
    started = time.time()
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    grid = make_grid(config.path_steps)
    for n_index, n, rep, rep_dir in _rep_dirs(out_dir, config):
        rep_dir.mkdir(parents=True, exist_ok=True)
        sample = synthesize(config.truth, n, grid, config.rep_seed(n_index, rep))
        responses = rep_dir / "responses.csv"
        with open(responses, "w") as fp:
            fp.write("index,y\n")
            for i, y in enumerate(sample.responses):
                fp.write(f"{i},{y:.17g}\n")
        paths = rep_dir / "paths.csv"
        with open(paths, "w") as fp:
            fp.write("t," + ",".join(f"w_{i:04d}" for i in range(sample.n)) + "\n")
            t = grid.points
            for j in range(len(t)):
                row = ",".join(f"{v:.17g}" for v in sample.path_values[:, j])
                fp.write(f"{t[j]:.17g},{row}\n")
        outputs += [responses, paths]
    _write_manifest(out_dir, "simulate", config, started, outputs)
    return out_dir


def load_dataset(rep_dir: Path, grid_steps: int) -> Sample:
    """Read a dataset written by ``cmd_simulate``."""
    with open(rep_dir / "responses.csv") as fp:
        fp.readline()
        responses = np.array([float(line.split(",")[1]) for line in fp if line.strip()])
    with open(rep_dir / "paths.csv") as fp:
        fp.readline()
        matrix = np.loadtxt(fp, delimiter=",")
    # C-contiguous so downstream matrix products reduce in the same order as
    # freshly synthesized samples (bit-identical fits from either route)
    values = np.ascontiguousarray(matrix[:, 1:].T)
    return Sample(make_grid(grid_steps), responses, values)


def _fit_task(args):
    config, n, n_index, rep, data_dir = args
    return _fit_one(config, n, n_index, rep, data_dir)


def cmd_fit(config: ExperimentConfig, out_dir: Path, threads: int = 1,
            data_dir: Path | None = None) -> Path:
    """Fit per-replication models with the configured bandwidth rule.

    Datasets are read from ``data_dir`` (a ``cmd_simulate`` output tree) when
    given, otherwise re-synthesized from the replication seeds; both routes
    produce identical samples.
    """
    if config.bandwidths.mode == "adaptive":
        return cmd_adapt(config, out_dir, threads, data_dir)
    started = time.time()
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [
        (config, n, n_index, rep, data_dir)
        for n_index, n, rep, _ in _rep_dirs(out_dir, config)
    ]
    models = _parallel_map(_fit_task, tasks, threads)
    outputs = []
    for (n_index, n, rep, rep_dir), model in zip(_rep_dirs(out_dir, config), models):
        rep_dir.mkdir(parents=True, exist_ok=True)
        path = rep_dir / "model.json"
        with open(path, "w") as fp:
            model_to_json(model, fp)
        outputs.append(path)
    _write_manifest(out_dir, "fit", config, started, outputs)
    return out_dir


def cmd_adapt(config: ExperimentConfig, out_dir: Path, threads: int = 1,
              data_dir: Path | None = None) -> Path:
    """Adaptive per-order bandwidth selection; writes models and selection traces."""
    started = time.time()
    out_dir.mkdir(parents=True, exist_ok=True)
    kernel = config.kernel()
    params = config.majorant_params()
    outputs = []
    for n_index, n, rep, rep_dir in _rep_dirs(out_dir, config):
        rep_dir.mkdir(parents=True, exist_ok=True)
        sample = _sample_for(config, n, n_index, rep, data_dir)
        try:
            model = adaptive_fit(
                sample, config.max_order, params, config.s_star_lo,
                config.grid_size, kernel,
            )
        except GridEmptyError as exc:
            raise ConfigError(
                f"adaptive selection failed at n={n}, order={exc.order}, "
                f"s_star_lo={config.s_star_lo}: {exc}"
            ) from exc
        path = rep_dir / "model.json"
        with open(path, "w") as fp:
            model_to_json(model, fp)
        outputs.append(path)
        for trace in model.selection_traces:
            tpath = rep_dir / f"trace_order{trace.order}.csv"
            with open(tpath, "w") as fp:
                trace_to_csv(trace, fp)
            outputs.append(tpath)
    _write_manifest(out_dir, "adapt", config, started, outputs)
    return out_dir


def cmd_risk(config: ExperimentConfig, models_dir: Path, out_dir: Path,
             threads: int = 1) -> Path:
    """Per-replication risks of stored models against the configured truth."""
    started = time.time()
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for n_index, n, rep, rep_dir in _rep_dirs(models_dir, config):
        model_path = rep_dir / "model.json"
        if not model_path.exists():
            raise ConfigError(f"missing model file {model_path}")
        with open(model_path) as fp:
            model = model_from_json(fp.read())
        report = _risk_of_model(config, model, n_index, rep)
        rows.append((n, rep, report))
    risk_csv = out_dir / "risk.csv"
    with open(risk_csv, "w") as fp:
        fp.write("n,rep,p,method,value,mc_stderr\n")
        for n, rep, report in rows:
            fp.write(
                f"{n},{rep},{report.p:.17g},{report.method},"
                f"{report.value:.17g},{report.mc_stderr:.17g}\n"
            )
    agg_csv = out_dir / "aggregates.csv"
    with open(agg_csv, "w") as fp:
        fp.write("n,mean_risk,std_risk,replications\n")
        for n in config.n_list:
            values = np.array([rep.value for nn, _, rep in rows if nn == n])
            std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
            fp.write(f"{n},{float(np.mean(values)):.17g},{std:.17g},{len(values)}\n")
    _write_manifest(out_dir, "risk", config, started, [risk_csv, agg_csv])
    return out_dir


def _rate_task(args):
    config, n, n_index, rep = args
    model = _fit_one(config, n, n_index, rep)
    return _risk_of_model(config, model, n_index, rep).value


def theoretical_rate_curve(config: ExperimentConfig) -> np.ndarray:
    """phi_n = max_l lam^(2l/(2s+l)) n^(-s/(2s+l)) over the configured orders."""
    plan = config.bandwidths
    if plan.mode in ("theoretical", "theorem41"):
        s, lam = plan.s, plan.lam
    else:
        d = config.truth.declared
        s = d.s or (config.s_star_hi,)
        lam = d.lam or (1.0,)
    orders = range(1, config.max_order + 1)
    curve = []
    for n in config.n_list:
        curve.append(
            max(
                _per_order(lam, o) ** (2 * o / (2 * _per_order(s, o) + o))
                * n ** (-_per_order(s, o) / (2 * _per_order(s, o) + o))
                for o in orders
            )
        )
    return np.asarray(curve)


def _loglog_slope(n_values: np.ndarray, y_values: np.ndarray) -> tuple[float, float]:
    x = np.log(np.asarray(n_values, dtype=float))
    y = np.log(np.asarray(y_values, dtype=float))
    design = np.column_stack([np.ones_like(x), x])
    coef, residuals, *_ = np.linalg.lstsq(design, y, rcond=None)
    dof = len(x) - 2
    if dof > 0:
        resid = y - design @ coef
        sigma_sq = float(resid @ resid) / dof
        cov = sigma_sq * np.linalg.inv(design.T @ design)
        stderr = float(np.sqrt(cov[1, 1]))
    else:
        stderr = float("nan")
    return float(coef[1]), stderr


def cmd_rate(config: ExperimentConfig, out_dir: Path, threads: int = 1) -> dict:
    """Full rate sweep: synthesize, fit, and evaluate risk for every n; fit the slope."""
    if len(config.n_list) < 4:
        raise ConfigError("rate: n_list needs at least 4 sample sizes")
    if max(config.n_list) < 10 * min(config.n_list):
        raise ConfigError("rate: n_list should span at least one decade")
    started = time.time()
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [
        (config, n, n_index, rep)
        for n_index, n in enumerate(config.n_list)
        for rep in range(config.replications)
    ]
    values = _parallel_map(_rate_task, tasks, threads)
    per_n: dict[int, list[float]] = {n: [] for n in config.n_list}
    for (c, n, i, r), value in zip(tasks, values):
        per_n[n].append(value)
    means = np.array([float(np.mean(per_n[n])) for n in config.n_list])
    stds = np.array(
        [float(np.std(per_n[n], ddof=1)) if len(per_n[n]) > 1 else 0.0 for n in config.n_list]
    )
    slope, slope_stderr = _loglog_slope(np.array(config.n_list), means)
    theory = theoretical_rate_curve(config)
    theory_slope, _ = _loglog_slope(np.array(config.n_list), theory)
    risk_csv = out_dir / "risk_by_n.csv"
    with open(risk_csv, "w") as fp:
        fp.write("n,mean_risk,std_risk,replications\n")
        for n, mean, std in zip(config.n_list, means, stds):
            fp.write(f"{n},{mean:.17g},{std:.17g},{config.replications}\n")
    report = {
        "slope": slope,
        "slope_stderr": slope_stderr,
        "theoretical_slope": theory_slope,
        "slope_gap": slope - theory_slope,
        "n_list": list(config.n_list),
        "mean_risk": means.tolist(),
    }
    rate_json = out_dir / "rate.json"
    with open(rate_json, "w") as fp:
        json.dump(report, fp, indent=2, sort_keys=True)
        fp.write("\n")
    _write_manifest(out_dir, "rate", config, started, [risk_csv, rate_json])
    return report


def run_checks(config: ExperimentConfig) -> dict:
    """Kernel moments, isometry, hypercontractivity, and second-moment bounds."""
    checks = []

    def record(name: str, passed: bool, measured: float, target: float):
        checks.append(
            {"name": name, "passed": bool(passed), "measured": measured, "target": target}
        )

    # kernel moment identities for m = 0..3
    for m in range(4):
        kernel = build_kernel(m + 0.5)
        if config.check_kernel_perturbation:
            coeffs = kernel.poly_coeffs + config.check_kernel_perturbation
            kernel = MomentKernel(kernel.moment_order, coeffs, kernel.l2_norm)
        mass = kernel_moment(kernel, 0)
        record(f"kernel_m{m}_mass", abs(mass - 1.0) <= 1e-10, mass, 1.0)
        for s in range(1, m + 1):
            mom = kernel_moment(kernel, s)
            record(f"kernel_m{m}_moment{s}", abs(mom) <= 1e-10, mom, 0.0)

    n_mc = config.check_n_mc
    ones = np.polynomial.Polynomial([1.0])
    ramp = np.polynomial.Polynomial([0.0, 1.0])
    rep = isometry_report([ones, ones], [ones, ones], n_mc, derive_seed(config.seed, 7, 0),
                          config.path_steps)
    record("isometry_E_I2_sq", rep.within(3.0), rep.empirical, rep.theoretical)
    rep = isometry_report([ones], [ones, ones], n_mc, derive_seed(config.seed, 7, 1),
                          config.path_steps)
    record("isometry_orthogonality", rep.within(3.0), rep.empirical, rep.theoretical)
    rep = isometry_report([ramp], [ramp], n_mc, derive_seed(config.seed, 7, 2),
                          config.path_steps)
    record("isometry_E_I1_sq", rep.within(3.0), rep.empirical, rep.theoretical)

    kernel = config.kernel()
    for order in (1, 2):
        for k_exp in (2, 3):
            h = math.exp(-k_exp)
            bound = moment_bound_report(
                order, h, 1, n_mc, derive_seed(config.seed, 8, order, k_exp), kernel,
                n_steps=config.path_steps,
            )
            record(
                f"second_moment_bound_l{order}_h_e-{k_exp}",
                bound.within_bound, bound.empirical, bound.bound,
            )
        # hypercontractivity: fourth-moment growth of the same variates
        h = math.exp(-2)
        second = moment_bound_report(order, h, 1, n_mc,
                                     derive_seed(config.seed, 9, order), kernel,
                                     n_steps=config.path_steps)
        fourth = moment_bound_report(order, h, 2, n_mc,
                                     derive_seed(config.seed, 9, order), kernel,
                                     n_steps=config.path_steps)
        lhs = fourth.empirical ** 0.5  # (E xi^4)^(1/4)
        rhs = chaos_constant(order, 4) * second.empirical**0.5
        record(
            f"hypercontractivity_l{order}",
            lhs <= rhs + 3.0 * fourth.mc_stderr,
            lhs, rhs,
        )
    return {"passed": all(c["passed"] for c in checks), "checks": checks}


def cmd_check(config: ExperimentConfig, out_dir: Path) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    report = run_checks(config)
    with open(out_dir / "check.json", "w") as fp:
        json.dump(report, fp, indent=2, sort_keys=True)
        fp.write("\n")
    return report


# ---------------------------------------------------------------------------
# SVG plotting (hand-rolled so output bytes are deterministic)
# ---------------------------------------------------------------------------

_SVG_W, _SVG_H, _SVG_PAD = 640, 440, 60
_SERIES_COLORS = ("#1f6fb2", "#d95f02", "#1b9e77")


def _svg_header() -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
        f'<rect x="{_SVG_PAD}" y="{_SVG_PAD}" width="{_SVG_W - 2 * _SVG_PAD}" '
        f'height="{_SVG_H - 2 * _SVG_PAD}" fill="none" stroke="black"/>',
    ]


def _scale(vals: np.ndarray, lo_px: float, hi_px: float):
    vmin, vmax = float(np.min(vals)), float(np.max(vals))
    if vmax == vmin:
        vmax = vmin + 1.0
    span = vmax - vmin

    def to_px(v):
        return lo_px + (v - vmin) / span * (hi_px - lo_px)

    return to_px, vmin, vmax


def _polyline(xs, ys, color: str) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'


def _text(x: float, y: float, s: str, size: int = 12, color: str = "black") -> str:
    return f'<text x="{x:.2f}" y="{y:.2f}" font-size="{size}" fill="{color}">{s}</text>'


def plot_risk_csv(csv_path: Path, out_path: Path) -> None:
    """Log-log risk-vs-n chart with the fitted slope annotated."""
    with open(csv_path) as fp:
        header = fp.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fp if line.strip()]
    n = np.array([float(r[0]) for r in rows])
    risk = np.array([float(r[1]) for r in rows])
    slope, stderr = _loglog_slope(n, risk)
    lx, ly = np.log10(n), np.log10(risk)
    to_x, *_ = _scale(lx, _SVG_PAD, _SVG_W - _SVG_PAD)
    to_y, *_ = _scale(ly, _SVG_H - _SVG_PAD, _SVG_PAD)
    parts = _svg_header()
    xs, ys = [to_x(v) for v in lx], [to_y(v) for v in ly]
    parts.append(_polyline(xs, ys, _SERIES_COLORS[0]))
    for x, y in zip(xs, ys):
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="{_SERIES_COLORS[0]}"/>')
    parts.append(_text(_SVG_PAD, _SVG_PAD - 20, f"log-log risk vs n, slope {slope:.4f}"))
    parts.append(_text(_SVG_PAD, _SVG_H - _SVG_PAD + 30, "log10 n"))
    parts.append(_text(12, _SVG_PAD - 20, "log10 R"))
    for v, x in zip(n, xs):
        parts.append(_text(x - 10, _SVG_H - _SVG_PAD + 15, f"{v:g}", size=10))
    parts.append("</svg>")
    out_path.write_text("\n".join(parts) + "\n")


def plot_trace_csv(csv_path: Path, out_path: Path) -> None:
    """Selection-trace chart: majorant, bias proxy, and objective vs bandwidth."""
    with open(csv_path) as fp:
        header = fp.readline().strip()
        if header != "ell,h,majorant,bias_proxy,objective,chosen":
            raise ValueError(f"unexpected trace header {header!r}")
        rows = [line.strip().split(",") for line in fp if line.strip()]
    h = np.array([float(r[1]) for r in rows])
    series = {
        "majorant": np.array([float(r[2]) for r in rows]),
        "bias_proxy": np.array([float(r[3]) for r in rows]),
        "objective": np.array([float(r[4]) for r in rows]),
    }
    chosen = np.array([int(r[5]) for r in rows])
    lx = np.log10(h)
    to_x, *_ = _scale(lx, _SVG_PAD, _SVG_W - _SVG_PAD)
    all_y = np.concatenate(list(series.values()))
    to_y, *_ = _scale(all_y, _SVG_H - _SVG_PAD, _SVG_PAD)
    parts = _svg_header()
    for (name, ys), color in zip(series.items(), _SERIES_COLORS):
        parts.append(_polyline([to_x(v) for v in lx], [to_y(v) for v in ys], color))
    for i, flag in enumerate(chosen):
        if flag:
            parts.append(
                f'<circle cx="{to_x(lx[i]):.2f}" cy="{to_y(series["objective"][i]):.2f}" '
                f'r="5" fill="none" stroke="black" stroke-width="1.5"/>'
            )
    for (name, _), color, dy in zip(series.items(), _SERIES_COLORS, (0, 16, 32)):
        parts.append(_text(_SVG_W - _SVG_PAD - 120, _SVG_PAD + 16 + dy, name, color=color))
    parts.append(_text(_SVG_PAD, _SVG_PAD - 20, "bandwidth selection trace"))
    parts.append(_text(_SVG_PAD, _SVG_H - _SVG_PAD + 30, "log10 h"))
    parts.append("</svg>")
    out_path.write_text("\n".join(parts) + "\n")


def cmd_plot(csv_path: Path, out_path: Path) -> Path:
    with open(csv_path) as fp:
        header = fp.readline().strip()
    if header.startswith("ell,"):
        plot_trace_csv(csv_path, out_path)
    elif header.startswith("n,"):
        plot_risk_csv(csv_path, out_path)
    else:
        raise ConfigError(f"plot: unrecognized CSV header {header!r}")
    return out_path


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chaosbench",
        description="Chaos-expansion regression benchmarks on Brownian-path covariates",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--threads", type=int, default=1, help="replication workers")

    for name in ("simulate", "rate", "check"):
        common(sub.add_parser(name))
    for name in ("fit", "adapt"):
        p = sub.add_parser(name)
        common(p)
        p.add_argument("--data", default=None, help="dataset tree from 'simulate'")
    risk = sub.add_parser("risk")
    common(risk)
    risk.add_argument("--models", required=True, help="directory written by fit/adapt")
    plot = sub.add_parser("plot")
    plot.add_argument("--csv", required=True, help="risk or trace CSV")
    plot.add_argument("--out", required=True, help="output SVG path")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "plot":
            cmd_plot(Path(args.csv), Path(args.out))
            return 0
        config = load_config(args.config, args.seed)
        out_dir = Path(args.out)
        if args.command == "simulate":
            cmd_simulate(config, out_dir, args.threads)
        elif args.command == "fit":
            data = Path(args.data) if args.data else None
            cmd_fit(config, out_dir, args.threads, data)
        elif args.command == "adapt":
            data = Path(args.data) if args.data else None
            cmd_adapt(config, out_dir, args.threads, data)
        elif args.command == "risk":
            cmd_risk(config, Path(args.models), out_dir, args.threads)
        elif args.command == "rate":
            report = cmd_rate(config, out_dir, args.threads)
            print(
                f"slope {report['slope']:.4f} +- {report['slope_stderr']:.4f} "
                f"(theory {report['theoretical_slope']:.4f})"
            )
        elif args.command == "check":
            report = cmd_check(config, out_dir)
            for check in report["checks"]:
                status = "pass" if check["passed"] else "FAIL"
                print(f"{status} {check['name']}: {check['measured']:.6g}")
            if not report["passed"]:
                return 2
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
