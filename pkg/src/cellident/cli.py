"""Batch command line: ``cellident <task> --config run.json``.

Every task is a pure function of the config and the seed, and all files it
writes are byte-identical on rerun (timings go to stderr only). Exit codes:
0 success, 2 configuration error, 3 solver failure at the initial point,
4 optimiser budget exhausted before convergence (results are still written).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .config import SCHEMA_VERSION, TASKS, load_config
from .costs import (COSTS, GaussianLogLikelihood, GravimetricEnergyDensity, LogPosterior,
                    VolumetricEnergyDensity, hessian_identifiability)
from .eis import ImpedanceCost, ImpedanceProblem, default_frequencies, linearise, sweep
from .errors import ConfigurationError
from .models import (BuildError, EcmConfig, Protocol, SolverError, SpmConfig, SpmModel, build_ecm,
                     theoretical_capacity)
from .optimisers import GRADIENT_ALGORITHMS, NoFeasibleEvaluation, OptimiserConfig, run
from .parameters import ParameterSet
from .problems import DesignProblem, FittingProblem, SynthSpec, format_float, synthesize, Dataset
from .samplers import SamplerConfig, run_sampler, summary

__all__ = ["main", "EXIT_OK", "EXIT_CONFIG", "EXIT_SOLVER", "EXIT_BUDGET", "run_task", "local_quadratic"]

log = logging.getLogger("cellident")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_BUDGET = 0, 2, 3, 4
DEFAULT_OUT = "cellident-out"


class SolverFailure(RuntimeError):
    """The forward model fails at the configured starting point."""


# ----------------------------------------------------------------------------
# helpers


def _json_safe(obj):
    if isinstance(obj, float):
        if math.isfinite(obj):
            return obj
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, (np.floating, np.integer)):
        return _json_safe(obj.item())
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def write_json(path: Path, payload) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(_json_safe(payload), indent=2, sort_keys=True) + "\n")


def write_rows(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_float(float(v)) for v in row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


class _Outputs:
    def __init__(self, root: Path):
        self.root = root
        self.files: list[str] = []
        root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.root / name


def build_system(section: dict):
    """Model from the config ``model`` section; returns ``(system, builder_or_None, config)``."""
    options = dict(section.get("options", {}))
    try:
        if section["type"] == "spm":
            cfg = SpmConfig(**options)
            builder = SpmModel(cfg)
            return builder.system(), builder, cfg
        if "rc" in options:
            options["rc"] = tuple(tuple(float(v) for v in pair) for pair in options["rc"])
        for key in ("ocv_soc", "ocv_volts"):
            if key in options:
                options[key] = tuple(float(v) for v in options[key])
        cfg = EcmConfig(**options)
        return build_ecm(cfg), None, cfg
    except (TypeError, BuildError, ValueError) as exc:
        raise ConfigurationError(f"invalid model options: {exc}") from None


def _fixed(config: dict, system) -> dict:
    fixed = dict(config["model"].get("fixed", {}))
    unknown = sorted(set(fixed) - set(system.defaults))
    if unknown:
        raise ConfigurationError(f"model has no parameters {unknown}")
    return fixed


def _parameters(config: dict, system=None) -> ParameterSet:
    try:
        params = ParameterSet.from_dicts(config["parameters"])
    except (ValueError, KeyError) as exc:
        raise ConfigurationError(f"invalid parameters: {exc}") from None
    if system is not None:
        unknown = [n for n in params.names if n not in system.defaults]
        if unknown:
            raise ConfigurationError(f"model has no parameters {unknown}")
    return params


def nominal_capacity(system, mapping) -> float:
    p = system.resolve(mapping)
    if "Q" in p:
        return float(p["Q"])
    cfg = system.info.get("config")
    if cfg is None:
        raise ConfigurationError("C-rate units need a model with a known capacity")
    return float(theoretical_capacity(p, cfg))


def build_protocol(section: dict, system, mapping) -> Protocol:
    segments = [tuple(s) for s in section["segments"]]
    if any(d <= 0 for _, d in segments):
        raise ConfigurationError("protocol segment durations must be positive")
    if section.get("units", "A") == "C":
        q = nominal_capacity(system, mapping)
        segments = [(c * q, d) for c, d in segments]
    return Protocol.constant(segments, float(section.get("dt", 1.0)))


_OPTIMISER_FIELDS = {f.name for f in dataclasses.fields(OptimiserConfig)} - {"algorithm", "seed", "threads"}


def _optimiser_config(config: dict, seed: int, threads: int, default: str) -> OptimiserConfig:
    block = config.get("optimiser", {"id": default})
    opts = dict(block.get("options", {}))
    top = {k: opts.pop(k) for k in list(opts) if k in _OPTIMISER_FIELDS}
    extra = dict(top.pop("options", {}))
    extra.update(opts)
    try:
        return OptimiserConfig(block["id"], seed=seed, threads=threads, options=extra, **top)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid optimiser settings: {exc}") from None


def _cost(config: dict, problem):
    block = config.get("cost", {"id": "sse"})
    cid, opts = block["id"], dict(block.get("options", {}))
    if cid not in COSTS or cid.endswith("energy-density"):
        raise ConfigurationError(f"unknown fitting cost {cid!r}")
    try:
        if cid == "map":
            return COSTS["map"](GaussianLogLikelihood(problem, **opts))
        return COSTS[cid](problem, **opts)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid cost options: {exc}") from None


def _check_initial(cost, theta) -> None:
    value = cost(theta).value
    if not np.isfinite(value):
        raise SolverFailure("the model cannot be evaluated at the initial parameter values")


def _trace_rows(result):
    for row in result.log:
        yield [row["iteration"], row["evaluations"], row["cost"], row["best"], *row["x"]]


def _optimise(cost, params, cfg: OptimiserConfig):
    try:
        return run(cost, params, cfg)
    except NoFeasibleEvaluation as exc:
        raise SolverFailure(str(exc)) from None


def _result_payload(result, params: ParameterSet) -> dict:
    return {
        "algorithm": result.algorithm,
        "parameters": result.as_dict(),
        "search": dict(zip(params.names, params.to_search(result.x).tolist())),
        "cost": result.cost,
        "termination": result.termination,
        "evaluations": result.evaluations,
        "iterations": result.iterations,
        "seed": result.seed,
    }


# ----------------------------------------------------------------------------
# tasks


def task_synth(config, out: _Outputs, seed: int, threads: int):
    system, _, _ = build_system(config["model"])
    fixed = _fixed(config, system)
    truth = dict(fixed)
    truth.update(config["synth"].get("truth", {}))
    unknown = sorted(set(truth) - set(system.defaults))
    if unknown:
        raise ConfigurationError(f"model has no parameters {unknown}")
    protocol = build_protocol(config["protocol"], system, truth)
    sigma = float(config["synth"].get("sigma", 0.0))
    try:
        data, clean = synthesize(system, SynthSpec(truth, protocol, sigma, seed), return_clean=True)
    except SolverError as exc:
        raise SolverFailure(f"simulation failed: {exc}") from None
    data.to_csv(out.path("dataset.csv"))
    clean.to_csv(out.path("reference.csv"))
    return {"n_samples": len(data), "sigma": sigma, "truth": system.resolve(truth),
            "duration_s": float(data.time[-1])}, None


def task_fit(config, out: _Outputs, seed: int, threads: int):
    system, _, _ = build_system(config["model"])
    fixed = _fixed(config, system)
    params = _parameters(config, system)
    data = Dataset.from_csv(config["data"]["path"])
    problem = FittingProblem(system, params, data, fixed)
    cost = _cost(config, problem)
    cfg = _optimiser_config(config, seed, threads, "cmaes")
    if cfg.algorithm in GRADIENT_ALGORITHMS and not cost.differentiable:
        raise ConfigurationError(f"{cfg.algorithm} needs gradients, which {cost.name} does not provide")
    _check_initial(cost, cost.params.initial)
    result = _optimise(cost, cost.params, cfg)
    payload = _result_payload(result, cost.params)
    payload["cost_id"] = cost.name
    write_json(out.path("result.json"), payload)
    write_rows(out.path("trace.csv"), ["iteration", "evaluations", "cost", "best", *cost.params.names],
               _trace_rows(result))
    ident = config.get("identifiability", {})
    if ident.get("enabled", True):
        report = hessian_identifiability(cost, result.x, cost.params, elongation=ident.get("elongation", 10.0))
        write_json(out.path("identifiability.json"), report.to_dict())
    return payload, result.termination


def task_sample(config, out: _Outputs, seed: int, threads: int):
    system, _, _ = build_system(config["model"])
    fixed = _fixed(config, system)
    params = _parameters(config, system)
    data = Dataset.from_csv(config["data"]["path"])
    problem = FittingProblem(system, params, data, fixed)
    block = config.get("cost", {"id": "gaussian"})
    if block["id"] != "gaussian":
        raise ConfigurationError("sampling needs the 'gaussian' likelihood")
    try:
        likelihood = GaussianLogLikelihood(problem, **block.get("options", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid likelihood options: {exc}") from None
    target = LogPosterior(likelihood)
    sblock = config.get("sampler", {"id": "haario-bardenet"})
    try:
        scfg = SamplerConfig(sblock["id"], seed=seed, threads=threads, **sblock.get("options", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid sampler settings: {exc}") from None
    if not np.isfinite(target(likelihood.params.initial).value):
        raise SolverFailure("the log-posterior is not finite at the initial parameter values")
    chains = run_sampler(target, likelihood.params, scfg)
    files = []
    for c in chains:
        name = f"chain_{c.index}.csv"
        c.to_csv(out.path(name))
        files.append(name)
    summ = summary(chains)
    payload = summ.to_dict()
    payload["chain_files"] = files
    payload["burn_in"] = scfg.n_burn
    payload["iterations"] = scfg.iterations
    write_json(out.path("posterior.json"), payload)
    return payload, None


def task_design(config, out: _Outputs, seed: int, threads: int):
    if config["model"]["type"] != "spm":
        raise ConfigurationError("design optimisation needs the spm model")
    system, builder, _ = build_system(config["model"])
    fixed = _fixed(config, system)
    params = _parameters(config, system)
    d = config.get("design", {})
    try:
        problem = DesignProblem(builder, params, c_rate=d.get("c_rate", 1.0),
                                cutoff_voltage=d.get("cutoff_voltage", 2.5), dt=d.get("dt", 10.0),
                                rescale_current=d.get("rescale_current", True), fixed=fixed)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    metric = d.get("metric", "gravimetric")
    cost = GravimetricEnergyDensity(problem) if metric == "gravimetric" else VolumetricEnergyDensity(problem)
    cfg = _optimiser_config(config, seed, threads, "nelder-mead")
    if cfg.algorithm in GRADIENT_ALGORITHMS:
        raise ConfigurationError("design objectives provide no gradients; choose a gradient-free optimiser")
    _check_initial(cost, params.initial)
    result = _optimise(cost, params, cfg)
    initial = problem.design_evaluate(params.initial)
    best = problem.design_evaluate(result.x)
    for name, res in (("initial_discharge.csv", initial), ("optimised_discharge.csv", best)):
        tr = res.trace
        write_rows(out.path(name), ["time_s", "current_A", "voltage_V"], zip(tr.times, tr.currents, tr.outputs))
    rows = []
    for row in result.log:
        p = problem.model_parameters(row["x"])
        por = problem.porosities(p)
        rows.append([row["iteration"], row["evaluations"], -row["cost"], -row["best"], *row["x"],
                     por["p"]])
    write_rows(out.path("trace.csv"), ["iteration", "evaluations", "metric", "best_metric", *params.names,
                                       "porosity_p"], rows)
    m0, m1 = cost.metric(params.initial), cost.metric(result.x)
    payload = _result_payload(result, params)
    payload.update(metric=cost.name, unit=cost.unit, initial_metric=m0, optimised_metric=m1,
                   improvement=(m1 - m0) / m0, initial_parameters=params.as_dict(params.initial),
                   porosity=best.porosity, current_A=best.current, capacity_Ah=best.capacity,
                   mass_kg=best.mass, volume_m3=best.volume, cost=-result.cost)
    write_json(out.path("result.json"), payload)
    return payload, result.termination


def _eis_frequencies(section):
    f = section.get("frequencies")
    if f is None:
        return default_frequencies()
    if isinstance(f, list):
        arr = np.asarray(f, dtype=float)
        if np.any(np.diff(arr) <= 0):
            raise ConfigurationError("EIS frequencies must be strictly increasing")
        return arr
    return default_frequencies(f.get("min", 1e-4), f.get("max", 1e3), f.get("per_decade", 10))


def task_eis(config, out: _Outputs, seed: int, threads: int):
    system, _, _ = build_system(config["model"])
    fixed = _fixed(config, system)
    section = config.get("eis", {})
    soc = float(section.get("soc", 0.5))
    has_data = "data" in config
    do_fit = section.get("fit", has_data)
    if do_fit and not has_data:
        raise ConfigurationError("an EIS fit needs a data section")
    params = _parameters(config, system) if "parameters" in config else None
    theta = dict(fixed)
    if params is not None:
        theta.update(params.as_dict(params.initial))
    payload = {"soc": soc}
    termination = None
    if do_fit:
        cfg = _optimiser_config(config, seed, threads, "nelder-mead")
        if cfg.algorithm in GRADIENT_ALGORITHMS:
            raise ConfigurationError(f"{cfg.algorithm} is gradient-based; gradients are not available "
                                     "for impedance fits")
        if params is None:
            raise ConfigurationError("an EIS fit needs a parameters section")
        data = Dataset.from_csv(config["data"]["path"])
        if data.kind != "frequency":
            raise ConfigurationError("EIS data must be a spectrum CSV (freq_Hz,z_re_ohm,z_im_ohm)")
        cost = ImpedanceCost(ImpedanceProblem(system, params, data, soc, fixed))
        _check_initial(cost, params.initial)
        result = _optimise(cost, params, cfg)
        payload.update(_result_payload(result, params))
        write_json(out.path("result.json"), payload)
        write_rows(out.path("trace.csv"), ["iteration", "evaluations", "cost", "best", *params.names],
                   _trace_rows(result))
        theta.update(result.as_dict())
        freqs = data.frequency
        termination = result.termination
    else:
        freqs = _eis_frequencies(section)
    try:
        spectrum = sweep(linearise(system, theta, soc), freqs)
    except SolverError as exc:
        raise SolverFailure(f"linearisation failed: {exc}") from None
    spectrum.to_csv(out.path("spectrum.csv"))
    payload["n_frequencies"] = int(spectrum.frequencies.size)
    return payload, termination


def local_quadratic(coords, values, m: int, half_width: int = 2) -> dict:
    """Least-squares quadratic on the cells around the grid minimum (search coordinates).

    Reports the Hessian eigenvalues, their ratio and the flattest direction.
    """
    grid = values.reshape(m, m)
    finite = np.isfinite(grid)
    if not finite.any():
        return {"condition_number": math.inf, "eigenvalues": [], "weak_direction": []}
    a, b = np.unravel_index(int(np.argmin(np.where(finite, grid, np.inf))), grid.shape)
    rows = [r for r in range(max(a - half_width, 0), min(a + half_width + 1, m))]
    cols = [c for c in range(max(b - half_width, 0), min(b + half_width + 1, m))]
    idx = np.array([r * m + c for r in rows for c in cols])
    idx = idx[np.isfinite(values[idx])]
    if idx.size < 6:
        return {"condition_number": math.inf, "eigenvalues": [], "weak_direction": []}
    dx = coords[idx] - coords[a * m + b]
    x, y = dx[:, 0], dx[:, 1]
    design = np.column_stack([np.ones_like(x), x, y, x * x, x * y, y * y])
    coef = np.linalg.lstsq(design, values[idx], rcond=None)[0]
    H = np.array([[2 * coef[3], coef[4]], [coef[4], 2 * coef[5]]])
    ev, vec = np.linalg.eigh(H)
    cond = float(ev[1] / ev[0]) if ev[0] > 0 else math.inf
    weak = vec[:, 0] * np.sign(vec[np.argmax(np.abs(vec[:, 0])), 0])
    return {"condition_number": cond, "eigenvalues": ev.tolist(), "weak_direction": weak.tolist(),
            "hessian": H.tolist()}


def _axis(param, m: int) -> np.ndarray:
    if param.transform.kind == "log":
        return np.geomspace(param.lower, param.upper, m)
    return np.linspace(param.lower, param.upper, m)


def task_landscape(config, out: _Outputs, seed: int, threads: int):
    system, _, _ = build_system(config["model"])
    fixed = _fixed(config, system)
    params = _parameters(config, system)
    section = config.get("landscape", {})
    names = section.get("parameters", list(params.names[:2]))
    if len(params) < 2 or any(n not in params for n in names) or names[0] == names[1]:
        raise ConfigurationError("landscape needs two distinct parameters from the parameters section")
    m = int(section.get("points", 20))
    data = Dataset.from_csv(config["data"]["path"])
    problem = FittingProblem(system, params, data, fixed)
    cost = _cost(config, problem)
    i, j = params.index(names[0]), params.index(names[1])
    ax1, ax2 = _axis(params[names[0]], m), _axis(params[names[1]], m)
    base = cost.params.initial
    points = []
    for a in ax1:
        for b in ax2:
            theta = base.copy()
            theta[i], theta[j] = a, b
            points.append(theta)

    def value(theta):
        return float(cost(theta).value)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(value, points))
    else:
        values = [value(t) for t in points]
    transformed = section.get("transformed_axes", False)
    rows = []
    for theta, v in zip(points, values):
        u = cost.params.to_search(theta) if transformed else theta
        rows.append([u[i], u[j], v])
    write_rows(out.path("landscape.csv"), ["p1", "p2", "cost"], rows)
    k = int(np.argmin(values))
    search = np.array([cost.params.to_search(t)[[i, j]] for t in points])
    payload = {"p1": names[0], "p2": names[1], "points": m, "transformed_axes": transformed,
               "minimum": {"p1": float(points[k][i]), "p2": float(points[k][j]), "cost": values[k]},
               "local_quadratic": local_quadratic(search, np.asarray(values), m)}
    if "trace" in section:
        payload["trace"] = section["trace"]
    return payload, None


TASK_FUNCS = {
    "synth": task_synth,
    "fit": task_fit,
    "sample": task_sample,
    "design": task_design,
    "eis": task_eis,
    "landscape": task_landscape,
}


def run_task(task: str, config: dict, out_dir: Path, seed: int, threads: int = 1) -> int:
    """Execute one validated task, write ``report.json`` and return the exit code."""
    out = _Outputs(Path(out_dir))
    report = {"schema_version": SCHEMA_VERSION, "task": task, "seed": seed}
    try:
        payload, termination = TASK_FUNCS[task](config, out, seed, threads)
        code = EXIT_BUDGET if termination == "budget" else EXIT_OK
        report.update(status="ok" if code == EXIT_OK else "budget", result=payload, termination=termination)
    except SolverFailure as exc:
        code = EXIT_SOLVER
        report.update(status="solver-failure", error=str(exc))
    except (ConfigurationError, KeyError, ValueError) as exc:
        code = EXIT_CONFIG
        report.update(status="config-error", error=str(exc))
    report["exit_code"] = code
    report["files"] = sorted(out.files) + ["report.json"]
    write_json(out.path("report.json"), report)
    if "error" in report:
        log.error("%s: %s", task, report["error"])
    return code


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cellident", description="Battery model identification and design.")
    ap.add_argument("task", choices=TASKS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for batch evaluations")
    ap.add_argument("--out", default=None, help="output directory (default: $CELLIDENT_OUT, then config)")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("cellident: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    start = time.perf_counter()
    try:
        config = load_config(args.config, args.task)
    except ConfigurationError as exc:
        print(f"cellident: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    out_dir = args.out or os.environ.get("CELLIDENT_OUT") or config.get("output_dir") or DEFAULT_OUT
    code = run_task(args.task, config, Path(out_dir), seed, args.threads)
    print(f"cellident {args.task}: exit {code} in {time.perf_counter() - start:.2f} s -> {out_dir}",
          file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
