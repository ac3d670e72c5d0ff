"""Experiment harness: config-driven runs with reproducible artifacts.

A config describes one estimation scenario: a case, a measurement plan,
noise and corruption settings, and a list of solvers. Running it executes
every solver over every trial (each trial gets its own sub-seeded truth,
noise, and corruption draws), and produces per-run trace CSVs, a replayable
measurement-set JSON per trial, and a summary JSON aggregating final
RMSE/objective/iterations/time per solver.
"""

from __future__ import annotations

import json
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from psse import baselines, deterministic, stochastic
from psse.cases import BUNDLED, case_text as bundled_case_text
from psse.grid import KINDS, NetworkCase, build_admittance, parse_case
from psse.measurement import (
    CorruptionSpec,
    MeasurementSet,
    NoiseSpec,
    corrupt,
    from_json,
    full_plan,
    normalize,
    simulate,
    to_json,
)
from psse.metrics import ConvergenceTrace, random_truth

SUMMARY_SCHEMA_VERSION = 1

METHODS = ("deterministic", "stochastic", "accelerated", "gauss_newton", "irls")

#: the enumeration order used by "ordered_types" plans
ORDERED_TYPES = KINDS


class ConfigError(ValueError):
    """Invalid experiment configuration."""


CONFIG_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["case", "plan", "solvers"],
    "properties": {
        "schema_version": {"type": "integer"},
        "name": {"type": "string"},
        "case": {"type": "string"},
        "case_text": {"type": "string"},
        "plan": {
            "type": "object",
            "properties": {
                "kinds": {
                    "type": "array",
                    "items": {"enum": list(KINDS)},
                    "minItems": 1,
                },
                "ordered_types": {"type": "integer", "minimum": 1, "maximum": 7},
            },
            "oneOf": [{"required": ["kinds"]}, {"required": ["ordered_types"]}],
        },
        "truth": {
            "type": "object",
            "properties": {
                "source": {"enum": ["case", "random"]},
                "magnitude_range": {
                    "type": "array", "items": {"type": "number"},
                    "minItems": 2, "maxItems": 2,
                },
                "angle_range": {
                    "type": "array", "items": {"type": "number"},
                    "minItems": 2, "maxItems": 2,
                },
            },
        },
        "noise": {
            "type": "object",
            "properties": {
                "voltage": {"type": "number", "minimum": 0},
                "flow": {"type": "number", "minimum": 0},
                "injection": {"type": "number", "minimum": 0},
            },
        },
        "corruption": {
            "type": "object",
            "required": ["model", "fraction"],
            "properties": {
                "model": {"enum": ["M1", "M2"]},
                "fraction": {"type": "number", "minimum": 0, "maximum": 1},
                "eligible_kinds": {"type": "array", "items": {"enum": list(KINDS)}},
                "laplace_mean": {"type": "number"},
                "laplace_std": {"type": "number", "minimum": 0},
            },
        },
        "normalize": {"type": "boolean"},
        "init": {"enum": ["flat", "measured_magnitude"]},
        "measurements": {"type": "string"},
        "solvers": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["method"],
                "properties": {
                    "name": {"type": "string"},
                    "method": {"enum": list(METHODS)},
                    "normalized": {"type": "boolean"},
                },
            },
        },
        "seed": {"type": "integer"},
        "trials": {"type": "integer", "minimum": 1},
        "output_dir": {"type": "string"},
    },
    "additionalProperties": False,
}


def validate_config(config: dict) -> list[str]:
    """All schema violations, as readable strings (empty when valid)."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = [
        f"{'/'.join(str(p) for p in err.absolute_path) or '<root>'}: {err.message}"
        for err in validator.iter_errors(config)
    ]
    if errors:
        return errors
    names = [s.get("name", s["method"]) for s in config["solvers"]]
    if len(set(names)) != len(names):
        errors.append("solvers: duplicate solver names")
    if config.get("measurements") and config.get("trials", 1) != 1:
        errors.append("measurements: replay requires trials = 1")
    return errors


def _resolve_case(config: dict, base_dir: Path) -> tuple[str, str]:
    """Returns (case label, case text)."""
    if config.get("case_text"):
        return config.get("case", "inline"), config["case_text"]
    ref = config["case"]
    if ref in BUNDLED:
        return ref, bundled_case_text(ref)
    path = Path(ref)
    if not path.is_absolute():
        path = base_dir / path
    return ref, path.read_text()


def _plan_kinds(config: dict) -> list[str]:
    plan = config["plan"]
    if "kinds" in plan:
        return list(dict.fromkeys(plan["kinds"]))
    return list(ORDERED_TYPES[: plan["ordered_types"]])


def _noise_spec(config: dict, seed: int) -> NoiseSpec:
    noise = config.get("noise") or {}
    return NoiseSpec.from_levels(
        voltage=noise.get("voltage", 0.0),
        flow=noise.get("flow", 0.0),
        injection=noise.get("injection", 0.0),
        seed=seed,
    )


def _corruption_spec(config: dict, seed: int) -> CorruptionSpec | None:
    cor = config.get("corruption")
    if cor is None:
        return None
    spec = CorruptionSpec(
        model=cor["model"],
        fraction=cor["fraction"],
        laplace_mean=cor.get("laplace_mean", 0.0),
        laplace_std=cor.get("laplace_std", 30.0),
        seed=seed,
    )
    if "eligible_kinds" in cor:
        spec = CorruptionSpec(
            model=spec.model, fraction=spec.fraction,
            eligible_kinds=frozenset(cor["eligible_kinds"]),
            laplace_mean=spec.laplace_mean, laplace_std=spec.laplace_std,
            seed=seed,
        )
    return spec


def _initial_state(config: dict, raw: MeasurementSet) -> np.ndarray:
    v0 = np.ones(raw.n_buses, dtype=complex)
    if config.get("init", "measured_magnitude") == "measured_magnitude":
        for r in raw.records:
            if r.kind == "Vsq":
                v0[r.location - 1] = math.sqrt(max(r.z * r.norm_factor, 0.0))
    return v0


def _noise_weights(config: dict, mset: MeasurementSet) -> np.ndarray:
    noise = config.get("noise") or {}
    by_kind = {"Vsq": noise.get("voltage", 0.0)}
    by_kind.update({k: noise.get("flow", 0.0) for k in ("Pf", "Qf", "Pt", "Qt")})
    by_kind.update({k: noise.get("injection", 0.0) for k in ("Pinj", "Qinj")})
    return np.array(
        [1.0 / by_kind[r.kind] ** 2 if by_kind[r.kind] > 0 else 1.0 for r in mset.records]
    )


def run_solver(
    spec: dict,
    raw: MeasurementSet,
    norm: MeasurementSet,
    config: dict,
    truth: np.ndarray | None,
    reference_index: int,
    seed: int,
):
    method = spec["method"]
    normalized = spec.get("normalized", method not in ("gauss_newton", "irls"))
    mset = norm if normalized else raw
    v0 = _initial_state(config, raw)
    common = dict(v0=v0, truth=truth, reference_index=reference_index)
    if method == "deterministic":
        cfg = deterministic.DeterministicConfig(
            mu=spec.get("mu", 200.0),
            rho=spec.get("rho", 100.0),
            inner_iters=spec.get("inner_iters", 150),
            max_outer=spec.get("max_outer", 100),
            tol=spec.get("tol", 1e-10),
            inner_tol=spec.get("inner_tol"),
        )
        return deterministic.solve(mset, cfg, **common)
    if method in ("stochastic", "accelerated"):
        cfg = stochastic.StochasticConfig(
            alpha=spec.get("alpha", 1.0),
            beta=spec.get("beta", 0.8),
            constant_step=spec.get("constant_step"),
            sampling=spec.get("sampling", "uniform"),
            max_epochs=spec.get("max_epochs", 100),
            tol=spec.get("tol", 1e-10),
            seed=seed,
        )
        schedule = stochastic.build_minibatches(mset) if method == "accelerated" else None
        return stochastic.solve(mset, cfg, schedule=schedule, **common)
    if method == "gauss_newton":
        weights = (
            _noise_weights(config, mset)
            if spec.get("weights", "noise") == "noise"
            else np.ones(mset.M)
        )
        return baselines.gauss_newton_wls(
            mset, weights=weights,
            max_iters=spec.get("max_iters", 20), tol=spec.get("tol", 1e-10),
            **common,
        )
    if method == "irls":
        return baselines.irls_lav(
            mset,
            max_iters=spec.get("max_iters", 50), tol=spec.get("tol", 1e-10),
            epsilon=spec.get("epsilon", 1e-8),
            **common,
        )
    raise ConfigError(f"unknown solver method {method!r}")


def _trial_seeds(seed: int, trials: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(trials)


def _seed_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, np.uint64)[0])


def run_trial(
    config: dict, case_text: str, trial_index: int, base_dir: str | Path = "."
) -> dict:
    """Execute every configured solver once; returns plain serializable data."""
    case = parse_case(case_text)
    model = build_admittance(case)
    ref = case.reference_index

    trial_seq = _trial_seeds(config.get("seed", 0), config.get("trials", 1))[trial_index]
    truth_seq, noise_seq, corrupt_seq, solver_seq = trial_seq.spawn(4)

    if config.get("measurements"):
        replay = Path(config["measurements"])
        if not replay.is_absolute():
            replay = Path(base_dir) / replay
        raw, truth = from_json(model, replay.read_text())
        measurements_json = to_json(raw, truth)
    else:
        truth_cfg = config.get("truth") or {"source": "case"}
        if truth_cfg.get("source", "case") == "case":
            truth = case.voltage_profile()
        else:
            truth = random_truth(
                case,
                tuple(truth_cfg.get("magnitude_range", (0.9, 1.1))),
                tuple(truth_cfg.get("angle_range", (-0.1 * np.pi, 0.1 * np.pi))),
                seed=_seed_int(truth_seq),
            )
        plan = full_plan(model, _plan_kinds(config))
        raw = simulate(model, truth, plan, _noise_spec(config, _seed_int(noise_seq)))
        spec = _corruption_spec(config, _seed_int(corrupt_seq))
        if spec is not None:
            raw = corrupt(raw, spec, truth)
        measurements_json = to_json(raw, truth)

    norm = normalize(raw) if config.get("normalize", True) else raw

    # solver streams are keyed by name, so a subset run replays exactly
    solver_entropy = _seed_int(solver_seq)
    out: dict[str, Any] = {"measurements_json": measurements_json, "solvers": {}}
    for spec in config["solvers"]:
        name = spec.get("name", spec["method"])
        sseq = np.random.SeedSequence(
            entropy=solver_entropy, spawn_key=(zlib.crc32(name.encode()),)
        )
        _, trace = run_solver(spec, raw, norm, config, truth, ref, _seed_int(sseq))
        out["solvers"][name] = {
            "csv": trace.to_csv(),
            "final_rmse": trace.final_rmse,
            "final_objective": trace.final_objective,
            "iterations": trace.iterations,
            "seconds": trace.total_seconds,
        }
    return out


def _worker(args):
    config, case_txt, index, base_dir = args
    return index, run_trial(config, case_txt, index, base_dir)


def _stats(values: list[float | None]) -> dict:
    clean = [v for v in values if v is not None]
    if not clean:
        return {"mean": None, "stddev": None, "values": values}
    return {
        "mean": float(np.mean(clean)),
        "stddev": float(np.std(clean)),
        "values": values,
    }


def max_workers() -> int:
    env = os.environ.get("PSSE_THREADS")
    if env is not None:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_experiment(
    config: dict,
    base_dir: str | Path = ".",
    out_dir: str | Path | None = None,
) -> tuple[dict, list[tuple[str, str]]]:
    """Run all trials; returns (summary, artifacts as (filename, text) pairs).

    Artifacts are also written to ``out_dir`` when given. Identical seeds
    yield identical artifacts regardless of worker-pool size.
    """
    errors = validate_config(config)
    if errors:
        raise ConfigError("; ".join(errors))
    base_dir = Path(base_dir)
    label, case_txt = _resolve_case(config, base_dir)
    trials = config.get("trials", 1)

    jobs = [(config, case_txt, i, str(base_dir)) for i in range(trials)]
    results: dict[int, dict] = {}
    workers = min(max_workers(), trials)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for index, res in pool.map(_worker, jobs):
                results[index] = res
    else:
        for job in jobs:
            index, res = _worker(job)
            results[index] = res

    artifacts: list[tuple[str, str]] = []
    solver_names = [s.get("name", s["method"]) for s in config["solvers"]]
    finals: dict[str, dict[str, list]] = {
        name: {"final_rmse": [], "final_objective": [], "iterations": [], "seconds": []}
        for name in solver_names
    }
    for i in range(trials):
        res = results[i]
        artifacts.append((f"trial{i:03d}_measurements.json", res["measurements_json"]))
        for name in solver_names:
            sres = res["solvers"][name]
            artifacts.append((f"trial{i:03d}_{name}.csv", sres["csv"]))
            for key in ("final_rmse", "final_objective", "iterations", "seconds"):
                finals[name][key].append(sres[key])

    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "name": config.get("name", label),
        "case": label,
        "trials": trials,
        "seed": config.get("seed", 0),
        "solvers": {
            name: {key: _stats(vals) for key, vals in finals[name].items()}
            for name in solver_names
        },
    }
    artifacts.append(("summary.json", json.dumps(summary, indent=1)))

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for fname, text in artifacts:
            (out / fname).write_text(text)
    return summary, artifacts
