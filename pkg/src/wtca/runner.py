"""Experiment orchestration behind the service endpoints and the CLI.

Everything here is pure computation over JSON-friendly payloads: build an
instance from a config, train one method, evaluate bounds, or sweep a
benchmark suite. File writing stays in the CLI so the service can return
the same payloads over HTTP.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import __version__, bases, bounds, formulations as fm, solver
from .benches import bermudan, ethanol, fixtures
from .config import (BermudanInstance, EthanolInstance, FixtureInstance,
                     RunConfig, config_from_dict)
from .errors import ConfigError
from .mdp import instance_from_json, instance_to_json, reward_scaled

__all__ = [
    "build_instance",
    "train",
    "bound",
    "gap_summary",
    "bench",
    "fixture_emit",
    "fixture_validate",
    "trace_points",
    "SUITES",
]

PILOT_ITERATIONS = 50


def _coerce_params(params: dict) -> dict:
    # TOML/pydantic funnel numbers to float; fixture factories want ints
    out = {}
    for key, value in params.items():
        if isinstance(value, float) and value.is_integer():
            out[key] = int(value)
        else:
            out[key] = value
    return out


def build_instance(cfg: RunConfig):
    """Instance plus the basis the configured method trains on."""
    inst_cfg = cfg.instance
    m = cfg.method
    if isinstance(inst_cfg, FixtureInstance):
        instance = fixtures.make_finite_fixture(
            {"kind": inst_cfg.kind, **_coerce_params(inst_cfg.params)})
        return instance, bases.TabularBasis(instance)
    if isinstance(inst_cfg, BermudanInstance):
        params = bermudan.BermudanParams(
            assets=inst_cfg.assets, initial_price=inst_cfg.initial_price,
            horizon=inst_cfg.horizon, strike=inst_cfg.strike,
            barrier=inst_cfg.barrier, dt=inst_cfg.dt, vol=inst_cfg.vol,
            rate=inst_cfg.rate)
        theta = bases.sample_fourier(m.basis_seed, m.rho, m.fourier,
                                     params.assets)
        return (bermudan.build_bermudan(params),
                bermudan.BermudanBasis(params, theta))
    if isinstance(inst_cfg, EthanolInstance):
        T = inst_cfg.horizon
        if inst_cfg.curves_file is not None:
            curves = ethanol.read_curves_csv(inst_cfg.curves_file)
            loadings = ethanol.read_loadings_csv(inst_cfg.loadings_file)
        else:
            base_T = T - inst_cfg.extend_months
            if base_T < 2:
                raise ConfigError("extension longer than the horizon")
            curves, loadings = ethanol.synthetic_market(
                base_T, factors=inst_cfg.factors, seed=inst_cfg.market_seed)
        if inst_cfg.extend_months:
            curves, loadings = ethanol.extend_market(
                curves, loadings, months=inst_cfg.extend_months)
        params = ethanol.EthanolParams(
            horizon=T, curves=curves, loadings=loadings,
            discount=inst_cfg.discount)
        cap = inst_cfg.price_cap or 3.0 * float(curves.max())
        theta = bases.sample_fourier(m.basis_seed, m.rho, m.fourier, 3 * T)
        return (ethanol.build_ethanol(params),
                ethanol.EthanolBasis(T, theta, price_cap=cap))
    raise ConfigError(f"unknown instance family {inst_cfg!r}")


def trace_points(iterations: int, cadence: int) -> list[int]:
    """Iterate indices at which the solver records a trace row."""
    ks = {iterations}
    ks.update(k + 1 for k in range(1, iterations) if k % cadence == 0)
    return sorted(ks)


def _partition(cfg: RunConfig, horizon: int) -> tuple[int, int]:
    s = cfg.solver
    if cfg.method.name == "po":
        n = s.n_blocks if s.n_blocks is not None else 1
        tau = s.tau if s.tau is not None else n
    else:
        n = s.n_blocks if s.n_blocks is not None else horizon
        tau = s.tau if s.tau is not None else n
    return n, tau


@dataclass
class TrainResult:
    weights: bases.Weights
    weights_doc: dict
    trace_rows: list[dict]
    checkpoints: dict[int, bases.Weights]
    metadata: dict


def _scale_weights(weights: bases.Weights, factor: float) -> bases.Weights:
    return bases.Weights([factor * b for b in weights.blocks])


def _solver_config(cfg: RunConfig, iterations: int, nu, n: int, tau: int,
                   threads: int, checkpoints=()) -> solver.SolverConfig:
    s = cfg.solver
    return solver.SolverConfig(
        iterations=iterations, n_blocks=n, tau=tau, nu=nu, radius=s.radius,
        seed=s.seed, cadence=s.cadence, checkpoints=tuple(checkpoints),
        threads=threads)


def _resolve_iterations(cfg, oracle, nu, n, tau, threads) -> tuple[int, float]:
    """Iteration budget; wall-clock budgets convert via a timed pilot."""
    s = cfg.solver
    if s.iterations is not None:
        return s.iterations, 0.0
    t0 = time.perf_counter()
    pilot = _solver_config(cfg, PILOT_ITERATIONS + 1, nu, n, tau, threads)
    solver.run(oracle, pilot)
    elapsed = time.perf_counter() - t0
    per_iteration = elapsed / PILOT_ITERATIONS
    remaining = max(0.0, s.budget_seconds - elapsed)
    return max(2, int(remaining / per_iteration)), elapsed


def train(cfg: RunConfig, threads: int | None = None,
          checkpoints=()) -> TrainResult:
    instance, basis = build_instance(cfg)
    m = cfg.method
    threads = threads if threads is not None else cfg.solver.threads
    t0 = time.perf_counter()
    trace_rows: list[dict] = []
    ckpts: dict[int, bases.Weights] = {}
    realized = 0

    if m.name == "lsm":
        weights = bounds.lsm_fit(instance, basis, paths=m.regression_paths,
                                 seed=cfg.solver.seed)
    elif cfg.solver.iterations == 0:
        warnings.warn("no training iterations requested; weights stay zero",
                      RuntimeWarning, stacklevel=2)
        weights = bases.Weights.zeros(basis, instance.horizon)
    else:
        # train on payoff-scaled rewards and undo the scale on the weights:
        # greedy decisions are invariant, first-order steps are not
        lam = m.payoff_scale
        train_inst = reward_scaled(instance, 1.0 / lam) if lam != 1.0 else instance
        spec = fm.ObjectiveSpec(m.name, m.sigma, basis, train_inst,
                                m_train=m.m_train, radius=cfg.solver.radius)
        n, tau = _partition(cfg, instance.horizon)
        if m.name == "wtca" and n == instance.horizon:
            nu = fm.wtca_curvature_tight(spec, n, tau, seed=cfg.solver.seed)
        elif m.name == "po":
            nu = fm.po_curvature_tight(spec, n, tau)
        else:
            nu = fm.curvature(spec, n, tau)
        oracle = (fm.WtcaOracle(spec) if m.name == "wtca"
                  else fm.PoOracle(spec))
        realized, pilot_s = _resolve_iterations(cfg, oracle, nu, n, tau, threads)
        run_cfg = _solver_config(cfg, realized, nu, n, tau, threads,
                                 checkpoints=checkpoints)
        weights, _, trace = solver.run(oracle, run_cfg)
        ckpts = trace.checkpoints
        trace_rows = [
            {"iteration": k, "objective_estimate": obj, "grad_norm": g,
             "wall_ms": w}
            for k, obj, g, w in trace.rows()
        ]
        if lam != 1.0:
            weights = _scale_weights(weights, lam)
            ckpts = {k: _scale_weights(wk, lam) for k, wk in ckpts.items()}
        if m.name == "po":
            weights = bounds.po_post_regression(
                weights, instance, basis, paths=m.regression_paths,
                seed=cfg.solver.seed, m=m.m_train)
            ckpts = {
                k: bounds.po_post_regression(
                    wk, instance, basis, paths=m.regression_paths,
                    seed=cfg.solver.seed, m=m.m_train)
                for k, wk in ckpts.items()
            }

    doc = {
        "blocks": [b.tolist() for b in weights.blocks],
        "method": m.name,
        "instance": instance.name,
        "basis": basis.describe(),
    }
    metadata = {
        "config": cfg.model_dump(),
        "instance": instance.name,
        "realized_iterations": realized,
        "wall_s": time.perf_counter() - t0,
        "versions": {"wtca": __version__, "numpy": np.__version__},
    }
    return TrainResult(weights, doc, trace_rows, ckpts, metadata)


def _load_weights(doc: dict, basis, horizon: int) -> bases.Weights:
    blocks = doc.get("blocks") if isinstance(doc, dict) else None
    if not blocks:
        raise ConfigError("weights document is empty")
    if len(blocks) != horizon:
        raise ConfigError(f"expected {horizon} weight blocks, got {len(blocks)}")
    weights = bases.Weights([np.asarray(b, dtype=np.float64) for b in blocks])
    for t, block in enumerate(weights.blocks):
        if block.shape != (basis.width(t),):
            raise ConfigError(
                f"stage {t} weight block has {block.shape[0]} entries, "
                f"basis width is {basis.width(t)}")
    return weights


def _evaluate(instance, basis, weights, paths, m_eval, seed):
    t0 = time.perf_counter()
    policy = bounds.PolicySpec(basis, weights, inner=m_eval)
    lb = bounds.lower_bound(policy, instance, paths=paths, seed=seed)
    lb_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    ub = bounds.upper_bound(basis, weights, instance, paths=paths,
                            m=m_eval, seed=seed)
    return lb, ub, lb_s, time.perf_counter() - t0


def bound(cfg: RunConfig, weights_doc: dict) -> dict:
    instance, basis = build_instance(cfg)
    weights = _load_weights(weights_doc, basis, instance.horizon)
    ev = cfg.evaluation
    lb, ub, lb_s, ub_s = _evaluate(instance, basis, weights, ev.paths,
                                   ev.m_eval, ev.seed)
    method = weights_doc.get("method", cfg.method.name)
    rows = [
        {"instance": instance.name, "method": method, "bound": "lower",
         "mean": lb.mean, "se": lb.se, "paths": lb.paths, "inner": ev.m_eval,
         "wall_s": lb_s},
        {"instance": instance.name, "method": method, "bound": "upper",
         "mean": ub.mean, "se": ub.se, "paths": ub.paths, "inner": ev.m_eval,
         "wall_s": ub_s},
    ]
    entry = {"instance": instance.name, "method": method,
             "lb": lb.mean, "lb_se": lb.se, "ub": ub.mean, "ub_se": ub.se}
    return {"rows": rows, "summary": gap_summary([entry])}


def gap_summary(entries: list[dict]) -> list[dict]:
    """Per-method relative gaps against the best (smallest) upper bound."""
    if not entries:
        return []
    best_ub = min(e["ub"] for e in entries)
    out = []
    for e in entries:
        out.append({
            **e,
            "best_ub": best_ub,
            "optimality_gap": (best_ub - e["lb"]) / best_ub,
            "ub_excess": (e["ub"] - best_ub) / best_ub,
        })
    return out


SUITES: dict[str, dict] = {
    "fixtures": {
        "instances": [
            {"family": "fixture", "kind": "stopping-chain", "params": {}},
            {"family": "fixture", "kind": "switching-chain", "params": {}},
        ],
        "sigma": 0.5,
        "solver": {"iterations": 4000, "cadence": 1000, "seed": 0},
        "evaluation": {"paths": 2000, "m_eval": 100, "seed": 0},
        "method_extras": {"m_train": 100, "regression_paths": 2000},
        "conv_paths": 300,
    },
    "bermudan-T36": {
        "instances": [
            {"family": "bermudan", "assets": 4, "initial_price": 100.0,
             "horizon": 36},
        ],
        "sigma": 50.0,
        "solver": {"iterations": 2000, "cadence": 500, "seed": 0},
        "evaluation": {"paths": 2000, "m_eval": 100, "seed": 0},
        "method_extras": {"rho": 1e-4, "payoff_scale": 10.0,
                          "m_train": 50, "regression_paths": 5000},
        "conv_paths": 200,
    },
    "bermudan-T100": {
        "instances": [
            {"family": "bermudan", "assets": 4, "initial_price": 100.0,
             "horizon": 100},
        ],
        "sigma": 50.0,
        "solver": {"iterations": 1000, "cadence": 250, "seed": 0},
        "evaluation": {"paths": 1000, "m_eval": 100, "seed": 0},
        "method_extras": {"rho": 1e-4, "payoff_scale": 10.0,
                          "m_train": 50, "regression_paths": 3000},
        "conv_paths": 150,
    },
    "ethanol-T24": {
        "instances": [
            {"family": "ethanol", "horizon": 24, "market_seed": 0},
        ],
        "sigma": 20.0,
        "solver": {"iterations": 1000, "cadence": 250, "seed": 0},
        "evaluation": {"paths": 1000, "m_eval": 100, "seed": 0},
        "method_extras": {"rho": 1e-2, "m_train": 50,
                          "regression_paths": 3000},
        "conv_paths": 150,
    },
    "ethanol-T36": {
        "instances": [
            {"family": "ethanol", "horizon": 36, "extend_months": 12,
             "market_seed": 0},
        ],
        "sigma": 20.0,
        "solver": {"iterations": 800, "cadence": 200, "seed": 0},
        "evaluation": {"paths": 1000, "m_eval": 100, "seed": 0},
        "method_extras": {"rho": 1e-2, "m_train": 50,
                          "regression_paths": 3000},
        "conv_paths": 150,
    },
}


def _suite_config(suite: dict, inst: dict, method: str) -> RunConfig:
    doc = {
        "instance": inst,
        "method": {"name": method, "sigma": suite["sigma"],
                   **suite["method_extras"]},
        "solver": suite["solver"],
        "evaluation": suite["evaluation"],
    }
    return config_from_dict(doc)


def bench(suite_id: str, threads: int | None = None) -> dict:
    """Train all three methods per instance and evaluate shared-path bounds."""
    suite = SUITES.get(suite_id)
    if suite is None:
        raise ConfigError(f"unknown suite {suite_id!r}; choose from "
                          f"{sorted(SUITES)}")
    comparison: list[dict] = []
    convergence: list[dict] = []
    summaries: list[dict] = []
    t_start = time.perf_counter()
    for inst_doc in suite["instances"]:
        entries = []
        for method in ("lsm", "po", "wtca"):
            cfg = _suite_config(suite, inst_doc, method)
            instance, basis = build_instance(cfg)
            points = (trace_points(cfg.solver.iterations, cfg.solver.cadence)
                      if method != "lsm" else [])
            result = train(cfg, threads=threads, checkpoints=points)
            ev = cfg.evaluation
            lb, ub, lb_s, ub_s = _evaluate(instance, basis, result.weights,
                                           ev.paths, ev.m_eval, ev.seed)
            comparison.extend([
                {"instance": instance.name, "method": method,
                 "bound": "lower", "mean": lb.mean, "se": lb.se,
                 "paths": lb.paths, "inner": ev.m_eval, "wall_s": lb_s},
                {"instance": instance.name, "method": method,
                 "bound": "upper", "mean": ub.mean, "se": ub.se,
                 "paths": ub.paths, "inner": ev.m_eval, "wall_s": ub_s},
            ])
            entries.append({"instance": instance.name, "method": method,
                            "lb": lb.mean, "lb_se": lb.se,
                            "ub": ub.mean, "ub_se": ub.se})
            conv_points = (sorted(result.checkpoints) if result.checkpoints
                           else [0])
            for k in conv_points:
                wk = result.checkpoints.get(k, result.weights)
                clb, cub, _, _ = _evaluate(instance, basis, wk,
                                           suite["conv_paths"], ev.m_eval,
                                           ev.seed)
                convergence.append({"instance": instance.name,
                                    "method": method, "iteration": k,
                                    "lb": clb.mean, "ub": cub.mean})
        summaries.extend(gap_summary(entries))
    metadata = {
        "suite": suite_id,
        "wall_s": time.perf_counter() - t_start,
        "versions": {"wtca": __version__, "numpy": np.__version__},
    }
    return {"comparison": comparison, "convergence": convergence,
            "summary": summaries, "metadata": metadata}


def fixture_emit(kind: str, params: dict | None = None) -> str:
    instance = fixtures.make_finite_fixture(
        {"kind": kind, **_coerce_params(params or {})})
    return instance_to_json(instance)


def fixture_validate(text: str) -> dict:
    try:
        instance = instance_from_json(text)
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"fixture document rejected: {exc}") from exc
    round_trip = instance_to_json(instance_from_json(instance_to_json(instance)))
    return {
        "ok": True,
        "name": instance.name,
        "horizon": instance.horizon,
        "discount": instance.discount,
        "labels_per_stage": [len(instance.endogenous[t])
                             for t in range(instance.horizon)],
        "round_trip_stable": round_trip == instance_to_json(instance),
    }
