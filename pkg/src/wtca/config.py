"""Run configuration: typed sections, TOML loading, env overrides.

A run is one (instance, method, solver budget, evaluation) quadruple. The
file format is TOML with one table per section; unknown keys are rejected
so typos fail loudly. Only two environment overrides exist: WTCA_THREADS
caps solver workers and WTCA_OUT_DIR redirects output files.
"""

from __future__ import annotations

import os
import sys
from typing import Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "FixtureInstance",
    "BermudanInstance",
    "EthanolInstance",
    "MethodConfig",
    "SolverSection",
    "EvalSection",
    "RunConfig",
    "config_from_dict",
    "load_config",
    "resolve_threads",
    "resolve_out_dir",
]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class FixtureInstance(_Section):
    family: Literal["fixture"] = "fixture"
    kind: str = "stopping-chain"
    params: dict[str, float] = Field(default_factory=dict)


class BermudanInstance(_Section):
    family: Literal["bermudan"]
    assets: int = 4
    initial_price: float = 100.0
    horizon: int = 36
    strike: float = 100.0
    barrier: float = 170.0
    dt: float = 1.0 / 12.0
    vol: float = 0.20
    rate: float = 0.05


class EthanolInstance(_Section):
    family: Literal["ethanol"]
    horizon: int = 24
    discount: float = 0.9983
    curves_file: str | None = None
    loadings_file: str | None = None
    market_seed: int = 0
    factors: int = 8
    extend_months: int = 0
    price_cap: float | None = None  # default: 3x the top initial price

    @model_validator(mode="after")
    def _files_pair_up(self):
        if (self.curves_file is None) != (self.loadings_file is None):
            raise ValueError("curves_file and loadings_file go together")
        return self


Instance = Union[FixtureInstance, BermudanInstance, EthanolInstance]


class MethodConfig(_Section):
    name: Literal["wtca", "po", "lsm"]
    sigma: float = 1.0              # smoothing temperature
    rho: float = 1e-4               # Fourier bandwidth (variance)
    payoff_scale: float = 1.0       # rewards are divided by this during training
    fourier: int = 15
    basis_seed: int = 7
    m_train: int = 100              # inner draws per training expectation
    regression_paths: int = 1000    # lsm fit and the po refit

    @model_validator(mode="after")
    def _positive(self):
        if self.sigma <= 0 or self.rho <= 0 or self.payoff_scale <= 0:
            raise ValueError("sigma, rho and payoff_scale must be positive")
        if self.fourier < 0 or self.m_train < 1 or self.regression_paths < 2:
            raise ValueError("fourier >= 0, m_train >= 1, regression_paths >= 2")
        return self


class SolverSection(_Section):
    iterations: int | None = None
    budget_seconds: float | None = None
    n_blocks: int | None = None     # default: stage partition for wtca, 1 for po
    tau: int | None = None
    radius: float = 1e4
    seed: int = 0
    cadence: int = 1000
    threads: int = 1

    @model_validator(mode="after")
    def _one_budget(self):
        if (self.iterations is None) == (self.budget_seconds is None):
            raise ValueError("set exactly one of iterations or budget_seconds")
        if self.iterations is not None and self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.budget_seconds is not None and self.budget_seconds <= 0:
            raise ValueError("budget_seconds must be positive")
        if self.radius <= 0 or self.cadence < 1 or self.threads < 1:
            raise ValueError("radius, cadence and threads must be positive")
        return self


class EvalSection(_Section):
    paths: int = 1000
    m_eval: int = 500
    seed: int = 0

    @model_validator(mode="after")
    def _positive(self):
        if self.paths < 2 or self.m_eval < 1:
            raise ValueError("need paths >= 2 and m_eval >= 1")
        return self


class RunConfig(_Section):
    instance: Instance = Field(discriminator="family")
    method: MethodConfig
    solver: SolverSection = SolverSection(iterations=2000)
    evaluation: EvalSection = EvalSection()


def config_from_dict(doc: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        paths = "; ".join(
            ".".join(str(p) for p in err["loc"]) + ": " + err["msg"]
            for err in exc.errors())
        raise ConfigError(f"invalid run config: {paths}") from exc


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
    return config_from_dict(doc)


def resolve_threads(cfg: RunConfig, override: int | None = None) -> int:
    """CLI flag beats WTCA_THREADS beats the config value."""
    if override is not None:
        value = override
    else:
        env = os.environ.get("WTCA_THREADS")
        if env is not None:
            try:
                value = int(env)
            except ValueError:
                raise ConfigError(f"WTCA_THREADS must be an integer, got {env!r}") from None
        else:
            value = cfg.solver.threads
    if value < 1:
        raise ConfigError("thread count must be positive")
    return value


def resolve_out_dir(cli_value: str | None, default: str = "runs") -> str:
    return cli_value or os.environ.get("WTCA_OUT_DIR") or default
