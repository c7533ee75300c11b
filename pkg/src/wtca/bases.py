"""Basis functions for value-function approximation.

All basis sets share one contract: a constant component sits at index 0 of
every stage, every component lies in [-1, 1] after its own scaling, and the
stage vector is divided by sqrt(B_t), so ||phi_t(s)||_2 <= 1 everywhere. The
value function approximation is then V_t(s) = beta_t . phi_t(s), with the
terminal convention V_T == 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .mdp import ContinuousSim, FiniteSupport, Label, MdpInstance, Obs
from .seeding import stream

__all__ = [
    "ThetaSet",
    "sample_fourier",
    "BasisSet",
    "TabularBasis",
    "FourierBasis",
    "Weights",
    "evaluate",
    "vfa",
    "draw_inner",
    "conditional_expectation",
]


@dataclass(frozen=True)
class ThetaSet:
    """Random Fourier coefficients: phi(w) = cos(phase + freq . w).

    Phases are uniform on [-pi, pi]; frequencies are i.i.d. Normal(0, rho)
    (rho is the variance). Reproducible from (seed, rho, count, dim).
    """

    phase: np.ndarray  # (count,)
    freq: np.ndarray   # (count, dim)
    rho: float
    seed: int

    @property
    def count(self) -> int:
        return self.phase.shape[0]

    @property
    def dim(self) -> int:
        return self.freq.shape[1]

    def to_json(self) -> dict:
        return {"rho": self.rho, "seed": self.seed,
                "phase": self.phase.tolist(), "freq": self.freq.tolist()}

    @staticmethod
    def from_json(doc: dict) -> "ThetaSet":
        return ThetaSet(np.asarray(doc["phase"], dtype=np.float64),
                        np.atleast_2d(np.asarray(doc["freq"], dtype=np.float64)),
                        float(doc["rho"]), int(doc["seed"]))


def sample_fourier(seed: int, rho: float, count: int, dim: int) -> ThetaSet:
    if rho <= 0:
        raise ConfigError("Fourier bandwidth rho must be positive")
    if count < 0 or dim < 1:
        raise ConfigError("need count >= 0 and dim >= 1")
    rng = stream(seed, "basis")
    phase = rng.uniform(-np.pi, np.pi, size=count)
    freq = rng.normal(0.0, np.sqrt(rho), size=(count, dim))
    return ThetaSet(phase, freq, float(rho), int(seed))


class BasisSet:
    """Stage feature maps phi_t: (x, w) -> R^{B_t} with ||phi_t||_2 <= 1."""

    def width(self, t: int) -> int:
        raise NotImplementedError

    def features_batch(self, t: int, xs, W: np.ndarray) -> np.ndarray:
        """(n, B_t) features; xs is one label or an (n,) label array."""
        raise NotImplementedError

    def features(self, t: int, x: Label, w: np.ndarray) -> np.ndarray:
        return self.features_batch(t, x, np.atleast_2d(np.asarray(w, dtype=np.float64)))[0]

    def describe(self) -> dict:
        raise NotImplementedError


class TabularBasis(BasisSet):
    """Constant plus one indicator per (endogenous label, atom).

    Exact on finite-support instances: any table of stage values, in
    particular the exact DP solution, is representable.
    """

    def __init__(self, instance: MdpInstance):
        exo = instance.exogenous
        if not isinstance(exo, FiniteSupport):
            raise ConfigError("TabularBasis requires a FiniteSupport instance")
        self.horizon = instance.horizon
        self.labels = instance.endogenous
        self.atoms = exo.atoms
        self._label_index = [instance.label_index(t) for t in range(instance.horizon)]

    def width(self, t: int) -> int:
        return 1 + len(self.labels[t]) * self.atoms[t].shape[0]

    def _atom_index(self, t: int, W: np.ndarray) -> np.ndarray:
        # Exact-match lookup; supports are tiny so a dense compare is fine.
        eq = (W[:, None, :] == self.atoms[t][None, :, :]).all(axis=2)
        if not eq.any(axis=1).all():
            raise ConfigError(f"a value is not an atom of stage {t}")
        return eq.argmax(axis=1)

    def features_batch(self, t: int, xs, W: np.ndarray) -> np.ndarray:
        W = np.atleast_2d(np.asarray(W, dtype=np.float64))
        n = W.shape[0]
        n_atoms = self.atoms[t].shape[0]
        if isinstance(xs, str):
            ix = np.full(n, self._label_index[t][xs])
        else:
            ix = np.array([self._label_index[t][x] for x in xs])
        out = np.zeros((n, self.width(t)))
        out[:, 0] = 1.0
        cols = 1 + ix * n_atoms + self._atom_index(t, W)
        out[np.arange(n), cols] = 1.0
        return out / np.sqrt(2.0)

    def weights_for_tables(self, tables: Sequence[np.ndarray]) -> "Weights":
        """Weights that reproduce per-(x, atom) value tables exactly."""
        blocks = []
        for t in range(self.horizon):
            b = np.zeros(self.width(t))
            b[1:] = np.sqrt(2.0) * np.asarray(tables[t], dtype=np.float64).reshape(-1)
            blocks.append(b)
        return Weights(blocks)

    def describe(self) -> dict:
        return {"kind": "tabular", "widths": [self.width(t) for t in range(self.horizon)]}


class FourierBasis(BasisSet):
    """Constant plus random Fourier features of the exogenous vector only."""

    def __init__(self, theta: ThetaSet, horizon: int, dims: Sequence[int]):
        self.theta = theta
        self.horizon = horizon
        self.dims = tuple(dims)
        if any(d > theta.dim for d in self.dims):
            raise ConfigError("stage dimension exceeds the Fourier coefficient dimension")

    def width(self, t: int) -> int:
        return 1 + self.theta.count

    def features_batch(self, t: int, xs, W: np.ndarray) -> np.ndarray:
        W = np.atleast_2d(np.asarray(W, dtype=np.float64))
        if W.shape[1] != self.dims[t]:
            raise ConfigError(f"stage {t} expects dimension {self.dims[t]}, got {W.shape[1]}")
        out = np.empty((W.shape[0], self.width(t)))
        out[:, 0] = 1.0
        out[:, 1:] = np.cos(self.theta.phase + W @ self.theta.freq[:, : self.dims[t]].T)
        return out / np.sqrt(self.width(t))

    def describe(self) -> dict:
        return {"kind": "fourier", "count": self.theta.count, "rho": self.theta.rho,
                "seed": self.theta.seed}


@dataclass
class Weights:
    """Per-stage weight blocks beta = (beta_0, ..., beta_{T-1})."""

    blocks: list[np.ndarray]

    def __post_init__(self) -> None:
        self.blocks = [np.asarray(b, dtype=np.float64) for b in self.blocks]

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def copy(self) -> "Weights":
        return Weights([b.copy() for b in self.blocks])

    def norm(self) -> float:
        return float(np.sqrt(sum(float(b @ b) for b in self.blocks)))

    def flatten(self) -> np.ndarray:
        return np.concatenate(self.blocks) if self.blocks else np.zeros(0)

    @staticmethod
    def zeros(basis: BasisSet, horizon: int) -> "Weights":
        return Weights([np.zeros(basis.width(t)) for t in range(horizon)])

    @staticmethod
    def unflatten(flat: np.ndarray, dims: Sequence[int]) -> "Weights":
        blocks, at = [], 0
        for d in dims:
            blocks.append(np.asarray(flat[at:at + d], dtype=np.float64))
            at += d
        return Weights(blocks)

    def to_json(self) -> dict:
        return {"blocks": [b.tolist() for b in self.blocks]}

    @staticmethod
    def from_json(doc: dict) -> "Weights":
        return Weights([np.asarray(b, dtype=np.float64) for b in doc["blocks"]])


def evaluate(basis: BasisSet, t: int, x: Label, w: np.ndarray) -> np.ndarray:
    return basis.features(t, x, w)


def vfa(basis: BasisSet, weights: Weights, t: int, x: Label, w: np.ndarray) -> float:
    """V_t(x, w) = beta_t . phi_t(x, w); t at the horizon returns 0."""
    if t == weights.n_blocks:
        return 0.0
    phi = basis.features(t, x, w)
    block = weights.blocks[t]
    if block.shape != phi.shape:
        raise ConfigError(f"stage {t}: weight block {block.shape} vs features {phi.shape}")
    return float(block @ phi)


def vfa_batch(basis: BasisSet, weights: Weights, t: int, xs, W: np.ndarray) -> np.ndarray:
    if t == weights.n_blocks:
        return np.zeros(np.atleast_2d(W).shape[0])
    return basis.features_batch(t, xs, W) @ weights.blocks[t]


def draw_inner(instance: MdpInstance, t: int, w_t: np.ndarray, m: int,
               rng: np.random.Generator) -> np.ndarray:
    """m draws of w_{t+1} | w_t, shape (m, dim_{t+1}). Continuous models only."""
    exo = instance.exogenous
    if not isinstance(exo, ContinuousSim):
        raise ConfigError("draw_inner applies to ContinuousSim models")
    W = np.tile(np.asarray(w_t, dtype=np.float64), (m, 1))
    return exo.step(t, W, rng)


def conditional_expectation(basis: BasisSet, instance: MdpInstance, t: int,
                            x: Label, a: str, w_t: Obs | np.ndarray, m: int = 100,
                            rng: np.random.Generator | None = None,
                            samples: np.ndarray | None = None) -> np.ndarray:
    """Estimate E[phi_{t+1}(h(t,x,a,w'), w') | w_t].

    Finite-support models take the exact probability-weighted sum and ignore
    m. Continuous models average over m inner draws; passing `samples` reuses
    one draw batch across calls at fixed (t, w_t), which is how common random
    numbers are shared across the actions being compared.
    """
    exo = instance.exogenous
    if isinstance(exo, FiniteSupport):
        atom = w_t.atom if isinstance(w_t, Obs) else None
        if atom is None:
            value = w_t.value if isinstance(w_t, Obs) else np.asarray(w_t, dtype=np.float64)
            atom = exo.locate(t, value)
        row = exo.transitions[t][atom]
        live = np.nonzero(row)[0]
        W_next = exo.atoms[t + 1][live]
        labels = instance.step_label_batch(t, x, a, W_next)
        phi = basis.features_batch(t + 1, labels, W_next)
        return row[live] @ phi
    if samples is None:
        if rng is None:
            raise ConfigError("continuous models need a random stream or a sample batch")
        if m < 1:
            raise ConfigError("need m >= 1 inner draws")
        value = w_t.value if isinstance(w_t, Obs) else np.asarray(w_t, dtype=np.float64)
        samples = draw_inner(instance, t, value, m, rng)
    labels = instance.step_label_batch(t, x, a, samples)
    phi = basis.features_batch(t + 1, labels, samples)
    return phi.mean(axis=0)
