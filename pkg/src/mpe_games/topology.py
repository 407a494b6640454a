"""Communication graphs and the game-weight overlay (bi-layer topology).

Weights are stored row-wise: entry ``(i, k)`` is the weight with which node
``i`` listens to node ``k``.  Pursuer/evader cross weights are kept in two
independent matrices because the two directions need not agree.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)

PRESETS = ("complete", "ring", "star", "empty")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CommGraph:
    """Weighted intra-team graph with a zero diagonal."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if w.size == 0:
            w = np.zeros((0, 0))
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"communication weights must be square, got {w.shape}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("communication weights must be finite and nonnegative")
        if np.any(np.diag(w) != 0):
            raise ValueError("communication graph diagonal must be zero")
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def preset(cls, name: str, n: int, weight: float = 1.0) -> "CommGraph":
        """Build a named graph: complete, ring (bidirectional), star (hub 0) or empty."""
        w = np.zeros((n, n))
        if name == "complete":
            w[:] = weight
            np.fill_diagonal(w, 0.0)
        elif name == "ring":
            if n == 2:
                w[0, 1] = w[1, 0] = weight
            elif n > 2:
                for i in range(n):
                    w[i, (i + 1) % n] = weight
                    w[i, (i - 1) % n] = weight
        elif name == "star":
            w[0, 1:] = weight
            w[1:, 0] = weight
        elif name != "empty":
            raise ValueError(f"unknown graph preset {name!r}; expected one of {PRESETS}")
        return cls(w)


@dataclass(frozen=True)
class CrossGraph:
    """Pursuer-to-evader (N x M) and evader-to-pursuer (M x N) weights."""

    pe_weights: np.ndarray
    ep_weights: np.ndarray

    def __post_init__(self):
        pe = np.asarray(self.pe_weights, dtype=float)
        ep = np.asarray(self.ep_weights, dtype=float)
        if pe.ndim != 2 or ep.ndim != 2 or pe.shape != ep.shape[::-1]:
            raise ValueError(f"cross weights have mismatched shapes {pe.shape} / {ep.shape}")
        for a in (pe, ep):
            if np.any(a < 0) or not np.all(np.isfinite(a)):
                raise ValueError("cross weights must be finite and nonnegative")
        object.__setattr__(self, "pe_weights", _frozen(pe))
        object.__setattr__(self, "ep_weights", _frozen(ep))

    @property
    def rows(self) -> int:
        return self.pe_weights.shape[0]

    @property
    def cols(self) -> int:
        return self.pe_weights.shape[1]


@dataclass(frozen=True)
class BiLayerTopology:
    gp: CommGraph
    ge: CommGraph
    cross: CrossGraph
    game_weights: np.ndarray = field(default=None)

    def __post_init__(self):
        n, m = self.gp.n_nodes, self.ge.n_nodes
        if (self.cross.rows, self.cross.cols) != (n, m):
            raise ValueError(
                f"cross graph is {self.cross.rows}x{self.cross.cols}, expected {n}x{m}"
            )
        g = np.ones((n, m)) if self.game_weights is None else np.asarray(self.game_weights, float)
        if g.shape != (n, m):
            raise ValueError(f"game weights must be {n}x{m}, got {g.shape}")
        if not np.all((g == 0) | (g == 1)):
            raise ValueError("game weights must be 0 or 1")
        object.__setattr__(self, "game_weights", _frozen(g))

    @property
    def n_pursuers(self) -> int:
        return self.gp.n_nodes

    @property
    def n_evaders(self) -> int:
        return self.ge.n_nodes

    @property
    def effective_pe(self) -> np.ndarray:
        """Pursuit weights after masking by the game layer."""
        return self.cross.pe_weights * self.game_weights

    def active_evaders(self, pursuer: int) -> list[int]:
        row = self.effective_pe[pursuer]
        return [j for j in range(self.n_evaders) if row[j] > 0]


def in_degree(graph: CommGraph, node: int) -> float:
    if not 0 <= node < graph.n_nodes:
        raise IndexError(f"node {node} out of range for {graph.n_nodes}-node graph")
    return float(graph.weights[node].sum())


def laplacian(graph: CommGraph) -> np.ndarray:
    w = graph.weights
    return np.diag(w.sum(axis=1)) - w


def cross_in_degrees(top: BiLayerTopology, effective: bool = False):
    """Return ``(d_pe, d_ep)``; only the pursuer side is ever masked."""
    pe = top.effective_pe if effective else top.cross.pe_weights
    return pe.sum(axis=1), top.cross.ep_weights.sum(axis=1)


def set_game_weight(top: BiLayerTopology, i: int, j: int, g: int) -> BiLayerTopology:
    if not (0 <= i < top.n_pursuers and 0 <= j < top.n_evaders):
        raise IndexError(f"game weight index ({i}, {j}) out of range")
    if g not in (0, 1):
        raise ValueError("game weight must be 0 or 1")
    gw = np.array(top.game_weights)
    gw[i, j] = g
    log.debug("game weight (%d, %d) <- %d", i, j, g)
    return replace(top, game_weights=gw)
