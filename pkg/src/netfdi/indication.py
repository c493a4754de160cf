"""Edge-indication vectors: sampling and numerical validation.

An indication vector is a constant edge bias ``w`` under which the
steady-state outputs of different fault subgraphs are pairwise distinct.
General vectors are i.i.d. Gaussian; kernel-constrained ones are Gaussian
combinations of a cycle-space basis, so they leave the steady state of
the graph they live on unchanged.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import IndicationError
from .graph_core import Graph, SubgraphMask, cycle_space_basis, incidence_matrix
from .steady_state import NetworkSystem, solve_steady_state_batch, steady_state_table

__all__ = [
    "IndicationVector",
    "ValidationResult",
    "sample_general",
    "sample_kernel",
    "kernel_basis",
    "validate_indication",
    "sample_validated",
]

log = logging.getLogger(__name__)

DEFAULT_MIN_SEP = 1e-4
MAX_ATTEMPTS = 10


@dataclass
class IndicationVector:
    w: np.ndarray
    kind: str
    seed: int
    min_separation: float = float("nan")

    def to_json(self) -> dict:
        return {"w": self.w.tolist(), "kind": self.kind, "seed": self.seed,
                "min_separation": self.min_separation}

    @classmethod
    def from_json(cls, obj) -> "IndicationVector":
        return cls(np.asarray(obj["w"], dtype=float), obj["kind"], int(obj["seed"]),
                   float(obj.get("min_separation", float("nan"))))


@dataclass
class ValidationResult:
    passed: bool
    min_separation: float
    closest_pair: tuple
    nominal_shift: float = 0.0
    outputs: np.ndarray = None


def _scale(w, magnitude):
    peak = np.max(np.abs(w)) if w.size else 0.0
    if magnitude == 0 or peak == 0:
        return np.zeros_like(w)
    return w * (magnitude / peak)


def sample_general(m: int, rng_seed: int, magnitude: float = 1.0) -> IndicationVector:
    """Gaussian edge bias scaled to ``||w||_inf = magnitude``."""
    if m < 1:
        raise IndicationError("need at least one edge")
    w = np.random.default_rng(rng_seed).standard_normal(m)
    return IndicationVector(_scale(w, magnitude), "general", int(rng_seed))


def kernel_basis(g: Graph, mask=None) -> np.ndarray:
    """Integer basis (rows) of the bias vectors annihilated by ``E diag(mask)``.

    Cycle vectors of the present edges, plus unit vectors of absent edges
    (their bias never reaches the agents).
    """
    if mask is None:
        return np.array(cycle_space_basis(g), dtype=np.int64).reshape(-1, g.m)
    present = mask.present if isinstance(mask, SubgraphMask) else tuple(bool(p) for p in mask)
    idx = [e for e in range(g.m) if present[e]]
    sub = Graph(g.n, tuple(g.edges[e] for e in idx))
    rows = []
    for b in cycle_space_basis(sub, allow_disconnected=True):
        v = np.zeros(g.m, dtype=np.int64)
        v[idx] = b
        rows.append(v)
    for e in range(g.m):
        if not present[e]:
            v = np.zeros(g.m, dtype=np.int64)
            v[e] = 1
            rows.append(v)
    return np.array(rows, dtype=np.int64).reshape(-1, g.m)


def sample_kernel(g: Graph, rng_seed: int, magnitude: float = 1.0, mask=None) -> IndicationVector:
    """Gaussian combination of the (masked) cycle-space basis, scaled to ``magnitude``."""
    basis = kernel_basis(g, mask)
    present = (np.ones(g.m, dtype=bool) if mask is None else
               mask.array if isinstance(mask, SubgraphMask) else np.asarray(mask, dtype=bool))
    E = incidence_matrix(g) * present
    if len(basis) <= int(np.sum(~present)):
        raise IndicationError("no kernel indication possible: the graph has no cycles")
    alpha = np.random.default_rng(rng_seed).standard_normal(len(basis))
    w = _scale(alpha @ basis.astype(float), magnitude)
    resid = float(np.max(np.abs(E @ w))) if w.size else 0.0
    if resid > 1e-12:
        raise IndicationError(f"kernel vector leaves residual {resid:.2e}")
    return IndicationVector(w, "kernel", int(rng_seed))


def validate_indication(net: NetworkSystem, subgraphs, w, min_sep: float = DEFAULT_MIN_SEP,
                        nominal_mask=None) -> ValidationResult:
    """Check pairwise separation of the steady-state table under bias ``w``.

    For kernel-constrained vectors pass ``nominal_mask`` (the graph the
    kernel was taken on); the steady state there must then match the
    unbiased one to 1e-8.
    """
    w_arr = w.w if isinstance(w, IndicationVector) else np.asarray(w, dtype=float)
    subgraphs = list(subgraphs)
    table = steady_state_table(net, subgraphs, bias=w_arr)
    passed = len(subgraphs) < 2 or table.min_distance >= min_sep
    shift = 0.0
    if nominal_mask is not None:
        P = (nominal_mask.array if isinstance(nominal_mask, SubgraphMask)
             else np.asarray(nominal_mask, dtype=bool)).astype(float)
        Y, _, _, _ = solve_steady_state_batch(net, np.stack([P, P]), np.stack([w_arr, np.zeros(net.m)]))
        shift = float(np.max(np.abs(Y[0] - Y[1])))
        passed = passed and shift <= 1e-8
    if isinstance(w, IndicationVector):
        w.min_separation = table.min_distance
    return ValidationResult(bool(passed), table.min_distance, table.closest_pair, shift, table.outputs)


def sample_validated(net: NetworkSystem, subgraphs, kind: str, seed: int, magnitude: float = 1.0,
                     min_sep: float = DEFAULT_MIN_SEP, mask=None, attempts: int = MAX_ATTEMPTS):
    """Sample-and-validate loop; resamples with ``seed + k`` up to ``attempts`` times.

    Returns ``(IndicationVector, ValidationResult)``.
    """
    last = None
    for k in range(attempts):
        s = seed + k
        if kind == "general":
            w = sample_general(net.m, s, magnitude)
            res = validate_indication(net, subgraphs, w, min_sep)
        elif kind == "kernel":
            w = sample_kernel(net.graph, s, magnitude, mask)
            res = validate_indication(net, subgraphs, w, min_sep,
                                      nominal_mask=mask if mask is not None else net.graph.full_mask())
        else:
            raise IndicationError(f"unknown indication kind {kind!r}")
        if res.passed:
            return w, res
        log.info("indication sample (seed %d) rejected: separation %.3e, nominal shift %.3e",
                 s, res.min_separation, res.nominal_shift)
        last = res
    raise IndicationError(f"no valid {kind} indication vector after {attempts} attempts "
                          f"(best separation {last.min_separation:.3e})")
