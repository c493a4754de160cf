"""Fixed-step RK4 simulation of the closed loop under permanent link faults."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DivergenceError, ScheduleError
from .graph_core import Graph, SubgraphMask

__all__ = [
    "SwitchingSignal",
    "Trajectory",
    "SamplePoint",
    "Integrator",
    "closed_loop_rhs",
    "integrate",
    "sample_stride",
    "sample_stream",
    "write_trajectory_csv",
    "write_events_jsonl",
]

DEFAULT_BLOWUP = 1e6


@dataclass(frozen=True)
class SwitchingSignal:
    """Permanent link faults as ``(time, edge)`` pairs sorted by time."""

    events: tuple = ()

    def __post_init__(self):
        ev = tuple((float(t), int(e)) for t, e in self.events)
        object.__setattr__(self, "events", ev)
        times = [t for t, _ in ev]
        if any(t <= 0 for t in times):
            raise ScheduleError("fault times must be strictly positive")
        if any(b < a for a, b in zip(times, times[1:])):
            raise ScheduleError("fault times must be nondecreasing")
        edges = [e for _, e in ev]
        if len(set(edges)) != len(edges):
            raise ScheduleError("an edge can fault only once")

    def mask_at(self, g: Graph, t: float) -> SubgraphMask:
        return g.mask_without(e for tf, e in self.events if tf <= t)

    def final_mask(self, g: Graph) -> SubgraphMask:
        return g.mask_without(e for _, e in self.events)

    def step_events(self, dt: float) -> list:
        """Events snapped to the next grid point: list of (step index, edge)."""
        return [(int(math.ceil(t / dt - 1e-9)), e) for t, e in self.events]

    def to_json(self) -> list:
        return [{"t": t, "edge": e} for t, e in self.events]

    @classmethod
    def from_json(cls, obj) -> "SwitchingSignal":
        return cls(tuple((ev["t"], ev["edge"]) for ev in obj))

    def __len__(self):
        return len(self.events)


@dataclass
class SamplePoint:
    t: float
    x: np.ndarray
    y: np.ndarray
    mu: np.ndarray = None
    S_values: np.ndarray = None
    index: int = 0


@dataclass
class Trajectory:
    """States on a uniform grid plus the edge mask active on each step.

    ``masks[k]`` is the mask used for the step from ``times[k]`` to
    ``times[k+1]`` (the last row repeats the final mask).
    """

    times: np.ndarray
    states: np.ndarray
    masks: np.ndarray
    agents: object = field(repr=False, default=None)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def y(self) -> np.ndarray:
        return self.agents.h(self.states)

    def zeta(self, net) -> np.ndarray:
        return self.y() @ net.E

    def mu(self, net) -> np.ndarray:
        """Edge outputs including bias; zero on faulted edges."""
        return (net.cstack.mu(self.zeta(net)) + net.bias) * self.masks

    def u(self, net) -> np.ndarray:
        return net.feedforward - self.mu(net) @ net.E.T


def closed_loop_rhs(net, mask, x, backend=None) -> np.ndarray:
    """``x' = -f(x) + q(x) (v - E_H (g(E_H^T h(x) - zeta*) + mu* + P_H w))``."""
    m = mask.array if isinstance(mask, SubgraphMask) else np.asarray(mask, dtype=bool)
    if not m.any():
        raise ScheduleError("closed loop needs a nonempty edge mask")
    return kernels.closed_loop_rhs(kernels.pack(net), m, x, backend)


class Integrator:
    """Incremental RK4 integrator writing into a preallocated state buffer.

    The protocol (``net``) and edge mask can be swapped between calls to
    :meth:`advance`; this is how faults and protocol switches are applied.
    """

    def __init__(self, net, x0, dt, total_steps, blowup=DEFAULT_BLOWUP, backend=None):
        self.dt = float(dt)
        self.n = net.n
        self.states = np.empty((total_steps + 1, net.n))
        self.masks = np.empty((total_steps + 1, net.m))
        self.states[0] = np.asarray(x0, dtype=float)
        self.step = 0
        self.total = total_steps
        self.blowup = blowup
        self.backend = backend
        self.set_protocol(net)
        self.mask = np.ones(net.m)

    def set_protocol(self, net):
        self.net = net
        self.params = kernels.pack(net)

    def set_mask(self, mask):
        self.mask = np.asarray(mask.array if isinstance(mask, SubgraphMask) else mask, dtype=float)

    @property
    def x(self) -> np.ndarray:
        return self.states[self.step]

    @property
    def t(self) -> float:
        return self.step * self.dt

    def advance(self, nsteps: int):
        nsteps = min(int(nsteps), self.total - self.step)
        if nsteps <= 0:
            return
        k0 = self.step
        view = self.states[k0:k0 + nsteps + 1]
        _, failed = kernels.integrate_chunk(self.params, self.mask, self.states[k0].copy(), self.dt,
                                            nsteps, view, self.blowup, self.backend)
        self.masks[k0:k0 + nsteps] = self.mask
        if failed >= 0:
            raise DivergenceError(f"state left the blow-up bound at t={(k0 + failed) * self.dt:.4f}",
                                  time=(k0 + failed) * self.dt)
        self.step += nsteps
        if self.step == self.total:
            self.masks[self.step] = self.mask

    def trajectory(self) -> Trajectory:
        k = self.step + 1
        return Trajectory(np.arange(k) * self.dt, self.states[:k], self.masks[:k], self.net.astack)


def _n_steps(span, dt):
    k = span / dt
    K = int(round(k))
    if abs(K - k) > 1e-6 * max(1.0, k):
        raise ScheduleError(f"span {span} is not a multiple of dt {dt}")
    return K


def integrate(net, signal: SwitchingSignal, x0, span: float, dt: float,
              blowup: float = DEFAULT_BLOWUP, backend=None) -> Trajectory:
    """Classic RK4 with fixed step; faults snap to the next grid point and act from there on."""
    if dt <= 0 or span < 0:
        raise ScheduleError("need dt > 0 and span >= 0")
    K = _n_steps(span, dt)
    integ = Integrator(net, x0, dt, K, blowup, backend)
    mask = np.ones(net.m)
    for k_ev, e in signal.step_events(dt) + [(K, None)]:
        integ.advance(min(k_ev, K) - integ.step)
        if e is not None:
            mask = mask.copy()
            mask[e] = 0.0
            if not mask.any():
                raise ScheduleError("every edge has faulted")
            integ.set_mask(mask)
    if K == 0:
        integ.masks[0] = mask
    return integ.trajectory()


def sample_stride(rate: float, dt: float) -> int:
    """Grid steps between samples at ``rate`` Hz; the sampling must land on the grid."""
    if rate <= 0:
        raise ScheduleError("sampling rate must be positive")
    if rate * dt > 1.0 + 1e-12:
        raise ScheduleError(f"sampling rate {rate} Hz is finer than the integration grid")
    k = 1.0 / (rate * dt)
    stride = int(round(k))
    if abs(stride - k) > 1e-6 * k:
        raise ScheduleError(f"{rate} Hz sampling is not aligned with dt={dt}")
    return stride


def sample_stream(traj: Trajectory, rate: float, xbar=None, net=None) -> list:
    """Uniform samples of a trajectory; storage values are w.r.t. ``xbar`` when given."""
    stride = sample_stride(rate, traj.dt if len(traj.times) > 1 else 1.0 / rate)
    idx = np.arange(0, len(traj.times), stride)
    x = traj.states[idx]
    y = traj.agents.h(x)
    mu = traj.mu(net)[idx] if net is not None else None
    S = traj.agents.storage(x, np.asarray(xbar, dtype=float)) if xbar is not None else None
    return [SamplePoint(float(traj.times[k]), x[i], y[i],
                        None if mu is None else mu[i], None if S is None else S[i], int(k))
            for i, k in enumerate(idx)]


def write_trajectory_csv(traj: Trajectory, path, every: int = 1):
    n = traj.states.shape[1]
    y = traj.y()
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t"] + [f"x_{i + 1}" for i in range(n)] + [f"y_{i + 1}" for i in range(n)])
        for k in range(0, len(traj.times), every):
            wr.writerow([repr(float(traj.times[k]))] + [repr(float(v)) for v in traj.states[k]]
                        + [repr(float(v)) for v in y[k]])


def write_events_jsonl(events, path):
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")
