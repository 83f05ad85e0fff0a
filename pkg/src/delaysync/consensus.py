"""Discrete-time desired-velocity estimator and its smoothing filter.

Followers average their own estimate with the freshest estimates received
since the previous update; leaders hold ``v_d``. The held estimate then
drives a stable second-order filter so the velocity reference
seen by the controller is continuously differentiable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .channel import Channel, TIME_EPS
from .graphs import Digraph, is_jointly_rooted


def new_neighbor_set(
    i: int,
    in_neighbors: Iterable[int],
    stamps_now: Mapping[int, Optional[int]],
    stamps_prev: Mapping[int, Optional[int]],
) -> set[int]:
    """``{i}`` plus every neighbor whose latest stamp advanced since the last update.

    An absent stamp (nothing delivered) compares below every real stamp.
    """
    out = {i}
    for j in in_neighbors:
        now = stamps_now.get(j)
        if now is None:
            continue
        prev = stamps_prev.get(j)
        if prev is None or now > prev:
            out.add(j)
    return out


class VelocityEstimator:
    """Per-agent estimates ``vhat_i(sigma)`` for one run.

    ``history[s]`` holds all estimates at step ``s``; ``step(sigma, channel)``
    appends ``vhat(sigma + 1)`` computed from the delivery state at ``sigma T``.
    """

    def __init__(self, graph: Digraph, leaders: Iterable[int], v_d, vhat0):
        self.graph = graph
        self.leaders = frozenset(leaders)
        self.v_d = None if v_d is None else np.asarray(v_d, dtype=float)
        vhat0 = np.array(vhat0, dtype=float)
        if vhat0.ndim != 2 or vhat0.shape[0] != graph.n:
            raise ValueError(f"initial estimates must be (n, m), got {vhat0.shape}")
        if self.leaders:
            if self.v_d is None:
                raise ValueError("leaders need a desired velocity")
            for l in self.leaders:
                vhat0[l - 1] = self.v_d
        self.history: list[np.ndarray] = [vhat0]
        self._in = {i: graph.in_neighbors(i) for i in graph.nodes}
        self._prev: dict[int, dict[int, Optional[int]]] = {i: {} for i in graph.nodes}
        self.neighbor_sets: list[list[list[int]]] = []

    @property
    def current(self) -> np.ndarray:
        return self.history[-1]

    def is_leader(self, i: int) -> bool:
        return i in self.leaders

    def step(self, sigma: int, channel: Channel) -> np.ndarray:
        if sigma != len(self.history) - 1:
            raise ValueError(f"estimator is at step {len(self.history) - 1}, asked for {sigma}")
        cur = self.history[-1]
        nxt = cur.copy()
        sets = []
        for i in self.graph.nodes:
            now = {}
            for j in self._in[i]:
                msg = channel.latest_message(i, j)
                now[j] = None if msg is None else msg.stamp
            if self.is_leader(i):
                sets.append(sorted(self.leaders))
            else:
                nbrs = new_neighbor_set(i, self._in[i], now, self._prev[i])
                vals = [cur[i - 1]] + [channel.latest_message(i, j).vhat for j in sorted(nbrs - {i})]
                nxt[i - 1] = np.mean(vals, axis=0)
                sets.append(sorted(nbrs))
            self._prev[i] = now
        self.history.append(nxt)
        self.neighbor_sets.append(sets)
        return nxt

    def interaction_graph(self, sigma: int) -> Digraph:
        return interaction_graph(self.graph.n, self.neighbor_sets[sigma])


def interaction_graph(n: int, neighbor_sets: Sequence[Sequence[int]]) -> Digraph:
    """Graph with an edge ``(j, i)`` for each ``j`` used in agent ``i``'s update."""
    return Digraph(n, frozenset((j, i + 1) for i, s in enumerate(neighbor_sets) for j in s))


def smoothing_derivative(vbar, dvbar, vhat_held, k_p, k_d):
    """Right-hand side of the smoothing filter: returns ``(dvbar, ddvbar)``."""
    vbar = np.asarray(vbar, dtype=float)
    dvbar = np.asarray(dvbar, dtype=float)
    return dvbar, -k_d * dvbar - k_p * (vbar - np.asarray(vhat_held, dtype=float))


def run_estimator_only(
    graph: Digraph,
    leaders: Iterable[int],
    v_d,
    vhat0,
    delays: Mapping[tuple[int, int], np.ndarray],
    T: float,
    n_steps: int,
) -> VelocityEstimator:
    """Drive the estimator through ``n_steps`` updates with frozen agent dynamics."""
    est = VelocityEstimator(graph, leaders, v_d, vhat0)
    chan = Channel(graph.edges - {(i, i) for i in graph.nodes}, delays, T)
    m = est.current.shape[1]
    zero = np.zeros(m)
    t_prev = 0.0
    for sigma in range(n_steps):
        t = sigma * T
        for j in graph.nodes:
            chan.broadcast(j, sigma, zero, est.current[j - 1])
        chan.step_delivery(t_prev, t)
        est.step(sigma, chan)
        t_prev = t
    return est


def hull_width(values: np.ndarray) -> np.ndarray:
    """Largest per-component spread across agents; ``values`` is ``(..., n, m)``."""
    v = np.asarray(values)
    return (v.max(axis=-2) - v.min(axis=-2)).max(axis=-1)


@dataclass
class Proposition1Report:
    v_ref: np.ndarray
    disagreement: np.ndarray
    hull: np.ndarray
    window: int
    ratio_per_step: float
    ratio_per_window: float
    limits: np.ndarray = field(repr=False, default=None)

    @property
    def converging(self) -> bool:
        return self.ratio_per_window < 1.0


def _fit_ratio(e: np.ndarray, floor_rel: float) -> float:
    top = e.max() if len(e) else 0.0
    if top == 0.0:
        return 0.0
    idx = np.flatnonzero(e > floor_rel * top)
    if len(idx) < 2:
        return 0.0
    slope, _ = np.polyfit(idx.astype(float), np.log(e[idx]), 1)
    return float(math.exp(slope))


def check_proposition1(
    vhat: np.ndarray,
    T: float,
    h_star: float,
    v_d=None,
    floor_rel: float = 1e-9,
) -> Proposition1Report:
    """Measure estimator convergence on a ``(steps, n, m)`` trace of estimates.

    Disagreement is ``max_i |vhat_i - v_ref|_inf`` with ``v_ref = v_d`` when
    there are leaders, otherwise the mean of the final estimates. The decay
    ratio comes from a least-squares line through the log of per-window
    maxima (windows of ``ceil(h*/T)`` steps); points below ``floor_rel`` of
    the peak are treated as converged and left out.
    """
    vhat = np.asarray(vhat, dtype=float)
    w = max(1, math.ceil(h_star / T - TIME_EPS))
    if vhat.shape[0] < 3 * w:
        raise ValueError(f"trace of {vhat.shape[0]} steps is shorter than 3 windows of {w}")
    v_ref = np.asarray(v_d, dtype=float) if v_d is not None else vhat[-1].mean(axis=0)
    e = np.abs(vhat - v_ref).max(axis=(1, 2))
    n_win = len(e) // w
    env = e[: n_win * w].reshape(n_win, w).max(axis=1)
    per_window = _fit_ratio(env, floor_rel)
    return Proposition1Report(
        v_ref=v_ref,
        disagreement=e,
        hull=hull_width(vhat),
        window=w,
        ratio_per_step=per_window ** (1.0 / w),
        ratio_per_window=per_window,
        limits=vhat[-1].copy(),
    )


def check_jointly_rooted_windows(
    graphs: Sequence[Digraph], window: int, start: int = 0
) -> list[int]:
    """Start indices ``rho >= start`` whose window ``G(rho..rho+window-1)`` is not jointly rooted."""
    bad = []
    for rho in range(start, len(graphs) - window + 1):
        if not is_jointly_rooted(graphs[rho : rho + window]):
            bad.append(rho)
    return bad

