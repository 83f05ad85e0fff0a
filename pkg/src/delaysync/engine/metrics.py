"""Synchronization metrics computed from a trace."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simulate import Trace


def spread(x: np.ndarray) -> np.ndarray:
    """``max_{i,j} |x_i - x_j|_inf`` per sample for ``(S, n, m)`` input."""
    return (x.max(axis=1) - x.min(axis=1)).max(axis=-1)


@dataclass
class MetricsReport:
    leader_semantics: bool
    v_ref: np.ndarray  # v_d, or the mean final velocity without leaders
    t: np.ndarray
    position_spread: np.ndarray
    velocity_error: np.ndarray  # max_i |v_i - v_d|_inf, or the velocity hull width
    tracking_error: np.ndarray  # max_i |e_i|_2
    estimator_hull: np.ndarray  # per estimator step
    window: float
    final: dict  # {"max": {...}, "mean": {...}} over the final window

    @property
    def peak_spread(self) -> float:
        return float(self.position_spread.max())

    @property
    def spread_decay(self) -> float:
        """Final-sample spread as a fraction of the peak."""
        peak = self.peak_spread
        return float(self.position_spread[-1] / peak) if peak > 0 else 0.0

    @property
    def estimator_hull_ratio(self) -> float:
        h0 = self.estimator_hull[0]
        return float(self.estimator_hull[-1] / h0) if h0 > 0 else 0.0

    def summary(self) -> dict:
        return {
            "leader_semantics": self.leader_semantics,
            "v_ref": self.v_ref.tolist(),
            "window": self.window,
            "final_max": self.final["max"],
            "final_mean": self.final["mean"],
            "peak_spread": self.peak_spread,
            "spread_decay": self.spread_decay,
            "estimator_hull_initial": float(self.estimator_hull[0]),
            "estimator_hull_final": float(self.estimator_hull[-1]),
        }


def metrics(trace: Trace, window: float = 5.0) -> MetricsReport:
    sc = trace.scenario
    leader = bool(sc.effective_leaders)
    pos = spread(trace.p)
    w = trace.t >= trace.t[-1] - window - 1e-9
    if leader:
        v_ref = np.asarray(sc.v_d, float)
        vel = np.abs(trace.v - v_ref).max(axis=(1, 2))
    else:
        v_ref = trace.v[w].mean(axis=(0, 1))
        vel = spread(trace.v)
    trk = np.linalg.norm(trace.e, axis=2).max(axis=1)
    hull = spread(trace.vhat)
    series = {"position_spread": pos, "velocity_error": vel, "tracking_error": trk}
    final = {
        "max": {k: float(v[w].max()) for k, v in series.items()},
        "mean": {k: float(v[w].mean()) for k, v in series.items()},
    }
    return MetricsReport(leader, v_ref, trace.t, pos, vel, trk, hull, window, final)
