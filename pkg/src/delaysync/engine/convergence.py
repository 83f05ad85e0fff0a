"""Observed order of the fixed-step integrator by successive step halving."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .scenario import Scenario
from .simulate import run


@dataclass
class ConvergenceStudy:
    dts: list[float]
    differences: list[float]  # |x(dt_k) - x(dt_{k+1})| at the final time
    orders: list[float]  # log2 of consecutive difference ratios

    @property
    def observed_order(self) -> float:
        return min(self.orders)


def _final_state(sc: Scenario) -> np.ndarray:
    tr = run(sc)
    return np.concatenate([tr.p[-1].ravel(), tr.v[-1].ravel(), tr.theta_hat[-1].ravel()])


def convergence_study(sc: Scenario, dts: Sequence[float] | None = None) -> ConvergenceStudy:
    """Run ``sc`` at each step size (each half the previous) and estimate the order.

    With ``x_k`` the final state at ``dt_k``, ``d_k = |x_k - x_{k+1}|`` behaves
    like ``C dt_k^p``; halving gives ``p = log2(d_k / d_{k+1})``. The sample
    spacing is set to the coarsest step so every run samples the same instants.
    """
    dts = list(dts or [0.0025, 0.00125, 0.000625, 0.0003125])
    if len(dts) < 3:
        raise ValueError("need at least three step sizes")
    for a, b in zip(dts, dts[1:]):
        if not math.isclose(a, 2 * b, rel_tol=1e-12):
            raise ValueError("step sizes must halve")
    states = [_final_state(replace(sc, dt=dt, sample_dt=dts[0])) for dt in dts]
    diffs = [float(np.linalg.norm(a - b)) for a, b in zip(states, states[1:])]
    orders = [math.log2(a / b) for a, b in zip(diffs, diffs[1:])]
    return ConvergenceStudy(dts, diffs, orders)
