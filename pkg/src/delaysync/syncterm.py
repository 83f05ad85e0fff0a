"""Synchronization filters and the velocity reference they produce.

Each agent with incoming links runs

    eta' = -k_eta * eta - lam * (p - psi)
    psi' = -psi + vbar + (1/kappa) * sum_j a_ij * pj_est(t)

and feeds ``v_r = eta + vbar`` (with ``dv_r = eta' + vbar'``) to its tracking
controller. ``pj_est`` extrapolates the last received position of ``j`` over
the age of that sample using one of four velocity choices.
"""

from __future__ import annotations

from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .channel import Message, TIME_EPS


class Extrapolation(str, Enum):
    STAMPED = "stamped-estimate"  # sender's estimate carried in the message
    INTEGRATED_DISCRETE = "integrated-discrete"  # integral of own held estimate
    INTEGRATED_SMOOTH = "integrated-smooth"  # integral of own smoothed estimate
    HELD_SMOOTH = "held-smooth"  # own smoothed estimate frozen at the send time


class SampleMemory:
    """Per-agent samples taken at every ``kT``.

    Each row holds the sampled position and estimates of every agent, along
    with running integrals used by the integrating extrapolation variants.
    """

    def __init__(self, n: int, m: int, T: float, capacity: int):
        self.T = T
        self.count = 0
        self.position = np.zeros((capacity, n, m))
        self.vhat = np.zeros((capacity, n, m))
        self.vhat_cum = np.zeros((capacity, n, m))
        self.vbar = np.zeros((capacity, n, m))
        self.vbar_cum = np.zeros((capacity, n, m))

    def record(self, k: int, position, vhat, vbar, vbar_cum) -> None:
        if k != self.count:
            raise ValueError(f"expected sample {self.count}, got {k}")
        if k >= len(self.position):
            raise IndexError(f"sample memory full at k={k}")
        self.position[k] = position
        self.vhat[k] = vhat
        self.vbar[k] = vbar
        self.vbar_cum[k] = vbar_cum
        self.vhat_cum[k] = 0.0 if k == 0 else self.vhat_cum[k - 1] + self.T * self.vhat[k - 1]
        self.count += 1

    def vhat_integral(self, i: int, t: float) -> np.ndarray:
        """``int_0^t vhat_i(floor(s/T)) ds`` for ``t`` inside the recorded range."""
        sigma = min(int(np.floor(t / self.T + TIME_EPS)), self.count - 1)
        return self.vhat_cum[sigma, i - 1] + self.vhat[sigma, i - 1] * (t - sigma * self.T)


def position_estimate(
    t: float,
    p_i,
    msg: Optional[Message],
    variant: Extrapolation | str,
    memory: Optional[SampleMemory] = None,
    vbar_cum_now=None,
) -> np.ndarray:
    """Receiver ``i``'s estimate of sender ``j``'s current position.

    ``msg`` is the message realizing ``k_ij(t)``. Before anything has been
    delivered the receiver substitutes its own position ``p_i``, which makes
    that coupling term vanish.
    """
    if msg is None:
        return np.array(p_i, dtype=float)
    variant = Extrapolation(variant)
    s = msg.send_time
    i = msg.receiver
    if variant is Extrapolation.STAMPED:
        eps = msg.vhat * (t - s)
    elif variant is Extrapolation.INTEGRATED_DISCRETE:
        eps = memory.vhat_integral(i, t) - memory.vhat_integral(i, s)
    elif variant is Extrapolation.INTEGRATED_SMOOTH:
        eps = np.asarray(vbar_cum_now, float) - memory.vbar_cum[msg.stamp, i - 1]
    else:
        eps = memory.vbar[msg.stamp, i - 1] * (t - s)
    return msg.position + eps


def sync_derivative(eta, psi, p_i, vbar_i, estimates: Sequence, weights: Sequence[float], k_eta, lam):
    """Return ``(eta', psi')`` for one agent with incoming links."""
    kappa = float(np.sum(weights))
    if kappa == 0.0:
        raise ValueError("agent has no incoming links (kappa = 0); its eta is identically zero")
    avg = sum(w * np.asarray(q, float) for w, q in zip(weights, estimates)) / kappa
    eta, psi, p_i = (np.asarray(a, float) for a in (eta, psi, p_i))
    deta = -k_eta * eta - lam * (p_i - psi)
    dpsi = -psi + np.asarray(vbar_i, float) + avg
    return deta, dpsi


def reference_outputs(eta, deta, vbar, dvbar):
    """``(v_r, dv_r)`` built from filter states only; nothing is differentiated numerically."""
    return np.add(eta, vbar), np.add(deta, dvbar)


class NeighborSums:
    """Vectorized ``sum_j a_ij * pj_est(t)`` for every receiver.

    Between grid points the sum has the form
    ``const + rate * t + boot * p_i(t) + integ * vbar_cum_i(t)``; the
    coefficients are rebuilt whenever a cursor moves or a new estimate
    takes hold.
    """

    def __init__(self, n: int, m: int, edges: Sequence[tuple[int, int, float]], variant):
        self.n, self.m = n, m
        self.variant = Extrapolation(variant)
        self.src = np.array([j - 1 for j, _, _ in edges], dtype=int)
        self.dst = np.array([i - 1 for _, i, _ in edges], dtype=int)
        self.w = np.array([a for _, _, a in edges], dtype=float)
        self.index = {(j, i): e for e, (j, i, _) in enumerate(edges)}
        # scatter matrix: receiver x edge
        self.scatter = np.zeros((n, len(edges)))
        self.scatter[self.dst, np.arange(len(edges))] = self.w
        self.stamp = np.full(len(edges), -1, dtype=int)
        self.payload_p = np.zeros((len(edges), m))
        self.payload_v = np.zeros((len(edges), m))
        self.const = np.zeros((n, m))
        self.rate = np.zeros((n, m))
        self.boot = self.scatter.sum(axis=1)
        self.integ = np.zeros(n)

    def deliver(self, msg: Message) -> bool:
        e = self.index[(msg.sender, msg.receiver)]
        if msg.stamp <= self.stamp[e]:
            return False
        self.stamp[e] = msg.stamp
        self.payload_p[e] = msg.position
        self.payload_v[e] = msg.vhat
        return True

    def rebuild(self, memory: SampleMemory, sigma: int, T: float) -> None:
        have = self.stamp >= 0
        k = np.where(have, self.stamp, 0)
        s = (k * T)[:, None]
        dst = self.dst
        v = self.variant
        if v is Extrapolation.STAMPED:
            c, r = self.payload_p - self.payload_v * s, self.payload_v
            integ_e = np.zeros(len(k))
        elif v is Extrapolation.HELD_SMOOTH:
            held = memory.vbar[k, dst]
            c, r = self.payload_p - held * s, held
            integ_e = np.zeros(len(k))
        elif v is Extrapolation.INTEGRATED_DISCRETE:
            vh = memory.vhat[sigma, dst]
            base = memory.vhat_cum[sigma, dst] - vh * sigma * T
            c = self.payload_p - memory.vhat_cum[k, dst] + base
            r = vh
            integ_e = np.zeros(len(k))
        else:
            c = self.payload_p - memory.vbar_cum[k, dst]
            r = np.zeros_like(c)
            integ_e = np.ones(len(k))
        mask = have.astype(float)
        sc = self.scatter
        self.const = sc @ (c * mask[:, None])
        self.rate = sc @ (r * mask[:, None])
        self.integ = sc @ (integ_e * mask)
        self.boot = sc @ (1.0 - mask)

    def evaluate(self, t: float, p, vbar_cum) -> np.ndarray:
        return self.const + self.rate * t + self.boot[:, None] * p + self.integ[:, None] * vbar_cum

    def ages(self, t: float, T: float) -> np.ndarray:
        """Age ``t - k_ij T`` of every edge's latest sample (inf before first delivery)."""
        return np.where(self.stamp >= 0, t - self.stamp * T, np.inf)
