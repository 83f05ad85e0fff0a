"""Delayed, lossy communication between agents.

Every agent samples its state at ``t_k = kT``. On each edge ``(j, i)`` the
message stamped ``k`` becomes available to ``i`` at ``kT + tau_k``; a drop is
``tau_k = inf``. Delay sequences are indexed by stamp, whichever generator
produced them, so a run can be replayed from the sequences alone.
"""

from __future__ import annotations

import csv
import heapq
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

Edge = tuple[int, int]

# Tolerance for comparing a delivery instant against a clock reading.
TIME_EPS = 1e-9


@dataclass(frozen=True)
class CommParams:
    T: float
    k_star: int
    h: float

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"sampling period must be positive, got {self.T}")
        if int(self.k_star) != self.k_star or self.k_star < 1:
            raise ValueError(f"k_star must be a positive integer, got {self.k_star}")
        if self.h < 0:
            raise ValueError(f"h must be nonnegative, got {self.h}")

    @property
    def h_star(self) -> float:
        """Maximal interval between two guaranteed receptions, ``k* T + h``."""
        return self.k_star * self.T + self.h

    def steps_per_hstar(self, h_star: float | None = None) -> int:
        hs = self.h_star if h_star is None else h_star
        return max(1, math.ceil(hs / self.T - TIME_EPS))


@dataclass(frozen=True)
class Message:
    sender: int
    receiver: int
    stamp: int
    position: np.ndarray
    vhat: np.ndarray
    send_time: float
    delivery_time: float


def _enforce_windows(tau: np.ndarray, params: CommParams, lo: float, hi: float, rng) -> np.ndarray:
    """Force a delivery wherever k_star consecutive stamps would hold no tau <= h."""
    last = -1
    for k in range(len(tau)):
        if tau[k] <= params.h:
            last = k
        elif k - last >= params.k_star:
            tau[k] = rng.uniform(lo, hi)
            last = k
    return tau


def _check_range(params: CommParams, drop_prob: float, lo: float, hi: float):
    if not 0 <= lo <= hi:
        raise ValueError(f"bad delay range [{lo}, {hi}]")
    if hi > params.h + TIME_EPS:
        raise ValueError(f"delay range upper bound {hi} exceeds guaranteed bound h={params.h}")
    if not 0 <= drop_prob < 1:
        raise ValueError(f"drop probability must lie in [0, 1), got {drop_prob}")


def draw_delays(
    params: CommParams,
    horizon_k: int,
    drop_prob: float = 0.0,
    delay_range: tuple[float, float] = (0.0, 0.0),
    rng: np.random.Generator | int | None = None,
) -> np.ndarray:
    """Direct model: each stamp is dropped with ``drop_prob`` or delayed uniformly.

    Returns ``tau_0 .. tau_horizon``; windows are repaired so the sequence
    satisfies the delivery guarantee by construction.
    """
    lo, hi = delay_range
    _check_range(params, drop_prob, lo, hi)
    rng = np.random.default_rng(rng)
    n = horizon_k + 1
    tau = rng.uniform(lo, hi, size=n)
    tau[rng.random(n) < drop_prob] = math.inf
    return _enforce_windows(tau, params, lo, hi, rng)


def draw_lookback_delays(
    params: CommParams,
    horizon_k: int,
    delay_range: tuple[float, float] = (0.15, 0.25),
    lookback: int = 10,
    drop_prob: float = 0.0,
    rng: np.random.Generator | int | None = None,
) -> np.ndarray:
    """Lookback model: at each ``kT`` a past sample ``kbar`` in ``[k - lookback, k]`` is sent.

    The message for ``kbar`` arrives at ``kT + tau`` with ``tau`` uniform in
    ``delay_range``. A stamp is never sent twice; stamps never picked are lost.
    """
    lo, hi = delay_range
    _check_range(params, drop_prob, lo, hi)
    rng = np.random.default_rng(rng)
    n = horizon_k + 1
    tau = np.full(n, math.inf)
    for k in range(n):
        if rng.random() < drop_prob:
            continue
        kbar = int(rng.integers(max(0, k - lookback), k + 1))
        delay = rng.uniform(lo, hi)
        if math.isinf(tau[kbar]):
            tau[kbar] = (k - kbar) * params.T + delay
    return _enforce_windows(tau, params, lo, hi, rng)


@dataclass
class Assumption1Report:
    ok: bool
    edge: Optional[Edge] = None
    index: Optional[int] = None
    reason: str = ""


def qualifying_indices(tau: np.ndarray, h: float) -> np.ndarray:
    return np.flatnonzero(np.asarray(tau) <= h)


def validate_assumption1(
    delays: Mapping[Edge, np.ndarray] | np.ndarray, params: CommParams
) -> Assumption1Report:
    """Check the delivery guarantee on finite-horizon delay sequences.

    Scans qualifying stamps (``tau <= h``) greedily: the first must be at most
    ``k_star``, consecutive ones at most ``k_star`` apart, and the horizon may
    not run more than ``k_star`` past the last one.
    """
    items = delays.items() if isinstance(delays, Mapping) else [(None, delays)]
    for edge, tau in items:
        tau = np.asarray(tau, dtype=float)
        q = qualifying_indices(tau, params.h)
        last_index = len(tau) - 1
        if len(q) == 0:
            if last_index >= params.k_star:
                return Assumption1Report(False, edge, params.k_star, "no qualifying stamp")
            continue
        if q[0] > params.k_star:
            return Assumption1Report(False, edge, int(q[0]), f"first qualifying stamp {q[0]} > k*")
        gaps = np.diff(q)
        bad = np.flatnonzero(gaps > params.k_star)
        if len(bad):
            b = bad[0]
            return Assumption1Report(
                False, edge, int(q[b + 1]), f"gap {gaps[b]} between stamps {q[b]} and {q[b + 1]}"
            )
        if last_index - q[-1] > params.k_star:
            return Assumption1Report(False, edge, int(q[-1] + params.k_star), "horizon outruns guarantee")
    return Assumption1Report(True)


def latest_stamp_from_delays(tau: np.ndarray, T: float, t: float) -> Optional[int]:
    """Brute-force ``max{k : kT + tau_k <= t}``; None if nothing has arrived."""
    best = None
    for k, d in enumerate(tau):
        if k * T + d <= t + TIME_EPS:
            best = k
    return best


@dataclass
class _EdgeLog:
    times: list[float] = field(default_factory=list)
    running_max: list[int] = field(default_factory=list)
    latest: Optional[Message] = None


class Channel:
    """Per-edge delivery bookkeeping for one simulation run.

    ``broadcast`` enqueues the sampled state on every out-edge with a finite
    delay; ``step_delivery`` releases messages in ``(t_prev, t_now]``. The
    cursor of each edge only moves forward: late, superseded messages are
    logged but never lower ``k_ij``.
    """

    def __init__(self, edges: Iterable[Edge], delays: Mapping[Edge, np.ndarray], T: float):
        self.T = float(T)
        self.edges = sorted(edges)
        missing = [e for e in self.edges if e not in delays]
        if missing:
            raise ValueError(f"no delay sequence for edges {missing}")
        self.delays = {e: np.asarray(delays[e], dtype=float) for e in self.edges}
        self._out: dict[int, list[int]] = {}
        for j, i in self.edges:
            self._out.setdefault(j, []).append(i)
        self._pending: list[tuple[float, int, int, int, Message]] = []
        self._seq = 0
        self.log: dict[Edge, _EdgeLog] = {e: _EdgeLog() for e in self.edges}
        self.delivered: list[Message] = []

    def broadcast(self, sender: int, k: int, position, vhat) -> None:
        position = np.array(position, dtype=float)
        vhat = np.array(vhat, dtype=float)
        send_time = k * self.T
        for i in self._out.get(sender, []):
            tau = self.delays[(sender, i)]
            if k >= len(tau):
                raise IndexError(f"stamp {k} beyond delay horizon {len(tau) - 1} on edge {(sender, i)}")
            d = tau[k]
            if math.isinf(d):
                continue
            msg = Message(sender, i, k, position, vhat, send_time, send_time + d)
            heapq.heappush(self._pending, (msg.delivery_time, sender, self._seq, i, msg))
            self._seq += 1

    def step_delivery(self, t_prev: float, t_now: float) -> list[Message]:
        """Messages with delivery time in ``(t_prev, t_now]``, ordered by (time, sender)."""
        if t_now < t_prev:
            raise ValueError(f"clock ran backwards: {t_prev} -> {t_now}")
        out = []
        # Anything due at or before t_prev was already released by the previous call.
        while self._pending and self._pending[0][0] <= t_now + TIME_EPS:
            *_, msg = heapq.heappop(self._pending)
            out.append(msg)
        for msg in out:
            log = self.log[(msg.sender, msg.receiver)]
            prev = log.running_max[-1] if log.running_max else -1
            log.times.append(msg.delivery_time)
            log.running_max.append(max(prev, msg.stamp))
            if log.latest is None or msg.stamp > log.latest.stamp:
                log.latest = msg
            self.delivered.append(msg)
        return out

    def latest_stamp(self, i: int, j: int, t: float) -> Optional[int]:
        """``k_ij(t)`` from the delivered log (valid for ``t`` up to the last step)."""
        log = self.log[(j, i)]
        pos = bisect_right(log.times, t + TIME_EPS)
        return log.running_max[pos - 1] if pos else None

    def latest_message(self, i: int, j: int) -> Optional[Message]:
        """Message realizing the current cursor on edge ``(j, i)``."""
        return self.log[(j, i)].latest


def export_delays(path: str | Path, delays: Mapping[Edge, np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sender", "receiver", "k", "tau"])
        for (j, i) in sorted(delays):
            for k, d in enumerate(delays[(j, i)]):
                w.writerow([j, i, k, "inf" if math.isinf(d) else repr(float(d))])


def import_delays(path: str | Path) -> dict[Edge, np.ndarray]:
    rows: dict[Edge, dict[int, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                e = (int(row["sender"]), int(row["receiver"]))
                rows.setdefault(e, {})[int(row["k"])] = float(row["tau"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed delay row {row!r}") from exc
    out = {}
    for e, m in rows.items():
        if sorted(m) != list(range(len(m))):
            raise ValueError(f"{path}: stamps on edge {e} are not contiguous from 0")
        out[e] = np.array([m[k] for k in range(len(m))])
    return out
