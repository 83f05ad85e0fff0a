"""Closed-loop simulation on a fixed global clock.

Per grid instant the order is: sample and broadcast (on the ``kT`` grid),
release deliveries up to now, run the estimator update (on the ``sigma T``
grid), then advance every continuous state by one RK4 step with the
message-derived quantities held.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from ..channel import TIME_EPS, Channel, draw_delays, draw_lookback_delays
from ..consensus import VelocityEstimator
from ..syncterm import NeighborSums, SampleMemory
from .scenario import Scenario, horizon_stamps

log = logging.getLogger(__name__)

Edge = tuple[int, int]


class SimulationDiverged(RuntimeError):
    def __init__(self, t: float, agent: int):
        super().__init__(f"non-finite state for agent {agent} at t={t:.6g}")
        self.t, self.agent = t, agent


@dataclass
class Trace:
    scenario: Scenario
    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    eta: np.ndarray
    psi: np.ndarray
    vbar: np.ndarray
    dvbar: np.ndarray
    vr: np.ndarray
    e: np.ndarray
    u: np.ndarray
    q: np.ndarray
    theta_hat: np.ndarray
    vhat: np.ndarray  # (steps + 1, n, m), one row per estimator step
    neighbor_sets: list = field(default_factory=list)
    messages: list = field(default_factory=list)
    delays: dict = field(default_factory=dict)
    max_age: float = 0.0  # largest k_ij age seen once t >= h*
    age_violations: int = 0

    @property
    def n(self) -> int:
        return self.p.shape[1]


def generate_delays(sc: Scenario) -> dict[Edge, np.ndarray]:
    """One delay sequence per edge, each from its own generator seeded by (seed, j, i)."""
    params = sc.comm_params()
    horizon = horizon_stamps(sc)
    c = sc.comm
    out = {}
    for j, i in sorted(sc.weighted_graph().base.edges):
        rng = np.random.default_rng([c.seed, j, i])
        if c.delay_model == "lookback":
            out[(j, i)] = draw_lookback_delays(params, horizon, c.delay_range, c.lookback, c.drop_prob, rng)
        else:
            out[(j, i)] = draw_delays(params, horizon, c.drop_prob, c.delay_range, rng)
    return out


class _Layout:
    def __init__(self, m: int, k: int):
        names = ["p", "v", "eta", "psi", "vbar", "dvbar", "icum"]
        self.sl = {name: slice(a * m, (a + 1) * m) for a, name in enumerate(names)}
        self.sl["theta"] = slice(len(names) * m, len(names) * m + k)
        self.width = len(names) * m + k


def _initial(sc: Scenario, n: int, m: int, key: str, default):
    val = getattr(sc.initial, key)
    return np.array(val, dtype=float) if val is not None else default


def run(sc: Scenario, delays: Optional[Mapping[Edge, np.ndarray]] = None) -> Trace:
    """Simulate one scenario; ``delays`` replays recorded sequences instead of drawing them."""
    g = sc.weighted_graph()
    n, m = g.n, sc.m
    params = sc.comm_params()
    T = params.T
    plant = sc.make_plant()
    k = plant.n_params
    gains = sc.gain_set()
    Pi = sc.gains.Pi
    leaders = set(sc.effective_leaders)
    v_d = None if sc.v_d is None else np.asarray(sc.v_d, dtype=float)

    delays = generate_delays(sc) if delays is None else {e: np.asarray(d, float) for e, d in delays.items()}
    channel = Channel(g.base.edges, delays, T)

    vhat0 = _initial(sc, n, m, "vhat", np.zeros((n, m)))
    est = VelocityEstimator(g.base, leaders, v_d, vhat0)

    kappa = g.kappa()
    sharp = (kappa > 0).astype(float)[:, None]
    inv_kappa = np.where(kappa > 0, 1.0 / np.where(kappa > 0, kappa, 1.0), 0.0)[:, None]
    foll = np.array([0.0 if i in leaders else 1.0 for i in g.base.nodes])[:, None]
    k_eta, lam = gains.k_eta[:, None], gains.lam[:, None]
    k_p, k_d, k_e = gains.k_p[:, None], gains.k_d[:, None], gains.k_e

    lay = _Layout(m, k)
    S = lay.sl
    X = np.zeros((n, lay.width))
    p0 = _initial(sc, n, m, "p", np.zeros((n, m)))
    X[:, S["p"]] = p0
    X[:, S["v"]] = _initial(sc, n, m, "v", np.zeros((n, m)))
    X[:, S["psi"]] = _initial(sc, n, m, "psi", p0.copy())
    X[:, S["eta"]] = _initial(sc, n, m, "eta", np.zeros((n, m))) * sharp
    X[:, S["vbar"]] = est.current
    th = sc.initial.theta_hat
    if k:
        if th is None:
            X[:, S["theta"]] = 0.0
        elif isinstance(th, str):
            X[:, S["theta"]] = plant.true_params(n)
        else:
            X[:, S["theta"]] = np.broadcast_to(np.asarray(th, float), (n, k))

    sums = NeighborSums(n, m, g.edge_list(), sc.extrapolation)
    spp = sc.steps_per_period()
    n_total = int(round(sc.duration / sc.dt))
    n_sigma = n_total // spp + 1
    memory = SampleMemory(n, m, T, n_sigma + 1)
    stride = int(round(sc.sample_dt / sc.dt))
    n_samples = n_total // stride + 1
    dt = sc.dt

    rec = {name: np.zeros((n_samples, n, m)) for name in ("p", "v", "eta", "psi", "vbar", "dvbar", "vr", "e", "u", "q")}
    rec_theta = np.zeros((n_samples, n, k))
    rec_t = np.zeros(n_samples)

    held = {"vhat": est.current.copy()}

    def deriv(t, X):
        p, v = X[:, S["p"]], X[:, S["v"]]
        eta, psi = X[:, S["eta"]], X[:, S["psi"]]
        vbar, dvbar, icum = X[:, S["vbar"]], X[:, S["dvbar"]], X[:, S["icum"]]
        theta = X[:, S["theta"]]
        ddvbar = foll * (-k_d * dvbar - k_p * (vbar - held["vhat"]))
        q = sums.evaluate(t, p, icum) * inv_kappa
        dpsi = sharp * (-psi + vbar + q)
        deta = sharp * (-k_eta * eta - lam * (p - psi))
        vr = eta + vbar
        dvr = deta + dvbar
        u, dtheta, acc = plant.loop_terms(p, v, theta, vr, dvr, k_e, Pi)
        out = np.empty_like(X)
        out[:, S["p"]] = v
        out[:, S["v"]] = acc
        out[:, S["eta"]] = deta
        out[:, S["psi"]] = dpsi
        out[:, S["vbar"]] = foll * dvbar
        out[:, S["dvbar"]] = ddvbar
        out[:, S["icum"]] = vbar
        out[:, S["theta"]] = dtheta
        return out, (vr, v - vr, u, q)

    h_star_tight = params.h_star
    max_age, age_viol = 0.0, 0
    sigma = 0
    t_prev = 0.0
    s_idx = 0
    for step in range(n_total + 1):
        t = step * dt
        on_grid = step % spp == 0
        if on_grid:
            sigma = step // spp
            memory.record(sigma, X[:, S["p"]], est.history[sigma], X[:, S["vbar"]], X[:, S["icum"]])
            for j in g.base.nodes:
                channel.broadcast(j, sigma, X[j - 1, S["p"]], est.history[sigma][j - 1])
        changed = False
        for msg in channel.step_delivery(t_prev, t):
            changed |= sums.deliver(msg)
        if on_grid:
            est.step(sigma, channel)
            held["vhat"] = est.history[sigma]
        if changed or on_grid:
            sums.rebuild(memory, sigma, T)
        if t >= h_star_tight - TIME_EPS and len(sums.stamp):
            age = sums.ages(t, T).max()
            max_age = max(max_age, age)
            if age > h_star_tight + TIME_EPS:
                age_viol += 1
        if step % stride == 0:
            _, (vr, e, u, q) = deriv(t, X)
            rec_t[s_idx] = t
            for name in ("p", "v", "eta", "psi", "vbar", "dvbar"):
                rec[name][s_idx] = X[:, S[name]]
            rec["vr"][s_idx], rec["e"][s_idx], rec["u"][s_idx], rec["q"][s_idx] = vr, e, u, q
            rec_theta[s_idx] = X[:, S["theta"]]
            s_idx += 1
        if step == n_total:
            break
        with np.errstate(over="ignore", invalid="ignore"):  # blow-up is reported below
            k1, _ = deriv(t, X)
            k2, _ = deriv(t + dt / 2, X + dt / 2 * k1)
            k3, _ = deriv(t + dt / 2, X + dt / 2 * k2)
            k4, _ = deriv(t + dt, X + dt * k3)
            X = X + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.isfinite(X).all():
            bad = int(np.flatnonzero(~np.isfinite(X).all(axis=1))[0]) + 1
            raise SimulationDiverged(t + dt, bad)
        t_prev = t

    if age_viol:
        log.warning("%d grid instants exceeded the age bound h*=%.4g", age_viol, h_star_tight)
    return Trace(
        scenario=sc,
        t=rec_t[:s_idx],
        **{name: arr[:s_idx] for name, arr in rec.items()},
        theta_hat=rec_theta[:s_idx],
        vhat=np.array(est.history),
        neighbor_sets=est.neighbor_sets,
        messages=list(channel.delivered),
        delays=dict(delays),
        max_age=max_age,
        age_violations=age_viol,
    )
