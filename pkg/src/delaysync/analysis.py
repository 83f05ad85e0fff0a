"""Design-time gain checks and run-time ISS auditing."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import expm
from scipy.sparse.csgraph import connected_components

from .graphs import WeightedDigraph

# Relative size under which the discriminant of x^2 + k x + lam is a double root.
_DISC_RTOL = 64 * np.finfo(float).eps


def mu(k_eta: float, lam: float) -> float:
    """Decay rate ``-max Re`` of the roots of ``x^2 + k_eta x + lam``."""
    if not (k_eta > 0 and lam > 0):
        raise ValueError(f"gains must be positive, got k_eta={k_eta}, lambda={lam}")
    disc = k_eta * k_eta - 4.0 * lam
    if disc <= _DISC_RTOL * k_eta * k_eta:
        return k_eta / 2.0
    # slower root, written to avoid cancellation
    return 2.0 * lam / (k_eta + math.sqrt(disc))


@dataclass(frozen=True)
class GainSet:
    """Per-agent gains; scalars are broadcast to every agent."""

    k_eta: np.ndarray
    lam: np.ndarray
    k_p: np.ndarray
    k_d: np.ndarray
    k_e: np.ndarray

    @classmethod
    def uniform(cls, n: int, lam: float = 13.0, k_eta: float | None = None, k_p=2.0, k_d=2.0, k_e=10.0):
        k_eta = 2.0 * math.sqrt(lam) if k_eta is None else k_eta
        f = lambda x: np.full(n, float(x))
        return cls(f(k_eta), f(lam), f(k_p), f(k_d), f(k_e))

    @property
    def mu(self) -> np.ndarray:
        return np.array([mu(k, l) for k, l in zip(self.k_eta, self.lam)])


@dataclass
class Condition19Report:
    agents: list[int]
    mu: np.ndarray
    h_star: float
    margin: np.ndarray
    max_h_star: np.ndarray

    @property
    def passed(self) -> np.ndarray:
        return self.margin > 0

    @property
    def all_pass(self) -> bool:
        return bool(np.all(self.passed))


def check_condition19(gains: GainSet, h_star: float, agents: Sequence[int] | None = None) -> Condition19Report:
    """Strict test ``mu_i > 1 + 2 h*`` on each listed agent (1-based labels)."""
    mus = gains.mu
    agents = list(range(1, len(mus) + 1)) if agents is None else list(agents)
    sel = mus[[a - 1 for a in agents]]
    return Condition19Report(agents, sel, h_star, sel - (1.0 + 2.0 * h_star), (sel - 1.0) / 2.0)


@dataclass
class GainMatrices:
    agents: list[int]
    gamma0: np.ndarray
    interconnection: np.ndarray
    gamma: np.ndarray
    closed_form: np.ndarray
    rho: float


def gain_matrices(g: WeightedDigraph, gains: GainSet, h_star: float) -> GainMatrices:
    """Assemble the per-agent IOS gains and the closed-loop gain matrix built from them.

    Inputs are laid out per agent as ``(phi_i, eps_i)`` in columns ``2a, 2a+1``.
    """
    sharp = g.sharp_nodes()
    if not sharp:
        raise ValueError("no agent has incoming links")
    pos = {i: a for a, i in enumerate(sharp)}
    ns = len(sharp)
    kappa = g.kappa()
    mus = gains.mu
    g0 = np.zeros((ns, 2 * ns))
    mm = np.zeros((2 * ns, ns))
    closed = np.zeros((ns, ns))
    for a, i in enumerate(sharp):
        g0[a, 2 * a] = 1.0 / mus[i - 1]
        g0[a, 2 * a + 1] = 2.0 / mus[i - 1]
        for j in g.base.in_neighbors(i):
            if j not in pos:
                continue
            w = g.weights[i - 1, j - 1] / kappa[i - 1]
            mm[2 * a, pos[j]] = w
            mm[2 * a + 1, pos[j]] = w * h_star
            closed[a, pos[j]] = w / mus[i - 1] * (1.0 + 2.0 * h_star)
    gamma = g0 @ mm
    return GainMatrices(sharp, g0, mm, gamma, closed, spectral_radius(gamma))


def spectral_radius(a, tol: float = 1e-12, max_iter: int = 100_000) -> float:
    """Perron root of a nonnegative square matrix.

    The matrix is split into strongly connected blocks; the root is the
    largest block root. Each irreducible block is handled by power iteration
    on ``B + I`` (primitive, same Perron vector, root shifted by one) with the
    Collatz-Wielandt bracket as stopping rule. A dense eigenvalue solve is
    the fallback if a bracket has not closed after ``max_iter`` steps.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"spectral radius needs a square matrix, got shape {a.shape}")
    if np.any(a < 0):
        raise ValueError("matrix must be entrywise nonnegative")
    if a.shape[0] == 0:
        return 0.0
    n_comp, labels = connected_components(a > 0, directed=True, connection="strong")
    return max(_irreducible_root(a[np.ix_(labels == c, labels == c)], tol, max_iter) for c in range(n_comp))


def _irreducible_root(a: np.ndarray, tol: float, max_iter: int) -> float:
    n = a.shape[0]
    if n == 1:
        return float(a[0, 0])
    b = a + np.eye(n)
    x = np.ones(n)
    for _ in range(max_iter):
        y = b @ x
        ratios = y / x
        lo, hi = ratios.min(), ratios.max()
        if hi - lo <= tol * hi:
            return float(0.5 * (lo + hi) - 1.0)
        x = y / y.max()
    return float(np.max(np.abs(np.linalg.eigvals(a))))


# ---------------------------------------------------------------- ISS auditing


@dataclass
class Diagnostics:
    """Signals of the error coordinates, shape ``(samples, n_sharp, m)``."""

    agents: list[int]
    t: np.ndarray
    eta: np.ndarray
    p_tilde: np.ndarray
    psi_tilde: np.ndarray
    phi: np.ndarray
    eps: np.ndarray


def diagnostics(g: WeightedDigraph, t, p, v, eta, psi, vbar, e, q) -> Diagnostics:
    """Recompute the error coordinates from recorded states.

    ``q`` is the recorded neighbor average ``(1/kappa_i) sum_j a_ij pj_est``.
    Arrays are ``(samples, n, m)``.
    """
    sharp = g.sharp_nodes()
    idx = [i - 1 for i in sharp]
    kappa = g.kappa()
    wn = g.weights / np.where(kappa > 0, kappa, 1.0)[:, None]
    avg_p = np.einsum("ij,sjm->sim", wn, p)
    avg_v = np.einsum("ij,sjm->sim", wn, v)
    p_tilde = p - psi
    psi_tilde = psi - avg_p
    phi = e - (avg_v - vbar)
    eps = e + avg_p - q
    return Diagnostics(sharp, np.asarray(t), eta[:, idx], p_tilde[:, idx], psi_tilde[:, idx], phi[:, idx], eps[:, idx])


@dataclass
class IssAuditReport:
    agents: list[int]
    psi_max_violation: np.ndarray  # per agent, relative
    eta_max_violation: np.ndarray
    psi_worst: list[tuple[float, float]]  # (t0, t) of the worst pair per agent
    eta_worst: list[tuple[float, float]]
    atol: float

    def violations(self, rtol: float = 1e-6) -> dict[str, list[int]]:
        return {
            "psi": [a for a, v in zip(self.agents, self.psi_max_violation) if v > rtol],
            "eta": [a for a, v in zip(self.agents, self.eta_max_violation) if v > rtol],
        }

    def ok(self, rtol: float = 1e-6) -> bool:
        v = self.violations(rtol)
        return not v["psi"] and not v["eta"]


def _audit_bound(t, lhs, x0norm, rate, inputs, gains, t0_idx, atol):
    """Worst relative excess of ``lhs(t)`` over ``e^{-rate (t-t0)} |x(t0)| + sum_k gain_k sup|u_k|``."""
    worst, where = 0.0, (float(t[0]), float(t[0]))
    for s in t0_idx:
        sups = [np.maximum.accumulate(u[s:]) for u in inputs]
        rhs = np.exp(-rate * (t[s:] - t[s])) * x0norm[s]
        for gk, sk in zip(gains, sups):
            rhs = rhs + gk * sk
        rel = (lhs[s:] - rhs) / np.maximum(rhs, atol)
        k = int(np.argmax(rel))
        if rel[k] > worst:
            worst, where = float(rel[k]), (float(t[s]), float(t[s + k]))
    return worst, where


def iss_audit(diag: Diagnostics, mus: np.ndarray, t0_stride: int = 10, atol: float = 1e-9) -> IssAuditReport:
    """Check both ISS estimates on every ``(t0, t)`` pair of the sampled grid.

    ``psi_tilde`` subsystem: unit decay rate, unit gains on ``eps`` and ``phi``.
    ``(eta, p_tilde)`` subsystem: decay ``mu_i`` and gains ``1/mu_i`` on
    ``psi_tilde`` and ``eps``. Suprema are taken over samples only.
    ``mus`` holds one rate per audited agent.
    """
    if len(diag.t) < 2:
        raise ValueError("trace too short to audit")
    norm = lambda x: np.linalg.norm(x, axis=-1)
    t0_idx = range(0, len(diag.t) - 1, max(1, t0_stride))
    psi_v, eta_v, psi_w, eta_w = [], [], [], []
    for a in range(len(diag.agents)):
        pt = norm(diag.psi_tilde[:, a])
        ep = norm(diag.eps[:, a])
        ph = norm(diag.phi[:, a])
        w, at = _audit_bound(diag.t, pt, pt, 1.0, [ep, ph], [1.0, 1.0], t0_idx, atol)
        psi_v.append(w)
        psi_w.append(at)
        x = norm(np.concatenate([diag.eta[:, a], diag.p_tilde[:, a]], axis=-1))
        m = float(mus[a])
        w, at = _audit_bound(diag.t, x, x, m, [pt, ep], [1.0 / m, 1.0 / m], t0_idx, atol)
        eta_v.append(w)
        eta_w.append(at)
    return IssAuditReport(list(diag.agents), np.array(psi_v), np.array(eta_v), psi_w, eta_w, atol)


def simulate_subsystem(k_eta, lam, x0, psi_tilde0, eps_fn, phi_fn, t_end, dt):
    """RK4 run of one agent's error coordinates driven by synthetic inputs.

    ``eps_fn(t)`` and ``phi_fn(t)`` return ``m``-vectors. Returns a
    ``Diagnostics`` over a single agent with ``eta``, ``p_tilde`` from the
    stacked initial state ``x0 = (eta0, p_tilde0)``.
    """
    eta0, pt0 = (np.asarray(a, float) for a in x0)
    m = eta0.shape[0]
    y = np.concatenate([eta0, pt0, np.asarray(psi_tilde0, float)])

    def f(t, y):
        eta, pt, ps = y[:m], y[m : 2 * m], y[2 * m :]
        ep = np.asarray(eps_fn(t), float)
        ph = np.asarray(phi_fn(t), float)
        return np.concatenate([-k_eta * eta - lam * pt, eta + ps + ep, -ps - ep + ph])

    n_steps = int(round(t_end / dt))
    ts = np.arange(n_steps + 1) * dt
    out = np.empty((n_steps + 1, 3 * m))
    out[0] = y
    for k in range(n_steps):
        t = ts[k]
        k1 = f(t, y)
        k2 = f(t + dt / 2, y + dt / 2 * k1)
        k3 = f(t + dt / 2, y + dt / 2 * k2)
        k4 = f(t + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = y
    eps = np.array([eps_fn(t) for t in ts], dtype=float)
    phi = np.array([phi_fn(t) for t in ts], dtype=float)
    sl = lambda a: a[:, None, :]
    return Diagnostics(
        [1], ts, sl(out[:, :m]), sl(out[:, m : 2 * m]), sl(out[:, 2 * m :]), sl(phi), sl(eps)
    )


def subsystem_peak_gains(k_eta: float, lam: float, t_end: float = 40.0, dt: float = 1e-3) -> dict[str, float]:
    """Actual L-infinity bounds of the ``(eta, p_tilde)`` block, for comparison with ``1/mu``.

    ``transient`` is the overshoot ``max_t |exp(A t)|``. At the double root no
    finite constant multiplies ``e^{-mu t}`` since ``|exp(A t)|`` decays like
    ``t e^{-mu t}``. ``input_gain`` integrates the norm of the impulse
    response, an upper bound on the sup-to-sup gain.
    """
    a = np.array([[-k_eta, -lam], [1.0, 0.0]])
    b = np.array([0.0, 1.0])
    rate = mu(k_eta, lam)
    ts = np.arange(0.0, t_end, dt)
    step = expm(a * dt)
    phi = np.eye(2)
    transient, integral = 0.0, 0.0
    for t in ts:
        transient = max(transient, np.linalg.norm(phi, 2))
        integral += np.linalg.norm(phi @ b) * dt
        phi = step @ phi
    return {"mu": rate, "transient": transient, "input_gain": integral, "claimed_gain": 1.0 / rate}
