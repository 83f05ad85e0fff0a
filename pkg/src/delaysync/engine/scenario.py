"""Scenario files: YAML text describing one run.

Every field is optional except the graph; defaults reproduce the reference
ten-arm setup. Errors carry the file line of the offending field.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from ..analysis import GainSet
from ..channel import CommParams
from ..graphs import WeightedDigraph
from ..plant import DoubleIntegrator, EulerLagrangeArm, ManipulatorParams, Plant
from ..syncterm import Extrapolation

BUNDLED = Path(__file__).resolve().parent.parent / "scenarios"


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class GraphSpec:
    n: int
    edges: tuple[tuple[int, int, float], ...]
    normalize: bool = True


@dataclass(frozen=True)
class CommSpec:
    T: float = 0.1
    k_star: int = 10
    h: float = 0.25
    h_star_override: Optional[float] = None
    delay_model: str = "lookback"
    lookback: int = 10
    drop_prob: float = 0.0
    delay_range: tuple[float, float] = (0.15, 0.25)
    seed: int = 0


@dataclass(frozen=True)
class GainSpec:
    # scalars apply to every agent; tuples are per agent
    lam: Any = 13.0
    k_eta: Any = None  # None: 2*sqrt(lam)
    k_p: Any = 2.0
    k_d: Any = 2.0
    k_e: Any = 10.0
    Pi: float = 0.3


@dataclass(frozen=True)
class PlantSpec:
    kind: str = "manipulator"
    m1: float = 1.0
    m2: float = 1.0
    l1: float = 0.5
    l2: float = 0.5
    lc1: float = 0.25
    lc2: float = 0.25
    I1: float = 0.1
    I2: float = 0.1
    g: float = 9.81
    dim: int = 2


@dataclass(frozen=True)
class InitialSpec:
    p: Optional[tuple] = None
    v: Optional[tuple] = None
    psi: Optional[tuple] = None  # None: psi(0) = p(0)
    eta: Optional[tuple] = None
    vhat: Optional[tuple] = None
    theta_hat: Any = None  # None: zeros; "true": exact parameters


@dataclass(frozen=True)
class Scenario:
    graph: GraphSpec
    name: str = "scenario"
    leaders: tuple[int, ...] = ()
    v_d: Optional[tuple[float, ...]] = None
    estimator: bool = True
    comm: CommSpec = field(default_factory=CommSpec)
    gains: GainSpec = field(default_factory=GainSpec)
    extrapolation: str = Extrapolation.STAMPED.value
    plant: PlantSpec = field(default_factory=PlantSpec)
    initial: InitialSpec = field(default_factory=InitialSpec)
    duration: float = 60.0
    dt: float = 1e-3
    sample_dt: float = 0.01

    # ---- derived objects
    def weighted_graph(self) -> WeightedDigraph:
        return WeightedDigraph.from_edges(self.graph.n, self.graph.edges, normalize=self.graph.normalize)

    def comm_params(self) -> CommParams:
        return CommParams(self.comm.T, self.comm.k_star, self.comm.h)

    @property
    def h_star(self) -> float:
        """Value used by the gain checks: the override if given, else ``k* T + h``."""
        if self.comm.h_star_override is not None:
            return self.comm.h_star_override
        return self.comm_params().h_star

    @property
    def m(self) -> int:
        return 2 if self.plant.kind == "manipulator" else self.plant.dim

    @property
    def effective_leaders(self) -> tuple[int, ...]:
        """Every agent acts as a leader when the desired velocity is known to all."""
        return tuple(range(1, self.graph.n + 1)) if not self.estimator else self.leaders

    def gain_set(self) -> GainSet:
        n = self.graph.n
        per = lambda x: np.broadcast_to(np.asarray(x, dtype=float), (n,)).copy()
        lam = per(self.gains.lam)
        k_eta = 2.0 * np.sqrt(lam) if self.gains.k_eta is None else per(self.gains.k_eta)
        return GainSet(k_eta, lam, per(self.gains.k_p), per(self.gains.k_d), per(self.gains.k_e))

    def make_plant(self) -> Plant:
        if self.plant.kind == "manipulator":
            pp = self.plant
            mp = ManipulatorParams(pp.m1, pp.m2, pp.l1, pp.l2, pp.lc1, pp.lc2, pp.I1, pp.I2, pp.g)
            return EulerLagrangeArm.identical(self.graph.n, mp)
        return DoubleIntegrator(self.plant.dim)

    def steps_per_period(self) -> int:
        return int(round(self.comm.T / self.dt))

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, comm=replace(self.comm, seed=int(seed)))

    # ---- serialization
    def to_dict(self) -> dict:
        def clean(x):
            if isinstance(x, tuple):
                return [clean(y) for y in x]
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items()}
            return x

        return clean(asdict(self))


# ------------------------------------------------------------------ parsing


def _line_index(node, path=(), out=None) -> dict[tuple, int]:
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            _line_index(v, path + (k.value,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, path + (i,), out)
    return out


class _Ctx:
    def __init__(self, source: str, lines: dict[tuple, int]):
        self.source, self.lines = source, lines

    def fail(self, path: tuple, msg: str):
        p = path
        while p and p not in self.lines:
            p = p[:-1]
        line = self.lines.get(p, 1)
        dotted = ".".join(str(x) for x in path) or "<root>"
        raise ScenarioError(f"{self.source}:{line}: {dotted}: {msg}")


def _tuplify(x):
    if isinstance(x, list):
        return tuple(_tuplify(y) for y in x)
    return x


def _build(cls, data, ctx: _Ctx, path: tuple):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        ctx.fail(path, f"expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        ctx.fail(path + (sorted(unknown)[0],), "unknown field")
    kwargs = {}
    for name, f in known.items():
        if name not in data:
            continue
        val = data[name]
        sub = {"graph": GraphSpec, "comm": CommSpec, "gains": GainSpec, "plant": PlantSpec, "initial": InitialSpec}
        if cls is Scenario and name in sub:
            kwargs[name] = _build(sub[name], val, ctx, path + (name,))
            continue
        kwargs[name] = _coerce(val, f, ctx, path + (name,))
    try:
        return cls(**kwargs)
    except TypeError as exc:
        ctx.fail(path, str(exc))


def _coerce(val, f, ctx: _Ctx, path):
    t = str(f.type)
    try:
        if val is None:
            return None
        if t in ("int", "Optional[int]"):
            if isinstance(val, bool) or int(val) != val:
                raise ValueError(f"expected an integer, got {val!r}")
            return int(val)
        if t in ("float", "Optional[float]"):
            if isinstance(val, bool):
                raise ValueError(f"expected a number, got {val!r}")
            return float(val)
        if t == "bool":
            if not isinstance(val, bool):
                raise ValueError(f"expected true/false, got {val!r}")
            return val
        if t == "str":
            return str(val)
        if "tuple[int, int, float]" in t:
            out = []
            for k, e in enumerate(val):
                if not isinstance(e, list) or len(e) not in (2, 3):
                    ctx.fail(path + (k,), "edge must be [from, to] or [from, to, weight]")
                out.append((int(e[0]), int(e[1]), float(e[2]) if len(e) == 3 else 1.0))
            return tuple(out)
        if "tuple[int" in t:
            return tuple(int(x) for x in val)
        if "tuple[float" in t:
            return tuple(float(x) for x in val)
        if isinstance(val, list):
            return _tuplify([_num(x) for x in val])
        return val
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        ctx.fail(path, str(exc))


def _num(x):
    if isinstance(x, list):
        return [_num(y) for y in x]
    if isinstance(x, str):
        return x
    return float(x)


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark else 1
        raise ScenarioError(f"{source}:{line}: {getattr(exc, 'problem', exc)}") from exc
    if node is None:
        raise ScenarioError(f"{source}:1: empty scenario")
    ctx = _Ctx(source, _line_index(node))
    if "graph" not in (data or {}):
        ctx.fail(("graph",), "missing required section")
    sc = _build(Scenario, data, ctx, ())
    validate(sc, ctx)
    return sc


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.exists():
        for cand in (BUNDLED / path.name, BUNDLED / (path.name + ".scn")):
            if cand.exists():
                path = cand
                break
    return parse_scenario(path.read_text(), str(path))


def dump_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(sc.to_dict(), sort_keys=False, default_flow_style=None)


def save_scenario(sc: Scenario, path: str | Path) -> None:
    Path(path).write_text(dump_scenario(sc))


def bundled(name: str) -> Scenario:
    return load_scenario(BUNDLED / (name if name.endswith(".scn") else name + ".scn"))


# ------------------------------------------------------------------ validation


def _shape_ok(x, n, m) -> bool:
    a = np.asarray(x, dtype=float)
    return a.shape == (n, m)


def validate(sc: Scenario, ctx: _Ctx | None = None) -> None:
    ctx = ctx or _Ctx("<scenario>", {})
    n = sc.graph.n
    if n < 1:
        ctx.fail(("graph", "n"), "need at least one agent")
    try:
        sc.weighted_graph()
    except ValueError as exc:
        ctx.fail(("graph", "edges"), str(exc))
    bad = [l for l in sc.leaders if not 1 <= l <= n]
    if bad:
        ctx.fail(("leaders",), f"leaders {bad} are not agents 1..{n}")
    if (sc.leaders or not sc.estimator) and sc.v_d is None:
        ctx.fail(("v_d",), "a desired velocity is required with leaders or with the estimator disabled")
    if sc.v_d is not None and len(sc.v_d) != sc.m:
        ctx.fail(("v_d",), f"expected {sc.m} components, got {len(sc.v_d)}")
    try:
        sc.comm_params()
    except ValueError as exc:
        ctx.fail(("comm",), str(exc))
    c = sc.comm
    if c.delay_model not in ("direct", "lookback"):
        ctx.fail(("comm", "delay_model"), f"unknown delay model {c.delay_model!r}")
    lo, hi = c.delay_range
    if not 0 <= lo <= hi or hi > c.h + 1e-12:
        ctx.fail(("comm", "delay_range"), f"need 0 <= lo <= hi <= h={c.h}, got [{lo}, {hi}]")
    if not 0 <= c.drop_prob < 1:
        ctx.fail(("comm", "drop_prob"), "must lie in [0, 1)")
    if sc.dt <= 0:
        ctx.fail(("dt",), "must be positive")
    ratio = c.T / sc.dt
    if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
        ctx.fail(("dt",), f"dt={sc.dt} does not divide the sampling period T={c.T}")
    sr = sc.sample_dt / sc.dt
    if abs(sr - round(sr)) > 1e-9 * sr or round(sr) < 1:
        ctx.fail(("sample_dt",), f"sample_dt={sc.sample_dt} is not a multiple of dt={sc.dt}")
    if sc.duration < 3 * sc.comm_params().h_star - 1e-12:
        ctx.fail(("duration",), f"duration {sc.duration} is shorter than 3 h* = {3 * sc.comm_params().h_star}")
    try:
        Extrapolation(sc.extrapolation)
    except ValueError:
        ctx.fail(("extrapolation",), f"unknown variant {sc.extrapolation!r}; choose from {[e.value for e in Extrapolation]}")
    if sc.plant.kind not in ("manipulator", "double-integrator"):
        ctx.fail(("plant", "kind"), f"unknown plant {sc.plant.kind!r}")
    for name in ("lam", "k_eta", "k_p", "k_d", "k_e"):
        val = getattr(sc.gains, name)
        if val is None:
            continue
        arr = np.asarray(val, dtype=float)
        if arr.ndim > 1 or (arr.ndim == 1 and arr.shape[0] != n):
            ctx.fail(("gains", name), f"give a scalar or {n} values")
        if np.any(arr <= 0):
            ctx.fail(("gains", name), "gains must be positive")
    if sc.gains.Pi <= 0:
        ctx.fail(("gains", "Pi"), "adaptation gain must be positive")
    for name in ("p", "v", "psi", "eta", "vhat"):
        val = getattr(sc.initial, name)
        if val is not None and not _shape_ok(val, n, sc.m):
            ctx.fail(("initial", name), f"expected {n} rows of {sc.m} values")
    th = sc.initial.theta_hat
    if th is not None and th != "true" and np.asarray(th, float).shape not in ((5,), (n, 5)):
        ctx.fail(("initial", "theta_hat"), "give 'true', 5 values, or one row of 5 per agent")


def rng_initial(n: int, m: int, seed: int, p_scale: float = 1.0, v_scale: float = 0.5) -> dict:
    """Deterministic random initial positions/velocities (for generating bundled files)."""
    rng = np.random.default_rng(seed)
    return {
        "p": np.round(rng.uniform(-p_scale, p_scale, (n, m)), 3).tolist(),
        "v": np.round(rng.uniform(-v_scale, v_scale, (n, m)), 3).tolist(),
    }


def horizon_stamps(sc: Scenario) -> int:
    """Number of stamps the delay sequences must cover."""
    return int(math.ceil(sc.duration / sc.comm.T)) + sc.comm.k_star + sc.comm.lookback + 2
