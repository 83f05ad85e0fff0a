"""Trace files: a JSON header line followed by three CSV sections.

Layout::

    # {"format": "delaysync-trace", ..., "scenario": {...}, "hash": "<sha1>"}
    [samples]
    t,agent,p1,p2,...        one row per sample per agent
    [estimator]
    sigma,agent,vhat1,...,neighbors
    [messages]
    sender,receiver,stamp,send_time,delivery_time,p1,...,vhat1,...

``hash`` is the git blob id of everything after the header line. Floats are
written with 17 significant digits so a reload is exact.
"""

from __future__ import annotations

import hashlib
import io
import json
from pathlib import Path

import numpy as np
import yaml

from ..channel import Message
from .scenario import parse_scenario
from .simulate import Trace

FORMAT = "delaysync-trace"
VERSION = 1
SERIES = ("p", "v", "eta", "psi", "vbar", "dvbar", "vr", "e", "u", "q")


def git_blob_sha1(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _sample_columns(m: int, k: int) -> list[str]:
    cols = ["t", "agent"]
    for name in SERIES:
        cols += [f"{name}{d + 1}" for d in range(m)]
    cols += [f"theta_hat{d + 1}" for d in range(k)]
    return cols


def _body(trace: Trace) -> str:
    S, n, m = trace.p.shape
    k = trace.theta_hat.shape[2]
    out = io.StringIO()
    out.write("[samples]\n")
    out.write(",".join(_sample_columns(m, k)) + "\n")
    block = np.concatenate(
        [np.repeat(trace.t, n)[:, None], np.tile(np.arange(1, n + 1), S)[:, None]]
        + [getattr(trace, name).reshape(S * n, m) for name in SERIES]
        + [trace.theta_hat.reshape(S * n, k)],
        axis=1,
    )
    fmt = ["%.17g", "%d"] + ["%.17g"] * (block.shape[1] - 2)
    np.savetxt(out, block, fmt=fmt, delimiter=",")

    out.write("[estimator]\n")
    out.write(",".join(["sigma", "agent"] + [f"vhat{d + 1}" for d in range(m)] + ["neighbors"]) + "\n")
    for sigma, row in enumerate(trace.vhat):
        sets = trace.neighbor_sets[sigma] if sigma < len(trace.neighbor_sets) else None
        for a in range(n):
            nb = "" if sets is None else ";".join(str(x) for x in sets[a])
            out.write(f"{sigma},{a + 1}," + ",".join(_fmt(x) for x in row[a]) + f",{nb}\n")

    out.write("[messages]\n")
    out.write(
        ",".join(
            ["sender", "receiver", "stamp", "send_time", "delivery_time"]
            + [f"p{d + 1}" for d in range(m)]
            + [f"vhat{d + 1}" for d in range(m)]
        )
        + "\n"
    )
    for msg in trace.messages:
        vals = [_fmt(msg.send_time), _fmt(msg.delivery_time)]
        vals += [_fmt(x) for x in msg.position] + [_fmt(x) for x in msg.vhat]
        out.write(f"{msg.sender},{msg.receiver},{msg.stamp}," + ",".join(vals) + "\n")
    return out.getvalue()


def trace_text(trace: Trace) -> str:
    body = _body(trace)
    header = {
        "format": FORMAT,
        "version": VERSION,
        "n": trace.n,
        "max_age": trace.max_age,
        "age_violations": trace.age_violations,
        "scenario": trace.scenario.to_dict(),
        "hash": git_blob_sha1(body.encode()),
    }
    return "# " + json.dumps(header, sort_keys=True) + "\n" + body


def emit_trace(trace: Trace, path: str | Path) -> str:
    """Write ``trace`` to ``path`` and return its content hash."""
    text = trace_text(trace)
    Path(path).write_text(text)
    return json.loads(text[2 : text.index("\n")])["hash"]


class TraceFormatError(ValueError):
    pass


def load_trace(path: str | Path, verify: bool = True) -> Trace:
    text = Path(path).read_text()
    first, _, body = text.partition("\n")
    if not first.startswith("# "):
        raise TraceFormatError(f"{path}:1: missing JSON header line")
    try:
        header = json.loads(first[2:])
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"{path}:1: bad header: {exc}") from exc
    if header.get("format") != FORMAT:
        raise TraceFormatError(f"{path}:1: not a {FORMAT} file")
    if verify and git_blob_sha1(body.encode()) != header["hash"]:
        raise TraceFormatError(f"{path}: content hash mismatch")
    scenario = parse_scenario(yaml.safe_dump(header["scenario"], sort_keys=False), f"{path}:header")

    sections: dict[str, list[str]] = {}
    current = None
    for line in body.splitlines():
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
    for name in ("samples", "estimator", "messages"):
        if name not in sections:
            raise TraceFormatError(f"{path}: missing [{name}] section")

    n, m = header["n"], scenario.m
    cols = sections["samples"][0].split(",")
    k = sum(c.startswith("theta_hat") for c in cols)
    rows = sections["samples"][1:]
    data = np.loadtxt(io.StringIO("\n".join(rows)), delimiter=",", ndmin=2) if rows else np.zeros((0, len(cols)))
    S = data.shape[0] // n
    series = {}
    off = 2
    for name in SERIES:
        series[name] = data[:, off : off + m].reshape(S, n, m)
        off += m
    theta_hat = data[:, off : off + k].reshape(S, n, k)

    est_rows = [r.split(",") for r in sections["estimator"][1:]]
    n_sigma = len(est_rows) // n
    vhat = np.array([[float(x) for x in r[2 : 2 + m]] for r in est_rows]).reshape(n_sigma, n, m)
    neighbor_sets = []
    for s in range(n_sigma):
        chunk = est_rows[s * n : (s + 1) * n]
        if all(r[-1] == "" for r in chunk) and s == n_sigma - 1:
            break
        neighbor_sets.append([[int(x) for x in r[-1].split(";")] if r[-1] else [] for r in chunk])

    messages = []
    for r in sections["messages"][1:]:
        f = r.split(",")
        messages.append(
            Message(
                sender=int(f[0]),
                receiver=int(f[1]),
                stamp=int(f[2]),
                position=np.array([float(x) for x in f[5 : 5 + m]]),
                vhat=np.array([float(x) for x in f[5 + m : 5 + 2 * m]]),
                send_time=float(f[3]),
                delivery_time=float(f[4]),
            )
        )
    return Trace(
        scenario=scenario,
        t=data[::n, 0].copy() if S else np.zeros(0),
        **series,
        theta_hat=theta_hat,
        vhat=vhat,
        neighbor_sets=neighbor_sets,
        messages=messages,
        max_age=header["max_age"],
        age_violations=header["age_violations"],
    )
