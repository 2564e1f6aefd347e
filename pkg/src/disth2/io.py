"""JSON files for models, certificates and controllers.

Node indices are 1-based in every file.  Matrices are nested row lists;
``json`` writes floats with ``repr`` so values round-trip exactly.  Blocks
that are omitted from a model file are zero.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .analysis import AnalysisCertificate, MultiplierSet
from .errors import DimensionError, FormatError
from .netmodel import ControllerRealization, NetworkModel, SubsystemRealization, Topology
from .synthesis.central import CentralController

__all__ = [
    "model_to_dict",
    "model_from_dict",
    "certificate_to_dict",
    "certificate_from_dict",
    "controllers_to_dict",
    "controllers_from_dict",
    "central_to_dict",
    "central_from_dict",
    "save_json",
    "load_json",
    "load_model",
    "load_certificate",
    "load_controllers",
]

MODEL_FORMAT = "disth2.model"
CERT_FORMAT = "disth2.certificate"
CTRL_FORMAT = "disth2.controllers"
CENTRAL_FORMAT = "disth2.central-controller"


def _mat(a):
    return np.asarray(a, dtype=float).tolist()


def _arr(v, shape, what):
    try:
        a = np.asarray(v, dtype=float)
        if a.size == 0:
            a = np.zeros(shape)
        return a.reshape(shape)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{what}: expected a {shape[0]}x{shape[1]} matrix") from exc


def _need(d, key, what):
    try:
        return d[key]
    except (KeyError, TypeError, IndexError):
        raise FormatError(f"{what}: missing field {key!r}") from None


def _check_format(d, fmt):
    if not isinstance(d, dict) or d.get("format") != fmt:
        raise FormatError(f"expected a {fmt!r} document")


def save_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


# models ---------------------------------------------------------------------

_DIMS = ("k", "n", "f", "q", "m", "p")


def model_to_dict(model: NetworkModel) -> dict:
    nodes = []
    for i, nd in enumerate(model.nodes):
        blocks = {name: _mat(v) for name, v in nd.blocks().items() if np.any(v)}
        nodes.append({"node": i + 1, **{d: getattr(nd, d) for d in _DIMS}, "blocks": blocks})
    edges = [{"nodes": [i + 1, j + 1], "width": w}
             for (i, j), w in sorted(model.topology.widths.items())]
    return {"format": MODEL_FORMAT, "version": 1, "nodes": nodes, "edges": edges}


def model_from_dict(d: dict) -> NetworkModel:
    """Rebuild a model.

    Raises
    ------
    FormatError
    HypothesisViolated
    """
    _check_format(d, MODEL_FORMAT)
    raw = sorted(_need(d, "nodes", "model"), key=lambda n: _need(n, "node", "node"))
    if [n["node"] for n in raw] != list(range(1, len(raw) + 1)):
        raise FormatError("node numbers must be 1..L")
    widths = {}
    for e in d.get("edges", []):
        pair = _need(e, "nodes", "edge")
        if len(pair) != 2:
            raise FormatError("an edge joins two nodes")
        i, j = int(pair[0]) - 1, int(pair[1]) - 1
        widths[(min(i, j), max(i, j))] = int(_need(e, "width", "edge"))
    try:
        top = Topology(len(raw), widths)
    except (ValueError, KeyError) as exc:
        raise FormatError(f"topology: {exc}") from exc
    nodes = []
    for n in raw:
        dims = {k: int(_need(n, k, f"node {n['node']}")) for k in _DIMS}
        rows = {"T": dims["k"], "S": dims["n"], "z": dims["q"], "y": dims["p"]}
        cols = {"T": dims["k"], "S": dims["n"], "d": dims["f"], "u": dims["m"]}
        blocks = {}
        for name, v in n.get("blocks", {}).items():
            if len(name) != 4 or name[2] not in rows or name[3] not in cols:
                raise FormatError(f"node {n['node']}: unknown block {name!r}")
            blocks[name] = _arr(v, (rows[name[2]], cols[name[3]]), f"node {n['node']} {name}")
        try:
            nodes.append(SubsystemRealization.from_blocks(dims["k"], dims["n"], dims["f"],
                                                          dims["q"], dims["m"], dims["p"],
                                                          **blocks))
        except (DimensionError, TypeError) as exc:
            raise FormatError(f"node {n['node']}: {exc}") from exc
    try:
        return NetworkModel(top, nodes)
    except DimensionError as exc:
        raise FormatError(str(exc)) from exc


def load_model(path) -> NetworkModel:
    return model_from_dict(load_json(path))


# certificates ---------------------------------------------------------------

def _mult_to_dict(mult: MultiplierSet) -> dict:
    return {
        "X11": [{"pair": [i + 1, j + 1], "value": _mat(v)} for (i, j), v in sorted(mult.x11.items())],
        "X12": [{"pair": [i + 1, j + 1], "value": _mat(v)} for (i, j), v in sorted(mult.x12.items())],
    }


def _mult_from_dict(top: Topology, d: dict) -> MultiplierSet:
    fam = {}
    for key in ("X11", "X12"):
        out = {}
        for e in d.get(key, []):
            i, j = (int(v) - 1 for v in _need(e, "pair", key))
            w = top.width(i, j)
            out[(i, j)] = _arr(_need(e, "value", key), (w, w), f"{key}[{i + 1},{j + 1}]")
        fam[key] = out
    try:
        return MultiplierSet(top, fam["X11"], fam["X12"])
    except (ValueError, DimensionError) as exc:
        raise FormatError(f"multipliers: {exc}") from exc


def certificate_to_dict(cert: AnalysisCertificate) -> dict:
    return {"format": CERT_FORMAT, "version": 1, "gamma": float(cert.gamma),
            "X": [_mat(x) for x in cert.X], "rho": [float(r) for r in cert.rho],
            **_mult_to_dict(cert.multipliers)}


def certificate_from_dict(d: dict, model: NetworkModel) -> AnalysisCertificate:
    _check_format(d, CERT_FORMAT)
    X = [_arr(x, (nd.k, nd.k), f"X[{i + 1}]")
         for i, (x, nd) in enumerate(zip(_need(d, "X", "certificate"), model.nodes))]
    rho = [float(r) for r in _need(d, "rho", "certificate")]
    if len(X) != model.L or len(rho) != model.L:
        raise FormatError("certificate needs one X and one rho per node")
    try:
        return AnalysisCertificate(X, rho, _mult_from_dict(model.topology, d),
                                   float(_need(d, "gamma", "certificate")))
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise FormatError(f"certificate: {exc}") from exc


def load_certificate(path, model: NetworkModel) -> AnalysisCertificate:
    return certificate_from_dict(load_json(path), model)


# controllers ----------------------------------------------------------------

def controllers_to_dict(controllers, mode: str, report: dict | None = None) -> dict:
    out = {"format": CTRL_FORMAT, "version": 1, "mode": mode, "controllers": [
        {"node": i + 1, "k": c.k, "m": c.m, "p": c.p,
         "channels": [{"neighbor": j + 1, "width": w} for j, w in c.channel_widths],
         "theta": _mat(c.theta)}
        for i, c in enumerate(controllers)]}
    if report is not None:
        out["report"] = report
    return out


def controllers_from_dict(d: dict) -> list[ControllerRealization]:
    _check_format(d, CTRL_FORMAT)
    out = []
    for c in sorted(_need(d, "controllers", "controllers"), key=lambda c: c["node"]):
        what = f"controller {c.get('node')}"
        cw = tuple((int(_need(e, "neighbor", what)) - 1, int(_need(e, "width", what)))
                   for e in c.get("channels", []))
        k, m, p = (int(_need(c, key, what)) for key in ("k", "m", "p"))
        nC = sum(w for _, w in cw)
        theta = _arr(_need(c, "theta", what), (k + nC + m, k + nC + p), what)
        try:
            out.append(ControllerRealization(theta, k, cw, m, p))
        except DimensionError as exc:
            raise FormatError(f"{what}: {exc}") from exc
    return out


def load_controllers(path) -> list[ControllerRealization]:
    return controllers_from_dict(load_json(path))


def central_to_dict(ctrl: CentralController, report: dict | None = None) -> dict:
    out = {"format": CENTRAL_FORMAT, "version": 1,
           **{k: _mat(getattr(ctrl, k)) for k in ("Ak", "Bk", "Ck", "Dk")}}
    if report is not None:
        out["report"] = report
    return out


def central_from_dict(d: dict) -> CentralController:
    _check_format(d, CENTRAL_FORMAT)
    try:
        mats = {k: np.atleast_2d(np.asarray(_need(d, k, "central controller"), float))
                for k in ("Ak", "Bk", "Ck", "Dk")}
    except (TypeError, ValueError) as exc:
        raise FormatError(f"central controller: {exc}") from exc
    return CentralController(**mats)
