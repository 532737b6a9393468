"""Trajectory CSV and model JSON persistence.

CSV: header ``t,x1,...,xn[,u1,...,um]``, comma separated, ``.`` decimal
point. Floats are written in shortest round-trip form, so reading and
re-writing a file preserves every value exactly. The time column may hold
integer step indices.

Model JSON: canonical key order, two-space indent, shortest round-trip
floats. Loading then saving a file reproduces it byte for byte.
"""

import csv
import datetime
import hashlib
import io as _io
import json
import sys

import numpy as np

from .control import BilinearLiftedModel
from .embed import PolynomialDictionary
from .exceptions import ParseError, ValidationError
from .koopfit import CONTINUOUS, KoopmanModel, SpectralModel
from .systems import Trajectory

__all__ = [
    "SCHEMA_VERSION",
    "format_float",
    "write_trajectory",
    "read_trajectory",
    "trajectory_to_csv",
    "write_rows",
    "save_model",
    "load_model",
    "model_to_json",
    "model_from_json",
    "file_digest",
]

SCHEMA_VERSION = "1.0"


def format_float(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _open_out(target):
    if target is None or target == "-":
        return sys.stdout, False
    if hasattr(target, "write"):
        return target, False
    return open(target, "w", newline=""), True


def write_rows(target, header, rows):
    """Write a CSV with a header line and numeric rows."""
    fh, close = _open_out(target)
    try:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_float(v) for v in row) + "\n")
    finally:
        if close:
            fh.close()


def trajectory_to_csv(traj):
    buf = _io.StringIO()
    write_trajectory(traj, buf)
    return buf.getvalue()


def write_trajectory(traj, target):
    n, m = traj.n_states, traj.n_inputs
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
    integer_time = np.issubdtype(traj.times.dtype, np.integer)
    rows = []
    for k in range(len(traj)):
        t = int(traj.times[k]) if integer_time else float(traj.times[k])
        row = [t] + [float(v) for v in traj.states[k]]
        if m:
            row += [float(v) for v in traj.inputs[k]]
        rows.append(row)
    write_rows(target, header, rows)


def read_trajectory(source):
    """Parse a trajectory CSV (path or open text stream)."""
    try:
        if hasattr(source, "read"):
            text = source.read()
        else:
            with open(source, newline="") as fh:
                text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {source}: {exc}") from exc
    reader = csv.reader(_io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError("empty trajectory file") from None
    if not header or header[0] != "t":
        raise ParseError("first column must be 't'")
    xs = [i for i, h in enumerate(header) if h.startswith("x")]
    us = [i for i, h in enumerate(header) if h.startswith("u")]
    if not xs or len(xs) + len(us) + 1 != len(header):
        raise ParseError(f"unrecognized header {header}")
    times, states, inputs = [], [], []
    integer_time = True
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            tok = row[0].strip()
            if integer_time and tok.lstrip("-").isdigit():
                times.append(int(tok))
            else:
                integer_time = False
                times.append(float(tok))
            states.append([float(row[i]) for i in xs])
            if us:
                inputs.append([float(row[i]) for i in us])
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from exc
    if not times:
        raise ParseError("trajectory file has no samples")
    times = np.array(times, dtype=int if integer_time else float)
    try:
        return Trajectory(times, np.array(states), np.array(inputs) if us else None)
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _matrix_to_json(M):
    M = np.asarray(M)
    out = {"shape": list(M.shape)}
    if np.iscomplexobj(M):
        out["real"] = M.real.tolist()
        out["imag"] = M.imag.tolist()
    else:
        out["data"] = M.astype(float).tolist()
    return out


def _matrix_from_json(d):
    shape = tuple(d["shape"])
    if "data" in d:
        M = np.array(d["data"], dtype=float)
    else:
        re = np.array(d["real"], dtype=float)
        # assign parts separately: re + 1j * im would turn -0.0 into 0.0
        M = np.empty(re.shape, dtype=complex)
        M.real = re
        M.imag = np.array(d["imag"], dtype=float)
    return M.reshape(shape)


def _dictionary_to_json(dictionary):
    if not isinstance(dictionary, PolynomialDictionary):
        raise ValidationError("only polynomial dictionaries can be serialized")
    return {
        "type": "polynomial",
        "name": dictionary.name,
        "input_dim": dictionary.input_dim,
        "exponents": dictionary.exponent_table.tolist(),
        "coefficients": _matrix_to_json(dictionary.coefficient_table),
        "labels": list(dictionary.feature_labels),
    }


def _dictionary_from_json(d):
    if d.get("type") != "polynomial":
        raise ParseError(f"unsupported dictionary type {d.get('type')!r}")
    E = np.array(d["exponents"], dtype=int).reshape(-1, int(d["input_dim"]))
    return PolynomialDictionary(E, _matrix_from_json(d["coefficients"]), d["labels"], d["name"])


def _model_kind(model):
    if isinstance(model, SpectralModel):
        return "spectral"
    if isinstance(model, BilinearLiftedModel):
        return "bilinear"
    if model.kind == CONTINUOUS:
        return "generator"
    return "dmd" if model.info.get("method") in ("dmd", "hankel") else "edmd"


def _default_provenance(command=None, data_paths=()):
    digests = {}
    for p in data_paths:
        try:
            digests[str(p)] = file_digest(p)
        except OSError:
            pass
    return {
        "command": command if command is not None else " ".join(sys.argv),
        "data_sha256": digests,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
    }


def model_to_json(model, provenance=None):
    """Canonical JSON text for a model."""
    kind = _model_kind(model)
    if provenance is None:
        provenance = getattr(model, "info", {}).get("provenance") or _default_provenance()
    doc = {"schema_version": SCHEMA_VERSION, "kind": kind, "provenance": provenance}
    if kind == "spectral":
        doc["dictionary"] = _dictionary_to_json(model.dictionary)
        doc["matrices"] = {
            "Lambda": _matrix_to_json(model.transition),
            "W": _matrix_to_json(model.eigenfunction_coeffs),
            "V": _matrix_to_json(model.modes),
        }
        doc["time_kind"] = model.time_kind
        doc["block_sizes"] = list(model.block_sizes)
        doc["ts"] = model.ts
    elif kind == "bilinear":
        doc["dictionary"] = _dictionary_to_json(model.lifting)
        doc["matrices"] = {
            "A": _matrix_to_json(model.A),
            "B": [_matrix_to_json(b) for b in model.B],
            "V": _matrix_to_json(model.V),
        }
        doc["time_kind"] = CONTINUOUS
        doc["ts"] = model.info.get("ts")
    else:
        doc["dictionary"] = _dictionary_to_json(model.dictionary)
        doc["matrices"] = {"A": _matrix_to_json(model.A), "C": _matrix_to_json(model.C)}
        doc["time_kind"] = model.kind
        doc["ts"] = model.ts
        doc["diagnostics"] = {
            "method": model.info.get("method", kind),
            "residuals": model.info.get("residuals", {}),
            "status": list(model.status),
        }
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def model_from_json(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid model JSON: {exc}") from exc
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema_version {doc.get('schema_version')!r}")
    try:
        kind = doc["kind"]
        dictionary = _dictionary_from_json(doc["dictionary"])
        mats = doc["matrices"]
        if kind == "spectral":
            model = SpectralModel(
                _matrix_from_json(mats["Lambda"]), _matrix_from_json(mats["W"]),
                _matrix_from_json(mats["V"]), dictionary, doc["time_kind"], doc.get("ts"),
                doc.get("block_sizes"),
            )
        elif kind == "bilinear":
            model = BilinearLiftedModel(
                _matrix_from_json(mats["A"]), [_matrix_from_json(b) for b in mats["B"]],
                _matrix_from_json(mats["V"]), dictionary, {"ts": doc.get("ts")},
            )
        elif kind in ("dmd", "edmd", "generator"):
            diag = doc.get("diagnostics", {})
            model = KoopmanModel(
                dictionary, _matrix_from_json(mats["A"]), _matrix_from_json(mats["C"]),
                doc["time_kind"], doc.get("ts"), list(diag.get("status", [])),
            )
            model.info["method"] = diag.get("method", kind)
            model.info["residuals"] = diag.get("residuals", {})
        else:
            raise ParseError(f"unknown model kind {kind!r}")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"malformed model file: {exc}") from exc
    model.info["provenance"] = doc.get("provenance")
    return model


def save_model(model, path, provenance=None):
    text = model_to_json(model, provenance)
    with open(path, "w") as fh:
        fh.write(text)
    return text


def load_model(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read model {path}: {exc}") from exc
    return model_from_json(text)
