"""File formats: MetaImage volumes and vector fields, landmark CSV, run configs, reports.

MetaImage files use a detached text header (``.mhd``) and a raw payload
with x varying fastest.  Payloads are little-endian; ``MET_FLOAT`` is
written whenever it holds the values exactly, ``MET_DOUBLE`` otherwise, so
every write/read pair returns the original bits.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone

import numpy as np

from .errors import FormatError, ParameterError
from .fields import Grid, InverseMap, ScalarField, VectorField
from .params import FlowParams
from .rigid import LandmarkSet

_TYPES = {"MET_FLOAT": "<f4", "MET_DOUBLE": "<f8"}
_REQUIRED = ("NDims", "DimSize", "ElementType", "ElementDataFile")
DISPLACEMENT_NOTE = "inverse map stored as displacement from identity in mm"


# ---------------------------------------------------------------------------
# MetaImage

@dataclass
class MetaHeader:
    dims: tuple
    spacing: tuple
    origin: tuple
    channels: int
    element_type: str
    data_file: str
    extra: dict = field(default_factory=dict)
    lines: dict = field(default_factory=dict)  # header key -> line number

    @property
    def grid(self) -> Grid:
        return Grid(self.dims, self.spacing, self.origin)


def _header_path(path):
    path = os.fspath(path)
    root, ext = os.path.splitext(path)
    if ext.lower() not in (".mhd", ".mha"):
        raise FormatError("MetaImage header must end in .mhd or .mha", path)
    return path, root


def _parse_bool(text, path, line):
    low = text.strip().lower()
    if low in ("true", "1"):
        return True
    if low in ("false", "0"):
        return False
    raise FormatError(f"expected True or False, got {text.strip()!r}", path, line)


def _parse_numbers(text, kind, path, line, key):
    try:
        return tuple(kind(t) for t in text.split())
    except ValueError:
        raise FormatError(f"{key} must be a list of numbers, got {text.strip()!r}", path, line) from None


def read_header(path):
    """Parse a MetaImage header; returns ``(header, payload_offset)``.

    ``payload_offset`` is the byte offset of the pixel data when the payload
    lives in the same file (``ElementDataFile = LOCAL``), else ``None``.
    """
    path, _ = _header_path(path)
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read header: {exc.strerror}", path) from None
    raw, lines, pos = {}, {}, 0
    for lineno, line in enumerate(blob.split(b"\n"), start=1):
        pos += len(line) + 1
        text = line.decode("ascii", errors="replace").strip()
        if not text:
            continue
        if "=" not in text:
            raise FormatError(f"expected 'Key = value', got {text!r}", path, lineno)
        key, value = (t.strip() for t in text.split("=", 1))
        if key in raw:
            raise FormatError(f"duplicate key {key}", path, lineno)
        raw[key], lines[key] = value, lineno
        if key == "ElementDataFile":
            break
    for key in _REQUIRED:
        if key not in raw:
            raise FormatError(f"missing required key {key}", path)

    def ln(key):
        return lines.get(key)

    ndims = _parse_numbers(raw["NDims"], int, path, ln("NDims"), "NDims")
    if len(ndims) != 1 or ndims[0] not in (2, 3):
        raise FormatError(f"NDims must be 2 or 3, got {raw['NDims']}", path, ln("NDims"))
    nd = ndims[0]
    dims = _parse_numbers(raw["DimSize"], int, path, ln("DimSize"), "DimSize")
    if len(dims) != nd or any(n < 2 for n in dims):
        raise FormatError(f"DimSize needs {nd} entries >= 2, got {raw['DimSize']}", path, ln("DimSize"))
    spacing = (1.0,) * nd
    origin = (0.0,) * nd
    for key in ("ElementSpacing", "ElementSize"):
        if key in raw:
            spacing = _parse_numbers(raw[key], float, path, ln(key), key)
            if len(spacing) != nd or any(not s > 0 for s in spacing):
                raise FormatError(f"{key} needs {nd} positive entries", path, ln(key))
            break
    for key in ("Offset", "Origin", "Position"):
        if key in raw:
            origin = _parse_numbers(raw[key], float, path, ln(key), key)
            if len(origin) != nd:
                raise FormatError(f"{key} needs {nd} entries", path, ln(key))
            break
    for key in ("ElementByteOrderMSB", "BinaryDataByteOrderMSB"):
        if key in raw and _parse_bool(raw[key], path, ln(key)):
            raise FormatError(f"big-endian payloads are not supported ({key} = True)", path, ln(key))
    if "CompressedData" in raw and _parse_bool(raw["CompressedData"], path, ln("CompressedData")):
        raise FormatError("compressed payloads are not supported", path, ln("CompressedData"))
    if "TransformMatrix" in raw:
        m = np.array(_parse_numbers(raw["TransformMatrix"], float, path, ln("TransformMatrix"), "TransformMatrix"))
        if m.size != nd * nd or not np.array_equal(m.reshape(nd, nd), np.eye(nd)):
            raise FormatError("only identity TransformMatrix is supported", path, ln("TransformMatrix"))
    channels = 1
    if "ElementNumberOfChannels" in raw:
        (channels,) = _parse_numbers(raw["ElementNumberOfChannels"], int, path,
                                     ln("ElementNumberOfChannels"), "ElementNumberOfChannels")
        if channels < 1:
            raise FormatError("ElementNumberOfChannels must be positive", path, ln("ElementNumberOfChannels"))
    etype = raw["ElementType"]
    if etype not in _TYPES:
        raise FormatError(f"unsupported ElementType {etype} (expected MET_FLOAT or MET_DOUBLE)",
                          path, ln("ElementType"))
    known = {"NDims", "DimSize", "ElementSpacing", "ElementSize", "Offset", "Origin", "Position",
             "ElementType", "ElementDataFile", "ElementNumberOfChannels"}
    extra = {k: v for k, v in raw.items() if k not in known}
    header = MetaHeader(dims, spacing, origin, channels, etype, raw["ElementDataFile"], extra, lines)
    offset = pos if raw["ElementDataFile"] == "LOCAL" else None
    return header, offset


def _read_payload(path, header, offset):
    dtype = np.dtype(_TYPES[header.element_type])
    count = int(np.prod(header.dims)) * header.channels
    if offset is None:
        data_path = os.path.join(os.path.dirname(os.path.abspath(path)), header.data_file)
        try:
            with open(data_path, "rb") as fh:
                blob = fh.read()
        except OSError as exc:
            raise FormatError(f"cannot read payload {header.data_file}: {exc.strerror}", path) from None
    else:
        with open(path, "rb") as fh:
            blob = fh.read()[offset:]
        data_path = path
    expected = count * dtype.itemsize
    if len(blob) != expected:
        raise FormatError(
            f"payload {os.path.basename(data_path)} has {len(blob)} bytes, header "
            f"DimSize {' '.join(map(str, header.dims))} x {header.channels} channel(s) of "
            f"{header.element_type} needs {expected} ({count} values, found "
            f"{len(blob) / dtype.itemsize:g})", path, header.lines.get("DimSize"))
    flat = np.frombuffer(blob, dtype=dtype).astype(float)
    # x fastest: reverse the spatial axes, channels innermost
    shape = tuple(reversed(header.dims)) + (header.channels,)
    arr = flat.reshape(shape)
    nd = len(header.dims)
    arr = arr.transpose(tuple(reversed(range(nd))) + (nd,))
    return np.ascontiguousarray(arr)


def _element_type(values, force=None):
    if force is not None:
        if force not in _TYPES:
            raise ParameterError(f"element type must be one of {sorted(_TYPES)}")
        return force
    with np.errstate(over="ignore"):
        single = values.astype(np.float32)
    if np.array_equal(single.astype(float), values, equal_nan=True):
        return "MET_FLOAT"
    return "MET_DOUBLE"


def _write_meta(path, grid, values, channels, element_type=None, extra=None):
    path, root = _header_path(path)
    if not np.all(np.isfinite(values)):
        raise ParameterError("refusing to write non-finite voxel values")
    etype = _element_type(values, element_type)
    data_name = os.path.basename(root) + ".raw"
    lines = [
        "ObjectType = Image",
        f"NDims = {grid.ndims}",
        "DimSize = " + " ".join(str(n) for n in grid.dims),
        "ElementSpacing = " + " ".join(repr(s) for s in grid.spacing),
        "Offset = " + " ".join(repr(o) for o in grid.origin),
    ]
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value}")
    if channels > 1:
        lines.append(f"ElementNumberOfChannels = {channels}")
    lines += [f"ElementType = {etype}", "ElementByteOrderMSB = False", f"ElementDataFile = {data_name}"]
    nd = grid.ndims
    arr = values.reshape(tuple(grid.dims) + (channels,))
    arr = arr.transpose(tuple(reversed(range(nd))) + (nd,))
    payload = np.ascontiguousarray(arr, dtype=_TYPES[etype]).tobytes()
    with open(os.path.join(os.path.dirname(os.path.abspath(path)), data_name), "wb") as fh:
        fh.write(payload)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_volume(path) -> ScalarField:
    header, offset = read_header(path)
    if header.channels != 1:
        raise FormatError(f"expected a scalar volume, file has {header.channels} channels", path)
    values = _read_payload(path, header, offset)[..., 0]
    return ScalarField(header.grid, values)


def write_volume(f: ScalarField, path, element_type=None):
    _write_meta(path, f.grid, f.values, 1, element_type)


def write_vector_field(item, path, element_type=None):
    """Write a :class:`VectorField` as is, or an :class:`InverseMap` as its displacement."""
    if isinstance(item, InverseMap):
        values, kind = item.displacement(), "displacement"
        extra = {"FieldKind": kind, "Comment": DISPLACEMENT_NOTE}
    elif isinstance(item, VectorField):
        values = item.values
        extra = {"FieldKind": "vector"}
    else:
        raise ParameterError(f"cannot write {type(item).__name__} as a vector field")
    _write_meta(path, item.grid, values, item.grid.ndims, element_type, extra)


def _read_channels(path):
    header, offset = read_header(path)
    nd = len(header.dims)
    if header.channels != nd:
        raise FormatError(f"expected {nd} channels for a {nd}D vector field, file has {header.channels}", path)
    return header, _read_payload(path, header, offset)


def read_vector_field(path) -> VectorField:
    header, values = _read_channels(path)
    return VectorField(header.grid, values)


def read_map(path) -> InverseMap:
    """Read a displacement file back into an inverse map (identity plus displacement)."""
    header, values = _read_channels(path)
    kind = header.extra.get("FieldKind", "displacement")
    if kind != "displacement":
        raise FormatError(f"file holds a {kind} field, not a map displacement", path)
    grid = header.grid
    return InverseMap(grid, grid.coordinates() + values)


# ---------------------------------------------------------------------------
# landmarks

def read_landmarks(path) -> LandmarkSet:
    """Read ``id,frame,x,y[,z]`` rows; ids pair a ``source`` row with a ``target`` row."""
    path = os.fspath(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read landmarks: {exc.strerror}", path) from None
    with fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError("empty landmark file", path, 1)
    head = [h.strip().lower() for h in rows[0]]
    if head not in (["id", "frame", "x", "y"], ["id", "frame", "x", "y", "z"]):
        raise FormatError(f"header must be id,frame,x,y[,z], got {','.join(rows[0])}", path, 1)
    nd = len(head) - 2
    seen, order = {}, []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(head):
            raise FormatError(f"expected {len(head)} columns, got {len(row)}", path, lineno)
        ident, frame = row[0].strip(), row[1].strip().lower()
        if not ident:
            raise FormatError("empty landmark id", path, lineno)
        if frame not in ("source", "target"):
            raise FormatError(f"frame must be 'source' or 'target', got {row[1].strip()!r}", path, lineno)
        try:
            point = [float(c) for c in row[2:]]
        except ValueError:
            raise FormatError(f"non-numeric coordinate in {row[2:]}", path, lineno) from None
        if not all(math.isfinite(c) for c in point):
            raise FormatError("coordinates must be finite", path, lineno)
        if (ident, frame) in seen:
            raise FormatError(f"duplicate {frame} row for id {ident} (first on line {seen[(ident, frame)][1]})",
                              path, lineno)
        seen[(ident, frame)] = (point, lineno)
        if ident not in order:
            order.append(ident)
    src, tgt = [], []
    for ident in order:
        for frame in ("source", "target"):
            if (ident, frame) not in seen:
                other = "target" if frame == "source" else "source"
                raise FormatError(f"id {ident} has a {other} row but no {frame} row", path,
                                  seen[(ident, other)][1])
        src.append(seen[(ident, "source")][0])
        tgt.append(seen[(ident, "target")][0])
    ids = tuple(int(i) if i.lstrip("-").isdigit() else i for i in order)
    src = np.array(src, dtype=float).reshape(-1, nd)
    tgt = np.array(tgt, dtype=float).reshape(-1, nd)
    return LandmarkSet(src, tgt, ids)


def write_landmarks(landmarks: LandmarkSet, path):
    axes = "xyz"[: landmarks.ndims]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "frame", *axes])
        for ident, s, t in zip(landmarks.ids, landmarks.source, landmarks.target):
            w.writerow([ident, "source", *(repr(float(c)) for c in s)])
            w.writerow([ident, "target", *(repr(float(c)) for c in t)])


# ---------------------------------------------------------------------------
# run configuration

MODES = ("volume-preserving", "unconstrained")


@dataclass(frozen=True)
class RunConfig:
    """Flow parameters plus the run-level switches of ``avocado register``.

    ``mode`` is ``volume-preserving`` (alpha = 1), ``unconstrained``
    (alpha = 0), ``custom`` (use ``alpha_incomp`` as given) or a path to a
    MetaImage alpha field.
    """

    params: FlowParams = field(default_factory=FlowParams)
    mode: str = "volume-preserving"
    skip_rigid: bool = False
    skip_landmark: bool = False
    skip_intensity: bool = False
    seed: int = 0
    out: str = None

    def flow_params(self, base_dir=".") -> FlowParams:
        if self.mode == "volume-preserving":
            return self.params.with_(alpha_incomp=1.0)
        if self.mode == "unconstrained":
            return self.params.with_(alpha_incomp=0.0)
        if self.mode == "custom":
            return self.params
        alpha = read_volume(os.path.join(base_dir, self.mode))
        return self.params.with_(alpha_incomp=alpha)

    def to_dict(self) -> dict:
        d = {}
        for f in fields(FlowParams):
            d[f.name] = getattr(self.params, f.name)
        if not isinstance(d["alpha_incomp"], (int, float)):
            d["alpha_incomp"] = 1.0
        d["alpha_incomp"] = float(d["alpha_incomp"])
        for name in ("mode", "skip_rigid", "skip_landmark", "skip_intensity", "seed", "out"):
            d[name] = getattr(self, name)
        return d


_RUN_KEYS = {"mode": str, "skip_rigid": bool, "skip_landmark": bool, "skip_intensity": bool,
             "seed": int, "out": (str, type(None))}


def _check_type(key, value, kind):
    if kind is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise ParameterError(f"config key {key!r} has the wrong type ({type(value).__name__})")


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ParameterError("config must be a JSON object")
    param_types = {f.name: f.type for f in fields(FlowParams)}
    flow, run = {}, {}
    for key, value in data.items():
        if key in _RUN_KEYS:
            _check_type(key, value, _RUN_KEYS[key])
            run[key] = value
        elif key in param_types:
            kind = {"float": float, "int": int, "str": str, "object": float}[param_types[key]]
            _check_type(key, value, kind)
            flow[key] = float(value) if kind is float else value
        else:
            raise ParameterError(f"unknown config key {key!r}")
    mode = run.get("mode", "volume-preserving")
    if not mode:
        raise ParameterError("config key 'mode' must not be empty")
    if "alpha_incomp" in flow and mode in MODES and flow["alpha_incomp"] != (1.0 if mode == MODES[0] else 0.0):
        raise ParameterError(f"alpha_incomp={flow['alpha_incomp']} contradicts mode {mode!r}; use mode 'custom'")
    if mode in MODES:
        flow["alpha_incomp"] = 1.0 if mode == MODES[0] else 0.0
    return RunConfig(params=FlowParams(**flow), **run)


def read_config(path) -> RunConfig:
    path = os.fspath(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read config: {exc.strerror}", path) from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    try:
        return config_from_dict(data)
    except ParameterError as exc:
        raise FormatError(str(exc), path) from None


def write_config(cfg: RunConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# reports and curves

TIMESTAMP_KEY = "generated_at"


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return "nan" if math.isnan(value) else repr(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    text = str(value)
    if "\n" in text:
        raise ParameterError("report values must be single-line")
    return text


def _unfmt(text):
    text = text.strip()
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        return [_unfmt(t) for t in inner.split(",")] if inner else []
    if text in ("true", "false"):
        return text == "true"
    if text == "none":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def write_report(entries: dict, path, timestamp=None):
    """``key = value`` lines; the timestamp sits alone on the ``generated_at`` line."""
    stamp = timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
    lines = ["# avocado report", f"{TIMESTAMP_KEY} = {stamp}"]
    for key, value in entries.items():
        if not key or "=" in key or key.strip() != key:
            raise ParameterError(f"invalid report key {key!r}")
        lines.append(f"{key} = {_fmt(value)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_report(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if " = " not in line:
                raise FormatError(f"expected 'key = value', got {line!r}", path, lineno)
            key, value = line.split(" = ", 1)
            out[key] = value if key == TIMESTAMP_KEY else _unfmt(value)
    return out


CURVE_COLUMNS = ("sigma", "mean_perturbation", "mean_tre", "std_tre", "runs", "failures")


def write_curve(curve, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for p in curve:
            w.writerow([_fmt(getattr(p, c)) for c in CURVE_COLUMNS])


def read_curve(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CURVE_COLUMNS:
        raise FormatError("not a perturbation curve file", path, 1)
    return [dict(zip(CURVE_COLUMNS, (_unfmt(c) for c in row))) for row in rows[1:] if row]
