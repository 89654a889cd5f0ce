"""Tensor file I/O and activation dump manifests.

Tensors travel as NPY files (versions 1.0 and 2.0 read, 1.0 written) so any
ML runtime can produce or consume them. A dump is a JSON manifest naming
per-sample, per-layer query/key tensor files plus the model geometry:

    { "model": {"layers": int, "heads": int, "hidden": int},
      "samples": [ { "id": str,
          "layers": [ {"index": int, "query": "path.npy", "key": "path.npy"} ] } ] }

All tensors are widened to 64-bit floats on load regardless of the on-disk
dtype. Dumps are treated as opaque: nothing here assumes where in the
attention computation the states were captured, and producers should
document their capture point.
"""

from __future__ import annotations

import ast
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    ManifestError,
    NpyFormatError,
    TruncationError,
    UnsupportedLayoutError,
    ValidationError,
)

NPY_MAGIC = b"\x93NUMPY"
_SUPPORTED_DESCR = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite, C-contiguous, 2-D float64 array or raise."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got {arr.ndim}-D")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"{name} must be non-empty, got shape {arr.shape}")
    # sum() is a cheap probe: any nan/inf makes it non-finite. Only then pay
    # for the elementwise check, which also clears sums that merely overflowed.
    with np.errstate(over="ignore"):
        probe = arr.sum()
    if not np.isfinite(probe) and not np.isfinite(arr).all():
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def read_npy(path) -> np.ndarray:
    """Read a 1-D or 2-D little-endian float NPY file as float64.

    Accepts versions 1.0 and 2.0 with '<f4' or '<f8' payloads in C order.
    float32 values widen to float64 exactly. 1-D data comes back 1-D;
    callers wanting a matrix reshape to 1 x n themselves.

    Raises
    ------
    NpyFormatError
        Bad magic, unsupported version, or unparseable header.
    UnsupportedLayoutError
        Non-float or big-endian dtype, fortran_order, or ndim > 2.
    TruncationError
        Payload length disagrees with the declared shape.
    DataError
        Payload contains non-finite values.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    if len(raw) < 10 or raw[:6] != NPY_MAGIC:
        raise NpyFormatError(f"{path}: not an NPY file (bad magic)")
    major, minor = raw[6], raw[7]
    if (major, minor) == (1, 0):
        (header_len,) = struct.unpack("<H", raw[8:10])
        header_start = 10
    elif (major, minor) == (2, 0):
        if len(raw) < 12:
            raise NpyFormatError(f"{path}: truncated version 2.0 header length")
        (header_len,) = struct.unpack("<I", raw[8:12])
        header_start = 12
    else:
        raise NpyFormatError(f"{path}: unsupported NPY version {major}.{minor}")

    header_end = header_start + header_len
    if len(raw) < header_end:
        raise NpyFormatError(f"{path}: header shorter than declared length")
    header_bytes = raw[header_start:header_end]
    if not header_bytes.endswith(b"\n"):
        raise NpyFormatError(f"{path}: header not newline-terminated")
    try:
        header = ast.literal_eval(header_bytes.decode("ascii").strip())
    except (ValueError, SyntaxError, UnicodeDecodeError) as exc:
        raise NpyFormatError(f"{path}: unparseable header") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise NpyFormatError(f"{path}: header must declare descr, fortran_order, shape")

    descr = header["descr"]
    if descr not in _SUPPORTED_DESCR:
        raise UnsupportedLayoutError(
            f"{path}: dtype {descr!r} not supported (expected '<f4' or '<f8')"
        )
    if header["fortran_order"] is not False:
        raise UnsupportedLayoutError(f"{path}: fortran_order must be False")
    shape = header["shape"]
    if (
        not isinstance(shape, tuple)
        or len(shape) not in (1, 2)
        or not all(isinstance(s, int) and s >= 1 for s in shape)
    ):
        raise UnsupportedLayoutError(f"{path}: shape {shape!r} not a 1-D or 2-D extent")

    dtype = _SUPPORTED_DESCR[descr]
    expected = int(np.prod(shape)) * dtype.itemsize
    payload = raw[header_end:]
    if len(payload) != expected:
        raise TruncationError(
            f"{path}: payload is {len(payload)} bytes, shape {shape} needs {expected}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(np.float64)
    if not np.isfinite(data).all():
        raise DataError(f"{path}: payload contains non-finite values")
    return data


def write_npy(path, matrix) -> None:
    """Write a 1-D or 2-D float array as NPY v1.0, '<f8', C order.

    The header is space-padded so the full prefix (magic through the
    terminating newline) is a multiple of 64 bytes, matching the format
    specification's alignment rule.
    """
    arr = np.ascontiguousarray(matrix, dtype=np.float64)
    if arr.ndim not in (1, 2):
        raise ValidationError(f"write_npy expects 1-D or 2-D data, got {arr.ndim}-D")
    if arr.size == 0:
        raise ValidationError("write_npy expects non-empty data")
    if not np.isfinite(arr).all():
        raise ValidationError("write_npy refuses non-finite values")

    header = "{'descr': '<f8', 'fortran_order': False, 'shape': %s, }" % (
        str(arr.shape)
    )
    base = len(NPY_MAGIC) + 2 + 2 + len(header) + 1
    pad = (64 - base % 64) % 64
    header_block = header + " " * pad + "\n"
    if len(header_block) > 0xFFFF:
        raise ValidationError("header too large for NPY v1.0")
    with open(path, "wb") as fh:
        fh.write(NPY_MAGIC)
        fh.write(bytes([1, 0]))
        fh.write(struct.pack("<H", len(header_block)))
        fh.write(header_block.encode("ascii"))
        fh.write(arr.tobytes(order="C"))


@dataclass
class SampleStates:
    """One sample's per-layer query/key matrices, index 0 holding layer 1."""

    sample_id: str
    query: list[np.ndarray] = field(default_factory=list)
    key: list[np.ndarray] = field(default_factory=list)


@dataclass
class ActivationDump:
    layers: int
    heads: int
    hidden: int
    samples: list[SampleStates] = field(default_factory=list)

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ManifestError(message)


def _as_count(value, what: str) -> int:
    _require(isinstance(value, int) and not isinstance(value, bool) and value >= 1,
             f"{what} must be a positive integer, got {value!r}")
    return value


def load_dump(manifest_path) -> ActivationDump:
    """Load an activation dump described by a JSON manifest.

    Tensor paths are resolved relative to the manifest's directory. Every
    failure names the offending sample and layer. An empty sample list is
    a valid (if useless) dump; commands that need samples reject it at the
    usage level.
    """
    manifest_path = Path(manifest_path)
    try:
        text = manifest_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {manifest_path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{manifest_path}: invalid JSON ({exc})") from exc

    _require(isinstance(doc, dict), f"{manifest_path}: top level must be an object")
    _require("model" in doc, f"{manifest_path}: missing 'model'")
    _require("samples" in doc, f"{manifest_path}: missing 'samples'")
    model = doc["model"]
    _require(isinstance(model, dict), f"{manifest_path}: 'model' must be an object")
    for key in ("layers", "heads", "hidden"):
        _require(key in model, f"{manifest_path}: model missing '{key}'")
    layers = _as_count(model["layers"], "model.layers")
    heads = _as_count(model["heads"], "model.heads")
    hidden = _as_count(model["hidden"], "model.hidden")
    _require(hidden % heads == 0,
             f"{manifest_path}: hidden {hidden} not divisible by heads {heads}")

    raw_samples = doc["samples"]
    _require(isinstance(raw_samples, list), f"{manifest_path}: 'samples' must be a list")

    base = manifest_path.parent
    samples: list[SampleStates] = []
    seen_ids: set[str] = set()
    for pos, entry in enumerate(raw_samples):
        _require(isinstance(entry, dict), f"sample #{pos}: must be an object")
        sid = entry.get("id")
        _require(isinstance(sid, str) and sid, f"sample #{pos}: missing string 'id'")
        _require(sid not in seen_ids, f"sample {sid!r}: duplicate id")
        seen_ids.add(sid)
        layer_entries = entry.get("layers")
        _require(isinstance(layer_entries, list),
                 f"sample {sid!r}: 'layers' must be a list")

        by_index: dict[int, dict] = {}
        for item in layer_entries:
            _require(isinstance(item, dict), f"sample {sid!r}: layer entry not an object")
            idx = item.get("index")
            _require(isinstance(idx, int) and not isinstance(idx, bool),
                     f"sample {sid!r}: layer index must be an integer")
            _require(1 <= idx <= layers,
                     f"sample {sid!r}: layer index {idx} outside 1..{layers}")
            _require(idx not in by_index, f"sample {sid!r}: duplicate layer index {idx}")
            for state in ("query", "key"):
                _require(isinstance(item.get(state), str),
                         f"sample {sid!r} layer {idx}: missing '{state}' path")
            by_index[idx] = item
        _require(len(by_index) == layers,
                 f"sample {sid!r}: expected layers 1..{layers}, got {sorted(by_index)}")

        sample = SampleStates(sample_id=sid)
        n_tokens = None
        for idx in range(1, layers + 1):
            item = by_index[idx]
            for state in ("query", "key"):
                where = f"sample {sid!r} layer {idx} {state}"
                tensor = read_npy(base / item[state])
                if tensor.ndim != 2:
                    raise ManifestError(f"{where}: expected a 2-D tensor")
                if tensor.shape[1] != hidden:
                    raise ManifestError(
                        f"{where}: has {tensor.shape[1]} columns, model hidden is {hidden}"
                    )
                if n_tokens is None:
                    n_tokens = tensor.shape[0]
                elif tensor.shape[0] != n_tokens:
                    raise ManifestError(
                        f"{where}: has {tensor.shape[0]} tokens, sample uses {n_tokens}"
                    )
                getattr(sample, state).append(tensor)
        samples.append(sample)

    return ActivationDump(layers=layers, heads=heads, hidden=hidden, samples=samples)


def save_dump(dump: ActivationDump, out_dir, manifest_name: str = "manifest.json") -> Path:
    """Write a dump's tensors plus manifest under out_dir; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for sample in dump.samples:
        layer_list = []
        for idx in range(1, dump.layers + 1):
            files = {}
            for state in ("query", "key"):
                fname = f"{sample.sample_id}_layer{idx:03d}_{state}.npy"
                write_npy(out_dir / fname, getattr(sample, state)[idx - 1])
                files[state] = fname
            layer_list.append({"index": idx, **files})
        entries.append({"id": sample.sample_id, "layers": layer_list})
    manifest = {
        "model": {"layers": dump.layers, "heads": dump.heads, "hidden": dump.hidden},
        "samples": entries,
    }
    manifest_path = out_dir / manifest_name
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    return manifest_path
