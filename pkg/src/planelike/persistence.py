"""Deterministic serialization: field snapshots, JSON-lines reports, CSV tables, manifests."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import os
import struct
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .lattice import Field, LatticeQuotient, build_quotient
from .model import ModelSpec

MAGIC = b"PLNSNAP\x00"
VERSION = 1


class PersistenceError(ValueError):
    pass


class ChecksumError(PersistenceError):
    pass


class VersionError(PersistenceError):
    pass


class LatticeMismatch(PersistenceError):
    pass


# ------------------------------------------------------------------ helpers


def _plain(obj):
    """Convert numpy scalars, tuples and dataclasses into JSON-ready builtins."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _plain(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def _dump(obj) -> str:
    """Canonical JSON: sorted keys, floats at 17 significant digits."""
    if isinstance(obj, dict):
        return "{" + ", ".join(json.dumps(k) + ": " + _dump(obj[k]) for k in sorted(obj)) + "}"
    if isinstance(obj, list):
        return "[" + ", ".join(_dump(v) for v in obj) + "]"
    if isinstance(obj, float):
        if math.isnan(obj):
            return "NaN"
        if math.isinf(obj):
            return "Infinity" if obj > 0 else "-Infinity"
        txt = format(obj, ".17g")
        if not any(c in txt for c in ".en"):
            txt += ".0"
        return txt
    return json.dumps(obj)


def canonical_json(obj) -> str:
    return _dump(_plain(obj))


def _reject_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise PersistenceError(f"duplicate key {k!r}")
        out[k] = v
    return out


def parse_json(text: str):
    return json.loads(text, object_pairs_hook=_reject_duplicates)


def model_hash(model: ModelSpec) -> str:
    return hashlib.sha256(canonical_json(model.to_mapping()).encode()).hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_atomic(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------- snapshots


def lattice_header(lat: LatticeQuotient) -> dict:
    return {"N": lat.N, "n": lat.n, "omega": list(lat.direction.omega), "m": list(lat.m),
            "A": lat.A, "B": lat.B, "L": lat.L, "h": lat.h, "shape": list(lat.shape)}


def save_field(fld: Field, path, model: Optional[ModelSpec] = None) -> str:
    """Write a snapshot and return its SHA-256 checksum (hex)."""
    lat = fld.lattice
    header = lattice_header(lat)
    header["model_hash"] = model_hash(model) if model is not None else ""
    header["far_field"] = fld.has_far_field
    hb = canonical_json(header).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(hb)), hb,
             np.ascontiguousarray(fld.values, dtype="<f8").tobytes()]
    if fld.has_far_field:
        parts.append(np.ascontiguousarray(fld.far_low, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(fld.far_high, dtype="<f8").tobytes())
    body = b"".join(parts)
    digest = hashlib.sha256(body).digest()
    _write_atomic(path, body + digest)
    return digest.hex()


def load_field(path, lattice: Optional[LatticeQuotient] = None,
               model: Optional[ModelSpec] = None) -> Field:
    """Read a snapshot; validates checksum, version and (optionally) lattice and model."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 + 32 or raw[:len(MAGIC)] != MAGIC:
        raise ChecksumError("not a field snapshot or truncated file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checksum mismatch (corrupted or truncated snapshot)")
    version, hlen = struct.unpack_from("<II", body, len(MAGIC))
    if version != VERSION:
        raise VersionError(f"unsupported snapshot version {version}")
    off = len(MAGIC) + 8
    header = parse_json(body[off:off + hlen].decode())
    off += hlen
    built = build_quotient(tuple(header["omega"]), m=tuple(header["m"]), n=header["n"],
                           A=header["A"], B=header["B"], L=header["L"])
    if list(built.shape) != header["shape"]:
        raise LatticeMismatch("stored shape disagrees with the reconstructed lattice")
    if lattice is not None and lattice != built:
        raise LatticeMismatch(f"snapshot lattice {built.key} != expected {lattice.key}")
    if model is not None and header["model_hash"] and header["model_hash"] != model_hash(model):
        raise PersistenceError("snapshot was produced with a different model")
    size = built.size
    vals = np.frombuffer(body, dtype="<f8", count=size, offset=off).reshape(built.shape)
    off += 8 * size
    lo = hi = None
    if header["far_field"]:
        cell = (built.n,) * built.N
        csize = int(np.prod(cell))
        lo = np.frombuffer(body, dtype="<f8", count=csize, offset=off).reshape(cell)
        hi = np.frombuffer(body, dtype="<f8", count=csize, offset=off + 8 * csize).reshape(cell)
        off += 16 * csize
        lo, hi = lo.astype(float), hi.astype(float)
    if off != len(body):
        raise ChecksumError("snapshot length does not match its header")
    return Field(lattice if lattice is not None else built, vals.astype(float), lo, hi)


def save_cells(cells: dict, path, model: Optional[ModelSpec] = None) -> str:
    """Write named periodic cell arrays (e.g. the pure phases) to a checksummed snapshot."""
    names = sorted(cells)
    arrays = [np.ascontiguousarray(cells[k], dtype="<f8") for k in names]
    header = {"kind": "cells", "names": names, "shapes": [list(a.shape) for a in arrays],
              "model_hash": model_hash(model) if model is not None else ""}
    hb = canonical_json(header).encode()
    body = b"".join([MAGIC, struct.pack("<II", VERSION, len(hb)), hb]
                    + [a.tobytes() for a in arrays])
    digest = hashlib.sha256(body).digest()
    _write_atomic(path, body + digest)
    return digest.hex()


def load_cells(path, model: Optional[ModelSpec] = None) -> dict:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 + 32 or raw[:len(MAGIC)] != MAGIC:
        raise ChecksumError("not a snapshot or truncated file")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("checksum mismatch (corrupted or truncated snapshot)")
    version, hlen = struct.unpack_from("<II", body, len(MAGIC))
    if version != VERSION:
        raise VersionError(f"unsupported snapshot version {version}")
    off = len(MAGIC) + 8
    header = parse_json(body[off:off + hlen].decode())
    off += hlen
    if header.get("kind") != "cells":
        raise PersistenceError("snapshot does not hold cell arrays")
    if model is not None and header["model_hash"] and header["model_hash"] != model_hash(model):
        raise PersistenceError("snapshot was produced with a different model")
    out = {}
    for name, shape in zip(header["names"], header["shapes"]):
        count = int(np.prod(shape))
        out[name] = np.frombuffer(body, dtype="<f8", count=count, offset=off).reshape(shape).astype(float)
        off += 8 * count
    if off != len(body):
        raise ChecksumError("snapshot length does not match its header")
    return out


# ------------------------------------------------------------------ reports


class Record(dict):
    """A report record; building from pairs rejects duplicate keys."""

    @classmethod
    def from_pairs(cls, pairs) -> "Record":
        return cls(_reject_duplicates(list(pairs)))


def write_report(records: Iterable, path) -> str:
    lines = [canonical_json(r) + "\n" for r in records]
    data = "".join(lines).encode()
    _write_atomic(path, data)
    return hashlib.sha256(data).hexdigest()


def read_report(path) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(parse_json(line))
    return out


SCALING_COLUMNS = ("R", "E_total", "E_kinetic", "E_potential", "E_meso")


def write_scaling_csv(rows: Iterable[dict], path) -> str:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCALING_COLUMNS)
        for row in rows:
            w.writerow([format(float(row[c]), ".17g") for c in SCALING_COLUMNS])
    os.replace(tmp, path)
    return file_sha256(path)


def read_scaling_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != SCALING_COLUMNS:
            raise PersistenceError(f"unexpected columns {rd.fieldnames}")
        return [{k: float(v) for k, v in row.items()} for row in rd]


# ---------------------------------------------------------------- manifests


def write_manifest(path, model: ModelSpec, options, seed: int, artifacts: Iterable,
                   extra: Optional[dict] = None) -> str:
    """Manifest listing every produced artifact (paths relative to the manifest) with checksums."""
    from . import __version__

    path = Path(path)
    base = path.parent
    entries = []
    for a in sorted(set(str(Path(p)) for p in artifacts)):
        p = Path(a)
        full = p if p.is_absolute() else base / p
        if not full.exists():
            raise PersistenceError(f"artifact {a} does not exist")
        entries.append({"path": os.path.relpath(full, base), "sha256": file_sha256(full)})
    doc = {"tool": "planelike", "version": __version__, "model": model.to_mapping(),
           "model_hash": model_hash(model), "solver": _plain(options), "seed": int(seed),
           "artifacts": entries}
    if extra:
        doc["config"] = _plain(extra)
    data = (canonical_json(doc) + "\n").encode()
    _write_atomic(path, data)
    return hashlib.sha256(data).hexdigest()


def verify_manifest(path) -> list:
    """Return a list of problems (missing files, checksum mismatches); empty when valid."""
    path = Path(path)
    doc = parse_json(path.read_text(encoding="utf-8"))
    problems = []
    for e in doc.get("artifacts", []):
        full = path.parent / e["path"]
        if not full.exists():
            problems.append(f"missing {e['path']}")
        elif file_sha256(full) != e["sha256"]:
            problems.append(f"checksum mismatch {e['path']}")
    return problems
