"""On-disk formats: weight files, tensor containers, protocol and report files.

Weight file layout (all integers little-endian)::

    magic   b"SDAW"
    version uint16 (=1)
    endian  b"<"
    pad     1 byte
    count   uint32
    count × block:
        name_len uint16, name utf-8
        ndim uint32, dims uint32 × ndim
        values float64 × prod(dims), row-major

Tensor container (embeddings, images)::

    count uint32, dim uint32, values float32 × count*dim, row-major
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .datagen import Protocols

MAGIC = b"SDAW"
VERSION = 1


class FormatError(ValueError):
    pass


def save_weights(path, params):
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<H", VERSION) + b"<\x00" + struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.asarray(params[name], dtype="<f8", order="C")
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_weights(path):
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: not a weight file")
    try:
        return _parse_weights(data, path)
    except (struct.error, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: truncated or corrupt ({exc})") from None


def _parse_weights(data, path):
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION or data[6:7] != b"<":
        raise FormatError(f"{path}: unsupported version {version} or byte order")
    (count,) = struct.unpack_from("<I", data, 8)
    off = 12
    params = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + n].decode()
        off += n
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape).astype(np.float64)
        off += 8 * size
    if off != len(data):
        raise FormatError(f"{path}: trailing bytes")
    return params


def save_tensor(path, rows):
    rows = np.asarray(rows)
    flat = np.ascontiguousarray(rows.reshape(len(rows), -1), dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", *flat.shape))
        fh.write(flat.tobytes())


def load_tensor(path):
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise FormatError(f"{path}: truncated header")
    count, dim = struct.unpack_from("<II", data, 0)
    if len(data) != 8 + 4 * count * dim:
        raise FormatError(f"{path}: size does not match header {count}×{dim}")
    return np.frombuffer(data, dtype="<f4", offset=8).reshape(count, dim).astype(np.float32)


def save_embeddings_csv(path, rows):
    np.savetxt(path, np.asarray(rows, dtype=np.float32), delimiter=",", fmt="%.9g")


def load_embeddings_csv(path):
    return np.loadtxt(path, delimiter=",", dtype=np.float32, ndmin=2)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(header)
        w.writerows(rows)


def _read_rows(path):
    with open(path, newline="") as fh:
        return [r for r in csv.reader(fh) if r and not r[0].startswith("#")]


def save_protocols(directory, protocols):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_rows(
        d / "templates.csv",
        None,
        [
            (tid, t["subject"], m, idx)
            for tid, t in protocols.templates.items()
            for m, media in enumerate(t["media"])
            for idx in media
        ],
    )
    _write_rows(d / "pairs.csv", None, [(a, b, y) for a, b, y in protocols.pairs])
    _write_rows(d / "folds.csv", None, [(f,) for f in protocols.folds])
    _write_rows(d / "gallery.csv", None, protocols.gallery)
    _write_rows(d / "probes_known.csv", None, protocols.known_probes)
    _write_rows(d / "probes_unknown.csv", None, protocols.unknown_probes)


def load_protocols(directory):
    d = Path(directory)
    templates = {}
    for tid, subject, media, idx in _read_rows(d / "templates.csv"):
        t = templates.setdefault(tid, {"subject": subject, "media": []})
        m = int(media)
        while len(t["media"]) <= m:
            t["media"].append([])
        t["media"][m].append(int(idx))
    pairs = []
    for a, b, y in _read_rows(d / "pairs.csv"):
        if y not in ("0", "1"):
            raise FormatError(f"pair label must be 0 or 1, got {y!r}")
        pairs.append((a, b, int(y)))
    folds = [int(r[0]) for r in _read_rows(d / "folds.csv")]
    gallery = [tuple(r) for r in _read_rows(d / "gallery.csv")]
    known = [tuple(r) for r in _read_rows(d / "probes_known.csv")]
    unknown = [tuple(r) for r in _read_rows(d / "probes_unknown.csv")]
    return Protocols(templates, pairs, folds, gallery, known, unknown)


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_metric_csv(path, rows):
    _write_rows(
        path,
        ["protocol", "level", "threshold", "value"],
        [(r["protocol"], _fmt(r["level"]), _fmt(r["threshold"]), _fmt(r["value"])) for r in rows],
    )


def write_curves(path, curves):
    _write_rows(
        path,
        ["phase", "epoch", "batch", "term", "value"],
        [(c.phase, c.epoch, c.batch, c.term, repr(c.value)) for c in curves],
    )


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)
