"""On-disk formats: FMAP feature maps, PGM previews and the model container."""
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1
MODEL_MAGIC = b"GRDM"
MODEL_VERSION = 1


def write_fmap(path, data):
    """Write an ``(H, W, C)`` array (or ``(H, W)``, stored with C=1)."""
    a = np.asarray(data)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise FormatError(f"FMAP needs a 2-d or 3-d array, got shape {a.shape}")
    h, w, c = a.shape
    payload = np.ascontiguousarray(a, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(FMAP_MAGIC)
        fh.write(struct.pack("<4I", FMAP_VERSION, h, w, c))
        fh.write(payload)


def read_fmap(path):
    raw = Path(path).read_bytes()
    if len(raw) < 20 or raw[:4] != FMAP_MAGIC:
        raise FormatError(f"{path}: not an FMAP file")
    version, h, w, c = struct.unpack("<4I", raw[4:20])
    if version != FMAP_VERSION:
        raise FormatError(f"{path}: unsupported FMAP version {version}")
    expected = 20 + 4 * h * w * c
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=20).reshape(h, w, c)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: non-finite values")
    return data.astype(np.float32)


def write_pgm(path, heatmap):
    """8-bit binary PGM of a map with values in [0, 1]."""
    m = np.asarray(heatmap, dtype=np.float64)
    if m.ndim == 3:
        m = m[:, :, 0]
    pix = np.clip(np.rint(m * 255.0), 0, 255).astype(np.uint8)
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def save_container(path, kind, arrays, meta):
    """Versioned binary container: magic, version, JSON header, raw arrays.

    Output is byte-deterministic for identical inputs (sorted keys, no timestamps).
    """
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        if a.dtype.kind == "f":
            dt = "<f8" if a.dtype == np.float64 else "<f4"
        elif a.dtype.kind in "iub":
            dt = "<i8"
        else:
            raise FormatError(f"cannot store array {name!r} of dtype {a.dtype}")
        blob = np.ascontiguousarray(a, dtype=dt).tobytes()
        entries.append({"name": name, "dtype": dt, "shape": list(a.shape),
                        "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"kind": kind, "meta": meta, "arrays": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<2I", MODEL_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_container(path, kind=None):
    raw = Path(path).read_bytes()
    if raw[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: not a model file")
    version, hlen = struct.unpack("<2I", raw[4:12])
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    if kind is not None and header["kind"] != kind:
        raise FormatError(f"{path}: expected a {kind} model, found {header['kind']}")
    base = 12 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        buf = raw[start:start + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype=e["dtype"]).reshape(e["shape"]).copy()
    return header["kind"], arrays, header["meta"]


def boxes_to_json(boxes):
    return [{"x": int(b.x), "y": int(b.y), "w": int(b.w), "h": int(b.h),
             "score": float(b.score)} for b in boxes]


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
