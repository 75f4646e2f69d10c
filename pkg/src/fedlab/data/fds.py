"""FDS1 per-sample binary files and the on-disk dataset directory.

Layout of one file::

    b"FDS1" | u32 LE header length | UTF-8 JSON header
    | float32 LE features (T*F, row-major) | float32 LE glass (T*G, optional)
    | T validity bytes | float32 LE brightness (T)

A dataset directory holds ``manifest.json`` plus one subdirectory per user
with one ``.fds`` file per sample.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .types import Sample, UserDataset

MAGIC = b"FDS1"
FLAG_GLASS = 1
MANIFEST = "manifest.json"


def write_fds(sample: Sample) -> bytes:
    T, F = sample.features.shape
    gdim = 0 if sample.glass is None else sample.glass.shape[1]
    header = {
        "user_id": sample.user_id,
        "label": int(sample.label),
        "fps": float(sample.fps),
        "T": T,
        "F": F,
        "glass_dim": gdim,
        "flags": FLAG_GLASS if gdim else 0,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", len(hbytes)), hbytes,
             sample.features.astype("<f4").tobytes()]
    if gdim:
        parts.append(sample.glass.astype("<f4").tobytes())
    parts.append(sample.valid.astype(np.uint8).tobytes())
    parts.append(sample.brightness.astype("<f4").tobytes())
    return b"".join(parts)


def _take(buf, pos, n, what):
    if pos + n > len(buf):
        raise FormatError(f"truncated {what}: need {n} bytes, {len(buf) - pos} left", pos)
    return buf[pos:pos + n], pos + n


def load_fds(buf: bytes) -> Sample:
    if bytes(buf[:4]) != MAGIC:
        raise FormatError("bad magic, expected FDS1", 0)
    raw, pos = _take(buf, 4, 4, "header length")
    (hlen,) = struct.unpack("<I", raw)
    raw, pos = _take(buf, pos, hlen, "JSON header")
    try:
        header = json.loads(bytes(raw).decode("utf-8"))
        T, F = int(header["T"]), int(header["F"])
        gdim = int(header.get("glass_dim", 0))
        flags = int(header.get("flags", 0))
        label, fps, user_id = int(header["label"]), float(header["fps"]), str(header["user_id"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"unreadable header: {exc}", 8) from None
    if T < 1 or F < 1 or gdim < 0:
        raise FormatError("header dimensions must be positive", 8)
    if bool(flags & FLAG_GLASS) != (gdim > 0):
        raise FormatError("glass flag disagrees with glass_dim", 8)
    expected = T * F * 4 + T * gdim * 4 + T + T * 4
    if len(buf) - pos != expected:
        raise FormatError(
            f"payload is {len(buf) - pos} bytes but header T={T}, F={F}, glass_dim={gdim} "
            f"implies {expected}", pos)
    raw, pos = _take(buf, pos, T * F * 4, "features")
    feats = np.frombuffer(raw, dtype="<f4").reshape(T, F).astype(np.float64)
    glass = None
    if gdim:
        raw, pos = _take(buf, pos, T * gdim * 4, "glass features")
        glass = np.frombuffer(raw, dtype="<f4").reshape(T, gdim).astype(np.float64)
    raw, pos = _take(buf, pos, T, "validity channel")
    valid_bytes = np.frombuffer(raw, dtype=np.uint8)
    if np.any(valid_bytes > 1):
        raise FormatError("validity bytes must be 0 or 1", pos - T + int(np.argmax(valid_bytes > 1)))
    raw, pos = _take(buf, pos, T * 4, "brightness channel")
    bright = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    try:
        return Sample(user_id, label, feats, valid_bytes.astype(bool), bright, fps, glass)
    except ValueError as exc:
        raise FormatError(f"invalid sample: {exc}", 8) from None


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_dataset(users: list[UserDataset], root) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {"users": []}
    for u in users:
        udir = root / u.user_id
        udir.mkdir(exist_ok=True)
        for k, s in enumerate(u.samples):
            _atomic_write(udir / f"{k:05d}.fds", write_fds(s))
        manifest["users"].append({"user_id": u.user_id, "wears_glasses": bool(u.wears_glasses),
                                  "n_samples": len(u.samples)})
    _atomic_write(root / MANIFEST, json.dumps(manifest, indent=1, sort_keys=True).encode())
    return root


def load_dataset(root) -> list[UserDataset]:
    root = Path(root)
    manifest = json.loads((root / MANIFEST).read_text())
    users = []
    for entry in manifest["users"]:
        uid = entry["user_id"]
        samples = []
        for f in sorted((root / uid).glob("*.fds")):
            try:
                samples.append(load_fds(f.read_bytes()))
            except FormatError as exc:
                raise FormatError(f"{f}: {exc}", exc.offset) from None
        users.append(UserDataset(uid, samples, bool(entry.get("wears_glasses", False))))
    return users
