"""Deterministic serialization: versioned binary runs, CSV and JSON.

The binary ensemble format (documented in the README) is little-endian:

    bytes 0..3    magic  b"MFL1"
    bytes 4..7    format version (uint32)
    bytes 8..15   header length H (uint64)
    bytes 16..    H bytes of UTF-8 JSON (sorted keys) describing the grid,
                  constants, action coordinates, array shapes and provenance
    then          float64 arrays, C-order, in fixed order:
                  times, states, control_probs, full_times, mean_path,
                  init_values

Text outputs are byte-deterministic: floats are rendered with ``repr``
(shortest round-trip form) and JSON is dumped with sorted keys, so replays
can be compared hash-for-hash.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from mflab.coefficients import ActionSpace
from mflab.particles import Ensemble
from mflab.spaces import ConfigurationError, Constants, SpaceConfig

MAGIC = b"MFL1"
FORMAT_VERSION = 1


def _format_value(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def write_csv(path: Path, columns: list, rows: list) -> None:
    """CSV with deterministic float formatting (shortest round-trip repr)."""
    path = Path(path)
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(_format_value(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_json(path: Path, obj) -> None:
    Path(path).write_text(
        json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n", encoding="utf-8"
    )


def sanitize_json(obj):
    """Round-trip through float/int so numpy scalars and infs serialize."""
    if isinstance(obj, dict):
        return {str(k): sanitize_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize_json(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if v != v or v in (float("inf"), float("-inf")):
            return repr(v)
        return v
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return sanitize_json(obj.tolist())
    return obj


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def save_ensemble(path: Path, ens: Ensemble) -> None:
    header = {
        "space": {
            "J": ens.space.J,
            "domain_length": ens.space.domain_length,
            "q": ens.space.q,
            "constants": dataclasses.asdict(ens.space.constants),
        },
        "action_coords": ens.actions.coords.tolist(),
        "shapes": {
            "times": list(ens.times.shape),
            "states": list(ens.states.shape),
            "control_probs": list(ens.control_probs.shape),
            "full_times": list(ens.full_times.shape),
            "mean_path": list(ens.mean_path.shape),
            "init_values": list(ens.init_values.shape),
        },
        "provenance": sanitize_json(ens.provenance),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for arr in (
            ens.times,
            ens.states,
            ens.control_probs,
            ens.full_times,
            ens.mean_path,
            ens.init_values,
        ):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_ensemble(path: Path) -> Ensemble:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ConfigurationError(f"{path}: not an ensemble file (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ConfigurationError(f"{path}: unsupported format version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        shapes = header["shapes"]

        def read_array(name):
            shape = tuple(shapes[name])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8")
            return data.reshape(shape).copy()

        times = read_array("times")
        states = read_array("states")
        control_probs = read_array("control_probs")
        full_times = read_array("full_times")
        mean_path = read_array("mean_path")
        init_values = read_array("init_values")

    sp = header["space"]
    space = SpaceConfig(
        J=int(sp["J"]),
        domain_length=float(sp["domain_length"]),
        q=float(sp["q"]),
        constants=Constants(**sp["constants"]),
    )
    return Ensemble(
        space=space,
        actions=ActionSpace(np.asarray(header["action_coords"])),
        times=times,
        states=states,
        control_probs=control_probs,
        full_times=full_times,
        mean_path=mean_path,
        init_values=init_values,
        provenance=header.get("provenance", {}),
    )


def ensemble_to_csv(path: Path, ens: Ensemble, max_particles: int | None = None) -> None:
    """Downsampled plot-ready CSV: one row per (particle, stored time)."""
    n = ens.n if max_particles is None else min(ens.n, max_particles)
    columns = ["particle", "t"] + [f"u{j}" for j in range(ens.space.J)]
    rows = []
    for k in range(n):
        for i, t in enumerate(ens.times):
            rows.append([k, float(t)] + [float(v) for v in ens.states[k, i]])
    write_csv(path, columns, rows)


def control_to_csv(path: Path, ens: Ensemble, particle: int = 0) -> None:
    """One particle's relaxed-control rows (M rows by K action columns)."""
    K = ens.actions.K
    columns = ["t_left"] + [f"p{a}" for a in range(K)]
    rows = []
    for i in range(ens.control_probs.shape[1]):
        rows.append([float(ens.times[i])] + [float(v) for v in ens.control_probs[particle, i]])
    write_csv(path, columns, rows)
