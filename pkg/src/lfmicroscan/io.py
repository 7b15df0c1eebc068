"""On-disk formats: 16-bit PGM images, JSON sidecars and the light field container.

A light field container is a directory holding one 16-bit image per
perspective (``p_{v}_{u}.pgm``), a ``manifest.json``, and ``.npy`` files with
the float64 data so that numerical results survive a round trip unchanged.
Every file is a deterministic function of its contents (no timestamps).
"""

from __future__ import annotations

import json
import os
import shutil
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image

from .core import SCHEMA_VERSION, LightField, RawCapture, _check_schema
from .errors import ConfigurationError, DomainError

MAX16 = 65535


def to_uint16(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=float), 0.0, 1.0) * MAX16).astype(np.uint16)


def write_pgm16(path, image: np.ndarray) -> None:
    """Write values in ``[0, 1]`` as a 16-bit grayscale PGM (clipped, rounded)."""
    q = to_uint16(image)
    Image.fromarray(q).save(os.fspath(path), format="PPM")


def read_pgm16(path) -> np.ndarray:
    with Image.open(os.fspath(path)) as im:
        arr = np.array(im, dtype=np.int64)
    if arr.ndim != 2:
        raise DomainError(f"{path} is not a grayscale image")
    return arr.astype(float) / MAX16


def write_json(path, obj: Any) -> None:
    """Deterministic JSON (sorted keys, fixed formatting, trailing newline)."""
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=True)
    Path(path).write_text(text + "\n")


def read_json(path) -> Any:
    return json.loads(Path(path).read_text())


def atomic_dir(final: Path) -> Path:
    """Fresh temporary sibling of ``final``; see ``commit_dir``."""
    tmp = final.with_name(final.name + ".partial")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    return tmp


def commit_dir(tmp: Path, final: Path) -> None:
    if final.exists():
        shutil.rmtree(final)
    tmp.rename(final)


def write_capture(directory, name: str, cap: RawCapture) -> None:
    d = Path(directory)
    write_pgm16(d / f"{name}.pgm", cap.image)
    write_json(d / f"{name}.json", {
        "schema_version": SCHEMA_VERSION,
        "type": "RawCapture",
        "capture_index": cap.capture_index,
        "commanded_shift_um": list(cap.commanded_shift_um),
        "actual_shift_um": None if cap.actual_shift_um is None else list(cap.actual_shift_um),
        "shape": list(cap.image.shape),
        "metadata": cap.metadata,
    })


def read_capture(directory, name: str) -> RawCapture:
    d = Path(directory)
    meta = read_json(d / f"{name}.json")
    _check_schema(meta, "RawCapture")
    img = read_pgm16(d / f"{name}.pgm")
    if list(img.shape) != meta["shape"]:
        raise DomainError(f"{name}: image shape {img.shape} differs from sidecar {meta['shape']}")
    act = meta.get("actual_shift_um")
    return RawCapture(img, tuple(meta["commanded_shift_um"]), meta["capture_index"],
                      None if act is None else tuple(act), meta.get("metadata", {}))


def save_lightfield(directory, lf: LightField) -> None:
    """Write ``lf`` as a container directory (replacing any previous one)."""
    final = Path(directory)
    tmp = atomic_dir(final)
    nv, nu = lf.angular_size
    for v in range(nv):
        for u in range(nu):
            write_pgm16(tmp / f"p_{v}_{u}.pgm", lf.data[v, u])
    arrays = {"data": lf.data}
    if lf.lens_data is not None:
        arrays["lens_data"] = lf.lens_data
        arrays["lens_positions_um"] = lf.lens_positions_um
    if lf.valid_mask is not None:
        arrays["valid_mask"] = lf.valid_mask
        write_pgm16(tmp / "valid_mask.pgm", lf.valid_mask.astype(float))
    for key, arr in arrays.items():
        np.save(tmp / f"{key}.npy", arr)
    write_json(tmp / "manifest.json", {
        "schema_version": SCHEMA_VERSION,
        "type": "LightField",
        "angular_size": list(lf.angular_size),
        "spatial_size": list(lf.spatial_size),
        "pitch_x_um": lf.pitch_x_um,
        "pitch_y_um": lf.pitch_y_um,
        "origin_um": list(lf.origin_um),
        "perspective_files": [[f"p_{v}_{u}.pgm" for u in range(nu)] for v in range(nv)],
        "has_lens_samples": lf.lens_data is not None,
        "has_valid_mask": lf.valid_mask is not None,
        "provenance": list(lf.provenance),
    })
    commit_dir(tmp, final)


def load_lightfield(directory, exact: bool = True) -> LightField:
    """Read a container. ``exact=False`` uses only the 16-bit perspective images."""
    d = Path(directory)
    if not (d / "manifest.json").exists():
        raise ConfigurationError(f"{d} is not a light field container (no manifest.json)")
    man = read_json(d / "manifest.json")
    _check_schema(man, "LightField")
    nv, nu = man["angular_size"]
    h, w = man["spatial_size"]
    for row in man["perspective_files"]:
        for name in row:
            if not (d / name).exists():
                raise DomainError(f"container {d} is missing {name}")
    lens = pos = mask = None
    if exact and (d / "data.npy").exists():
        opt = lambda key: np.load(d / f"{key}.npy") if (d / f"{key}.npy").exists() else None  # noqa: E731
        data = np.load(d / "data.npy")
        lens, pos, mask = opt("lens_data"), opt("lens_positions_um"), opt("valid_mask")
    else:
        data = np.stack([np.stack([read_pgm16(d / name) for name in row]) for row in man["perspective_files"]])
        if man.get("has_valid_mask") and (d / "valid_mask.pgm").exists():
            mask = read_pgm16(d / "valid_mask.pgm") > 0.5
    if data.shape != (nv, nu, h, w):
        raise DomainError(f"container data {data.shape} does not match manifest {(nv, nu, h, w)}")
    return LightField(data, man["pitch_x_um"], man["pitch_y_um"], tuple(man["origin_um"]), lens, pos, mask,
                      list(man.get("provenance", [])))
