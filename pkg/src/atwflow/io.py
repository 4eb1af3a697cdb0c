"""Reading and writing label fields (PGM + sidecar JSON) and signed fields (CSV)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .grid import GridError, GridSpec, LabelField, SignedField


class SnapshotError(GridError):
    pass


def _to_image(a: np.ndarray) -> np.ndarray:
    # image rows run top to bottom, so the largest y comes first
    return np.ascontiguousarray(a.T[::-1])


def _from_image(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img[::-1].T)


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_label_pgm(field: LabelField, path) -> Path:
    """8-bit binary PGM with pixel value = label, plus a JSON sidecar with h and N."""
    if field.num_bounded > 255:
        raise SnapshotError("at most 255 bounded phases fit in an 8-bit PGM")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(_to_image(field.labels.astype(np.uint8)), mode="L").save(path, format="PPM")
    meta = {
        "h": field.spec.h,
        "num_bounded": field.num_bounded,
        "width": field.spec.width,
        "height": field.spec.height,
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=1), encoding="utf-8")
    return path


def read_pgm(path) -> np.ndarray:
    """Raw 8-bit pixels of a PGM, indexed ``[i, j]`` like label arrays."""
    with Image.open(path) as im:
        if im.mode != "L":
            raise SnapshotError(f"{path}: expected an 8-bit grayscale PGM, got mode {im.mode}")
        return _from_image(np.asarray(im))


def read_label_pgm(path) -> LabelField:
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise SnapshotError(f"missing sidecar {side}")
    meta = json.loads(side.read_text(encoding="utf-8"))
    spec = GridSpec(int(meta["width"]), int(meta["height"]), float(meta["h"]))
    return LabelField(spec, int(meta["num_bounded"]), read_pgm(path).astype(np.int16))


def write_signed_csv(field: SignedField, path) -> Path:
    """Row ``i`` holds the values of cells ``(i, 0..height-1)``; 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, field.values, fmt="%.17g", delimiter=",")
    return path


def load_signed_csv(path, spec: GridSpec) -> SignedField:
    vals = np.loadtxt(path, delimiter=",", ndmin=2)
    return SignedField(spec, vals)
