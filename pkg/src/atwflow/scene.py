"""Experiment configuration and rasterization of shape primitives onto the grid."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from matplotlib.path import Path as PolyPath

from .energy import ForcingField
from .grid import GridSpec, LabelField, Neighborhood

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class OverlappingShapes(ConfigError):
    pass


class ShapeOutOfDomain(ConfigError):
    pass


SHAPES = ("disk", "rectangle", "polygon", "regular_polygon", "pgm")
CHECKS = (
    "energy_descent",
    "monotone_energy",
    "density",
    "disjointness",
    "distance_monotone",
    "decoupling",
    "hull_confinement",
    "linf",
    "shrinking_disk",
    "small_time",
    "stability",
    "holder",
)


@dataclass(frozen=True)
class GridConfig:
    width: int
    height: int
    h: float

    def spec(self) -> GridSpec:
        return GridSpec(self.width, self.height, self.h)


@dataclass(frozen=True)
class ShapeConfig:
    """One primitive. Lengths are physical; ``params`` depends on ``shape``.

    disk: cx, cy, r. rectangle: x0, y0, x1, y1. polygon: vertices [[x, y], ...].
    regular_polygon: cx, cy, r, sides, rotation (vertices on the circle of radius r).
    pgm: path, threshold (pixels >= threshold belong to the shape).
    """

    shape: str
    label: int
    params: dict

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeConfig":
        d = dict(d)
        shape = d.pop("shape", None)
        if shape not in SHAPES:
            raise ConfigError(f"unknown shape {shape!r}; expected one of {SHAPES}")
        if "label" not in d:
            raise ConfigError(f"{shape} needs a target label")
        label = int(d.pop("label"))
        if label < 0:
            raise ConfigError("labels must be nonnegative")
        return cls(shape, label, d)

    def to_dict(self) -> dict:
        return {"shape": self.shape, "label": self.label, **self.params}


@dataclass(frozen=True)
class ForcingConfig:
    """``constant``: per-label values; ``radial``: per-label ``a + b*|x - c|``; ``csv``: per-label files."""

    kind: str
    values: dict = field(default_factory=dict)
    R: float = 0.0
    center: Optional[tuple[float, float]] = None

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> Optional["ForcingConfig"]:
        if not d:
            return None
        kind = d.get("kind")
        if kind not in ("constant", "radial", "csv"):
            raise ConfigError(f"unknown forcing kind {kind!r}")
        c = d.get("center")
        return cls(kind, dict(d.get("values", {})), float(d.get("R", 0.0)), tuple(c) if c else None)

    def build(self, field: LabelField, base_dir: Path) -> ForcingField:
        from .io import load_signed_csv

        v = np.zeros((field.num_labels,) + field.spec.shape)
        X, Y = field.spec.centers()
        cx, cy = self.center or (0.5 * field.spec.width * field.spec.h, 0.5 * field.spec.height * field.spec.h)
        rad = np.hypot(X - cx, Y - cy)
        for key, spec in self.values.items():
            j = int(key)
            if not 0 <= j < field.num_labels:
                raise ConfigError(f"forcing label {j} out of range")
            if self.kind == "constant":
                v[j] = float(spec)
            elif self.kind == "radial":
                a, b = spec
                v[j] = float(a) + float(b) * rad
            else:
                v[j] = load_signed_csv(_resolve(base_dir, spec), field.spec).values
        H = ForcingField(v, self.R)
        H.validate(field)
        return H

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "values": self.values, "R": self.R}
        if self.center is not None:
            d["center"] = list(self.center)
        return d


def _resolve(base: Path, p: str) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridConfig
    phases: tuple[ShapeConfig, ...]
    lambdas: tuple[float, ...]
    steps: Optional[int] = None
    t_final: Optional[float] = None
    arity: int = 8
    num_bounded: Optional[int] = None
    forcing: Optional[ForcingConfig] = None
    verifiers: dict = field(default_factory=dict)
    times: Optional[tuple[float, ...]] = None
    output_dir: Optional[str] = None
    order_seed: Optional[int] = None
    workers: int = 1
    max_sweeps: int = 50
    name: str = "experiment"
    inject: Optional[dict] = None
    base_dir: str = "."

    def __post_init__(self):
        if not self.lambdas:
            raise ConfigError("need at least one lambda")
        if any(l < 1 for l in self.lambdas):
            raise ConfigError("every lambda must be >= 1")
        if self.grid.h <= 0 or self.grid.width <= 0 or self.grid.height <= 0:
            raise ConfigError("grid lengths must be positive")
        if self.steps is None and self.t_final is None:
            raise ConfigError("give either steps or t_final")
        if self.steps is not None and self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.t_final is not None and self.t_final < 0:
            raise ConfigError("t_final must be >= 0")
        if self.arity not in (4, 8, 16):
            raise ConfigError("arity must be 4, 8 or 16")
        unknown = set(self.verifiers) - set(CHECKS)
        if unknown:
            raise ConfigError(f"unknown verifiers {sorted(unknown)}")

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "ExperimentConfig":
        d = dict(d)
        try:
            grid = GridConfig(int(d["grid"]["width"]), int(d["grid"]["height"]), float(d["grid"]["h"]))
            lambdas = tuple(float(x) for x in d["lambdas"])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"missing or malformed field: {exc}") from exc
        ver = d.get("verifiers", {})
        if isinstance(ver, list):
            ver = {k: True for k in ver}
        return cls(
            grid=grid,
            phases=tuple(ShapeConfig.from_dict(p) for p in d.get("phases", [])),
            lambdas=lambdas,
            steps=d.get("steps"),
            t_final=d.get("t_final"),
            arity=int(d.get("arity", 8)),
            num_bounded=d.get("num_bounded"),
            forcing=ForcingConfig.from_dict(d.get("forcing")),
            verifiers={k: v for k, v in ver.items() if v},
            times=tuple(float(t) for t in d["times"]) if d.get("times") is not None else None,
            output_dir=d.get("output_dir"),
            order_seed=d.get("order_seed"),
            workers=int(d.get("workers", 1)),
            max_sweeps=int(d.get("max_sweeps", 50)),
            name=str(d.get("name", "experiment")),
            inject=d.get("inject"),
            base_dir=base_dir,
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f), base_dir=str(path.parent.resolve()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phases"] = [p.to_dict() for p in self.phases]
        d["forcing"] = self.forcing.to_dict() if self.forcing else None
        d.pop("base_dir")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def neighborhood(self) -> Neighborhood:
        return Neighborhood.crofton(self.arity, self.grid.h)

    def steps_for(self, lam: float) -> int:
        if self.steps is not None:
            return int(self.steps)
        return int(math.floor(lam * self.t_final + 1e-9))

    def sample_times(self) -> list[float]:
        if self.times is not None:
            return list(self.times)
        T = self.t_final if self.t_final is not None else self.steps / max(self.lambdas)
        return [T * m / 8 for m in range(9)]


def shape_mask(shape: ShapeConfig, spec: GridSpec, base_dir: Path = Path(".")) -> np.ndarray:
    """Cells whose center lies in the shape (closed)."""
    X, Y = spec.centers()
    p = shape.params
    if shape.shape == "disk":
        if p["r"] <= 0:
            raise ConfigError("disk radius must be positive")
        return (X - p["cx"]) ** 2 + (Y - p["cy"]) ** 2 <= p["r"] ** 2
    if shape.shape == "rectangle":
        if p["x1"] <= p["x0"] or p["y1"] <= p["y0"]:
            raise ConfigError("rectangle needs x0 < x1 and y0 < y1")
        return (X >= p["x0"]) & (X <= p["x1"]) & (Y >= p["y0"]) & (Y <= p["y1"])
    if shape.shape in ("polygon", "regular_polygon"):
        verts = np.asarray(polygon_vertices(shape), dtype=float)
        if len(verts) < 3:
            raise ConfigError("polygon needs at least 3 vertices")
        path = PolyPath(verts)
        pts = np.column_stack([X.ravel(), Y.ravel()])
        return path.contains_points(pts).reshape(spec.shape)
    if shape.shape == "pgm":
        from .io import read_pgm

        img = read_pgm(_resolve(base_dir, p["path"]))
        if img.shape != spec.shape:
            raise ShapeOutOfDomain(f"PGM of shape {img.shape} does not match grid {spec.shape}")
        return img >= int(p.get("threshold", 1))
    raise ConfigError(f"unknown shape {shape.shape!r}")


def polygon_vertices(shape: ShapeConfig) -> list[tuple[float, float]]:
    p = shape.params
    if shape.shape == "polygon":
        return [tuple(v) for v in p["vertices"]]
    k = int(p["sides"])
    rot = float(p.get("rotation", 0.0))
    th = rot + 2 * np.pi * np.arange(k) / k
    return list(zip(p["cx"] + p["r"] * np.cos(th), p["cy"] + p["r"] * np.sin(th)))


def rasterize_scene(config: ExperimentConfig, shapes=None) -> LabelField:
    """Label each cell by the shape covering its center; exterior otherwise."""
    spec = config.grid.spec()
    shapes = config.phases if shapes is None else shapes
    labels_used = [s.label for s in shapes]
    N = config.num_bounded if config.num_bounded is not None else max(labels_used, default=0) + 1
    if any(l >= N for l in labels_used):
        raise ConfigError(f"shape label out of range for {N} bounded phases")
    owner = np.full(spec.shape, -1, dtype=np.int32)
    frame = spec.frame_mask()
    for s in shapes:
        m = shape_mask(s, spec, Path(config.base_dir))
        if (m & frame).any():
            raise ShapeOutOfDomain(f"{s.shape} with label {s.label} reaches the outer frame")
        clash = m & (owner >= 0) & (owner != s.label)
        if clash.any():
            raise OverlappingShapes(f"{s.shape} with label {s.label} overlaps label {owner[clash][0]}")
        owner[m] = s.label
    labels = np.where(owner >= 0, owner, N)
    field = LabelField(spec, N, labels)
    ring2 = spec.frame_mask(2) & ~frame
    if (field.bounded_mask() & ring2).any():
        log.warning("a bounded phase touches the second ring; the padding may be too thin")
    return field
