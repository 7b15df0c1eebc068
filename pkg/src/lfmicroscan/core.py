"""Core data model: light fields, hexagonal lenslet geometry and shift schedules.

All positions are in micrometers unless a name ends in ``_px``. Sensor
coordinates put pixel ``(i, j)`` (row, column) at ``(j, i) * pixel_pitch_um``.
The *lattice frame* is the sensor frame translated to the lens ``(0, 0)`` center
and rotated by ``-rotation_rad``, so that lens rows run along +x.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError

SCHEMA_VERSION = 1

LYTRO_PITCH_UM = 14.0
LYTRO_ROW_PITCH_UM = 12.12
LYTRO_PIXEL_PITCH_UM = 1.4
LYTRO_SENSOR_PX = (3280, 3280)
LYTRO_LENS_ROWS = 378
LYTRO_LENS_COLS = 328


@dataclass(frozen=True, eq=False)
class LensletGrid:
    """Hexagonal micro-lens layout.

    Odd rows are displaced by ``odd_row_offset_um`` along the row direction.
    ``centers_px`` optionally holds measured centers, one ``(x, y)`` pixel
    position per lens in row-major ``(row, col)`` order.
    """

    pitch_u_um: float = LYTRO_PITCH_UM
    row_pitch_v_um: float = LYTRO_ROW_PITCH_UM
    odd_row_offset_um: float | None = None
    rotation_rad: float = 0.0
    origin_um: tuple[float, float] = (7.0, 7.0)
    rows: int = LYTRO_LENS_ROWS
    cols: int = LYTRO_LENS_COLS
    pixel_pitch_um: float = LYTRO_PIXEL_PITCH_UM
    sensor_shape_px: tuple[int, int] = LYTRO_SENSOR_PX
    centers_px: np.ndarray | None = None
    fit_rms_px: float | None = None

    def __post_init__(self):
        if not (self.pitch_u_um > 0 and self.row_pitch_v_um > 0):
            raise ConfigurationError("lens pitches must be positive")
        if self.pixel_pitch_um <= 0:
            raise ConfigurationError("pixel pitch must be positive")
        if self.rows < 1 or self.cols < 1:
            raise ConfigurationError("grid needs at least one lens")
        if self.odd_row_offset_um is None:
            object.__setattr__(self, "odd_row_offset_um", self.pitch_u_um / 2)
        object.__setattr__(self, "origin_um", tuple(float(v) for v in self.origin_um))
        object.__setattr__(self, "sensor_shape_px", tuple(int(v) for v in self.sensor_shape_px))
        if self.centers_px is not None:
            centers = np.asarray(self.centers_px, dtype=float).reshape(-1, 2)
            if len(centers) != self.rows * self.cols:
                raise ConfigurationError(
                    f"centers_px has {len(centers)} entries, expected {self.rows * self.cols}"
                )
            centers.setflags(write=False)
            object.__setattr__(self, "centers_px", centers)

    @classmethod
    def for_lens_count(cls, rows: int, cols: int, margin_px: float = 6.0, **kwargs) -> LensletGrid:
        """Grid of ``rows x cols`` lenses on a sensor just large enough to hold them."""
        grid = cls(rows=rows, cols=cols, origin_um=(0.0, 0.0), sensor_shape_px=(1, 1), **kwargs)
        pts = grid.nominal_centers().reshape(-1, 2) / grid.pixel_pitch_um
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        origin = (margin_px - lo) * grid.pixel_pitch_um
        shape = np.ceil(hi - lo + 2 * margin_px).astype(int) + 1
        return replace(grid, origin_um=tuple(origin), sensor_shape_px=(int(shape[1]), int(shape[0])))

    @property
    def lens_count(self) -> int:
        return self.rows * self.cols

    @property
    def pitch_px(self) -> float:
        return self.pitch_u_um / self.pixel_pitch_um

    def _rotation(self) -> np.ndarray:
        c, s = np.cos(self.rotation_rad), np.sin(self.rotation_rad)
        return np.array([[c, -s], [s, c]])

    def lattice_positions(self) -> np.ndarray:
        """Lens centers in the lattice frame, shape ``(rows, cols, 2)``."""
        r, c = np.meshgrid(np.arange(self.rows), np.arange(self.cols), indexing="ij")
        x = c * self.pitch_u_um + (r % 2) * self.odd_row_offset_um
        y = r * self.row_pitch_v_um
        return np.stack([x, y], axis=-1).astype(float)

    def nominal_centers(self) -> np.ndarray:
        """Nominal lens centers in sensor micrometers, shape ``(rows, cols, 2)``."""
        return self.from_lattice_frame(self.lattice_positions())

    def centers_um(self) -> np.ndarray:
        """Measured centers when available, nominal otherwise; ``(rows, cols, 2)``."""
        if self.centers_px is not None:
            return self.centers_px.reshape(self.rows, self.cols, 2) * self.pixel_pitch_um
        return self.nominal_centers()

    def centers_in_px(self) -> np.ndarray:
        return self.centers_um() / self.pixel_pitch_um

    def to_lattice_frame(self, points_um: np.ndarray) -> np.ndarray:
        pts = np.asarray(points_um, dtype=float)
        if self.rotation_rad == 0.0:
            return pts - np.asarray(self.origin_um)
        return (pts - np.asarray(self.origin_um)) @ self._rotation()

    def from_lattice_frame(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if self.rotation_rad == 0.0:
            return pts + np.asarray(self.origin_um)
        return pts @ self._rotation().T + np.asarray(self.origin_um)

    def vector_to_lattice_frame(self, vec_um) -> np.ndarray:
        v = np.asarray(vec_um, dtype=float)
        if self.rotation_rad == 0.0:
            return v.copy()
        return v @ self._rotation()

    def with_centers(self, centers_px: np.ndarray | None) -> LensletGrid:
        return replace(self, centers_px=centers_px)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "type": "LensletGrid",
            "pitch_u_um": self.pitch_u_um,
            "row_pitch_v_um": self.row_pitch_v_um,
            "odd_row_offset_um": self.odd_row_offset_um,
            "rotation_rad": self.rotation_rad,
            "origin_um": list(self.origin_um),
            "rows": self.rows,
            "cols": self.cols,
            "pixel_pitch_um": self.pixel_pitch_um,
            "sensor_shape_px": list(self.sensor_shape_px),
            "centers_px": None if self.centers_px is None else self.centers_px.tolist(),
            "fit_rms_px": self.fit_rms_px,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> LensletGrid:
        _check_schema(d, "LensletGrid")
        centers = d.get("centers_px")
        return cls(
            pitch_u_um=d["pitch_u_um"],
            row_pitch_v_um=d["row_pitch_v_um"],
            odd_row_offset_um=d.get("odd_row_offset_um"),
            rotation_rad=d.get("rotation_rad", 0.0),
            origin_um=tuple(d["origin_um"]),
            rows=d["rows"],
            cols=d["cols"],
            pixel_pitch_um=d.get("pixel_pitch_um", LYTRO_PIXEL_PITCH_UM),
            sensor_shape_px=tuple(d.get("sensor_shape_px", LYTRO_SENSOR_PX)),
            centers_px=None if centers is None else np.asarray(centers, dtype=float),
            fit_rms_px=d.get("fit_rms_px"),
        )


def nominal_center(grid: LensletGrid, row: int, col: int) -> tuple[float, float]:
    """Physical center of lens ``(row, col)`` in sensor micrometers."""
    if not (0 <= row < grid.rows and 0 <= col < grid.cols):
        raise IndexError(f"lens ({row}, {col}) outside {grid.rows}x{grid.cols} grid")
    x = col * grid.pitch_u_um + (row % 2) * grid.odd_row_offset_um
    y = row * grid.row_pitch_v_um
    if grid.rotation_rad != 0.0:
        c, s = np.cos(grid.rotation_rad), np.sin(grid.rotation_rad)
        x, y = c * x - s * y, s * x + c * y
    return (grid.origin_um[0] + x, grid.origin_um[1] + y)


@dataclass(frozen=True)
class ShiftSchedule:
    """Ordered commanded sensor translations ``(T_u, T_v)`` in micrometers."""

    shifts_um: tuple[tuple[float, float], ...]
    enhancement_factor: int = 4
    labels: tuple[int, ...] | None = None

    def __post_init__(self):
        shifts = tuple((float(u), float(v)) for u, v in self.shifts_um)
        object.__setattr__(self, "shifts_um", shifts)
        if self.enhancement_factor < 1:
            raise ConfigurationError("enhancement_factor must be >= 1")
        if self.labels is None:
            object.__setattr__(self, "labels", tuple(range(1, len(shifts) + 1)))
        elif len(self.labels) != len(shifts):
            raise ConfigurationError("labels and shifts differ in length")

    def __len__(self) -> int:
        return len(self.shifts_um)

    def __iter__(self):
        return iter(self.shifts_um)

    def __getitem__(self, i):
        return self.shifts_um[i]

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "type": "ShiftSchedule",
            "shifts_um": [list(s) for s in self.shifts_um],
            "enhancement_factor": self.enhancement_factor,
            "labels": list(self.labels),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ShiftSchedule:
        _check_schema(d, "ShiftSchedule")
        labels = d.get("labels")
        return cls(
            shifts_um=tuple(tuple(s) for s in d["shifts_um"]),
            enhancement_factor=d.get("enhancement_factor", 4),
            labels=None if labels is None else tuple(labels),
        )


def default_lytro_schedule() -> ShiftSchedule:
    """The 16 micro-shifts for 4x4 enhancement of the first-generation Lytro sensor.

    Horizontal steps are 14/4 = 3.5 um, vertical steps 12.12/4 = 3.03 um. The
    first eight captures walk down at ``T_u = 0``, the last eight walk back up
    at ``T_u = 3.5``.
    """
    du = LYTRO_PITCH_UM / 4
    dv = LYTRO_ROW_PITCH_UM / 4
    shifts = [(0.0, round(-dv * m, 2) + 0.0) for m in range(8)]
    shifts += [(du, round(-dv * (7 - m), 2) + 0.0) for m in range(8)]
    return ShiftSchedule(tuple(shifts), enhancement_factor=4)


SUBSET_COUNTS = (1, 2, 4, 8, 16)


def _lattice_basis(grid: LensletGrid) -> np.ndarray:
    # columns are the primitive vectors of the hexagonal lens lattice
    return np.array([[grid.pitch_u_um, grid.odd_row_offset_um], [0.0, grid.row_pitch_v_um]])


def _periodic_offsets(vectors: np.ndarray, basis: np.ndarray, reach: int = 2) -> np.ndarray:
    """All ``v + B k`` for integer ``k`` in ``[-reach, reach]^2``; shape ``(n, m, 2)``."""
    ks = np.array(list(itertools.product(range(-reach, reach + 1), repeat=2)), dtype=float)
    images = ks @ basis.T
    return vectors[:, None, :] + images[None, :, :]


def periodic_distance_matrix(shifts_um: np.ndarray, grid: LensletGrid) -> np.ndarray:
    """Minimum distance between the sample lattices of every pair of shifts.

    Diagonal entries hold the nearest-neighbor distance within one lattice.
    """
    basis = _lattice_basis(grid)
    s = np.asarray(shifts_um, dtype=float)
    diff = s[:, None, :] - s[None, :, :]
    n = len(s)
    imgs = _periodic_offsets(diff.reshape(-1, 2), basis).reshape(n, n, -1, 2)
    d = np.linalg.norm(imgs, axis=-1)
    d = np.where(d < 1e-12, np.inf, d)
    return d.min(axis=-1)


def covering_radius(shifts_um: np.ndarray, grid: LensletGrid, probes: int = 24) -> float:
    """Largest distance from any point of the plane to the pooled samples."""
    basis = _lattice_basis(grid)
    s = np.asarray(shifts_um, dtype=float)
    pts = _periodic_offsets(-s, basis, reach=2).reshape(-1, 2)
    t = (np.arange(probes) + 0.5) / probes
    a, b = np.meshgrid(t, t, indexing="ij")
    probe = np.stack([a.ravel(), b.ravel()], axis=1) @ basis.T
    d2 = ((probe[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    return float(np.sqrt(d2.min(axis=1).max()))


@lru_cache(maxsize=None)
def _best_subset(shifts: tuple[tuple[float, float], ...], count: int, grid_key: tuple) -> tuple[int, ...]:
    grid = LensletGrid(pitch_u_um=grid_key[0], row_pitch_v_um=grid_key[1], odd_row_offset_um=grid_key[2])
    s = np.asarray(shifts)
    dist = periodic_distance_matrix(s, grid)
    self_d = float(np.diag(dist).min())
    ref = 0
    others = [i for i in range(len(s)) if i != ref]
    best_md = -np.inf
    tied: list[tuple[int, ...]] = []
    for combo in itertools.combinations(others, count - 1):
        idx = (ref,) + combo
        sub = dist[np.ix_(idx, idx)]
        md = min(self_d, float(sub[np.triu_indices(count, 1)].min())) if count > 1 else self_d
        if md > best_md + 1e-9:
            best_md, tied = md, [idx]
        elif md > best_md - 1e-9:
            tied.append(idx)
    if len(tied) == 1:
        return tied[0]
    radii = [covering_radius(s[list(idx)], grid) for idx in tied]
    rmin = min(radii)
    return next(idx for idx, r in zip(tied, radii) if r < rmin + 1e-9)


def schedule_subset(schedule: ShiftSchedule, count: int, grid: LensletGrid | None = None) -> ShiftSchedule:
    """Pick ``count`` captures whose pooled samples are most evenly spread.

    Subsets always contain the reference (first) capture. The choice maximizes
    the minimum distance between pooled sample positions; ties go to the
    smaller covering radius, then to the earliest capture indices.
    """
    if count not in SUBSET_COUNTS or len(schedule) % count:
        raise ConfigurationError(f"unsupported capture count {count}")
    if count > len(schedule):
        raise ConfigurationError(f"schedule has only {len(schedule)} entries")
    if tuple(schedule.shifts_um[0]) != (0.0, 0.0):
        raise ConfigurationError("schedule must start with the (0, 0) reference capture")
    if count == len(schedule):
        return schedule
    if count == 1:
        return ShiftSchedule((schedule[0],), schedule.enhancement_factor, (schedule.labels[0],))
    grid = grid or LensletGrid()
    key = (grid.pitch_u_um, grid.row_pitch_v_um, grid.odd_row_offset_um)
    idx = _best_subset(schedule.shifts_um, count, key)
    return ShiftSchedule(
        tuple(schedule[i] for i in idx),
        schedule.enhancement_factor,
        tuple(schedule.labels[i] for i in idx),
    )


@dataclass(eq=False)
class RawCapture:
    """One raw sensor frame plus the shift it was taken at."""

    image: np.ndarray
    commanded_shift_um: tuple[float, float] = (0.0, 0.0)
    capture_index: int = 0
    actual_shift_um: tuple[float, float] | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        img = np.asarray(self.image, dtype=float)
        if img.ndim != 2:
            raise DomainError("raw capture must be a 2D image")
        if not np.all(np.isfinite(img)):
            raise DomainError("raw capture contains non-finite values")
        self.image = img
        self.commanded_shift_um = tuple(float(v) for v in self.commanded_shift_um)
        if self.actual_shift_um is not None:
            self.actual_shift_um = tuple(float(v) for v in self.actual_shift_um)

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape


@dataclass(eq=False)
class LightField:
    """4D light field indexed ``(v_ang, u_ang, y, x)``.

    ``origin_um`` is the lattice-frame position of spatial sample ``(0, 0)``.
    Decoded light fields also keep the per-lens samples (``lens_data``) and the
    lens positions they were taken at, which is what fusion pools.
    """

    data: np.ndarray
    pitch_x_um: float
    pitch_y_um: float
    origin_um: tuple[float, float] = (0.0, 0.0)
    lens_data: np.ndarray | None = None
    lens_positions_um: np.ndarray | None = None
    valid_mask: np.ndarray | None = None
    provenance: list[str] = field(default_factory=list)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 4:
            raise DomainError(f"light field data must be 4D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DomainError("light field contains non-finite values")
        self.data = data
        self.origin_um = tuple(float(v) for v in self.origin_um)
        if self.lens_data is not None:
            self.lens_data = np.asarray(self.lens_data, dtype=float)
            if self.lens_data.shape[:2] != data.shape[:2]:
                raise DomainError("lens_data angular size differs from data")
            if self.lens_positions_um is None:
                raise DomainError("lens_data requires lens_positions_um")
            self.lens_positions_um = np.asarray(self.lens_positions_um, dtype=float)
            if self.lens_positions_um.shape != self.lens_data.shape[2:] + (2,):
                raise DomainError("lens_positions_um does not match lens_data")
        if self.valid_mask is not None:
            self.valid_mask = np.asarray(self.valid_mask, dtype=bool)
            if self.valid_mask.shape != data.shape[2:]:
                raise DomainError("valid_mask does not match spatial size")

    @property
    def angular_size(self) -> tuple[int, int]:
        return self.data.shape[:2]

    @property
    def spatial_size(self) -> tuple[int, int]:
        return self.data.shape[2:]

    @property
    def center_index(self) -> tuple[int, int]:
        v, u = self.angular_size
        return (v // 2, u // 2)

    def perspective(self, v: int, u: int) -> np.ndarray:
        return self.data[v, u]

    def center_perspective(self) -> np.ndarray:
        return self.data[self.center_index]

    def pixel_positions(self) -> np.ndarray:
        """Lattice-frame ``(x, y)`` of every spatial sample, shape ``(H, W, 2)``."""
        h, w = self.spatial_size
        x = self.origin_um[0] + np.arange(w) * self.pitch_x_um
        y = self.origin_um[1] + np.arange(h) * self.pitch_y_um
        xx, yy = np.meshgrid(x, y)
        return np.stack([xx, yy], axis=-1)

    def normalized(self) -> LightField:
        return replace(self, data=np.clip(self.data, 0.0, 1.0))

    def with_provenance(self, step: str) -> LightField:
        return replace(self, provenance=self.provenance + [step])


def _check_schema(d: dict[str, Any], type_name: str) -> None:
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported {type_name} schema_version {version!r}")
    if d.get("type", type_name) != type_name:
        raise ConfigurationError(f"expected a {type_name} document, got {d.get('type')!r}")


def as_shift_pairs(values: Sequence) -> list[tuple[float, float]]:
    return [(float(a), float(b)) for a, b in values]
