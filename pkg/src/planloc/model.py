"""Building models: triangulated surfaces, floorplan extrusion, reference
subsets, deviation injection, point-map sampling, and named-group mesh I/O.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import RigidTransform

# Two surfaces count as parallel when |n_a . n_b| >= 1 - EPS_PARALLEL
# (about a 2.6 degree cone).
EPS_PARALLEL = 1e-3

MIN_TRIANGLE_AREA = 1e-12


class ModelError(Exception):
    """Base for building-model errors."""


class EmptyPlanError(ModelError):
    """Floorplan has no wall segments."""


class UnknownSurfaceIdError(ModelError):
    """A referenced surface id does not exist in the model."""


class InsufficientConstraintsError(ModelError):
    """Reference set lacks three pairwise non-parallel surfaces."""


class ParseError(ModelError):
    """Malformed mesh file; carries the offending line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MissingGroupNamesError(ModelError):
    """Mesh file contains geometry without a named surface group."""


def _triangle_normals_areas(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    e1 = triangles[:, 1] - triangles[:, 0]
    e2 = triangles[:, 2] - triangles[:, 0]
    cross = np.cross(e1, e2)
    norms = np.linalg.norm(cross, axis=1)
    areas = 0.5 * norms
    normals = cross / np.where(norms > 0, norms, 1.0)[:, None]
    return normals, areas


@dataclass(frozen=True)
class Surface:
    """One named surface: a triangle soup with per-triangle unit normals.

    Triangle winding defines orientation; stored normals must match the
    cross-product normals within 1e-6.
    """

    id: str
    triangles: np.ndarray  # (M, 3, 3): triangle, corner, xyz
    normals: np.ndarray  # (M, 3) unit normals

    def __post_init__(self):
        tris = np.array(self.triangles, dtype=np.float64)
        normals = np.array(self.normals, dtype=np.float64)
        if tris.ndim != 3 or tris.shape[1:] != (3, 3) or tris.shape[0] == 0:
            raise ValueError(f"surface {self.id!r}: triangles must be (M, 3, 3), M >= 1")
        if normals.shape != (tris.shape[0], 3):
            raise ValueError(f"surface {self.id!r}: normals shape mismatch")
        if not np.all(np.isfinite(tris)):
            raise ValueError(f"surface {self.id!r}: non-finite vertex")
        derived, areas = _triangle_normals_areas(tris)
        if np.any(areas <= MIN_TRIANGLE_AREA):
            raise ValueError(f"surface {self.id!r}: degenerate triangle (area <= 1e-12)")
        if np.max(np.abs(derived - normals)) > 1e-6:
            raise ValueError(f"surface {self.id!r}: stored normals disagree with winding")
        tris.flags.writeable = False
        normals.flags.writeable = False
        object.__setattr__(self, "triangles", tris)
        object.__setattr__(self, "normals", normals)

    @classmethod
    def from_triangles(cls, surface_id: str, triangles) -> "Surface":
        tris = np.asarray(triangles, dtype=np.float64)
        normals, _ = _triangle_normals_areas(tris)
        return cls(surface_id, tris, normals)

    @property
    def areas(self) -> np.ndarray:
        _, areas = _triangle_normals_areas(self.triangles)
        return areas

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    def dominant_normal(self) -> np.ndarray:
        """Area-weighted mean normal, with faces first flipped into the
        hemisphere of the largest face.

        The flip matters for closed surfaces (e.g. extruded wall boxes) whose
        raw area-weighted normal sum is identically zero.
        """
        areas = self.areas
        ref = self.normals[int(np.argmax(areas))]
        signs = np.where(self.normals @ ref >= 0, 1.0, -1.0)
        mean = ((self.normals * signs[:, None]) * areas[:, None]).sum(axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            raise ValueError(f"surface {self.id!r}: dominant normal undefined")
        return mean / norm

    def transformed(self, transform: RigidTransform) -> "Surface":
        """Rigidly moved copy; normals re-derived from the moved vertices."""
        moved = self.triangles.reshape(-1, 3) @ transform.rotation.T + transform.translation
        return Surface.from_triangles(self.id, moved.reshape(-1, 3, 3))


@dataclass(frozen=True)
class BuildingModel:
    """Collection of named surfaces in one frame (the plan origin)."""

    surfaces: tuple[Surface, ...]
    frame: str = "plan"

    def __post_init__(self):
        object.__setattr__(self, "surfaces", tuple(self.surfaces))
        ids = [s.id for s in self.surfaces]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate surface ids in model")

    @property
    def surface_ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.surfaces)

    def get(self, surface_id: str) -> Surface:
        for s in self.surfaces:
            if s.id == surface_id:
                return s
        raise UnknownSurfaceIdError(f"unknown surface id {surface_id!r}")

    def subset(self, surface_ids: Iterable[str]) -> "BuildingModel":
        wanted = list(surface_ids)
        for sid in wanted:
            self.get(sid)
        keep = tuple(s for s in self.surfaces if s.id in set(wanted))
        return BuildingModel(keep, frame=self.frame)

    @property
    def total_area(self) -> float:
        return float(sum(s.area for s in self.surfaces))


@dataclass(frozen=True)
class ReferenceSet:
    """Ids of the task-reference surfaces (a subset of a model)."""

    surface_ids: tuple[str, ...]

    def __post_init__(self):
        ids = tuple(self.surface_ids)
        if not ids:
            raise ValueError("reference set must be non-empty")
        object.__setattr__(self, "surface_ids", ids)


@dataclass(frozen=True)
class WallSegment:
    start: np.ndarray  # (2,) meters
    end: np.ndarray  # (2,)
    thickness: float
    id: str | None = None

    def __post_init__(self):
        start = np.array(self.start, dtype=np.float64).reshape(2)
        end = np.array(self.end, dtype=np.float64).reshape(2)
        if not (np.all(np.isfinite(start)) and np.all(np.isfinite(end))):
            raise ValueError("wall segment has non-finite endpoints")
        if self.thickness <= 0:
            raise ValueError("wall thickness must be > 0")
        if np.linalg.norm(end - start) < 1e-9:
            raise ValueError("wall segment has zero length")
        start.flags.writeable = False
        end.flags.writeable = False
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "end", end)


@dataclass(frozen=True)
class Floorplan2D:
    """2D wall segments plus a floor outline, extrudable to a 3D model."""

    walls: tuple[WallSegment, ...]
    wall_height: float
    floor_outline: np.ndarray  # (K, 2) simple polygon

    def __post_init__(self):
        object.__setattr__(self, "walls", tuple(self.walls))
        if self.wall_height <= 0:
            raise ValueError("wall_height must be > 0")
        outline = np.array(self.floor_outline, dtype=np.float64)
        if outline.ndim != 2 or outline.shape[1] != 2 or outline.shape[0] < 3:
            raise ValueError("floor outline must be (K, 2) with K >= 3")
        outline.flags.writeable = False
        object.__setattr__(self, "floor_outline", outline)


@dataclass(frozen=True)
class Deviation:
    """Rigid offset applied to a group of surfaces."""

    surface_ids: tuple[str, ...]
    offset: RigidTransform

    def __post_init__(self):
        object.__setattr__(self, "surface_ids", tuple(self.surface_ids))


@dataclass(frozen=True)
class MapCloud:
    """Sampled point map with per-point normals and source surface ids."""

    points: np.ndarray  # (N, 3)
    normals: np.ndarray  # (N, 3) unit
    surface_index: np.ndarray  # (N,) index into surface_ids
    surface_ids: tuple[str, ...]
    sampling_density: float  # points per square meter

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        normals = np.asarray(self.normals, dtype=np.float64)
        idx = np.asarray(self.surface_index, dtype=np.int32)
        if not (len(pts) == len(normals) == len(idx)):
            raise ValueError("map cloud arrays must have equal length")
        if len(pts) and np.max(np.abs(np.linalg.norm(normals, axis=1) - 1.0)) > 1e-9:
            raise ValueError("map cloud normals must be unit length")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "surface_index", idx)
        object.__setattr__(self, "surface_ids", tuple(self.surface_ids))

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, surface_ids: Iterable[str]) -> "MapCloud":
        wanted = set(surface_ids)
        unknown = wanted - set(self.surface_ids)
        if unknown:
            raise UnknownSurfaceIdError(f"unknown surface ids {sorted(unknown)}")
        keep_idx = {i for i, sid in enumerate(self.surface_ids) if sid in wanted}
        mask = np.isin(self.surface_index, sorted(keep_idx))
        return MapCloud(
            self.points[mask],
            self.normals[mask],
            self.surface_index[mask],
            self.surface_ids,
            self.sampling_density,
        )


# ---------------------------------------------------------------------------
# Extrusion
# ---------------------------------------------------------------------------


def _box_triangles(center: np.ndarray, axes: np.ndarray, half_extents: np.ndarray) -> np.ndarray:
    """12 outward-wound triangles of a box given orthonormal axes (rows)."""
    tris = []
    for k in range(3):
        i, j = (k + 1) % 3, (k + 2) % 3
        for sign in (+1.0, -1.0):
            c = center + sign * half_extents[k] * axes[k]
            u, v = axes[i] * half_extents[i], axes[j] * half_extents[j]
            if sign < 0:  # swap in-plane axes so the winding stays outward
                u, v = v, u
            p1, p2, p3, p4 = c - u - v, c + u - v, c + u + v, c - u + v
            tris.append((p1, p2, p3))
            tris.append((p1, p3, p4))
    return np.array(tris)


def make_box_surface(surface_id: str, center, size, yaw_rad: float = 0.0) -> Surface:
    """Axis-aligned box (optionally yawed about z) as a closed surface."""
    c, s = np.cos(yaw_rad), np.sin(yaw_rad)
    axes = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    half = 0.5 * np.asarray(size, dtype=np.float64).reshape(3)
    return Surface.from_triangles(
        surface_id, _box_triangles(np.asarray(center, dtype=np.float64), axes, half)
    )


def _polygon_area_signed(outline: np.ndarray) -> float:
    x, y = outline[:, 0], outline[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def triangulate_polygon(outline: np.ndarray) -> np.ndarray:
    """Ear-clip a simple polygon into CCW triangles, shape (K-2, 3, 2)."""
    poly = np.asarray(outline, dtype=np.float64)
    if _polygon_area_signed(poly) < 0:
        poly = poly[::-1]
    idx = list(range(len(poly)))
    tris: list[tuple[int, int, int]] = []

    def is_ear(a: int, b: int, c: int) -> bool:
        pa, pb, pc = poly[a], poly[b], poly[c]
        cross = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])
        if cross <= 1e-12:
            return False
        for other in idx:
            if other in (a, b, c):
                continue
            p = poly[other]
            d1 = (pb[0] - pa[0]) * (p[1] - pa[1]) - (pb[1] - pa[1]) * (p[0] - pa[0])
            d2 = (pc[0] - pb[0]) * (p[1] - pb[1]) - (pc[1] - pb[1]) * (p[0] - pb[0])
            d3 = (pa[0] - pc[0]) * (p[1] - pc[1]) - (pa[1] - pc[1]) * (p[0] - pc[0])
            if d1 > -1e-12 and d2 > -1e-12 and d3 > -1e-12:
                return False
        return True

    guard = 0
    while len(idx) > 3:
        guard += 1
        if guard > 10000:
            raise ValueError("polygon triangulation failed; outline may self-intersect")
        clipped = False
        for pos in range(len(idx)):
            a, b, c = idx[pos - 1], idx[pos], idx[(pos + 1) % len(idx)]
            if is_ear(a, b, c):
                tris.append((a, b, c))
                idx.pop(pos)
                clipped = True
                break
        if not clipped:
            raise ValueError("polygon triangulation found no ear; outline may self-intersect")
    tris.append((idx[0], idx[1], idx[2]))
    return poly[np.array(tris)]


def extrude_floorplan(plan: Floorplan2D) -> BuildingModel:
    """Extrude wall segments into closed boxes and add a planar floor at z=0.

    Each wall becomes its own surface (uniform wall height, given thickness);
    the floor covers the outline polygon with upward normals.
    """
    if not plan.walls:
        raise EmptyPlanError("floorplan has no wall segments")
    surfaces: list[Surface] = []
    for i, wall in enumerate(plan.walls):
        sid = wall.id if wall.id is not None else f"wall_{i}"
        d2 = wall.end - wall.start
        length = float(np.linalg.norm(d2))
        u = np.array([d2[0], d2[1], 0.0]) / length
        n = np.array([-u[1], u[0], 0.0])
        mid2 = 0.5 * (wall.start + wall.end)
        center = np.array([mid2[0], mid2[1], 0.5 * plan.wall_height])
        axes = np.vstack([u, n, [0.0, 0.0, 1.0]])
        half = np.array([0.5 * length, 0.5 * wall.thickness, 0.5 * plan.wall_height])
        surfaces.append(Surface.from_triangles(sid, _box_triangles(center, axes, half)))
    tris2d = triangulate_polygon(plan.floor_outline)
    floor_tris = np.concatenate([tris2d, np.zeros((*tris2d.shape[:2], 1))], axis=2)
    surfaces.append(Surface.from_triangles("floor", floor_tris))
    return BuildingModel(tuple(surfaces))


# ---------------------------------------------------------------------------
# Reference validation, sampling, deviation
# ---------------------------------------------------------------------------


def validate_reference_set(model: BuildingModel, refs: ReferenceSet) -> ReferenceSet:
    """Accept a reference set iff it can constrain all six pose dof.

    Requires three member surfaces whose dominant normals are pairwise
    non-parallel (|n_a . n_b| < 1 - EPS_PARALLEL). Returns the set unchanged
    on success.
    """
    normals = [model.get(sid).dominant_normal() for sid in refs.surface_ids]
    k = len(normals)
    for a in range(k):
        for b in range(a + 1, k):
            if abs(float(normals[a] @ normals[b])) >= 1.0 - EPS_PARALLEL:
                continue
            for c in range(k):
                if c in (a, b):
                    continue
                if (
                    abs(float(normals[a] @ normals[c])) < 1.0 - EPS_PARALLEL
                    and abs(float(normals[b] @ normals[c])) < 1.0 - EPS_PARALLEL
                ):
                    return refs
    raise InsufficientConstraintsError(
        "reference set needs three pairwise non-parallel surfaces"
    )


def sample_model(model: BuildingModel, density: float, seed=0) -> MapCloud:
    """Uniformly sample every triangle at `density` points per square meter.

    Expected count per triangle is area * density; the fractional part is
    resolved with one Bernoulli draw so totals stay unbiased. Deterministic
    for a fixed seed.
    """
    if density <= 0:
        raise ValueError("sampling density must be > 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pts, nrm, sidx = [], [], []
    for si, surface in enumerate(model.surfaces):
        areas = surface.areas
        expected = areas * density
        counts = np.floor(expected).astype(np.int64)
        counts += rng.random(len(areas)) < (expected - counts)
        total = int(counts.sum())
        if total == 0:
            continue
        tri_of_point = np.repeat(np.arange(len(areas)), counts)
        u = rng.random(total)
        v = rng.random(total)
        flip = u + v > 1.0
        u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
        tris = surface.triangles[tri_of_point]
        p = tris[:, 0] + u[:, None] * (tris[:, 1] - tris[:, 0]) + v[:, None] * (
            tris[:, 2] - tris[:, 0]
        )
        pts.append(p)
        nrm.append(surface.normals[tri_of_point])
        sidx.append(np.full(total, si, dtype=np.int32))
    if not pts:
        empty = np.zeros((0, 3))
        return MapCloud(empty, empty, np.zeros(0, dtype=np.int32), model.surface_ids, density)
    return MapCloud(
        np.concatenate(pts),
        np.concatenate(nrm),
        np.concatenate(sidx),
        model.surface_ids,
        density,
    )


def apply_deviation(model: BuildingModel, deviations: Sequence[Deviation]) -> BuildingModel:
    """Rigidly move the listed surface groups; all others stay untouched."""
    moved: dict[str, Surface] = {s.id: s for s in model.surfaces}
    for dev in deviations:
        for sid in dev.surface_ids:
            if sid not in moved:
                raise UnknownSurfaceIdError(f"unknown surface id {sid!r}")
            moved[sid] = moved[sid].transformed(dev.offset)
    return BuildingModel(tuple(moved[s.id] for s in model.surfaces), frame=model.frame)


# ---------------------------------------------------------------------------
# Mesh I/O: OBJ-style text with one named group per surface
# ---------------------------------------------------------------------------


def save_model(model: BuildingModel, path) -> None:
    lines: list[str] = []
    offset = 1
    for surface in model.surfaces:
        lines.append(f"g {surface.id}")
        verts = surface.triangles.reshape(-1, 3)
        for v in verts:
            lines.append(f"v {v[0]:.9f} {v[1]:.9f} {v[2]:.9f}")
        for t in range(len(surface.triangles)):
            base = offset + 3 * t
            lines.append(f"f {base} {base + 1} {base + 2}")
        offset += len(verts)
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> BuildingModel:
    """Parse a named-group mesh file written by save_model.

    Raises ParseError (with line number) on malformed records and
    MissingGroupNamesError when geometry appears outside a named group.
    """
    verts: list[np.ndarray] = []
    groups: dict[str, list[tuple[int, int, int]]] = {}
    order: list[str] = []
    current: str | None = None
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        kind = tokens[0]
        if kind == "g":
            if len(tokens) < 2:
                raise MissingGroupNamesError(f"line {lineno}: group without a name")
            current = tokens[1]
            if current not in groups:
                groups[current] = []
                order.append(current)
        elif kind == "v":
            if len(tokens) != 4:
                raise ParseError("vertex needs three coordinates", lineno)
            try:
                verts.append(np.array([float(x) for x in tokens[1:]]))
            except ValueError:
                raise ParseError("non-numeric vertex coordinate", lineno) from None
        elif kind == "f":
            if current is None:
                raise MissingGroupNamesError(f"line {lineno}: face before any named group")
            if len(tokens) != 4:
                raise ParseError("only triangular faces are supported", lineno)
            try:
                ids = [int(x.split("/")[0]) for x in tokens[1:]]
            except ValueError:
                raise ParseError("non-integer face index", lineno) from None
            if any(i < 1 or i > len(verts) for i in ids):
                raise ParseError("face references a missing vertex", lineno)
            groups[current].append((ids[0] - 1, ids[1] - 1, ids[2] - 1))
        # other record kinds are ignored
    surfaces = []
    vert_arr = np.array(verts) if verts else np.zeros((0, 3))
    for sid in order:
        faces = groups[sid]
        if not faces:
            continue
        tris = vert_arr[np.array(faces)]
        surfaces.append(Surface.from_triangles(sid, tris))
    return BuildingModel(tuple(surfaces))


# ---------------------------------------------------------------------------
# JSON inputs: floorplan and reference-set files
# ---------------------------------------------------------------------------


def load_floorplan(path) -> Floorplan2D:
    """Read `{"walls": [{"start", "end", "thickness"}], "wall_height", "floor"}`."""
    doc = json.loads(Path(path).read_text())
    walls = tuple(
        WallSegment(
            start=np.array(w["start"], dtype=np.float64),
            end=np.array(w["end"], dtype=np.float64),
            thickness=float(w["thickness"]),
            id=w.get("id"),
        )
        for w in doc["walls"]
    )
    return Floorplan2D(
        walls=walls,
        wall_height=float(doc["wall_height"]),
        floor_outline=np.array(doc["floor"], dtype=np.float64),
    )


def save_floorplan(plan: Floorplan2D, path) -> None:
    doc = {
        "walls": [
            {
                "start": list(map(float, w.start)),
                "end": list(map(float, w.end)),
                "thickness": w.thickness,
                **({"id": w.id} if w.id is not None else {}),
            }
            for w in plan.walls
        ],
        "wall_height": plan.wall_height,
        "floor": [list(map(float, p)) for p in plan.floor_outline],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_reference_set(path) -> ReferenceSet:
    """Read a JSON list of surface id strings."""
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, list) or not all(isinstance(x, str) for x in doc):
        raise ValueError(f"{path}: reference set file must be a JSON list of strings")
    return ReferenceSet(tuple(doc))


def save_reference_set(refs: ReferenceSet, path) -> None:
    Path(path).write_text(json.dumps(list(refs.surface_ids)) + "\n")
