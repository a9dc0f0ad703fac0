"""Synthetic sensing: LiDAR raycasting, density-image rendering, prism
ground truth, and stationary trial sequences over a scene with clutter and
moving actors.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .geometry import RigidTransform, compose
from .model import BuildingModel, Surface

POINT_CLASSES = ("building", "clutter", "actor")

_RAY_EPS = 1e-9
_CHUNK = 2048


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class LidarSpec:
    """Spinning multi-ring LiDAR model; frame coincides with the robot body."""

    ring_elevations_deg: tuple[float, ...] = tuple(np.linspace(-15.0, 15.0, 16))
    azimuth_step_deg: float = 0.4
    max_range_m: float = 50.0
    range_noise_m: float = 0.01

    def __post_init__(self):
        if len(self.ring_elevations_deg) < 1:
            raise ValueError("need at least one ring")
        if self.max_range_m <= 0 or self.azimuth_step_deg <= 0:
            raise ValueError("max range and azimuth step must be > 0")
        if self.range_noise_m < 0:
            raise ValueError("range noise must be >= 0")
        object.__setattr__(
            self, "ring_elevations_deg", tuple(float(e) for e in self.ring_elevations_deg)
        )

    def ray_directions(self) -> np.ndarray:
        """Unit directions in the sensor frame, ring-major, shape (K, 3)."""
        az = np.deg2rad(np.arange(0.0, 360.0, self.azimuth_step_deg))
        el = np.deg2rad(np.asarray(self.ring_elevations_deg))
        cos_el, sin_el = np.cos(el), np.sin(el)
        dirs = np.empty((len(el) * len(az), 3))
        for i in range(len(el)):
            block = slice(i * len(az), (i + 1) * len(az))
            dirs[block, 0] = cos_el[i] * np.cos(az)
            dirs[block, 1] = cos_el[i] * np.sin(az)
            dirs[block, 2] = sin_el[i]
        return dirs


@dataclass(frozen=True)
class CameraSpec:
    """Pinhole camera: +z optical axis, +x image right, +y image down."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: RigidTransform  # body <- camera

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be > 0")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


def default_camera_rig(
    count: int = 3,
    width: int = 160,
    height: int = 120,
    hfov_deg: float = 110.0,
    mount=(0.0, 0.0, 0.25),
) -> tuple[CameraSpec, ...]:
    """Evenly yaw-spaced cameras (0, +120, -120 degrees for the default three)
    giving near-full azimuth coverage around the robot.
    """
    f = (width / 2.0) / np.tan(np.deg2rad(hfov_deg) / 2.0)
    # camera axes in body coordinates at yaw 0: optical axis along +x(body)
    base = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    cams = []
    for i in range(count):
        yaw = 2.0 * np.pi * i / count
        c, s = np.cos(yaw), np.sin(yaw)
        rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        cams.append(
            CameraSpec(
                fx=f,
                fy=f,
                cx=(width - 1) / 2.0,
                cy=(height - 1) / 2.0,
                width=width,
                height=height,
                extrinsic=RigidTransform(rz @ base, np.asarray(mount, dtype=np.float64)),
            )
        )
    return tuple(cams)


@dataclass(frozen=True)
class PrismSpec:
    """Survey-prism mounting offset in the robot body frame."""

    offset: np.ndarray  # (3,) meters

    def __post_init__(self):
        off = np.array(self.offset, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(off)):
            raise ValueError("prism offset must be finite")
        off.flags.writeable = False
        object.__setattr__(self, "offset", off)


Trajectory = Callable[[float], RigidTransform]


@dataclass(frozen=True)
class LinearTrajectory:
    """Constant-velocity drift of an actor, as offset from its base placement."""

    velocity: tuple[float, float, float]

    def __call__(self, time_s: float) -> RigidTransform:
        v = np.asarray(self.velocity, dtype=np.float64)
        return RigidTransform(np.eye(3), v * time_s)


@dataclass(frozen=True)
class Actor:
    surface: Surface
    trajectory: Trajectory

    def at(self, time_s: float) -> Surface:
        return self.surface.transformed(self.trajectory(time_s))


@dataclass(frozen=True)
class Scene:
    """As-built world: the (possibly deviated) building plus unmodeled extras."""

    as_built: BuildingModel
    clutter: tuple[Surface, ...] = ()
    actors: tuple[Actor, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "clutter", tuple(self.clutter))
        object.__setattr__(self, "actors", tuple(self.actors))
        building = set(self.as_built.surface_ids)
        extras = [s.id for s in self.clutter] + [a.surface.id for a in self.actors]
        if len(set(extras)) != len(extras) or building & set(extras):
            raise ValueError("clutter/actor ids must be unique and disjoint from building ids")


@dataclass(frozen=True)
class RawScan:
    """One LiDAR sweep in the sensor frame with ground-truth point classes."""

    points: np.ndarray  # (N, 3) sensor frame
    classes: np.ndarray  # (N,) strings from POINT_CLASSES
    pose: RigidTransform | None  # ground-truth sensor pose, None if unknown

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        cls = np.asarray(self.classes)
        if len(cls) != len(pts):
            raise ValueError("points/classes length mismatch")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "classes", cls)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class DensityImage:
    """Per-pixel structure score in [0, 1]; optionally carries the z-depth
    buffer of the render for occlusion checks (not persisted to PGM)."""

    values: np.ndarray  # (h, w) float in [0, 1]
    depth: np.ndarray | None = None  # (h, w) z-depth, inf on miss

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2:
            raise ValueError("density image must be 2-D")
        if not np.all(np.isfinite(vals)) or vals.min() < 0 or vals.max() > 1:
            raise ValueError("density values must be finite and within [0, 1]")
        object.__setattr__(self, "values", vals)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[0]


@dataclass(frozen=True)
class DensityOracleParams:
    """Ground-truth-driven stand-in for a learned structure/clutter scorer.

    Building hits draw from N(mu_background, sigma), everything else from
    N(mu_foreground, sigma), clamped to [0, 1]. A fraction `corruption_rate`
    of building pixels is resampled from the foreground distribution to mimic
    scorer mistakes; `corrupt_surface_ids` restricts that corruption to the
    pixels of specific surfaces.
    """

    mu_background: float = 0.8
    mu_foreground: float = 0.2
    sigma: float = 0.1
    corruption_rate: float = 0.05
    corrupt_surface_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.sigma < 0 or not (0 <= self.corruption_rate <= 1):
            raise ValueError("sigma must be >= 0 and corruption rate within [0, 1]")
        if self.corrupt_surface_ids is not None:
            object.__setattr__(
                self, "corrupt_surface_ids", tuple(self.corrupt_surface_ids)
            )


@dataclass(frozen=True)
class TrialFrame:
    """One simulated timestep: scan, per-camera density images, ground truth."""

    index: int
    time_s: float
    scan: RawScan
    images: tuple[DensityImage, ...]
    pose: RigidTransform
    prism: np.ndarray  # (3,) ground-truth prism position


# ---------------------------------------------------------------------------
# Raycasting
# ---------------------------------------------------------------------------


def _gather_scene(scene: Scene, time_s: float):
    """Flatten scene geometry at a time instant.

    Returns (triangles (M,3,3), class_code (M,), surface_label (M,) object).
    """
    tris, codes, labels = [], [], []
    for surface in scene.as_built.surfaces:
        tris.append(surface.triangles)
        codes.append(np.zeros(len(surface.triangles), dtype=np.int8))
        labels.extend([surface.id] * len(surface.triangles))
    for surface in scene.clutter:
        tris.append(surface.triangles)
        codes.append(np.ones(len(surface.triangles), dtype=np.int8))
        labels.extend([surface.id] * len(surface.triangles))
    for actor in scene.actors:
        moved = actor.at(time_s)
        tris.append(moved.triangles)
        codes.append(np.full(len(moved.triangles), 2, dtype=np.int8))
        labels.extend([moved.id] * len(moved.triangles))
    if not tris:
        return np.zeros((0, 3, 3)), np.zeros(0, dtype=np.int8), np.array([], dtype=object)
    return np.concatenate(tris), np.concatenate(codes), np.array(labels, dtype=object)


def _raycast(origin: np.ndarray, dirs: np.ndarray, triangles: np.ndarray):
    """Nearest-hit distances of rays from one origin against a triangle soup.

    Returns (t (K,), tri_index (K,)); t is inf and tri_index -1 on miss.
    Moller-Trumbore, vectorized over ray chunks x all triangles.
    """
    k = len(dirs)
    best_t = np.full(k, np.inf)
    best_tri = np.full(k, -1, dtype=np.int64)
    if len(triangles) == 0 or k == 0:
        return best_t, best_tri
    v0 = triangles[:, 0]
    e1 = triangles[:, 1] - v0
    e2 = triangles[:, 2] - v0
    for start in range(0, k, _CHUNK):
        d = dirs[start : start + _CHUNK]  # (C, 3)
        pvec = np.cross(d[:, None, :], e2[None, :, :])  # (C, M, 3)
        det = np.einsum("mj,cmj->cm", e1, pvec)
        ok = np.abs(det) > 1e-12
        inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = origin - v0  # (M, 3)
        u = np.einsum("mj,cmj->cm", tvec, pvec) * inv_det
        ok &= (u >= -1e-12) & (u <= 1.0 + 1e-12)
        qvec = np.cross(tvec, e1)  # (M, 3)
        v = np.einsum("cj,mj->cm", d, qvec) * inv_det
        ok &= (v >= -1e-12) & (u + v <= 1.0 + 1e-12)
        t = np.einsum("mj,mj->m", e2, qvec)[None, :] * inv_det
        ok &= t > _RAY_EPS
        t = np.where(ok, t, np.inf)
        tri = np.argmin(t, axis=1)
        tmin = t[np.arange(len(d)), tri]
        hit = np.isfinite(tmin)
        sl = slice(start, start + len(d))
        best_t[sl] = np.where(hit, tmin, np.inf)
        best_tri[sl] = np.where(hit, tri, -1)
    return best_t, best_tri


def raycast_scan(
    scene: Scene,
    pose: RigidTransform,
    spec: LidarSpec,
    time_s: float = 0.0,
    seed=0,
) -> RawScan:
    """Simulate one LiDAR sweep from `pose` (sensor frame == body frame).

    One ray per (ring, azimuth); the nearest triangle hit within max range
    yields a point, perturbed along the ray by Gaussian range noise. Misses
    are dropped. Class labels come from the hit geometry and are never
    affected by the noise; actors are evaluated at `time_s`.
    """
    rng = _as_rng(seed)
    tris, codes, _ = _gather_scene(scene, time_s)
    dirs_sensor = spec.ray_directions()
    dirs_world = dirs_sensor @ pose.rotation.T
    t, tri = _raycast(pose.translation, dirs_world, tris)
    hit = np.isfinite(t) & (t <= spec.max_range_m)
    ranges = t[hit]
    if spec.range_noise_m > 0:
        ranges = ranges + spec.range_noise_m * rng.standard_normal(len(ranges))
        keep = (ranges > 0) & (ranges <= spec.max_range_m)
        ranges = ranges[keep]
        hit_idx = np.flatnonzero(hit)[keep]
    else:
        hit_idx = np.flatnonzero(hit)
    points = dirs_sensor[hit_idx] * ranges[:, None]
    classes = np.array(POINT_CLASSES, dtype=object)[codes[tri[hit_idx]]]
    return RawScan(points=points, classes=classes.astype(str), pose=pose)


def render_density_image(
    scene: Scene,
    camera_pose: RigidTransform,
    spec: CameraSpec,
    oracle: DensityOracleParams,
    time_s: float = 0.0,
    seed=0,
) -> DensityImage:
    """Render the density-score image a structure/clutter scorer would emit.

    `camera_pose` is the world pose of the camera (world <- camera). Primary
    rays classify each pixel; scores follow the oracle distributions, with a
    `corruption_rate` fraction of (optionally targeted) building pixels
    resampled from the foreground distribution.
    """
    rng = _as_rng(seed)
    tris, codes, labels = _gather_scene(scene, time_s)
    w, h = spec.width, spec.height
    u, v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dirs_cam = np.stack(
        [(u - spec.cx) / spec.fx, (v - spec.cy) / spec.fy, np.ones_like(u)], axis=-1
    ).reshape(-1, 3)
    inv_norm = 1.0 / np.linalg.norm(dirs_cam, axis=1)
    dirs_cam_unit = dirs_cam * inv_norm[:, None]
    dirs_world = dirs_cam_unit @ camera_pose.rotation.T
    t, tri = _raycast(camera_pose.translation, dirs_world, tris)
    hit = np.isfinite(t)
    pixel_code = np.full(len(t), -1, dtype=np.int8)
    pixel_code[hit] = codes[tri[hit]]

    values = np.full(len(t), oracle.mu_foreground)
    building = pixel_code == 0
    foreground = hit & ~building
    values[building] = oracle.mu_background + oracle.sigma * rng.standard_normal(
        int(building.sum())
    )
    values[foreground] = oracle.mu_foreground + oracle.sigma * rng.standard_normal(
        int(foreground.sum())
    )
    if oracle.corruption_rate > 0:
        eligible = building.copy()
        if oracle.corrupt_surface_ids is not None:
            tri_targeted = np.isin(labels, list(oracle.corrupt_surface_ids))
            target = np.zeros(len(t), dtype=bool)
            target[hit] = tri_targeted[tri[hit]]
            eligible &= target
        corrupt = eligible & (rng.random(len(t)) < oracle.corruption_rate)
        values[corrupt] = oracle.mu_foreground + oracle.sigma * rng.standard_normal(
            int(corrupt.sum())
        )
    values = np.clip(values, 0.0, 1.0).reshape(h, w)
    depth = np.where(hit, t * dirs_cam_unit[:, 2], np.inf).reshape(h, w)
    return DensityImage(values=values, depth=depth)


def prism_position(robot_pose: RigidTransform, prism: PrismSpec) -> np.ndarray:
    """World position of the survey prism for a given robot pose."""
    return robot_pose.apply(prism.offset)


def generate_trial_sequence(
    scene: Scene,
    robot_pose: RigidTransform,
    n_scans: int,
    lidar: LidarSpec,
    cameras: Sequence[CameraSpec],
    prism: PrismSpec,
    oracle: DensityOracleParams,
    seed: int = 0,
    period_s: float = 0.2,
) -> list[TrialFrame]:
    """Simulate a stationary sequence of independent noisy scans plus images.

    Trial i uses its own generator seeded with `seed + i` (splittable across
    workers); actors advance with the scan period. Bit-identical for a fixed
    seed.
    """
    if n_scans < 1:
        raise ValueError("n_scans must be >= 1")
    frames = []
    gt_prism = prism_position(robot_pose, prism)
    for i in range(n_scans):
        rng = np.random.default_rng(seed + i)
        time_s = i * period_s
        scan = raycast_scan(scene, robot_pose, lidar, time_s=time_s, seed=rng)
        images = tuple(
            render_density_image(
                scene, compose(robot_pose, cam.extrinsic), cam, oracle, time_s=time_s, seed=rng
            )
            for cam in cameras
        )
        frames.append(
            TrialFrame(
                index=i,
                time_s=time_s,
                scan=scan,
                images=images,
                pose=robot_pose,
                prism=gt_prism,
            )
        )
    return frames


# ---------------------------------------------------------------------------
# File formats: scan CSV and 16-bit PGM density images
# ---------------------------------------------------------------------------


def write_scan_csv(scan: RawScan, path) -> None:
    """Write `x,y,z,class` rows (meters, class string)."""
    with open(path, "w") as f:
        f.write("x,y,z,class\n")
        for p, c in zip(scan.points, scan.classes):
            f.write(f"{p[0]:.9f},{p[1]:.9f},{p[2]:.9f},{c}\n")


def read_scan_csv(path) -> RawScan:
    """Read a scan CSV; the ground-truth pose is not persisted (None)."""
    pts, cls = [], []
    with open(path) as f:
        header = f.readline().strip()
        if header.split(",")[:4] != ["x", "y", "z", "class"]:
            raise ValueError(f"{path}: expected header x,y,z,class")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 fields")
            try:
                pts.append([float(parts[0]), float(parts[1]), float(parts[2])])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric coordinate") from None
            cls.append(parts[3])
    return RawScan(
        points=np.array(pts) if pts else np.zeros((0, 3)),
        classes=np.array(cls, dtype=str),
        pose=None,
    )


def write_density_pgm(image: DensityImage, path) -> None:
    """16-bit binary PGM; score = pixel / 65535. The depth buffer is dropped."""
    quantized = np.round(image.values * 65535.0).astype(">u2")
    h, w = quantized.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(quantized.tobytes())


def read_density_pgm(path) -> DensityImage:
    data = Path(path).read_bytes()
    m = re.match(rb"P5\s+(?:#.*\s+)?(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ValueError(f"{path}: not a binary PGM file")
    w, h, maxval = int(m.group(1)), int(m.group(2)), int(m.group(3))
    if maxval != 65535:
        raise ValueError(f"{path}: expected 16-bit PGM (maxval 65535), got {maxval}")
    raw = data[m.end() :]
    expected = w * h * 2
    if len(raw) < expected:
        raise ValueError(f"{path}: truncated PGM payload")
    pixels = np.frombuffer(raw[:expected], dtype=">u2").reshape(h, w)
    return DensityImage(values=pixels.astype(np.float64) / 65535.0, depth=None)
