"""Project density images into LiDAR scans and derive per-point ICP weights.

Two weighting schemes:
  * binary: w = 1 where density >= delta, points below are dropped
  * linear: w = max(0, a * density - delta') with a = (1 + delta') / max
               density, so the best point always gets weight exactly 1
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import RigidTransform, invert
from .sensor_sim import CameraSpec, DensityImage, RawScan

COMBINE_RULES = ("max", "first_hit")


class FusionError(Exception):
    pass


class MissingDensitiesError(FusionError):
    """Weighting requested on a scan without fused densities."""


class DegenerateDensitiesError(FusionError):
    """Linear weighting needs at least one strictly positive density."""


@dataclass(frozen=True)
class FusionConfig:
    """How scores from multiple covering cameras are combined."""

    rule: str = "max"
    occlusion_check: bool = False
    occlusion_tolerance_m: float = 0.05

    def __post_init__(self):
        if self.rule not in COMBINE_RULES:
            raise ValueError(f"rule must be one of {COMBINE_RULES}")


@dataclass(frozen=True)
class Scan:
    """Scan points with optional per-point densities and weights."""

    points: np.ndarray  # (N, 3) sensor frame
    densities: np.ndarray | None = None  # (N,) in [0, 1]
    weights: np.ndarray | None = None  # (N,) in [0, 1]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        for name in ("densities", "weights"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=np.float64).reshape(-1)
            if len(arr) != len(pts):
                raise ValueError(f"{name} length must match points")
            object.__setattr__(self, name, arr)
        if self.weights is not None and len(self.weights):
            if self.weights.min() < 0 or self.weights.max() > 1:
                raise ValueError("weights must lie in [0, 1]")

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def from_raw(cls, raw: RawScan) -> "Scan":
        return cls(points=raw.points)


def _project(points: np.ndarray, spec: CameraSpec, camera_pose: RigidTransform):
    """Pixel indices and depths of points under one camera; nearest pixel.

    Returns (covered (N,), iu (N,), iv (N,), z (N,)). `camera_pose` maps
    camera coordinates into the scan frame.
    """
    cam_from_scan = invert(camera_pose)
    p = cam_from_scan.apply(points)
    z = p[:, 2]
    in_front = z > 1e-9
    zsafe = np.where(in_front, z, 1.0)
    iu = np.rint(spec.fx * p[:, 0] / zsafe + spec.cx).astype(np.int64)
    iv = np.rint(spec.fy * p[:, 1] / zsafe + spec.cy).astype(np.int64)
    covered = in_front & (iu >= 0) & (iu < spec.width) & (iv >= 0) & (iv < spec.height)
    return covered, iu, iv, z


def fuse_densities(
    scan: RawScan | Scan,
    images: Sequence[tuple[DensityImage, CameraSpec, RigidTransform]],
    cfg: FusionConfig = FusionConfig(),
) -> tuple[Scan, int]:
    """Assign each scan point the density of its pixel in the covering cameras.

    `images` holds (density image, camera spec, camera pose) triples, with the
    pose mapping camera coordinates into the scan frame (normally the mounted
    extrinsic). Points seen by no camera are removed; the removed count is
    returned alongside the fused scan.
    """
    if not images:
        raise ValueError("fuse_densities needs at least one image")
    points = scan.points
    n = len(points)
    covered_any = np.zeros(n, dtype=bool)
    fused = np.full(n, -np.inf)
    for image, spec, camera_pose in images:
        if image.values.shape != (spec.height, spec.width):
            raise ValueError("density image resolution does not match its camera spec")
        covered, iu, iv, z = _project(points, spec, camera_pose)
        if cfg.occlusion_check:
            if image.depth is None:
                raise ValueError("occlusion check requires images with a depth buffer")
            idx = np.flatnonzero(covered)
            buf = image.depth[iv[idx], iu[idx]]
            covered[idx] &= z[idx] <= buf + cfg.occlusion_tolerance_m
        idx = np.flatnonzero(covered)
        d = image.values[iv[idx], iu[idx]]
        if cfg.rule == "max":
            fused[idx] = np.maximum(fused[idx], d)
        else:  # first_hit: earlier cameras win
            first = ~covered_any[idx]
            fused[idx[first]] = d[first]
        covered_any |= covered
    kept = covered_any
    removed = int(n - kept.sum())
    return Scan(points=points[kept], densities=fused[kept]), removed


def weights_binary(scan: Scan, delta: float = 0.5) -> Scan:
    """Hard segmentation: keep points with density >= delta at weight 1.

    Points below the threshold are dropped from the scan entirely, so the
    output weight array is all ones.
    """
    if scan.densities is None:
        raise MissingDensitiesError("binary weighting needs fused densities")
    keep = scan.densities >= delta
    return Scan(
        points=scan.points[keep],
        densities=scan.densities[keep],
        weights=np.ones(int(keep.sum())),
    )


def weights_linear(scan: Scan, delta_prime: float = 0.1) -> Scan:
    """Continuous weighting: w = max(0, a * d - delta') with the
    normalization a = (1 + delta') / max(d), so max(w) == 1 exactly.

    All points are retained; low-density points just lose influence.
    """
    if scan.densities is None:
        raise MissingDensitiesError("linear weighting needs fused densities")
    if len(scan) == 0:
        raise DegenerateDensitiesError("cannot normalize an empty scan")
    d_max = float(scan.densities.max())
    if d_max <= 0:
        raise DegenerateDensitiesError("max density must be > 0 to normalize")
    a = (1.0 + delta_prime) / d_max
    w = np.maximum(0.0, a * scan.densities - delta_prime)
    w[scan.densities == d_max] = 1.0  # exact unit weight at the maximum
    return Scan(points=scan.points, densities=scan.densities, weights=w)


def write_fused_csv(scan: Scan, path) -> None:
    """Write `x,y,z,d,w` rows; missing densities/weights are written as nan."""
    d = scan.densities if scan.densities is not None else np.full(len(scan), np.nan)
    w = scan.weights if scan.weights is not None else np.full(len(scan), np.nan)
    with open(path, "w") as f:
        f.write("x,y,z,d,w\n")
        for p, di, wi in zip(scan.points, d, w):
            f.write(f"{p[0]:.9f},{p[1]:.9f},{p[2]:.9f},{di:.9f},{wi:.9f}\n")


def read_fused_csv(path) -> Scan:
    rows = []
    with open(path) as f:
        header = f.readline().strip()
        if header.split(",")[:5] != ["x", "y", "z", "d", "w"]:
            raise ValueError(f"{path}: expected header x,y,z,d,w")
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields")
            try:
                rows.append([float(x) for x in parts])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field") from None
    arr = np.array(rows) if rows else np.zeros((0, 5))
    densities = arr[:, 3] if len(arr) and not np.all(np.isnan(arr[:, 3])) else None
    weights = arr[:, 4] if len(arr) and not np.all(np.isnan(arr[:, 4])) else None
    return Scan(points=arr[:, :3], densities=densities, weights=weights)
