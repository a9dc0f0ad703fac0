"""Experiment orchestration: configuration loading, scene construction, the
2x3 (icp x scan) method matrix over stationary trial sequences, and report
emission.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .fusion import FusionConfig, Scan, fuse_densities
from .geometry import RigidTransform
from .metrics import (
    MetricsReport,
    TrialRecord,
    average_executions,
    compute_report,
    write_report_csv,
)
from .model import (
    BuildingModel,
    Deviation,
    ReferenceSet,
    apply_deviation,
    extrude_floorplan,
    load_floorplan,
    load_reference_set,
    make_box_surface,
    sample_model,
    save_model,
    validate_reference_set,
)
from .registration import (
    ICP_METHODS,
    SCAN_METHODS,
    IcpConfig,
    LocalizationResult,
    MapIndex,
    SelectiveConfig,
    localize,
    result_record,
)
from .sensor_sim import (
    Actor,
    CameraSpec,
    DensityImage,
    DensityOracleParams,
    LidarSpec,
    LinearTrajectory,
    PrismSpec,
    Scene,
    TrialFrame,
    default_camera_rig,
    generate_trial_sequence,
    prism_position,
)

METHOD_MATRIX: tuple[tuple[str, str], ...] = tuple(
    (icp, scan) for icp in ICP_METHODS for scan in SCAN_METHODS
)


class ConfigError(Exception):
    """Configuration problem; the message names the file and field."""


def _pose_from_obj(obj: dict, where: str) -> RigidTransform:
    translation = obj.get("translation", [0.0, 0.0, 0.0])
    if "quaternion" in obj and "yaw_deg" in obj:
        raise ConfigError(f"{where}: give either quaternion or yaw_deg, not both")
    if "quaternion" in obj:
        return RigidTransform.from_quat(obj["quaternion"], translation)
    yaw = np.deg2rad(float(obj.get("yaw_deg", 0.0)))
    return RigidTransform.from_rotvec([0.0, 0.0, yaw], translation)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs, loadable from a single JSON file."""

    floorplan_path: Path
    references_path: Path
    deviations: tuple[Deviation, ...]
    clutter_defs: tuple[dict, ...]
    actor_defs: tuple[dict, ...]
    lidar: LidarSpec
    cameras: tuple[CameraSpec, ...]
    prism: PrismSpec
    oracle: DensityOracleParams
    fusion: FusionConfig
    delta: float
    delta_prime: float
    selective: SelectiveConfig
    map_density_per_m2: float
    robot_pose: RigidTransform
    initial_pose: RigidTransform
    n_scans: int
    n_executions: int
    seed: int
    out_dir: Path
    scan_period_s: float = 0.2

    def __post_init__(self):
        if self.n_scans < 1 or self.n_executions < 1:
            raise ConfigError("n_scans and n_executions must be >= 1")


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Load a schema-1 experiment config; relative paths resolve against the
    config file's directory. `overrides` may replace scalar knobs
    (seed, out_dir, delta, delta_prime, tau_trans, tau_rot)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    if doc.get("schema") != 1:
        raise ConfigError(f"{path}: field 'schema' must be 1")
    overrides = overrides or {}
    base = path.parent

    def need(key: str):
        if key not in doc:
            raise ConfigError(f"{path}: missing required field '{key}'")
        return doc[key]

    try:
        lidar_doc = doc.get("lidar", {})
        rings = lidar_doc.get("rings", 16)
        lidar = LidarSpec(
            ring_elevations_deg=tuple(
                np.linspace(
                    lidar_doc.get("elevation_min_deg", -15.0),
                    lidar_doc.get("elevation_max_deg", 15.0),
                    rings,
                )
            ),
            azimuth_step_deg=lidar_doc.get("azimuth_step_deg", 0.4),
            max_range_m=lidar_doc.get("max_range_m", 50.0),
            range_noise_m=lidar_doc.get("range_noise_m", 0.01),
        )
        cam_doc = doc.get("cameras", {})
        cameras = default_camera_rig(
            count=cam_doc.get("count", 3),
            width=cam_doc.get("width", 160),
            height=cam_doc.get("height", 120),
            hfov_deg=cam_doc.get("hfov_deg", 110.0),
            mount=cam_doc.get("mount", (0.0, 0.0, 0.25)),
        )
        oracle_doc = doc.get("density_oracle", {})
        corrupt = oracle_doc.get("corrupt_surfaces")
        oracle = DensityOracleParams(
            mu_background=oracle_doc.get("mu_bg", 0.8),
            mu_foreground=oracle_doc.get("mu_fg", 0.2),
            sigma=oracle_doc.get("sigma", 0.1),
            corruption_rate=oracle_doc.get("rho", 0.05),
            corrupt_surface_ids=tuple(corrupt) if corrupt else None,
        )
        fusion_doc = doc.get("fusion", {})
        fusion = FusionConfig(
            rule=fusion_doc.get("rule", "max"),
            occlusion_check=fusion_doc.get("occlusion_check", False),
        )
        delta = float(overrides.get("delta", fusion_doc.get("delta", 0.5)))
        delta_prime = float(overrides.get("delta_prime", fusion_doc.get("delta_prime", 0.1)))
        def icp_from(doc_section: dict) -> IcpConfig:
            return IcpConfig(
                max_iterations=doc_section.get("max_iterations", 50),
                max_correspondence_m=doc_section.get("max_correspondence_m", 0.5),
                translation_eps_m=doc_section.get("translation_eps_m", 1e-4),
                rotation_eps_rad=doc_section.get("rotation_eps_rad", 1e-5),
                kernel=doc_section.get("kernel", "huber"),
                huber_scale_m=doc_section.get("huber_scale_m", 0.05),
                min_correspondences=doc_section.get("min_correspondences", 30),
            )

        icp_doc = doc.get("icp", {})
        icp = icp_from(icp_doc)
        sel_doc = doc.get("selective", {})
        # the selective stage may override solver knobs (tighter gate etc.)
        selective = SelectiveConfig(
            tau_translation_m=float(
                overrides.get("tau_trans", sel_doc.get("tau_trans_m", 0.15))
            ),
            tau_rotation_rad=float(
                overrides.get("tau_rot", sel_doc.get("tau_rot_rad", 0.05))
            ),
            full_icp=icp,
            selective_icp=icp_from({**icp_doc, **sel_doc.get("icp", {})}),
        )
        deviations = tuple(
            Deviation(
                surface_ids=tuple(d["surfaces"]),
                offset=_pose_from_obj(d, f"{path}: deviation[{i}]"),
            )
            for i, d in enumerate(doc.get("deviation", []))
        )
        robot_pose = _pose_from_obj(need("robot_pose"), f"{path}: robot_pose")
        initial_pose = (
            _pose_from_obj(doc["initial_pose"], f"{path}: initial_pose")
            if "initial_pose" in doc
            else robot_pose
        )
        prism = PrismSpec(offset=np.asarray(doc.get("prism", {}).get("offset", [0.0, 0.0, 0.3])))
        return ExperimentConfig(
            floorplan_path=(base / need("floorplan")).resolve(),
            references_path=(base / need("references")).resolve(),
            deviations=deviations,
            clutter_defs=tuple(doc.get("clutter", [])),
            actor_defs=tuple(doc.get("actors", [])),
            lidar=lidar,
            cameras=cameras,
            prism=prism,
            oracle=oracle,
            fusion=fusion,
            delta=delta,
            delta_prime=delta_prime,
            selective=selective,
            map_density_per_m2=float(doc.get("map_density_per_m2", 400.0)),
            robot_pose=robot_pose,
            initial_pose=initial_pose,
            n_scans=int(doc.get("n_scans", 300)),
            n_executions=int(doc.get("n_executions", 3)),
            seed=int(overrides.get("seed", doc.get("seed", 0))),
            out_dir=Path(overrides.get("out_dir", base / doc.get("out_dir", "out"))),
            scan_period_s=float(doc.get("scan_period_s", 0.2)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from e


@dataclass(frozen=True)
class SceneBundle:
    """Everything run-time localization needs, assembled from one config."""

    as_planned: BuildingModel
    as_built: BuildingModel
    references: ReferenceSet
    scene: Scene
    full_map: MapIndex
    ref_map: MapIndex


def _clutter_surface(defn: dict):
    return make_box_surface(
        defn["id"],
        center=defn["center"],
        size=defn["size"],
        yaw_rad=np.deg2rad(float(defn.get("yaw_deg", 0.0))),
    )


def assemble_scene(cfg: ExperimentConfig) -> SceneBundle:
    """Extrude the plan, inject deviations, attach clutter/actors, and build
    the nearest-neighbor maps from the as-planned model."""
    plan = extrude_floorplan(load_floorplan(cfg.floorplan_path))
    refs = validate_reference_set(plan, load_reference_set(cfg.references_path))
    as_built = apply_deviation(plan, cfg.deviations)
    clutter = tuple(_clutter_surface(d) for d in cfg.clutter_defs)
    actors = tuple(
        Actor(
            surface=_clutter_surface(d),
            trajectory=LinearTrajectory(tuple(d.get("velocity", (0.0, 0.0, 0.0)))),
        )
        for d in cfg.actor_defs
    )
    scene = Scene(as_built=as_built, clutter=clutter, actors=actors)
    cloud = sample_model(plan, cfg.map_density_per_m2, seed=cfg.seed)
    full_map = MapIndex(cloud)
    ref_map = MapIndex(cloud.subset(refs.surface_ids))
    return SceneBundle(plan, as_built, refs, scene, full_map, ref_map)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def build_scene_files(cfg: ExperimentConfig) -> list[Path]:
    """Write as-planned, as-built, and reference meshes; returns the paths."""
    bundle = assemble_scene(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "as_planned.obj", out / "as_built.obj", out / "references.obj"]
    save_model(bundle.as_planned, paths[0])
    save_model(bundle.as_built, paths[1])
    save_model(bundle.as_planned.subset(bundle.references.surface_ids), paths[2])
    return paths


def scene_inventory(cfg: ExperimentConfig) -> list[str]:
    bundle = assemble_scene(cfg)
    lines = [f"{'surface':<16} {'triangles':>9} {'area_m2':>9} {'reference':>9}"]
    for s in bundle.as_planned.surfaces:
        is_ref = "yes" if s.id in bundle.references.surface_ids else ""
        lines.append(f"{s.id:<16} {len(s.triangles):>9d} {s.area:>9.2f} {is_ref:>9}")
    return lines


def fuse_frame(frame: TrialFrame, cfg: ExperimentConfig) -> tuple[Scan, int]:
    """Project the frame's density images into its scan (body-frame poses
    come from the mounted camera extrinsics)."""
    triples = [
        (img, cam, cam.extrinsic) for img, cam in zip(frame.images, cfg.cameras)
    ]
    return fuse_densities(frame.scan, triples, cfg.fusion)


def localize_frame(
    frame_scan: Scan,
    fused_scan: Scan,
    bundle: SceneBundle,
    cfg: ExperimentConfig,
    method: tuple[str, str],
) -> LocalizationResult:
    scan = frame_scan if method[1] == "full" else fused_scan
    return localize(
        scan,
        bundle.full_map,
        bundle.ref_map,
        cfg.initial_pose,
        method,
        delta=cfg.delta,
        delta_prime=cfg.delta_prime,
        cfg=cfg.selective,
    )


def run_execution(
    bundle: SceneBundle,
    cfg: ExperimentConfig,
    execution: int,
    methods: Sequence[tuple[str, str]] = METHOD_MATRIX,
) -> dict[tuple[str, str], list[TrialRecord]]:
    """Simulate one execution's trial sequence and localize it under every
    requested method. Trial seeds are `seed + execution * n_scans + trial`."""
    frames = generate_trial_sequence(
        bundle.scene,
        cfg.robot_pose,
        cfg.n_scans,
        cfg.lidar,
        cfg.cameras,
        cfg.prism,
        cfg.oracle,
        seed=cfg.seed + execution * cfg.n_scans,
        period_s=cfg.scan_period_s,
    )
    needs_fusion = any(m[1] != "full" for m in methods)
    records: dict[tuple[str, str], list[TrialRecord]] = {m: [] for m in methods}
    for frame in frames:
        raw_scan = Scan.from_raw(frame.scan)
        fused_scan = fuse_frame(frame, cfg)[0] if needs_fusion else raw_scan
        for method in methods:
            result = localize_frame(raw_scan, fused_scan, bundle, cfg, method)
            est = (
                prism_position(result.transform, cfg.prism)
                if result.localized
                else None
            )
            records[method].append(
                TrialRecord(
                    scan_index=frame.index,
                    result=result,
                    true_pose=frame.pose,
                    true_prism=frame.prism,
                    estimated_prism=est,
                )
            )
    return records


def run_matrix(cfg: ExperimentConfig) -> tuple[Path, Path]:
    """Run the full 2x3 method matrix, averaging over executions.

    Writes `report.csv` (six method rows in fixed order) and `trials.jsonl`
    (one record per execution x method x scan). Returns both paths.
    """
    bundle = assemble_scene(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "report.csv"
    jsonl_path = out / "trials.jsonl"
    per_method_reports: dict[tuple[str, str], list[MetricsReport]] = {
        m: [] for m in METHOD_MATRIX
    }
    with open(jsonl_path, "w") as log:
        for execution in range(cfg.n_executions):
            records = run_execution(bundle, cfg, execution)
            for method in METHOD_MATRIX:
                per_method_reports[method].append(compute_report(records[method]))
                for rec in records[method]:
                    entry = result_record(rec.result, *method)
                    entry["execution"] = execution
                    entry["scan_index"] = rec.scan_index
                    log.write(json.dumps(entry) + "\n")
    rows = [
        (icp, scan, average_executions(per_method_reports[(icp, scan)]))
        for icp, scan in METHOD_MATRIX
    ]
    write_report_csv(rows, csv_path)
    return csv_path, jsonl_path


def localize_once(
    cfg: ExperimentConfig,
    scan: Scan,
    images: Sequence[DensityImage],
    init: RigidTransform,
    method: tuple[str, str],
) -> LocalizationResult:
    """Single-shot localization of an externally supplied scan.

    When density images are given they are fused with the configured camera
    rig first; otherwise the scan must already carry densities if a filtered
    or weighted method is requested.
    """
    bundle = assemble_scene(cfg)
    if images:
        triples = [
            (img, cam, cam.extrinsic) for img, cam in zip(images, cfg.cameras)
        ]
        scan = fuse_densities(scan, triples, cfg.fusion)[0]
    return localize(
        scan,
        bundle.full_map,
        bundle.ref_map,
        init,
        method,
        delta=cfg.delta,
        delta_prime=cfg.delta_prime,
        cfg=cfg.selective,
    )
