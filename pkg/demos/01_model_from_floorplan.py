#!/usr/bin/env python3
"""Build a 3D building model from a 2D floorplan.

Walks through the model-side workflow: extrude wall segments into closed
boxes plus a planar floor, validate a reference subset, sample the mesh into
a matchable point map, and inject an as-built deviation.
"""

import numpy as np

from planloc import (
    Deviation,
    Floorplan2D,
    ReferenceSet,
    RigidTransform,
    WallSegment,
    apply_deviation,
    extrude_floorplan,
    sample_model,
    save_model,
    validate_reference_set,
)

# A 6 x 6 m room with four named walls. Units are meters throughout.
plan = Floorplan2D(
    walls=(
        WallSegment([0, 0], [6, 0], 0.2, "wall_a"),
        WallSegment([0, 0], [0, 6], 0.2, "wall_b"),
        WallSegment([0, 6], [6, 6], 0.2, "wall_c"),
        WallSegment([6, 0], [6, 6], 0.2, "wall_d"),
    ),
    wall_height=2.5,
    floor_outline=np.array([[0, 0], [6, 0], [6, 6], [0, 6]], dtype=float),
)

model = extrude_floorplan(plan)
print("extruded surfaces:")
for s in model.surfaces:
    print(f"  {s.id:<8} {len(s.triangles):3d} triangles, {s.area:6.1f} m^2")

# Task references: the near corner (two perpendicular walls plus the floor).
refs = validate_reference_set(model, ReferenceSet(("floor", "wall_a", "wall_b")))
print(f"\nreference set {refs.surface_ids} constrains all six pose dof")

# Sample the mesh into the sparse point map ICP will match against.
cloud = sample_model(model, density=400.0, seed=0)
print(f"sampled map: {len(cloud)} points at 400 points/m^2")

# The as-built world: the far wall ended up 0.3 m closer than planned.
shifted = apply_deviation(
    model, [Deviation(("wall_c",), RigidTransform(np.eye(3), [0, -0.3, 0]))]
)
moved = shifted.get("wall_c").triangles[:, :, 1].mean() - model.get("wall_c").triangles[:, :, 1].mean()
print(f"as-built wall_c moved by {moved:+.3f} m in y")

save_model(model, "as_planned_demo.obj")
save_model(shifted, "as_built_demo.obj")
print("\nwrote as_planned_demo.obj / as_built_demo.obj")
