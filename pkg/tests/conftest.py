"""Shared scene builders for the test suite."""

import numpy as np
import pytest

from planloc import (
    Deviation,
    Floorplan2D,
    RigidTransform,
    WallSegment,
    apply_deviation,
    extrude_floorplan,
)
from planloc.sensor_sim import Scene


def square_room_plan(side: float = 6.0, thickness: float = 0.2, height: float = 2.5):
    """Four named walls around a square floor."""
    s = side
    return Floorplan2D(
        walls=(
            WallSegment([0, 0], [s, 0], thickness, "wall_a"),
            WallSegment([0, 0], [0, s], thickness, "wall_b"),
            WallSegment([0, s], [s, s], thickness, "wall_c"),
            WallSegment([s, 0], [s, s], thickness, "wall_d"),
        ),
        wall_height=height,
        floor_outline=np.array([[0, 0], [s, 0], [s, s], [0, s]], dtype=float),
    )


def random_rotvec(rng: np.random.Generator, max_angle: float = np.pi * 0.9) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return axis * rng.uniform(0, max_angle)


@pytest.fixture(scope="session")
def room_model():
    return extrude_floorplan(square_room_plan())


@pytest.fixture(scope="session")
def room_scene(room_model):
    return Scene(as_built=room_model)


@pytest.fixture(scope="session")
def deviated_room():
    """Room whose far wall sits 0.3 m closer than the plan claims."""
    plan_model = extrude_floorplan(square_room_plan())
    shift = RigidTransform(np.eye(3), [0.0, -0.3, 0.0])
    as_built = apply_deviation(plan_model, [Deviation(("wall_c",), shift)])
    return plan_model, as_built
