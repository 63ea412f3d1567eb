import numpy as np
import pytest

from mimogen.scene import BaseStation, Building, Scene, UserGrid
from mimogen.tracer import PathList, PathRecord


@pytest.fixture
def rng():
    return np.random.default_rng(20260824)


def free_space_scene(bs_position=(0.0, 0.0, 10.0), ground_z=0.0, carrier=60e9):
    """A scene with no buildings: one BS, ground plane only."""
    return Scene(
        buildings=(),
        base_stations=(BaseStation(1, bs_position),),
        grids=(),
        carrier_freq=carrier,
        ground_z=ground_z,
    )


def wall_scene(walls, bs_position=(0.0, 0.0, 10.0), ground_z=-1000.0, carrier=60e9,
               losses=None):
    """Tall, long box 'walls' for image-method geometry checks.

    Each wall is (y_min, y_max): a box spanning x in [-500, 500],
    z in [ground, 200].
    """
    buildings = tuple(
        Building((-500.0, y0, ground_z), (500.0, y1, 200.0)) for y0, y1 in walls
    )
    return Scene(
        buildings=buildings,
        base_stations=(BaseStation(1, bs_position),),
        grids=(),
        carrier_freq=carrier,
        ground_z=ground_z,
        material_losses=losses or {},
    )


def random_path_record(rng, n_reflections=None):
    return PathRecord(
        aod_az=float(rng.uniform(-180.0, 179.99)),
        aod_el=float(rng.uniform(0.0, 180.0)),
        aoa_az=float(rng.uniform(-180.0, 179.99)),
        aoa_el=float(rng.uniform(0.0, 180.0)),
        power=float(rng.uniform(1e-14, 1e-6)),
        phase=float(rng.uniform(0.0, 2 * np.pi - 1e-9)),
        delay=float(rng.uniform(1e-9, 1e-5)),
        n_reflections=int(rng.integers(0, 5)) if n_reflections is None else n_reflections,
    )


def random_path_list(rng, bs_id, user_index, max_paths=25):
    n = int(rng.integers(0, max_paths + 1))
    paths = sorted((random_path_record(rng) for _ in range(n)), key=lambda p: -p.power)
    return PathList(
        bs_id=bs_id,
        user_index=user_index,
        user_position=tuple(rng.uniform(-100, 100, 3)),
        paths=tuple(paths),
    )
