import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from projseg import synth
from projseg.mesh import mesh_from_arrays


@pytest.fixture(scope="session")
def unit_cube():
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)],
                 dtype=np.float64)
    f = np.array([
        [0, 1, 3], [0, 3, 2],      # x = 0
        [4, 6, 7], [4, 7, 5],      # x = 1
        [0, 4, 5], [0, 5, 1],      # y = 0
        [2, 3, 7], [2, 7, 6],      # y = 1
        [0, 2, 6], [0, 6, 4],      # z = 0
        [1, 5, 7], [1, 7, 3],      # z = 1
    ])
    return mesh_from_arrays(v, f)


@pytest.fixture(scope="session")
def small_table():
    mesh, labels = synth.generate_shape(
        synth.SyntheticShapeSpec("table", seed=11))
    return mesh, labels


@pytest.fixture(scope="session")
def small_sphere():
    return synth.icosphere(2)


def single_triangle():
    v = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    f = np.array([[0, 1, 2]])
    return mesh_from_arrays(v, f, orient=False)
