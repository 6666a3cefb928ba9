import numpy as np
import pytest

from rotormor import BlockSystem, FullOrderSolver, MachineSpec, build_mesh, partition_dofs


def small_spec(**overrides) -> MachineSpec:
    """Coarse machine for unit tests: ~1k free DOFs, builds in milliseconds."""
    defaults = dict(
        n_interface=144,
        rings_per_band=(1, 1, 1, 1, 2, 1),
        bridge_rings=1,
    )
    defaults.update(overrides)
    return MachineSpec(**defaults)


@pytest.fixture(scope="session")
def spec():
    return small_spec()


@pytest.fixture(scope="session")
def mesh(spec):
    return build_mesh(spec)


@pytest.fixture(scope="session")
def partition(mesh):
    return partition_dofs(mesh)


@pytest.fixture(scope="session")
def system(mesh, partition, spec):
    return BlockSystem.build(mesh, partition, spec)


@pytest.fixture(scope="session")
def solver(system):
    return FullOrderSolver(system)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
