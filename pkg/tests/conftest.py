import numpy as np
import pytest

from fuelmap.datamodel import FeatureSchema, FuelClass, SampleTable
from fuelmap.fixtures import WorldSpec, generate_world, write_world


def make_table(X, labels, names=None, provenance="field_plot"):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    names = names or tuple(f"f{j}" for j in range(X.shape[1]))
    return SampleTable.from_arrays(FeatureSchema(tuple(names)), X, labels, provenance)


def blobs(n_per_class=50, n_classes=2, dim=2, separation=10.0, seed=0, classes=None):
    """Isotropic unit-variance Gaussian blobs spaced ``separation`` apart."""
    rng = np.random.default_rng(seed)
    classes = classes or [int(c) for c in (FuelClass.TU1, FuelClass.GR2, FuelClass.SH5,
                                           FuelClass.TL3)[:n_classes]]
    X, y = [], []
    for i, c in enumerate(classes):
        centre = np.zeros(dim)
        centre[i % dim] = separation * (1 + i // dim)
        X.append(rng.standard_normal((n_per_class, dim)) + centre)
        y += [c] * n_per_class
    return make_table(np.vstack(X), y)


@pytest.fixture(scope="session")
def world():
    return generate_world(WorldSpec())


@pytest.fixture(scope="session")
def world_dir(world, tmp_path_factory):
    d = tmp_path_factory.mktemp("world")
    cfg = write_world(world, d)
    return cfg
