"""Shared fixtures: warmed kernels and reusable phantom volumes."""

import numpy as np
import pytest

import pointmatch as pm
from pointmatch import _kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the numba kernels once so timed tests measure compute only."""
    _kernels.warmup()
    # One real end-to-end match compiles the kernels for the exact argument
    # signatures the search uses (read-only descriptor arrays).
    rng = np.random.default_rng(0)
    spec = pm.PhantomSpec(dims=(24, 24, 16), spacing=(2.0, 2.0, 2.5), n_blobs=3)
    src, tgt, _, query, _ = pm.build_phantom_pair(
        rng, spec, pm.SmoothTransform.identity()
    )
    pm.match_point(src, tgt, query, pm.SearchConfig(levels=2, threads=2))


def make_ramp_volume(dims=(9, 7, 5), spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    """Deterministic ramp: intensity = i + 10*j + 100*k (easy oracle math)."""
    nx, ny, nz = dims
    i = np.arange(nx, dtype=np.float32)
    j = np.arange(ny, dtype=np.float32)
    k = np.arange(nz, dtype=np.float32)
    data = (
        i[None, None, :] + 10.0 * j[None, :, None] + 100.0 * k[:, None, None]
    ).astype(np.float32)
    return pm.Volume(dims=dims, spacing=spacing, origin=origin, data=data)


def make_random_volume(rng, dims, spacing, origin=(0.0, 0.0, 0.0), scale=1000.0):
    nx, ny, nz = dims
    data = rng.random((nz, ny, nx), dtype=np.float32) * np.float32(scale)
    return pm.Volume(dims=dims, spacing=spacing, origin=origin, data=data)


def random_descriptor(rng, dim=200, valid_fraction=0.8, integer=False, scale=100.0):
    if integer:
        values = rng.integers(0, 64, size=dim).astype(np.float32)
    else:
        values = (rng.random(dim) * scale).astype(np.float32)
    valid = rng.random(dim) < valid_fraction
    values = np.where(valid, values, np.float32(0.0))
    return pm.Descriptor(values=values, valid=valid)


@pytest.fixture(scope="session")
def fine_self_pair():
    """High-contrast phantom at ~1 mm spacing for sub-mm self-match tests."""
    rng = np.random.default_rng(11)
    spec = pm.PhantomSpec(dims=(72, 72, 48), spacing=(1.0, 1.0, 1.25), n_blobs=10)
    src, _, _, query, radius = pm.build_phantom_pair(
        rng, spec, pm.SmoothTransform.identity()
    )
    return src, query, radius
