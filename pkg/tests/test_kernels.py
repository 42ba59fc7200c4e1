"""Compiled and numpy kernels must agree; the numpy ones are called directly."""
import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import random_pose
from dhgrasp import kernels
from dhgrasp._jit import USE_NUMBA
from dhgrasp.hand_model import forward_kinematics
from dhgrasp.shapes import box, icosphere, merge

NB, NP = kernels.NUMBA_KERNELS, kernels.NUMPY_KERNELS


@pytest.fixture(scope="module")
def tri():
    m = merge(icosphere(0.05, 2), box((0.04, 0.03, 0.02), center=(0.06, 0, 0)))
    return kernels._as_tri(m.vertices, m.faces)


@pytest.fixture(scope="module")
def queries():
    return np.random.default_rng(0).uniform(-0.08, 0.1, size=(700, 3))


def test_jit_flag_matches_environment():
    off = os.environ.get("DHG_DISABLE_JIT", "0").lower() not in ("", "0", "false", "no")
    assert USE_NUMBA == (not off)


def test_winding_agree(tri, queries):
    np.testing.assert_allclose(NB["winding"](queries, tri), NP["winding"](queries, tri), atol=1e-12)


def test_closest_agree(tri, queries):
    d1, q1, f1 = NB["closest"](queries, tri)
    d2, q2, f2 = NP["closest"](queries, tri)
    np.testing.assert_allclose(d1, d2, atol=1e-14)
    np.testing.assert_allclose(q1, q2, atol=1e-14)


def test_closest_subset_agree(tri, queries):
    rng = np.random.default_rng(1)
    counts = rng.integers(1, 30, size=len(queries))
    offsets = np.concatenate([[0], np.cumsum(counts)])
    cand = rng.integers(0, len(tri), size=offsets[-1])
    d1, q1, f1 = NB["closest_subset"](queries, tri, offsets, cand)
    d2, q2, f2 = NP["closest_subset"](queries, tri, offsets, cand)
    np.testing.assert_allclose(d1, d2, atol=1e-14)
    np.testing.assert_allclose(q1, q2, atol=1e-14)
    # every reported face belongs to that query's candidate list
    assert all(f1[i] in cand[offsets[i] : offsets[i + 1]] for i in range(len(queries)))


def test_closest_subset_full_list_equals_closest(tri, queries):
    offsets = np.arange(len(queries) + 1) * len(tri)
    cand = np.tile(np.arange(len(tri)), len(queries))
    d1, _, _ = kernels.closest_points_subset(queries, tri, offsets, cand)
    d2, _, _ = NP["closest"](queries, tri)
    np.testing.assert_allclose(d1, d2, atol=1e-14)


def test_rays_agree(tri):
    rng = np.random.default_rng(2)
    o = rng.uniform(-0.02, 0.02, size=(300, 3))
    d = rng.normal(size=(300, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    t1, f1 = NB["rays"](o, d, tri, 1e-9)
    t2, f2 = NP["rays"](o, d, tri, 1e-9)
    np.testing.assert_allclose(t1, t2, atol=1e-13)
    assert np.isfinite(t1).all()  # origins are inside the sphere


def test_solid_agree(template):
    rng = np.random.default_rng(3)
    s = forward_kinematics(random_pose(rng, template=template), template)
    lo, hi = s.bounds(0.01)
    pts = rng.uniform(lo, hi, size=(4000, 3))
    args = (pts, s.seg_a, s.seg_b, s.radii, s.ell_center, s.ell_inv)
    a, b = NB["solid"](*args), NP["solid"](*args)
    np.testing.assert_array_equal(a, b)
    assert 0 < a.sum() < len(pts)


def test_empty_inputs(tri):
    assert kernels.closest_points(np.zeros((0, 3)), tri.reshape(-1, 3), np.arange(len(tri) * 3).reshape(-1, 3))[0].shape == (0,)


def test_disable_flag_in_subprocess():
    code = "from dhgrasp._jit import USE_NUMBA; print(USE_NUMBA)"
    env = dict(os.environ, DHG_DISABLE_JIT="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
