import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dhgrasp.hand_model import HandPose, default_template, forward_kinematics, matrix_to_rot6d
from dhgrasp.shapes import box, icosphere, object_from_mesh

settings.register_profile("dhg", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("DHG_HYPOTHESIS_PROFILE", "dhg"))

CRITERIA = {}


def record_criterion(number, ok, detail):
    """Store a one-line verdict; all of them are printed in the terminal summary."""
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])


def central_fd(f, x, h=1e-6, idx=None):
    x = np.asarray(x, dtype=np.float64)
    idx = range(len(x)) if idx is None else idx
    out = np.zeros(len(x))
    for i in idx:
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def checked_fd(f, x, h=1e-7, kink_tol=1e-6):
    """Central differences and whether f is smooth around x.

    Central differences at h and h/4 agree to O(h^2) on a smooth function.
    A kink inside the stencil (an active-set change of a piecewise energy)
    shifts them by different fractions of the slope jump. Plain curvature
    does not, which a forward/backward comparison cannot tell apart. The
    threshold has a floor for rounding error in f.
    """
    x = np.asarray(x, dtype=np.float64)
    wide = central_fd(f, x, h)
    narrow = central_fd(f, x, h / 4)
    scale = max(np.abs(wide).max(), 1e-12)
    # rounding in f alone moves the narrow stencil by about eps |f| / (h / 4)
    rounding = 100 * np.finfo(float).eps * abs(f(x)) / (h / 4)
    return wide, bool(np.abs(wide - narrow).max() <= kink_tol * scale + rounding)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), np.linalg.norm(a), 1e-12))


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def random_pose(rng, chirality="right", template=None, trans_scale=0.05, margin=0.05):
    """Pose with every joint strictly inside its limits (non-degenerate for FD)."""
    lim = (template or default_template()).limits
    theta = rng.uniform(lim[:, 0] + margin, lim[:, 1] - margin)
    return HandPose(chirality, rng.normal(scale=trans_scale, size=3), matrix_to_rot6d(random_rotation(rng)), theta)


@pytest.fixture(scope="session")
def template():
    return default_template()


@pytest.fixture(scope="session")
def sphere():
    return object_from_mesh("sphere", icosphere(0.05, 3), n_points=2048, seed=0)


@pytest.fixture(scope="session")
def unit_box():
    return object_from_mesh("box", box((0.1, 0.06, 0.04)), n_points=2048, seed=0)


def refine_fixture(obj, rng, template=None):
    """A contact-rich dual grasp on a centred sphere plus its approach directions.

    The right hand closes around the sphere from the +x side; the left hand is
    its mirror image spun a quarter turn about x (still a valid grasp on a
    sphere) so the fingers of the two hands do not interleave. Returns
    ``(right, left, approach_r, approach_l, D_hat)``.
    """
    from dhgrasp.contact import contact_representation
    from dhgrasp.hand_model import axis_angle, mirror_pose
    from dhgrasp.symopt import hand_hand_depth
    from dhgrasp.synth import random_frame_dirs, synth_grasp

    template = template or default_template()
    while True:
        a, t = random_frame_dirs(rng, 0, 0.8)
        right = synth_grasp(obj, a, t, template, standoff=0.01, polish=True)
        spin = axis_angle([1.0, 0, 0], np.pi / 2 * rng.choice([-1, 1]))
        m = mirror_pose(right, 0)
        left = HandPose("left", spin @ m.trans, matrix_to_rot6d(spin @ m.rotation), m.theta)
        sr, sl = forward_kinematics(right, template), forward_kinematics(left, template)
        if hand_hand_depth(sr, sl) == 0:
            break
    rep = contact_representation(obj, sr, sl)
    return right, left, a, spin @ (a * [-1.0, 1, 1]), np.vstack([rep.right.D, rep.left.D])
