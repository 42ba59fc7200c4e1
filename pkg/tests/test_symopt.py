import numpy as np
import pytest

from conftest import checked_fd, random_pose, rel_err
from dhgrasp.hand_model import POSE_DIM, HandPose, forward_kinematics, mirror_pose
from dhgrasp.symopt import (
    DualGrasp,
    EnergyConfig,
    dual_energy,
    energy_phh,
    energy_pho,
    hand_hand_depth,
    hand_object_depth,
    optimize_dual_grasp,
    run_symopt,
)
from dhgrasp.symmetry import SymmetryReport
from dhgrasp.synth import random_frame_dirs, synth_grasp


def split(x):
    return HandPose.from_vector(x[:POSE_DIM], "right"), HandPose.from_vector(x[POSE_DIM:], "left")


def overlapping(rng, template):
    r = random_pose(rng, "right", template, trans_scale=0.01)
    l_ = random_pose(rng, "left", template, trans_scale=0.01)
    return r, l_


def test_energies_vanish_when_apart(template, sphere):
    r = forward_kinematics(HandPose("right", [0.3, 0, 0]), template)
    l_ = forward_kinematics(HandPose("left", [-0.3, 0, 0]), template)
    assert energy_phh(l_, r) == 0.0
    assert energy_pho(r, l_, sphere) == 0.0
    assert hand_hand_depth(r, l_) == 0.0 and hand_object_depth(r, sphere) == 0.0


def test_phh_gradient_matches_fd(template):
    rng = np.random.default_rng(1)
    checked = 0
    while checked < 3:
        r, l_ = overlapping(rng, template)
        x = np.concatenate([r.as_vector(), l_.as_vector()])

        def f(v):
            a, b = split(v)
            return energy_phh(forward_kinematics(b, template), forward_kinematics(a, template))

        sr, sl = forward_kinematics(r, template), forward_kinematics(l_, template)
        e, gl, gr = energy_phh(sl, sr, grad=True)
        num, smooth = checked_fd(f, x)
        if e == 0 or not smooth:
            continue
        assert rel_err(np.concatenate([sr.pose_grad(gr), sl.pose_grad(gl)]), num) < 1e-4
        checked += 1


def test_pho_gradient_matches_fd(template, sphere):
    rng = np.random.default_rng(2)
    checked = 0
    while checked < 3:
        r, l_ = overlapping(rng, template)
        x = np.concatenate([r.as_vector(), l_.as_vector()])

        def f(v):
            a, b = split(v)
            return energy_pho(forward_kinematics(a, template), forward_kinematics(b, template), sphere)

        sr, sl = forward_kinematics(r, template), forward_kinematics(l_, template)
        e, gr, gl = energy_pho(sr, sl, sphere, grad=True)
        num, smooth = checked_fd(f, x)
        if e == 0 or not smooth:
            continue
        assert rel_err(np.concatenate([sr.pose_grad(gr), sl.pose_grad(gl)]), num) < 1e-4
        checked += 1


def test_dual_energy_weights(template, sphere):
    r, l_ = overlapping(np.random.default_rng(3), template)
    e1, hh, ho, _, _ = dual_energy(r, l_, sphere, EnergyConfig(), template)
    e2, *_ = dual_energy(r, l_, sphere, EnergyConfig(lambda_phh=2.0, lambda_pho=0.5), template)
    assert e1 == pytest.approx(hh + ho)
    assert e2 == pytest.approx(2 * hh + 0.5 * ho)


def test_config_validation():
    with pytest.raises(ValueError):
        EnergyConfig(lambda_phh=-1)
    with pytest.raises(ValueError):
        EnergyConfig(max_iters=0)


@pytest.fixture(scope="module")
def pushed_pair(sphere):
    rng = np.random.default_rng(0)
    a, t = random_frame_dirs(rng, 0, 0.8)
    r = synth_grasp(sphere, a, t).translated(-0.003 * a)
    return DualGrasp(r, mirror_pose(r, 0), "sphere")


def test_optimizer_removes_penetration(pushed_pair, sphere, template):
    sr = forward_kinematics(pushed_pair.right, template)
    assert hand_object_depth(sr, sphere) > 1e-3
    out = optimize_dual_grasp(pushed_pair, sphere)
    assert out.status == "optimized"
    fr, fl = forward_kinematics(out.right, template), forward_kinematics(out.left, template)
    assert max(hand_object_depth(fr, sphere), hand_object_depth(fl, sphere)) <= 1e-3
    assert out.trace[-1] < out.trace[0]


def test_optimizer_discards(pushed_pair, sphere):
    out = optimize_dual_grasp(pushed_pair, sphere, EnergyConfig(max_iters=1))
    assert out.status == "discarded" and out.diagnostics["reason"]
    r = pushed_pair.right
    twin = DualGrasp(r, HandPose("left", r.trans, r.rot6d, r.theta), "s")
    out = optimize_dual_grasp(twin, sphere, EnergyConfig(discard_depth=1e-3))
    assert out.status == "discarded" and out.trace == []
    with pytest.raises(ValueError):
        optimize_dual_grasp(out, sphere)


def test_run_symopt_frame_and_threads(pushed_pair, sphere):
    # a sphere is symmetric in every plane; pin x so the grasp mirrors cleanly
    rep = SymmetryReport("x", (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    cfg = EnergyConfig(max_iters=20)
    rights = [pushed_pair.right]
    base = run_symopt(sphere, rights, cfg, report=rep)
    off = np.array([0.5, -0.2, 0.1])
    moved = run_symopt(sphere.translated(off), [g.translated(off) for g in rights], cfg, report=rep)
    threaded = run_symopt(sphere, rights * 3, cfg, threads=3, report=rep)
    assert len(base) == 1 and len(threaded) == 9
    np.testing.assert_allclose(moved[0].right.trans, base[0].right.trans + off, atol=1e-9)
    np.testing.assert_allclose(moved[0].left.as_vector()[3:], base[0].left.as_vector()[3:], atol=1e-9)
    assert base[0].diagnostics["symmetry_axis"] == "x"
    serial = run_symopt(sphere, rights * 3, cfg, report=rep)
    assert [g.right.as_vector().tolist() for g in serial] == [g.right.as_vector().tolist() for g in threaded]
    assert run_symopt(sphere, []) == []
