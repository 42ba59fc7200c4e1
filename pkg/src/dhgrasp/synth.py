"""Synthetic single-hand grasps: approach, then close each finger to first contact.

Used to build right-hand fixtures when no external grasp corpus is at hand.
"""
import numpy as np

from .geometry import ObjectModel, SpatialIndex
from .hand_model import HandPose, default_template, forward_kinematics, matrix_to_rot6d

# per-finger closing synergy: joint index -> weight
_CLOSE = {
    0: {1: 0.6, 3: 0.7, 4: 0.7},
    1: {6: 1.0, 7: 1.0, 8: 0.75},
    2: {10: 1.0, 11: 1.0, 12: 0.75},
    3: {14: 1.0, 15: 1.0, 16: 0.75},
    4: {17: 0.25, 19: 1.0, 20: 1.0, 21: 0.75},
}
# flexion chains (proximal to distal) and alternative closing ratios tried when polishing
_FLEX = {0: (1, 3, 4), 1: (6, 7, 8), 2: (10, 11, 12), 3: (14, 15, 16), 4: (19, 20, 21)}
_RATIOS = ((1, 1, 0.75), (1, 0.6, 0.3), (1, 0.3, 0.15), (0.5, 1, 0.75), (0.3, 1, 1), (0.6, 0.6, 0.1))
_OPEN_THETA = np.zeros(22)
_OPEN_THETA[0] = 0.25  # thumb slightly abducted toward the palm


def _penetrates(obj, verts, gap):
    if obj.contains(verts).any():
        return True
    if gap > 0:
        lo, hi = obj.mesh.bounds
        near = np.all((verts >= lo - gap) & (verts <= hi + gap), axis=1)
        if near.any():
            return bool(obj.surface_distance(verts[near])[0].min() < gap)
    return False


def hand_frame(approach, finger_dir):
    """Rotation placing the palm normal (-y) against ``approach`` and fingers along ``finger_dir``."""
    y = np.asarray(approach, dtype=np.float64)
    y = y / np.linalg.norm(y)
    z = np.asarray(finger_dir, dtype=np.float64)
    z = z - (z @ y) * y
    z = z / np.linalg.norm(z)
    return np.column_stack([np.cross(y, z), y, z])


def _close(pose_at, syn, theta, mask, obj, gap, template, step=0.05):
    """Advance ``theta`` along synergy ``syn`` until the masked vertices would penetrate."""
    lim = template.limits

    def at(k):
        th = theta.copy()
        for j, w in syn.items():
            th[j] = np.clip(theta[j] + k * w, lim[j, 0], lim[j, 1])
        return th

    def hits(k):
        return _penetrates(obj, forward_kinematics(pose_at(at(k)), template).vertices[mask], gap)

    k_max = 1.6 / min(syn.values())
    k_ok, k_bad = 0.0, None
    k = step
    while k <= k_max:
        if hits(k):
            k_bad = k
            break
        k_ok = k
        k += step
    if k_bad is None:
        return at(min(k_ok, 1.0))
    while k_bad - k_ok > 1e-3:
        mid = 0.5 * (k_ok + k_bad)
        if hits(mid):
            k_bad = mid
        else:
            k_ok = mid
    return at(k_ok)


def _tip_distance(pose, fid, obj, index, gap, template):
    s = forward_kinematics(pose, template)
    m = s.parts == fid
    if _penetrates(obj, s.vertices[m], gap):
        return np.inf
    return float(index.query(s.vertices[m & s.fingertip_mask])[0].mean())


def polish_fingertips(obj: ObjectModel, pose: HandPose, template=None, gap=3e-4, step=0.2, min_step=0.01):
    """Per-finger coordinate descent on joint angles pulling fingertip pads onto the surface."""
    template = template or default_template()
    index = SpatialIndex(obj.cloud.points)
    lim = template.limits
    theta = pose.theta.copy()

    def with_theta(th):
        return HandPose(pose.chirality, pose.trans, pose.rot6d, th)

    for fid in range(5):
        joints = np.flatnonzero(template.finger_of_joint == fid)
        cur = _tip_distance(with_theta(theta), fid, obj, index, gap, template)
        h = step
        while h > min_step:
            improved = False
            for j in joints:
                for sgn in (1.0, -1.0):
                    th = theta.copy()
                    th[j] = np.clip(th[j] + sgn * h, lim[j, 0], lim[j, 1])
                    if th[j] == theta[j]:
                        continue
                    v = _tip_distance(with_theta(th), fid, obj, index, gap, template)
                    if v < cur:
                        theta, cur, improved = th, v, True
            if not improved:
                h /= 2
    return with_theta(theta)


def synth_grasp(
    obj: ObjectModel,
    approach,
    finger_dir,
    template=None,
    gap=5e-4,
    tol=2e-4,
    chirality="right",
    standoff=0.0,
    polish=False,
):
    """Close a hand around ``obj`` (in obj's frame) coming from direction ``approach``.

    The palm is backed off until the open hand clears the object, moved out by
    a further ``standoff``, then each finger closes to first contact. With
    ``polish`` several closing ratios are tried per finger and the fingertip
    pads are pulled onto the surface (slower, for contact-sensitive fixtures).
    """
    template = template or default_template()
    rot = hand_frame(approach, finger_dir)
    a = rot[:, 1]
    palm = template.palm_center
    theta = _OPEN_THETA.copy()
    center = obj.center

    def pose_at(s, th):
        return HandPose(chirality, center + s * a - rot @ palm, matrix_to_rot6d(rot), th)

    hi = obj.max_radius + 0.12
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _penetrates(obj, forward_kinematics(pose_at(mid, theta), template).vertices, gap):
            lo = mid
        else:
            hi = mid
    s = hi + standoff
    parts = template.vertex_part

    def fixed(th):
        return pose_at(s, th)

    if not polish:
        for fid in range(5):
            theta = _close(fixed, _CLOSE[fid], theta, parts == fid, obj, gap, template)
        return fixed(theta)
    index = SpatialIndex(obj.cloud.points)
    for fid in range(5):
        best = None
        for ratio in _RATIOS:
            syn = dict(zip(_FLEX[fid], ratio))
            th = _close(fixed, syn, theta, parts == fid, obj, gap, template, step=0.08)
            d = _tip_distance(fixed(th), fid, obj, index, gap, template)
            if best is None or d < best[0]:
                best = (d, th)
        theta = best[1]
    return polish_fingertips(obj, fixed(theta), template)


def random_frame_dirs(rng, half_axis=None, min_side=0.35):
    """Random approach direction (optionally in the +half of an axis) and a perpendicular finger direction."""
    while True:
        a = rng.normal(size=3)
        a /= np.linalg.norm(a)
        if half_axis is None or a[half_axis] >= min_side:
            break
    t = rng.normal(size=3)
    t -= (t @ a) * a
    return a, t / np.linalg.norm(t)


def synth_right_grasps(obj: ObjectModel, n, seed=0, half_axis=0, push=(0.0, 0.0), template=None):
    """``n`` right grasps on the +``half_axis`` side of a centred object.

    ``push`` draws a uniform inward displacement (m) to emulate imperfect
    source grasps that penetrate the object.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        a, t = random_frame_dirs(rng, half_axis)
        g = synth_grasp(obj, a, t, template)
        d = rng.uniform(*push)
        if d > 0:
            g = g.translated(-d * a)
        out.append(g)
    return out


