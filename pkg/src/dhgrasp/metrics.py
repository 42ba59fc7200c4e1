"""Grasp evaluation: Q1 (Ferrari-Canny epsilon), penetration, diversity, semantic rules."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .contact import PART_THRESHOLD, contact_map
from .geometry import ObjectModel, cast_rays
from .hand_model import PARTS, HandSurface
from .symopt import hand_object_depth

log = logging.getLogger(__name__)

FINGERS = tuple(range(5))
THUMB = 0
VOXEL = 0.002
MAX_Q1_CONTACTS = 64


# --------------------------------------------------------------------------
# Q1


def _reference(points, normals):
    """A tangent reference that rotates with the contact set.

    The farthest contact from the contact centroid gives it; for axially
    symmetric sets (where that vector is parallel to every normal) any common
    reference yields the same hull, so a fixed fallback is used.
    """
    rel = points - points.mean(axis=0)
    norms = np.linalg.norm(rel, axis=1)
    k = int(np.argmax(norms))
    g = rel[k] if norms[k] > 1e-12 else np.zeros(3)
    fallback = np.array([0.5773502691896258, 0.5773502691896258, 0.5773502691896258])
    return g, fallback


def contact_wrenches(points, normals, mu=1.0, m=8, torque_scale=1.0, center=None, torsion=0.005):
    """Primitive wrenches of discretised friction cones (unit edge forces).

    ``normals`` are outward object normals; contact forces push along ``-normal``.
    Each contact adds ``m`` cone edges plus two soft-finger torsion wrenches
    (normal force with +-``torsion`` metres of moment about the normal).
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    center = np.zeros(3) if center is None else np.asarray(center, dtype=np.float64)
    g, fallback = _reference(p, n)
    ang = 2 * np.pi * np.arange(m) / m
    out = []
    for pi, ni in zip(p, n):
        f_in = -ni
        t1 = g - (g @ ni) * ni
        if np.linalg.norm(t1) < 1e-9 * max(np.linalg.norm(g), 1e-300) or not np.any(g):
            t1 = fallback - (fallback @ ni) * ni
            if np.linalg.norm(t1) < 1e-6:
                t1 = np.array([1.0, 0, 0]) - ni[0] * ni
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(ni, t1)
        r = pi - center
        edges = f_in + mu * (np.cos(ang)[:, None] * t1 + np.sin(ang)[:, None] * t2)
        edges /= np.linalg.norm(edges, axis=1, keepdims=True)
        out.append(np.hstack([edges, torque_scale * np.cross(r, edges)]))
        if torsion > 0:
            base = torque_scale * np.cross(r, f_in)
            for s in (1.0, -1.0):
                out.append(np.hstack([f_in, base + s * torsion * torque_scale * f_in])[None])
    return np.vstack(out)


def q1_from_wrenches(w) -> float:
    """Distance from the origin to the hull boundary, 0 unless strictly inside."""
    w = np.asarray(w, dtype=np.float64)
    if len(w) < 7 or np.linalg.matrix_rank(w, tol=1e-10) < 6:
        return 0.0
    try:
        hull = ConvexHull(w)
    except QhullError:
        return 0.0
    offsets = hull.equations[:, -1]
    if np.any(offsets >= -1e-12):
        return 0.0
    return float(-offsets.max())


def q1_quality(points, normals, mu=1.0, m=8, torque_scale=1.0, center=None, torsion=0.005) -> float:
    """Ferrari-Canny epsilon of a set of frictional contacts."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(p) == 0:
        raise ValueError("need at least one contact")
    return q1_from_wrenches(contact_wrenches(p, normals, mu, m, torque_scale, center, torsion))


def farthest_point_sampling(points, k) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    if len(p) <= k:
        return np.arange(len(p))
    chosen = [int(np.argmax(np.linalg.norm(p - p.mean(axis=0), axis=1)))]
    d = np.linalg.norm(p - p[chosen[0]], axis=1)
    for _ in range(k - 1):
        i = int(np.argmax(d))
        chosen.append(i)
        d = np.minimum(d, np.linalg.norm(p - p[i], axis=1))
    return np.array(chosen)


def grasp_contacts(obj: ObjectModel, hand: HandSurface, threshold=PART_THRESHOLD, limit=MAX_Q1_CONTACTS):
    c = contact_map(obj, hand)
    idx = np.flatnonzero(c >= threshold)
    idx = idx[farthest_point_sampling(obj.cloud.points[idx], limit)] if len(idx) else idx
    return idx


def hand_wrenches(obj: ObjectModel, idx, mu=1.0, m=8):
    if len(idx) == 0:
        return np.zeros((0, 6))
    return contact_wrenches(
        obj.cloud.points[idx], obj.cloud.normals[idx], mu, m, 1.0 / obj.max_radius, obj.center
    )


# --------------------------------------------------------------------------
# penetration


def penetration_depth(hand: HandSurface, obj: ObjectModel) -> float:
    """Maximum depth of hand vertices inside the object, in cm."""
    return 100.0 * hand_object_depth(hand, obj)


def _solid_bounds(h: HandSurface):
    lo, hi = h.bounds()
    if h.seg_a is not None:
        r = h.radii[:, None]
        lo = np.minimum(lo, (np.minimum(h.seg_a, h.seg_b) - r).min(axis=0))
        hi = np.maximum(hi, (np.maximum(h.seg_a, h.seg_b) + r).max(axis=0))
    return lo, hi


def penetration_volume(right: HandSurface, left: HandSurface, voxel=VOXEL) -> float:
    """Hand-hand intersection volume (cm^3) by voxel counting."""
    lo_r, hi_r = _solid_bounds(right)
    lo_l, hi_l = _solid_bounds(left)
    origin = np.minimum(lo_r, lo_l)
    lo, hi = np.maximum(lo_r, lo_l), np.minimum(hi_r, hi_l)
    if np.any(hi <= lo):
        return 0.0
    i0 = np.floor((lo - origin) / voxel).astype(int)
    i1 = np.ceil((hi - origin) / voxel).astype(int)
    axes = [origin[k] + (np.arange(i0[k], i1[k]) + 0.5) * voxel for k in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    inside = right.contains(grid)
    if inside.any():
        inside[inside] = left.contains(grid[inside])
    return float(inside.sum()) * (voxel * 100.0) ** 3


def hand_volume(hand: HandSurface, voxel=VOXEL) -> float:
    lo, hi = _solid_bounds(hand)
    axes = [np.arange(lo[k] + voxel / 2, hi[k], voxel) for k in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return float(hand.contains(grid).sum()) * (voxel * 100.0) ** 3


# --------------------------------------------------------------------------
# diversity


def _verts(h):
    return h.vertices if isinstance(h, HandSurface) else np.asarray(h, dtype=np.float64)


def pairwise_sigma(hands) -> float:
    """Mean over unordered pairs of the mean per-vertex distance, in cm."""
    v = [_verts(h) for h in hands]
    if len(v) < 2:
        raise ValueError("diversity needs at least two grasps")
    total, count = 0.0, 0
    for i in range(len(v)):
        for j in range(i + 1, len(v)):
            total += np.linalg.norm(v[i] - v[j], axis=-1).mean()
            count += 1
    return 100.0 * total / count


def diversity_sigma(hands, groups=None):
    """sigma over all grasps, or the mean of per-group sigmas when ``groups`` labels are given.

    Groups with fewer than two members are skipped and logged.
    """
    hands = list(hands)
    if groups is None:
        return pairwise_sigma(hands)
    by = {}
    for h, g in zip(hands, groups):
        by.setdefault(g, []).append(h)
    vals = []
    for g, members in by.items():
        if len(members) < 2:
            log.info("diversity: group %r has %d member(s); excluded", g, len(members))
            continue
        vals.append(pairwise_sigma(members))
    return float(np.mean(vals)) if vals else 0.0


# --------------------------------------------------------------------------
# semantic correctness


@dataclass
class SemanticVerdict:
    dir_single: bool | None = None
    dir_double: bool | None = None
    grasp_single: bool | None = None
    grasp_double: bool | None = None


def parse_affordance_text(text):
    """"right <category> <part>, left <category> <part>" -> {chirality: (category, part)}."""
    out = {}
    for chunk in str(text).split(","):
        tok = chunk.strip().lower().split()
        if len(tok) < 3 or tok[0] not in ("right", "left"):
            raise ValueError(f"cannot parse affordance text: {text!r}")
        out[tok[0]] = (tok[1], " ".join(tok[2:]))
    if set(out) != {"right", "left"}:
        raise ValueError(f"affordance text must name both hands: {text!r}")
    return out


def part_sizes(obj: ObjectModel) -> dict:
    names, counts = np.unique(np.asarray(obj.parts), return_counts=True)
    return dict(zip(names.tolist(), counts.tolist()))


def hand_passes(finger_parts, target, largest) -> bool:
    """The per-hand rule.

    ``finger_parts`` maps finger id -> set of object parts it hits/touches. A
    non-largest target needs at least two fingers on it; the largest part
    needs the thumb plus one other finger on it.
    """
    on = [f for f in FINGERS if target in finger_parts.get(f, ())]
    if target != largest:
        return len(on) >= 2
    return THUMB in on and any(f != THUMB for f in on)


def _label_points(obj, pts):
    from .geometry import SpatialIndex

    _, j = SpatialIndex(obj.cloud.points).query(pts)
    return np.asarray(obj.parts)[j]


def direction_parts(obj: ObjectModel, D, M) -> dict:
    """Object part first hit by each finger's direction ray cast from the object centre."""
    D = np.asarray(D, dtype=np.float64)
    M = np.asarray(M)
    out = {}
    for f in FINGERS:
        n = np.linalg.norm(D[f])
        if M[f] < 0.5 or n < 1e-9:
            continue
        pts, face, _ = cast_rays(obj.center, (D[f] / n)[None], obj.mesh)
        if face[0] >= 0:
            out[f] = {_label_points(obj, pts)[0]}
    return out


def touched_parts(obj: ObjectModel, parts_onehot) -> dict:
    cls = np.argmax(np.asarray(parts_onehot), axis=1)
    labels = np.asarray(obj.parts)
    return {f: set(labels[cls == f].tolist()) for f in FINGERS if np.any(cls == f)}


def semantic_check(obj: ObjectModel, text, directions=None, contacts=None) -> SemanticVerdict:
    """Evaluate the direction rule and/or the grasp rule for both hands.

    ``directions``: {"right": (D, M), "left": (D, M)}. ``contacts``:
    {"right": part_map, "left": part_map} (one-hot over the object cloud).
    """
    if obj.parts is None:
        raise ValueError("object has no part labels")
    target = parse_affordance_text(text)
    sizes = part_sizes(obj)
    largest = max(sizes, key=lambda k: (sizes[k], k))
    verdict = SemanticVerdict()
    if directions is not None:
        ok = [hand_passes(direction_parts(obj, *directions[h]), target[h][1], largest) for h in ("right", "left")]
        verdict.dir_single, verdict.dir_double = any(ok), all(ok)
    if contacts is not None:
        ok = [hand_passes(touched_parts(obj, contacts[h]), target[h][1], largest) for h in ("right", "left")]
        verdict.grasp_single, verdict.grasp_double = any(ok), all(ok)
    return verdict


# --------------------------------------------------------------------------
# report


@dataclass
class MetricsReport:
    Q1_r: float
    Q1_l: float
    Q1_t: float
    pen_ro: float
    pen_lo: float
    pen_rl_vol: float
    sigma_r: float | None = None
    sigma_l: float | None = None
    sigma_ta: float | None = None

    def to_dict(self):
        return asdict(self)


def grasp_metrics(obj: ObjectModel, right: HandSurface, left: HandSurface, mu=1.0, m=8) -> MetricsReport:
    # Q1_t hulls the union of both hands' wrench sets, so it never drops below either hand
    wr = hand_wrenches(obj, grasp_contacts(obj, right), mu, m)
    wl = hand_wrenches(obj, grasp_contacts(obj, left), mu, m)
    return MetricsReport(
        Q1_r=q1_from_wrenches(wr),
        Q1_l=q1_from_wrenches(wl),
        Q1_t=q1_from_wrenches(np.vstack([wr, wl])),
        pen_ro=penetration_depth(right, obj),
        pen_lo=penetration_depth(left, obj),
        pen_rl_vol=penetration_volume(right, left),
    )


def summarize(obj_reports, rights=None, lefts=None, groups=None) -> MetricsReport:
    """Average per-grasp reports and attach diversity over the batch."""
    rows = [r.to_dict() for r in obj_reports]
    mean = {k: float(np.mean([r[k] for r in rows])) for k in ("Q1_r", "Q1_l", "Q1_t", "pen_ro", "pen_lo", "pen_rl_vol")}
    rep = MetricsReport(**mean)
    if rights is not None and len(rights) >= 2:
        rep.sigma_r = diversity_sigma(rights)
        rep.sigma_l = diversity_sigma(lefts)
        if groups is not None:
            both = [np.concatenate([_verts(a), _verts(b)]) for a, b in zip(rights, lefts)]
            rep.sigma_ta = diversity_sigma(both, groups)
    return rep


def render_table(report: MetricsReport) -> str:
    cols = ["Q1_r", "Q1_l", "Q1_t", "pen_ro", "pen_lo", "pen_rl_vol", "sigma_r", "sigma_l", "sigma_ta"]
    head = ["Q1r", "Q1l", "Q1t", "pen_ro(cm)", "pen_lo(cm)", "pen_rl_vol(cm3)", "σr(cm)", "σl(cm)", "σt/a(cm)"]
    d = report.to_dict()
    vals = ["/" if d[c] is None else f"{d[c]:.4f}" for c in cols]
    width = [max(len(h), len(v)) for h, v in zip(head, vals)]
    line1 = " | ".join(h.rjust(w) for h, w in zip(head, width))
    line2 = " | ".join(v.rjust(w) for v, w in zip(vals, width))
    return line1 + "\n" + "-" * len(line1) + "\n" + line2


__all__ = [
    "PARTS",
    "MetricsReport",
    "SemanticVerdict",
    "contact_wrenches",
    "diversity_sigma",
    "grasp_metrics",
    "parse_affordance_text",
    "penetration_depth",
    "penetration_volume",
    "q1_quality",
    "semantic_check",
]
