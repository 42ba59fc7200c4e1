"""Pseudo-symmetry plane detection and left-hand proposals by mirroring."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .geometry import AXES, ObjectModel, PointCloud, chamfer_distance, max_pairwise_distance, reflect_points
from .hand_model import HandPose, default_template, forward_kinematics, mirror_pose
from .symopt import PROPOSAL, DualGrasp, hand_hand_depth

# Chamfer values closer than this (relative to diameter^2) count as ties.
TIE_TOL = 1e-12


@dataclass(frozen=True)
class SymmetryReport:
    axis: str
    chamfer: tuple
    centroid: tuple

    @property
    def axis_index(self) -> int:
        return AXES.index(self.axis)

    def to_dict(self) -> dict:
        return {"axis": self.axis, "chamfer": list(self.chamfer), "centroid": list(self.centroid)}

    @classmethod
    def from_dict(cls, d) -> SymmetryReport:
        return cls(d["axis"], tuple(float(x) for x in d["chamfer"]), tuple(float(x) for x in d["centroid"]))


def detect_symmetry_plane(obj) -> SymmetryReport:
    """Centre the cloud, reflect across x, y, z and keep the lowest-Chamfer axis."""
    cloud = obj.cloud if isinstance(obj, ObjectModel) else obj
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("empty point cloud")
    c = pts.mean(axis=0)
    centered = PointCloud(pts - c)
    values = tuple(chamfer_distance(centered, reflect_points(centered, k)) for k in range(3))
    tol = TIE_TOL * max(max_pairwise_distance(centered.points) ** 2, 1e-300)
    best = min(values)
    k = next(i for i, v in enumerate(values) if v <= best + tol)
    return SymmetryReport(AXES[k], values, tuple(float(x) for x in c))


def mirror_grasp(grasp: HandPose, report: SymmetryReport) -> HandPose:
    """Left-hand proposal: the right grasp reflected through the report's plane."""
    return mirror_pose(grasp, report.axis)


def pair_proposals(
    rights,
    lefts,
    max_pairs=256,
    seed=0,
    discard_depth=0.01,
    template=None,
    object_id="",
    keep_discarded=False,
):
    """All right/left combinations, seeded subsampling, initial penetration filter."""
    rights, lefts = list(rights), list(lefts)
    if not rights or not lefts:
        raise ValueError("need at least one right and one left grasp")
    template = template or default_template()
    combos = list(product(range(len(rights)), range(len(lefts))))
    if len(combos) > max_pairs:
        rng = np.random.default_rng(seed)
        keep = np.sort(rng.choice(len(combos), size=max_pairs, replace=False))
        combos = [combos[i] for i in keep]
    sr = [forward_kinematics(r, template) for r in rights]
    sl = [forward_kinematics(lf, template) for lf in lefts]
    out = []
    for i, j in combos:
        depth = hand_hand_depth(sr[i], sl[j])
        g = DualGrasp(rights[i].copy(), lefts[j].copy(), object_id, PROPOSAL)
        g.diagnostics.update({"pair": (i, j), "initial_hand_depth": depth})
        if depth > discard_depth:
            if not keep_discarded:
                continue
            g.status = "discarded"
        out.append(g)
    return out
