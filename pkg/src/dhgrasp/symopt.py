"""Dual-hand interpenetration energies and their minimisation (SymOpt).

Both energies sum, over penetrating vertices, the distance to the penetrated
surface. The inside indicator is held fixed within a step, so gradients flow
only through the distance terms.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import ObjectModel, SpatialIndex
from .hand_model import (
    POSE_DIM,
    HandPose,
    HandSurface,
    HandTemplate,
    default_template,
    forward_kinematics,
)
from .optim import Adam

log = logging.getLogger(__name__)

PROPOSAL, OPTIMIZED, DISCARDED = "proposal", "optimized", "discarded"


@dataclass
class EnergyConfig:
    lambda_phh: float = 1.0
    lambda_pho: float = 1.0
    lr: float = 5e-3
    right_lr_scale: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    max_iters: int = 300
    stop_phh: float = 1e-4
    stop_pho: float = 1e-4
    discard_depth: float = 0.01
    max_pairs: int = 256

    def __post_init__(self):
        if min(self.lambda_phh, self.lambda_pho) < 0:
            raise ValueError("energy weights must be nonnegative")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class DualGrasp:
    right: HandPose
    left: HandPose
    object_id: str = ""
    status: str = PROPOSAL
    trace: list = field(default_factory=list)
    e_phh: float | None = None
    e_pho: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def translated(self, offset) -> DualGrasp:
        return DualGrasp(
            self.right.translated(offset),
            self.left.translated(offset),
            self.object_id,
            self.status,
            list(self.trace),
            self.e_phh,
            self.e_pho,
            dict(self.diagnostics),
        )


# --------------------------------------------------------------------------
# energies


def _hand_into_hand(src: HandSurface, dst: HandSurface):
    """Inside mask of src vertices in dst's volume and nearest dst vertex data."""
    inside = dst.contains(src.vertices)
    if not inside.any():
        return inside, np.zeros(0), np.zeros(0, dtype=np.int64)
    d, j = SpatialIndex(dst.vertices).query(src.vertices[inside])
    return inside, d, j


def energy_phh(left: HandSurface, right: HandSurface, grad=False):
    """Sum over left vertices inside the right hand of their distance to the right surface.

    With ``grad`` returns ``(E, dE/dV_left, dE/dV_right)``.
    """
    inside, d, j = _hand_into_hand(left, right)
    e = float(d.sum())
    if not grad:
        return e
    g_l = np.zeros_like(left.vertices)
    g_r = np.zeros_like(right.vertices)
    if len(d):
        diff = left.vertices[inside] - right.vertices[j]
        u = diff / np.maximum(d, 1e-15)[:, None]
        g_l[inside] = u
        np.add.at(g_r, j, -u)
    return e, g_l, g_r


def _object_term(verts, obj: ObjectModel):
    inside = obj.contains(verts)
    if not inside.any():
        return inside, np.zeros(0), np.zeros((0, 3))
    d, q, _ = obj.surface_distance(verts[inside])
    return inside, d, q


def energy_pho(right: HandSurface, left: HandSurface, obj: ObjectModel, grad=False):
    """Sum over vertices of both hands inside the object of their distance to its surface.

    With ``grad`` returns ``(E, dE/dV_right, dE/dV_left)``.
    """
    n_r = right.n
    verts = np.concatenate([right.vertices, left.vertices])
    inside, d, q = _object_term(verts, obj)
    e = float(d.sum())
    if not grad:
        return e
    g = np.zeros_like(verts)
    if len(d):
        g[inside] = (verts[inside] - q) / np.maximum(d, 1e-15)[:, None]
    return e, g[:n_r], g[n_r:]


def hand_object_depth(hand: HandSurface, obj: ObjectModel) -> float:
    """Deepest hand vertex inside the object (m); 0 when none is inside."""
    _, d, _ = _object_term(hand.vertices, obj)
    return float(d.max()) if len(d) else 0.0


def hand_hand_depth(a: HandSurface, b: HandSurface) -> float:
    """Largest penetration, either direction, of one hand's vertices into the other (m)."""
    best = 0.0
    for src, dst in ((a, b), (b, a)):
        _, d, _ = _hand_into_hand(src, dst)
        if len(d):
            best = max(best, float(d.max()))
    return best


def dual_energy(right: HandPose, left: HandPose, obj: ObjectModel, cfg: EnergyConfig, template=None):
    """Weighted SymOpt energy with per-pose gradients.

    Returns ``(E, E_phh, E_pho, grad_right, grad_left)``.
    """
    template = template or default_template()
    sr = forward_kinematics(right, template)
    sl = forward_kinematics(left, template)
    e_hh, gl_hh, gr_hh = energy_phh(sl, sr, grad=True)
    e_ho, gr_ho, gl_ho = energy_pho(sr, sl, obj, grad=True)
    gr = sr.pose_grad(cfg.lambda_phh * gr_hh + cfg.lambda_pho * gr_ho)
    gl = sl.pose_grad(cfg.lambda_phh * gl_hh + cfg.lambda_pho * gl_ho)
    e = cfg.lambda_phh * e_hh + cfg.lambda_pho * e_ho
    return e, e_hh, e_ho, gr, gl


# --------------------------------------------------------------------------
# optimisation


def optimize_dual_grasp(
    grasp: DualGrasp, obj: ObjectModel, cfg: EnergyConfig | None = None, template: HandTemplate | None = None
) -> DualGrasp:
    """Adam on both poses until both energies drop below their thresholds."""
    cfg = cfg or EnergyConfig()
    template = template or default_template()
    if grasp.status != PROPOSAL:
        raise ValueError(f"expected a proposal, got status {grasp.status!r}")
    out = DualGrasp(grasp.right.copy(), grasp.left.copy(), grasp.object_id, PROPOSAL, [], None, None, {})
    depth = hand_hand_depth(forward_kinematics(out.right, template), forward_kinematics(out.left, template))
    out.diagnostics["initial_hand_depth"] = depth
    if depth > cfg.discard_depth:
        out.status = DISCARDED
        out.diagnostics["reason"] = "initial hand-hand penetration above threshold"
        return out

    lim = template.limits
    x = np.concatenate([out.right.as_vector(), out.left.as_vector()])
    lr = np.full(2 * POSE_DIM, cfg.lr)
    lr[:POSE_DIM] *= cfg.right_lr_scale
    opt = Adam(lr, cfg.beta1, cfg.beta2)
    clamped = False
    for it in range(cfg.max_iters + 1):
        right = HandPose.from_vector(x[:POSE_DIM], "right")
        left = HandPose.from_vector(x[POSE_DIM:], "left")
        try:
            e, e_hh, e_ho, gr, gl = dual_energy(right, left, obj, cfg, template)
        except ValueError as exc:  # degenerate rotation
            out.status = DISCARDED
            out.diagnostics["reason"] = f"invalid pose: {exc}"
            return out
        out.trace.append(e)
        out.right, out.left, out.e_phh, out.e_pho = right, left, e_hh, e_ho
        if e_hh < cfg.stop_phh and e_ho < cfg.stop_pho:
            out.status = OPTIMIZED
            break
        if it == cfg.max_iters:
            break
        g = np.concatenate([gr, gl])
        if not np.all(np.isfinite(g)):
            out.status = DISCARDED
            out.diagnostics["reason"] = f"non-finite gradient at iteration {it}"
            return out
        x = opt.step(x, g)
        for off in (0, POSE_DIM):
            th = x[off + 9 : off + POSE_DIM]
            c = np.clip(th, lim[:, 0], lim[:, 1])
            clamped |= bool(np.any(c != th))
            x[off + 9 : off + POSE_DIM] = c
    if out.status != OPTIMIZED:
        out.status = DISCARDED
        out.diagnostics["reason"] = "energy thresholds not met"
    out.diagnostics["iterations"] = len(out.trace) - 1
    out.diagnostics["clamped"] = clamped
    return out


def run_symopt(
    obj: ObjectModel,
    right_grasps,
    cfg: EnergyConfig | None = None,
    seed=0,
    template: HandTemplate | None = None,
    threads: int = 1,
    report=None,
):
    """Mirror, pair and optimise right-hand grasps into dual-hand grasps.

    Grasps are given and returned in the object's own frame. The output holds
    every proposal that entered optimisation, in pairing order; rejected ones
    carry ``status == "discarded"``.
    """
    from .symmetry import detect_symmetry_plane, mirror_grasp, pair_proposals

    cfg = cfg or EnergyConfig()
    template = template or default_template()
    right_grasps = list(right_grasps)
    if not right_grasps:
        return []
    centered, c = obj.centered()
    rights = [g.translated(-c) for g in right_grasps]
    report = report or detect_symmetry_plane(centered)
    lefts = [mirror_grasp(g, report) for g in rights]
    pairs = pair_proposals(
        rights, lefts, cfg.max_pairs, seed=seed, discard_depth=cfg.discard_depth, template=template,
        object_id=obj.object_id,
    )

    def work(p):
        try:
            return optimize_dual_grasp(p, centered, cfg, template)
        except Exception as exc:  # keep the batch alive
            log.warning("proposal failed: %s", exc)
            bad = DualGrasp(p.right, p.left, p.object_id, DISCARDED, [], None, None, {"reason": str(exc)})
            return bad

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            done = list(pool.map(work, pairs))
    else:
        done = [work(p) for p in pairs]
    out = []
    for g in done:
        g = g.translated(c)
        g.diagnostics["symmetry_axis"] = report.axis
        out.append(g)
    return out
