"""Test-time refinement of generated dual grasps.

E_T = lambda_pen E_pen + lambda_con E_con + lambda_D E_D, minimised over both
poses with Adam. Steps that raise E_T are rejected and the learning rate
shrunk, so the accepted trace never increases.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, fields

import numpy as np

from .geometry import ObjectModel, SpatialIndex, cast_rays
from .hand_model import N_PARTS, POSE_DIM, HandPose, HandSurface, default_template, forward_kinematics
from .optim import Adam
from .symopt import DualGrasp, energy_phh, energy_pho

log = logging.getLogger(__name__)


@dataclass
class TtaConfig:
    lambda_pen: float = 10.0
    lambda_con: float = 1.0
    lambda_D: float = 1.0
    steps: int = 100
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    min_lr: float = 1e-7
    lr_growth: float = 1.25  # after an accepted step, capped at lr
    lr_shrink: float = 0.7  # after a rejected step

    def __post_init__(self):
        for f in ("lambda_pen", "lambda_con", "lambda_D", "lr"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be nonnegative")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not 0 < self.lr_shrink < 1 or self.lr_growth < 1:
            raise ValueError("need 0 < lr_shrink < 1 <= lr_growth")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def average_distance(src, dst, grad=False):
    """Mean over ``src`` of the distance to the nearest ``dst`` point."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    if len(src) == 0 or len(dst) == 0:
        raise ValueError("average distance needs nonempty point sets")
    d, j = SpatialIndex(dst).query(src)
    val = float(d.mean())
    if not grad:
        return val
    return val, (src - dst[j]) / (np.maximum(d, 1e-15)[:, None] * len(src))


def energy_con(right: HandSurface, left: HandSurface, obj: ObjectModel, grad=False):
    """Fingertip-to-object average distance summed over both hands."""
    val, grads = 0.0, []
    for h in (right, left):
        tips = h.fingertip_mask
        if not tips.any():
            raise ValueError("hand has no fingertip vertices")
        v, g = average_distance(h.vertices[tips], obj.cloud.points, True)
        full = np.zeros_like(h.vertices)
        full[tips] = g
        val += v
        grads.append(full)
    return (val, *grads) if grad else val


@dataclass
class DirectionHits:
    right: np.ndarray
    left: np.ndarray
    misses: int


def _split_dirs(D_hat):
    if isinstance(D_hat, dict):
        return np.asarray(D_hat["right"], dtype=np.float64), np.asarray(D_hat["left"], dtype=np.float64)
    d = np.asarray(D_hat, dtype=np.float64).reshape(-1, 3)
    if len(d) != 2 * N_PARTS:
        raise ValueError(f"expected {2 * N_PARTS} direction rows, got {len(d)}")
    return d[:N_PARTS], d[N_PARTS:]


def direction_hits(obj: ObjectModel, D_hat) -> DirectionHits:
    """Surface points hit by each nonzero direction ray cast from the object centre."""
    out, misses = [], 0
    for d in _split_dirs(D_hat):
        n = np.linalg.norm(d, axis=1)
        rows = d[n > 1e-9] / n[n > 1e-9, None]
        if len(rows) == 0:
            out.append(np.zeros((0, 3)))
            continue
        pts, face, _ = cast_rays(np.broadcast_to(obj.center, rows.shape), rows, obj.mesh)
        misses += int((face < 0).sum())
        out.append(pts[face >= 0])
    if misses:
        log.info("direction energy: %d ray(s) missed the mesh", misses)
    return DirectionHits(out[0], out[1], misses)


def energy_dir(right: HandSurface, left: HandSurface, obj: ObjectModel, D_hat=None, hits=None, grad=False):
    """Average distance from each hand's vertices to its direction hit points."""
    hits = hits or direction_hits(obj, D_hat)
    val, grads = 0.0, []
    for h, pts in ((right, hits.right), (left, hits.left)):
        g = np.zeros_like(h.vertices)
        if len(pts):
            v, g = average_distance(h.vertices, pts, True)
            val += v
        grads.append(g)
    return (val, *grads) if grad else val


def tta_energy(right: HandPose, left: HandPose, obj: ObjectModel, hits: DirectionHits, cfg: TtaConfig, template=None):
    """Returns ``(E_T, parts, grad_right, grad_left)`` with ``parts = (E_pen, E_con, E_D)``."""
    template = template or default_template()
    sr = forward_kinematics(right, template)
    sl = forward_kinematics(left, template)
    e_hh, gl_hh, gr_hh = energy_phh(sl, sr, grad=True)
    e_ho, gr_ho, gl_ho = energy_pho(sr, sl, obj, grad=True)
    e_c, gr_c, gl_c = energy_con(sr, sl, obj, grad=True)
    e_d, gr_d, gl_d = energy_dir(sr, sl, obj, hits=hits, grad=True)
    e_pen = e_hh + e_ho
    total = cfg.lambda_pen * e_pen + cfg.lambda_con * e_c + cfg.lambda_D * e_d
    gr = sr.pose_grad(cfg.lambda_pen * (gr_hh + gr_ho) + cfg.lambda_con * gr_c + cfg.lambda_D * gr_d)
    gl = sl.pose_grad(cfg.lambda_pen * (gl_hh + gl_ho) + cfg.lambda_con * gl_c + cfg.lambda_D * gl_d)
    return total, (e_pen, e_c, e_d), gr, gl


def refine(grasp: DualGrasp, obj: ObjectModel, D_hat, cfg: TtaConfig | None = None, template=None) -> DualGrasp:
    """Minimise E_T over both poses; the trace holds energies of accepted iterates."""
    cfg = cfg or TtaConfig()
    template = template or default_template()
    hits = direction_hits(obj, D_hat)
    lim = template.limits
    x = np.concatenate([grasp.right.as_vector(), grasp.left.as_vector()])

    def evaluate(vec):
        r = HandPose.from_vector(vec[:POSE_DIM], "right")
        l_ = HandPose.from_vector(vec[POSE_DIM:], "left")
        return tta_energy(r, l_, obj, hits, cfg, template)

    def failed(reason):
        out = DualGrasp(grasp.right.copy(), grasp.left.copy(), grasp.object_id, grasp.status, list(grasp.trace),
                        grasp.e_phh, grasp.e_pho, dict(grasp.diagnostics))
        out.diagnostics["tta"] = {"failed": True, "reason": reason}
        return out

    try:
        e, parts, gr, gl = evaluate(x)
    except ValueError as exc:
        return failed(str(exc))
    if not np.isfinite(e):
        return failed("non-finite energy")
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2)
    trace, parts_trace = [e], [parts]
    rejected = 0
    for _ in range(cfg.steps):
        g = np.concatenate([gr, gl])
        if not np.all(np.isfinite(g)):
            return failed("non-finite gradient")
        if not np.any(g):
            break
        cand = opt.step(x, g)
        for off in (0, POSE_DIM):
            cand[off + 9 : off + POSE_DIM] = np.clip(cand[off + 9 : off + POSE_DIM], lim[:, 0], lim[:, 1])
        try:
            e_new, parts_new, gr_new, gl_new = evaluate(cand)
        except ValueError:
            e_new = np.inf
        if np.isfinite(e_new) and e_new <= e:
            x, e, parts, gr, gl = cand, e_new, parts_new, gr_new, gl_new
            trace.append(e)
            parts_trace.append(parts)
            opt.lr = min(opt.lr * cfg.lr_growth, cfg.lr)
        else:
            # fold the rejected point's gradient into the moments: after a contact
            # kink the next step then blends the pull with the push-back
            if np.isfinite(e_new):
                opt.step(cand, np.concatenate([gr_new, gl_new]))
            opt.lr = opt.lr * cfg.lr_shrink
            rejected += 1
            if opt.lr < cfg.min_lr:
                break
    out = DualGrasp(
        HandPose.from_vector(x[:POSE_DIM], "right"),
        HandPose.from_vector(x[POSE_DIM:], "left"),
        grasp.object_id,
        grasp.status,
        list(grasp.trace),
        grasp.e_phh,
        grasp.e_pho,
        dict(grasp.diagnostics),
    )
    out.diagnostics["tta"] = {
        "failed": False,
        "trace": trace,
        "e_pen": parts[0],
        "e_con": parts[1],
        "e_dir": parts[2],
        "accepted": len(trace) - 1,
        "rejected": rejected,
        "ray_misses": hits.misses,
        "components": [list(p) for p in parts_trace],
    }
    return out


def fingertip_mean_distance(hand: HandSurface, obj: ObjectModel) -> float:
    return average_distance(hand.vertices[hand.fingertip_mask], obj.cloud.points)
