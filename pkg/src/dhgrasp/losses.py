"""Training losses for the dual-hand generator, each with an analytic gradient.

Functions take ``grad=False``; with ``grad=True`` they return ``(value, grads...)``
where grads are w.r.t. the predicted quantities.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .geometry import ObjectModel, SpatialIndex, closest_on_mesh, points_in_mesh
from .hand_model import HandPose, HandSurface, default_template, forward_kinematics, rot6d_to_matrix, rot6d_vjp

ACOS_CLAMP = 1e-7


@dataclass
class LossConfig:
    lambda_w: float = 4.0
    lambda_ori: float = 1.0
    lambda_pose: float = 1.0
    lambda_V: float = 10.0
    lambda_mask: float = 1.0
    lambda_con: float = 1.0
    lambda_part: float = 1.0
    lambda_hand: float = 1.0
    lambda_pen: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be nonnegative")


@dataclass(frozen=True)
class ScaledTranslation:
    """Root translation expressed in object diameters."""

    tau_prime: np.ndarray
    d: float

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError("object diameter must be positive")
        object.__setattr__(self, "tau_prime", np.asarray(self.tau_prime, dtype=np.float64).reshape(3))

    @classmethod
    def from_translation(cls, tau, d) -> ScaledTranslation:
        return cls(np.asarray(tau, dtype=np.float64) / d, d)

    @property
    def tau(self) -> np.ndarray:
        return self.tau_prime * self.d


def _same_shape(a, b, what):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


# --------------------------------------------------------------------------
# contact / part


def loss_contact(C, C_hat, lambda_w=4.0, grad=False):
    """Weighted L1 contact regression, weights 1 + lambda_w * c from the ground truth."""
    c, ch = _same_shape(C, C_hat, "contact")
    w = 1.0 + lambda_w * c
    r = c - ch
    val = float(np.abs(w * r).sum())
    if not grad:
        return val
    return val, -w * np.sign(r)


def loss_part(P, P_hat, grad=False):
    """Mean cross-entropy of predicted class probabilities against one-hot targets."""
    p, ph = _same_shape(P, P_hat, "part")
    if np.any(np.abs(ph.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("predicted part rows must sum to 1")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9) or np.any((p != 0) & (p != 1)):
        raise ValueError("target part rows must be one-hot")
    n = len(p)
    cls = np.argmax(p, axis=1)
    q = ph[np.arange(n), cls]
    val = float(-np.log(np.maximum(q, 1e-300)).mean())
    if not grad:
        return val
    g = np.zeros_like(ph)
    g[np.arange(n), cls] = -1.0 / (n * np.maximum(q, 1e-300))
    return val, g


def loss_part_logits(P, Z, grad=False):
    """Cross-entropy with a softmax over raw scores ``Z``."""
    p, z = _same_shape(P, Z, "part")
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    n = len(p)
    cls = np.argmax(p, axis=1)
    val = float((lse - z[np.arange(n), cls]).mean())
    if not grad:
        return val
    soft = np.exp(z - lse[:, None])
    return val, (soft - p) / n


# --------------------------------------------------------------------------
# hand reconstruction


def geodesic_loss(r6, r6_hat, grad=False):
    """arccos((tr(R^T R_hat) - 1) / 2), clamped for finite gradients; grad w.r.t. r6_hat."""
    r1 = rot6d_to_matrix(r6)
    r2 = rot6d_to_matrix(r6_hat)
    x = (np.trace(r1.T @ r2) - 1.0) / 2.0
    xc = np.clip(x, -1.0 + ACOS_CLAMP, 1.0 - ACOS_CLAMP)
    val = float(np.arccos(xc))
    if not grad:
        return val
    if x != xc:
        return val, np.zeros(6)
    g_r2 = -0.5 / np.sqrt(1.0 - xc * xc) * r1
    return val, rot6d_vjp(r6_hat, g_r2)


def _norm(v, grad):
    n = float(np.linalg.norm(v))
    if not grad:
        return n
    return n, (v / n if n > 0 else np.zeros_like(v))


@dataclass
class HandTarget:
    """One hand's regression target: scaled translation, 6D rotation, joint angles."""

    chirality: str
    tau_prime: np.ndarray
    rot6d: np.ndarray
    theta: np.ndarray

    @classmethod
    def from_pose(cls, pose: HandPose, d) -> HandTarget:
        return cls(pose.chirality, pose.trans / d, pose.rot6d.copy(), pose.theta.copy())

    def as_vector(self):
        return np.concatenate([self.tau_prime, self.rot6d, self.theta])

    @classmethod
    def from_vector(cls, v, chirality) -> HandTarget:
        v = np.asarray(v, dtype=np.float64)
        return cls(chirality, v[:3], v[3:9], v[9:])

    def pose(self, d) -> HandPose:
        return HandPose(self.chirality, self.tau_prime * d, self.rot6d, self.theta)


def _hand_term(gt: HandTarget, pr: HandTarget, d, cfg, template, grad):
    lt, gt_ = _norm(pr.tau_prime - gt.tau_prime, True)
    lo, go = geodesic_loss(gt.rot6d, pr.rot6d, True)
    lp, gp = _norm(pr.theta - gt.theta, True)
    v_gt = forward_kinematics(gt.pose(d), template).vertices
    surf = forward_kinematics(pr.pose(d), template)
    lv, gv = _norm(surf.vertices - v_gt, True)
    val = lt + cfg.lambda_ori * lo + cfg.lambda_pose * lp + cfg.lambda_V * lv
    if not grad:
        return val, None
    g = cfg.lambda_V * surf.pose_grad(gv)
    g[:3] *= d  # vertices depend on tau = tau' d
    g[:3] += gt_
    g[3:9] += cfg.lambda_ori * go
    g[9:] += cfg.lambda_pose * gp
    return val, g


def loss_hand(gt, pred, d, cfg: LossConfig | None = None, template=None, grad=False):
    """Sum over both hands of translation, geodesic, pose and vertex distances.

    ``gt`` and ``pred`` are ``(right, left)`` pairs of :class:`HandTarget`; ``d``
    is the object diameter used to unscale translations for FK. With ``grad``
    returns ``(L, [g_right, g_left])`` w.r.t. each predicted 31-vector.
    """
    cfg = cfg or LossConfig()
    template = template or default_template()
    total, grads = 0.0, []
    for g_h, p_h in zip(gt, pred):
        v, g = _hand_term(g_h, p_h, d, cfg, template, grad)
        total += v
        grads.append(g)
    return (total, grads) if grad else total


# --------------------------------------------------------------------------
# penetration


def loss_pen(right: HandSurface, left: HandSurface, obj: ObjectModel, grad=False):
    """Hand-object penetration of both hands plus left-into-right hand penetration.

    Each penetrating vertex contributes its distance to the penetrated surface:
    the object mesh, or the nearest right-hand vertex. With ``grad`` returns
    ``(L, dL/dV_right, dL/dV_left)``.
    """
    val = 0.0
    g_r = np.zeros_like(right.vertices)
    g_l = np.zeros_like(left.vertices)
    for verts, g in ((right.vertices, g_r), (left.vertices, g_l)):
        ins = np.flatnonzero(points_in_mesh(verts, obj.mesh))
        if len(ins):
            dist, foot, _ = closest_on_mesh(verts[ins], obj.mesh)
            val += float(dist.sum())
            g[ins] += (verts[ins] - foot) / np.maximum(dist, 1e-15)[:, None]
    ins = np.flatnonzero(right.contains(left.vertices))
    if len(ins):
        dist, j = SpatialIndex(right.vertices).query(left.vertices[ins])
        val += float(dist.sum())
        u = (left.vertices[ins] - right.vertices[j]) / np.maximum(dist, 1e-15)[:, None]
        g_l[ins] += u
        np.add.at(g_r, j, -u)
    if not grad:
        return val
    return val, g_r, g_l


# --------------------------------------------------------------------------
# diffusion


def loss_ddpm(eps_dir, eps_dir_hat, eps_mask, eps_mask_hat, lambda_mask=1.0, grad=False):
    """Squared error on the direction noise plus weighted squared error on the mask noise."""
    e, eh = _same_shape(eps_dir, eps_dir_hat, "direction noise")
    m, mh = _same_shape(eps_mask, eps_mask_hat, "mask noise")
    rd, rm = eh - e, mh - m
    val = float((rd * rd).sum() + lambda_mask * (rm * rm).sum())
    if not grad:
        return val
    return val, 2.0 * rd, 2.0 * lambda_mask * rm


def total_loss(terms: dict, cfg: LossConfig | None = None) -> float:
    """lambda_con L_con + lambda_part L_part + lambda_hand L_hand + lambda_pen L_pen + L_ddpm."""
    cfg = cfg or LossConfig()
    w = {"con": cfg.lambda_con, "part": cfg.lambda_part, "hand": cfg.lambda_hand, "pen": cfg.lambda_pen, "ddpm": 1.0}
    unknown = set(terms) - set(w)
    if unknown:
        raise ValueError(f"unknown loss terms {sorted(unknown)}")
    return float(sum(w[k] * v for k, v in terms.items()))
