"""Parametric 22-DoF capsule hand.

Pose layout (31 numbers): translation (3), 6D rotation (6), joint angles (22).
Joint order: thumb 0-4, index 5-8, middle 9-12, ring 13-16, little 17-21.

The hand frame has the wrist at the origin, fingers along +z and the palm
facing -y; the right thumb sits on +x. The left hand is the right template
reflected through its sagittal plane (x -> -x) with identical joint semantics.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from . import kernels
from .geometry import GeometryError, reflection_matrix

PARTS = ("thumb", "index", "middle", "ring", "little", "palm")
N_PARTS = len(PARTS)
PALM = PARTS.index("palm")
N_DOF = 22
POSE_DIM = 3 + 6 + N_DOF
FLEX_LIMITS = (0.0, 1.6)
ABD_LIMITS = (-0.35, 0.35)
SAGITTAL = np.diag([-1.0, 1.0, 1.0])
CHIRALITIES = ("right", "left")


# --------------------------------------------------------------------------
# 6D rotations


def rot6d_to_matrix(r) -> np.ndarray:
    """Gram-Schmidt on the two stored columns; third column by cross product."""
    r = np.asarray(r, dtype=np.float64).reshape(6)
    a1, a2 = r[:3], r[3:]
    n1 = np.linalg.norm(a1)
    if n1 < 1e-8:
        raise GeometryError("degenerate 6D rotation: first column ~ 0")
    b1 = a1 / n1
    u = a2 - (b1 @ a2) * b1
    n2 = np.linalg.norm(u)
    if n2 < 1e-8:
        raise GeometryError("degenerate 6D rotation: columns are parallel")
    b2 = u / n2
    return np.column_stack([b1, b2, np.cross(b1, b2)])


def matrix_to_rot6d(rot) -> np.ndarray:
    rot = np.asarray(rot, dtype=np.float64)
    return np.concatenate([rot[:, 0], rot[:, 1]])


def rot6d_vjp(r, grad_rot) -> np.ndarray:
    """Pull a gradient w.r.t. the 3x3 matrix back to the 6D parameters."""
    r = np.asarray(r, dtype=np.float64).reshape(6)
    g = np.asarray(grad_rot, dtype=np.float64)
    a1, a2 = r[:3], r[3:]
    n1 = np.linalg.norm(a1)
    b1 = a1 / n1
    d = b1 @ a2
    u = a2 - d * b1
    n2 = np.linalg.norm(u)
    b2 = u / n2
    gb1 = g[:, 0] + np.cross(b2, g[:, 2])
    gb2 = g[:, 1] + np.cross(g[:, 2], b1)
    gu = (gb2 - b2 * (b2 @ gb2)) / n2
    ga2 = gu - b1 * (b1 @ gu)
    gb1 = gb1 - (b1 @ gu) * a2 - d * gu
    ga1 = (gb1 - b1 * (b1 @ gb1)) / n1
    return np.concatenate([ga1, ga2])


def axis_angle(axis, angle) -> np.ndarray:
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def geodesic_angle(r1, r2) -> float:
    m = rot6d_to_matrix(r1).T @ rot6d_to_matrix(r2)
    return float(np.arccos(np.clip((np.trace(m) - 1) / 2, -1.0, 1.0)))


# --------------------------------------------------------------------------
# pose


@dataclass
class HandPose:
    chirality: str = "right"
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rot6d: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0, 1.0, 0]))
    theta: np.ndarray = field(default_factory=lambda: np.zeros(N_DOF))

    def __post_init__(self):
        if self.chirality not in CHIRALITIES:
            raise GeometryError(f"chirality must be right/left, got {self.chirality!r}")
        self.trans = np.asarray(self.trans, dtype=np.float64).reshape(3).copy()
        self.rot6d = np.asarray(self.rot6d, dtype=np.float64).reshape(6).copy()
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1).copy()
        if len(self.theta) != N_DOF:
            raise GeometryError(f"theta must have {N_DOF} entries, got {len(self.theta)}")

    @property
    def rotation(self) -> np.ndarray:
        return rot6d_to_matrix(self.rot6d)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.trans, self.rot6d, self.theta])

    @classmethod
    def from_vector(cls, vec, chirality="right") -> HandPose:
        vec = np.asarray(vec, dtype=np.float64)
        return cls(chirality, vec[:3], vec[3:9], vec[9:])

    def copy(self) -> HandPose:
        return HandPose(self.chirality, self.trans, self.rot6d, self.theta)

    def with_rotation(self, rot) -> HandPose:
        return HandPose(self.chirality, self.trans, matrix_to_rot6d(rot), self.theta)

    def translated(self, offset) -> HandPose:
        return HandPose(self.chirality, self.trans + np.asarray(offset), self.rot6d, self.theta)


# --------------------------------------------------------------------------
# template


def _frame_from(z, palmar):
    z = np.asarray(z, dtype=np.float64)
    z = z / np.linalg.norm(z)
    q = np.asarray(palmar, dtype=np.float64)
    q = q - (q @ z) * z
    y = -q / np.linalg.norm(q)
    x = np.cross(y, z)
    return np.column_stack([x, y, z])


@dataclass
class HandTemplate:
    """Kinematic tree, capsule geometry, limits and surface sampling counts."""

    names: list
    parents: np.ndarray  # joint parent index, -1 for the palm
    offsets: np.ndarray  # (J, 3) joint origin in the parent frame
    rest_rots: np.ndarray  # (J, 3, 3)
    axes: np.ndarray  # (J, 3) local rotation axis
    kinds: list  # "flex" | "abd"
    finger_of_joint: np.ndarray
    capsules: list  # dicts: joint, length, radius, part, distal
    palm_center: np.ndarray
    palm_radii: np.ndarray
    palm_points: int = 160
    ring_points: int = 8
    rings: int = 4
    cap_points: int = 4
    tip_ring_points: int = 20
    tip_rings: int = 6
    tip_cap_points: int = 12

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=np.int64)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        self.rest_rots = np.asarray(self.rest_rots, dtype=np.float64)
        self.axes = np.asarray(self.axes, dtype=np.float64)
        self.finger_of_joint = np.asarray(self.finger_of_joint, dtype=np.int64)
        self.palm_center = np.asarray(self.palm_center, dtype=np.float64)
        self.palm_radii = np.asarray(self.palm_radii, dtype=np.float64)
        if len(self.parents) != N_DOF:
            raise GeometryError(f"template must have {N_DOF} joints")
        for j, p in enumerate(self.parents):
            if p >= j:
                raise GeometryError("joints must be topologically ordered (parent before child)")
        self._build_surface()

    @cached_property
    def axis_skew(self):
        """Per-joint skew matrices K and K^2 of the unit rotation axes."""
        a = self.axes / np.linalg.norm(self.axes, axis=1, keepdims=True)
        k = np.zeros((len(a), 3, 3))
        k[:, 0, 1], k[:, 0, 2], k[:, 1, 2] = -a[:, 2], a[:, 1], -a[:, 0]
        k[:, 1, 0], k[:, 2, 0], k[:, 2, 1] = a[:, 2], -a[:, 1], a[:, 0]
        return k, k @ k

    @property
    def limits(self) -> np.ndarray:
        return np.array([FLEX_LIMITS if k == "flex" else ABD_LIMITS for k in self.kinds])

    def _build_surface(self):
        body, local, normal, part, tip = [], [], [], [], []
        golden = np.pi * (3 - 5**0.5)

        def cap(n, sign):
            i = np.arange(n)
            zc = (i + 0.5) / n
            rr = np.sqrt(1 - zc**2)
            ph = i * golden
            return np.column_stack([rr * np.cos(ph), rr * np.sin(ph), sign * zc])

        for c in self.capsules:
            if c["distal"]:
                na, nr, nc = self.tip_ring_points, self.tip_rings, self.tip_cap_points
            else:
                na, nr, nc = self.ring_points, self.rings, self.cap_points
            length, rad = c["length"], c["radius"]
            pts, nrm, axial = [], [], []
            for k in range(nr):
                ph = 2 * np.pi * (np.arange(na) + 0.5 * (k % 2)) / na
                n = np.column_stack([np.cos(ph), np.sin(ph), np.zeros(na)])
                pts.append(rad * n + [0, 0, length * (k + 0.5) / nr])
                nrm.append(n)
                axial.append(np.ones(na, dtype=bool))
            for sign, base in ((1, length), (-1, 0.0)):
                n = cap(nc, sign)
                pts.append(rad * n + [0, 0, base])
                nrm.append(n)
                axial.append(np.full(nc, sign > 0))
            pts, nrm, axial = np.concatenate(pts), np.concatenate(nrm), np.concatenate(axial)
            body.append(np.full(len(pts), c["joint"]))
            local.append(pts)
            normal.append(nrm)
            part.append(np.full(len(pts), c["part"]))
            # pad: palmar-facing, distal 60% of the phalanx and its end cap
            pad = (-nrm[:, 1] >= 0.7) & axial & (pts[:, 2] >= 0.4 * length)
            tip.append(pad if c["distal"] else np.zeros(len(pts), dtype=bool))
        # palm ellipsoid, Fibonacci sphere
        n = self.palm_points
        i = np.arange(n)
        zc = 1 - 2 * (i + 0.5) / n
        rr = np.sqrt(1 - zc**2)
        ph = i * golden
        s = np.column_stack([rr * np.cos(ph), rr * np.sin(ph), zc])
        body.append(np.full(n, -1))
        local.append(self.palm_center + s * self.palm_radii)
        part.append(np.full(n, PALM))
        tip.append(np.zeros(n, dtype=bool))
        self.vertex_body = np.concatenate(body).astype(np.int64)
        self.vertex_local = np.concatenate(local)
        self.vertex_part = np.concatenate(part).astype(np.int64)
        self.fingertip_mask = np.concatenate(tip)
        # joint j influences vertex v iff v's body is j or a descendant of j
        anc = np.zeros((N_DOF, N_DOF), dtype=bool)
        for j in range(N_DOF):
            k = j
            while k >= 0:
                anc[k, j] = True
                k = self.parents[k]
        has_body = self.vertex_body >= 0
        self.influence = np.zeros((N_DOF, len(self.vertex_body)), dtype=bool)
        self.influence[:, has_body] = anc[:, self.vertex_body[has_body]]
        cap_joint = np.array([c["joint"] for c in self.capsules])
        self.capsule_joint = cap_joint
        self.capsule_length = np.array([c["length"] for c in self.capsules])
        self.capsule_radius = np.array([c["radius"] for c in self.capsules])

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_body)

    # ------------------------------------------------------------------ io

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "parents": self.parents.tolist(),
            "offsets": self.offsets.tolist(),
            "rest_rots": self.rest_rots.tolist(),
            "axes": self.axes.tolist(),
            "kinds": list(self.kinds),
            "finger_of_joint": self.finger_of_joint.tolist(),
            "capsules": [dict(c) for c in self.capsules],
            "palm_center": self.palm_center.tolist(),
            "palm_radii": self.palm_radii.tolist(),
            "limits": {"flex": list(FLEX_LIMITS), "abd": list(ABD_LIMITS)},
            "sampling": {
                k: getattr(self, k)
                for k in (
                    "palm_points", "ring_points", "rings", "cap_points",
                    "tip_ring_points", "tip_rings", "tip_cap_points",
                )
            },
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_dict(cls, d) -> HandTemplate:
        kw = {k: d[k] for k in (
            "names", "parents", "offsets", "rest_rots", "axes", "kinds",
            "finger_of_joint", "capsules", "palm_center", "palm_radii",
        )}
        kw.update(d.get("sampling", {}))
        return cls(**kw)

    @classmethod
    def from_json(cls, text_or_path) -> HandTemplate:
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            with open(text) as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))


def build_default_template() -> HandTemplate:
    names, parents, offsets, rots, axes, kinds, finger, capsules = [], [], [], [], [], [], [], []
    x_axis, y_axis = [1.0, 0, 0], [0, 1.0, 0]

    def joint(name, parent, offset, kind, fid, rot=None):
        names.append(name)
        parents.append(parent)
        offsets.append(offset)
        rots.append(np.eye(3) if rot is None else rot)
        axes.append(x_axis if kind == "flex" else y_axis)
        kinds.append(kind)
        finger.append(fid)
        return len(names) - 1

    def phalanges(first, fid, lengths, radii):
        prev = first
        out = []
        for k, (ln, rad) in enumerate(zip(lengths, radii)):
            if k > 0:
                prev = joint(f"{PARTS[fid]}_{('pip', 'dip')[k - 1]}", prev, [0, 0, lengths[k - 1]], "flex", fid)
            capsules.append({"joint": prev, "length": ln, "radius": rad, "part": fid, "distal": k == 2})
            out.append(prev)
        return out

    # thumb: cmc abduction + flexion, metacarpal, mcp abduction + flexion, proximal, ip, distal
    th_rot = _frame_from([0.72, -0.35, 0.60], [-0.6, -0.8, 0.0])
    j = joint("thumb_cmc_abd", -1, [0.026, -0.010, 0.025], "abd", 0, th_rot)
    j = joint("thumb_cmc_flex", j, [0, 0, 0], "flex", 0)
    capsules.append({"joint": j, "length": 0.040, "radius": 0.0105, "part": 0, "distal": False})
    j = joint("thumb_mcp_abd", j, [0, 0, 0.040], "abd", 0)
    j = joint("thumb_mcp_flex", j, [0, 0, 0], "flex", 0)
    capsules.append({"joint": j, "length": 0.032, "radius": 0.0095, "part": 0, "distal": False})
    j = joint("thumb_ip", j, [0, 0, 0.032], "flex", 0)
    capsules.append({"joint": j, "length": 0.025, "radius": 0.0082, "part": 0, "distal": True})

    specs = {
        1: ([0.028, 0, 0.095], (0.044, 0.026, 0.020), (0.0092, 0.0082, 0.0074)),
        2: ([0.009, 0, 0.099], (0.048, 0.029, 0.021), (0.0092, 0.0082, 0.0074)),
        3: ([-0.010, 0, 0.096], (0.045, 0.027, 0.020), (0.0090, 0.0080, 0.0072)),
    }
    for fid, (base, lengths, radii) in specs.items():
        j = joint(f"{PARTS[fid]}_mcp_abd", -1, base, "abd", fid)
        j = joint(f"{PARTS[fid]}_mcp_flex", j, [0, 0, 0], "flex", fid)
        phalanges(j, fid, lengths, radii)
    j = joint("little_cmc", -1, [-0.022, 0, 0.040], "flex", 4)
    j = joint("little_mcp_abd", j, [-0.006, 0, 0.048], "abd", 4)
    j = joint("little_mcp_flex", j, [0, 0, 0], "flex", 4)
    phalanges(j, 4, (0.036, 0.021, 0.018), (0.0084, 0.0076, 0.0068))

    return HandTemplate(
        names=names,
        parents=parents,
        offsets=offsets,
        rest_rots=rots,
        axes=axes,
        kinds=kinds,
        finger_of_joint=finger,
        capsules=capsules,
        palm_center=[0.002, 0.0, 0.052],
        palm_radii=[0.044, 0.0145, 0.050],
    )


@lru_cache(maxsize=1)
def default_template() -> HandTemplate:
    return build_default_template()


# --------------------------------------------------------------------------
# forward kinematics


@dataclass(eq=False)
class HandSurface:
    """Posed hand: world vertices, part ids, fingertip mask and solid primitives.

    Surfaces produced by :func:`forward_kinematics` can back-propagate vertex
    gradients to the 31 pose parameters via :meth:`pose_grad`.
    """

    vertices: np.ndarray
    parts: np.ndarray
    fingertip_mask: np.ndarray
    seg_a: np.ndarray | None = None
    seg_b: np.ndarray | None = None
    radii: np.ndarray | None = None
    ell_center: np.ndarray | None = None
    ell_inv: np.ndarray | None = None
    mesh: object = None
    clamped: bool = False
    _fk: dict | None = None

    @property
    def n(self) -> int:
        return len(self.vertices)

    @property
    def has_solid(self) -> bool:
        return self.seg_a is not None or self.mesh is not None

    def contains(self, points) -> np.ndarray:
        """Membership in the hand volume (capsule union + palm ellipsoid)."""
        if self.seg_a is not None:
            return kernels.inside_solid(points, self.seg_a, self.seg_b, self.radii, self.ell_center, self.ell_inv)
        if self.mesh is not None:
            from .geometry import points_in_mesh

            return points_in_mesh(points, self.mesh)
        raise GeometryError("hand surface carries no volume for inside tests")

    def bounds(self, pad=0.0):
        lo = self.vertices.min(axis=0) - pad
        hi = self.vertices.max(axis=0) + pad
        return lo, hi

    def pose_grad(self, grad_vertices) -> np.ndarray:
        """Chain rule from d/d(world vertices) to d/d(pose vector)."""
        if self._fk is None:
            raise GeometryError("surface was not produced by forward kinematics")
        fk = self._fk
        g = np.asarray(grad_vertices, dtype=np.float64).reshape(-1, 3)
        m = fk["M"]
        v_hand = fk["v_hand"]
        out = np.zeros(POSE_DIM)
        out[:3] = g.sum(axis=0)
        g_m = g.T @ (v_hand @ fk["S"].T)  # dE/dM with M applied to S v_hand
        out[3:9] = rot6d_vjp(fk["rot6d"], g_m)
        g_loc = g @ m  # gradient in the right-template hand frame
        cross_sum = fk["influence"] @ np.cross(v_hand, g_loc)
        g_sum = fk["influence"] @ g_loc
        jt = np.einsum("ji,ji->j", fk["omega"], cross_sum - np.cross(fk["p"], g_sum))
        out[9:] = np.where(fk["active"], jt, 0.0)
        return out


def _joint_frames(template: HandTemplate, theta):
    k, k2 = template.axis_skew
    local = np.eye(3) + np.sin(theta)[:, None, None] * k + (1 - np.cos(theta))[:, None, None] * k2
    local = template.rest_rots @ local
    rots = np.empty((N_DOF, 3, 3))
    pos = np.empty((N_DOF, 3))
    for j in range(N_DOF):
        par = template.parents[j]
        if par < 0:
            pos[j] = template.offsets[j]
            rots[j] = local[j]
        else:
            pos[j] = pos[par] + rots[par] @ template.offsets[j]
            rots[j] = rots[par] @ local[j]
    return rots, pos


def forward_kinematics(pose: HandPose, template: HandTemplate | None = None) -> HandSurface:
    template = template or default_template()
    lim = template.limits
    theta = np.clip(pose.theta, lim[:, 0], lim[:, 1])
    clamped = bool(np.any(theta != pose.theta))
    rots, pos = _joint_frames(template, theta)
    body = template.vertex_body
    v_hand = template.vertex_local.copy()
    m = body >= 0
    b = body[m]
    v_hand[m] = pos[b] + np.einsum("nij,nj->ni", rots[b], template.vertex_local[m])
    rot = pose.rotation
    s = SAGITTAL if pose.chirality == "left" else np.eye(3)
    big_m = rot @ s
    verts = v_hand @ big_m.T + pose.trans
    # solid primitives in world coordinates
    cj = template.capsule_joint
    seg_a_h = pos[cj]
    seg_b_h = pos[cj] + rots[cj][:, :, 2] * template.capsule_length[:, None]
    seg_a = seg_a_h @ big_m.T + pose.trans
    seg_b = seg_b_h @ big_m.T + pose.trans
    ell_center = big_m @ template.palm_center + pose.trans
    ell_inv = np.diag(1.0 / template.palm_radii) @ big_m.T
    omega = np.einsum("jik,jk->ji", rots, template.axes)
    active = (pose.theta >= lim[:, 0]) & (pose.theta <= lim[:, 1])
    fk = {
        "M": big_m,
        "S": s,
        "rot6d": pose.rot6d.copy(),
        "v_hand": v_hand,
        "omega": omega,
        "p": pos,
        "influence": template.influence.astype(np.float64),
        "active": active,
    }
    return HandSurface(
        vertices=verts,
        parts=template.vertex_part,
        fingertip_mask=template.fingertip_mask,
        seg_a=seg_a,
        seg_b=seg_b,
        radii=template.capsule_radius,
        ell_center=ell_center,
        ell_inv=ell_inv,
        clamped=clamped,
        _fk=fk,
    )


def rest_vertices(template: HandTemplate | None = None) -> np.ndarray:
    """Vertices of the right hand at the zero pose."""
    return forward_kinematics(HandPose(), template).vertices


def external_surface(vertices, parts, fingertip_mask=None, mesh=None) -> HandSurface:
    """Wrap externally supplied hand vertices (e.g. MANO) without kinematics."""
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    parts = np.asarray(parts, dtype=np.int64)
    if len(parts) != len(v) or parts.min() < 0 or parts.max() >= N_PARTS:
        raise GeometryError("part labels must cover every vertex with ids in 0..5")
    tips = np.zeros(len(v), dtype=bool) if fingertip_mask is None else np.asarray(fingertip_mask, dtype=bool)
    return HandSurface(v, parts, tips, mesh=mesh)


def mirror_pose(pose: HandPose, axis) -> HandPose:
    """Reflect a hand through a coordinate plane; chirality flips.

    FK of the result equals the reflected FK of the input vertex-by-vertex.
    """
    s = reflection_matrix(axis)
    rot = s @ pose.rotation @ SAGITTAL
    other = "left" if pose.chirality == "right" else "right"
    return HandPose(other, s @ pose.trans, matrix_to_rot6d(rot), pose.theta)
