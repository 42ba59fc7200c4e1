"""Hot geometric kernels.

Every kernel has a numba implementation (``_*_nb``) and a vectorised numpy
implementation (``_*_np``). The public wrappers pick one according to
:data:`dhgrasp._jit.USE_NUMBA`; both paths are tested against each other.
"""
import math

import numpy as np

from ._jit import USE_NUMBA, njit

_CHUNK = 256
_TWO_PI = 2.0 * math.pi


def _as_tri(vertices, faces):
    return np.ascontiguousarray(np.asarray(vertices, dtype=np.float64)[np.asarray(faces)])


# --------------------------------------------------------------------------
# generalized winding number


@njit
def _winding_nb(points, tri):
    n = points.shape[0]
    m = tri.shape[0]
    out = np.zeros(n)
    for i in range(n):
        px = points[i, 0]
        py = points[i, 1]
        pz = points[i, 2]
        total = 0.0
        for f in range(m):
            ax = tri[f, 0, 0] - px
            ay = tri[f, 0, 1] - py
            az = tri[f, 0, 2] - pz
            bx = tri[f, 1, 0] - px
            by = tri[f, 1, 1] - py
            bz = tri[f, 1, 2] - pz
            cx = tri[f, 2, 0] - px
            cy = tri[f, 2, 1] - py
            cz = tri[f, 2, 2] - pz
            la = math.sqrt(ax * ax + ay * ay + az * az)
            lb = math.sqrt(bx * bx + by * by + bz * bz)
            lc = math.sqrt(cx * cx + cy * cy + cz * cz)
            det = ax * (by * cz - bz * cy) - ay * (bx * cz - bz * cx) + az * (bx * cy - by * cx)
            den = (
                la * lb * lc
                + (ax * bx + ay * by + az * bz) * lc
                + (bx * cx + by * cy + bz * cz) * la
                + (cx * ax + cy * ay + cz * az) * lb
            )
            total += math.atan2(det, den)
        out[i] = total / (2.0 * math.pi)
    return out


def _winding_np(points, tri):
    out = np.empty(len(points))
    for s in range(0, len(points), _CHUNK):
        p = points[s : s + _CHUNK, None, None, :]
        d = tri[None, :, :, :] - p
        a, b, c = d[..., 0, :], d[..., 1, :], d[..., 2, :]
        la = np.linalg.norm(a, axis=-1)
        lb = np.linalg.norm(b, axis=-1)
        lc = np.linalg.norm(c, axis=-1)
        det = np.einsum("...i,...i->...", a, np.cross(b, c))
        den = (
            la * lb * lc
            + np.einsum("...i,...i->...", a, b) * lc
            + np.einsum("...i,...i->...", b, c) * la
            + np.einsum("...i,...i->...", c, a) * lb
        )
        out[s : s + _CHUNK] = np.arctan2(det, den).sum(axis=1) / _TWO_PI
    return out


def winding_numbers(points, vertices, faces):
    """Generalized winding number of each query point w.r.t. a triangle soup."""
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    tri = _as_tri(vertices, faces)
    if len(points) == 0 or len(tri) == 0:
        return np.zeros(len(points))
    if USE_NUMBA:
        return _winding_nb(points, tri)
    return _winding_np(points, tri)


# --------------------------------------------------------------------------
# closest point on a triangle soup


@njit
def _tri_closest(p, a, b, c, q):
    """Closest point on triangle abc to p, written into q (Ericson 5.1.5)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab[0] * ap[0] + ab[1] * ap[1] + ab[2] * ap[2]
    d2 = ac[0] * ap[0] + ac[1] * ap[1] + ac[2] * ap[2]
    if d1 <= 0.0 and d2 <= 0.0:
        q[:] = a
        return
    bp = p - b
    d3 = ab[0] * bp[0] + ab[1] * bp[1] + ab[2] * bp[2]
    d4 = ac[0] * bp[0] + ac[1] * bp[1] + ac[2] * bp[2]
    if d3 >= 0.0 and d4 <= d3:
        q[:] = b
        return
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        q[:] = a + (d1 / (d1 - d3)) * ab
        return
    cp = p - c
    d5 = ab[0] * cp[0] + ab[1] * cp[1] + ab[2] * cp[2]
    d6 = ac[0] * cp[0] + ac[1] * cp[1] + ac[2] * cp[2]
    if d6 >= 0.0 and d5 <= d6:
        q[:] = c
        return
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        q[:] = a + (d2 / (d2 - d6)) * ac
        return
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        q[:] = b + w * (c - b)
        return
    denom = 1.0 / (va + vb + vc)
    q[:] = a + ab * (vb * denom) + ac * (vc * denom)


@njit
def _closest_nb(points, tri):
    n = points.shape[0]
    m = tri.shape[0]
    best_d2 = np.full(n, np.inf)
    best_q = np.zeros((n, 3))
    best_f = np.full(n, -1, dtype=np.int64)
    q = np.zeros(3)
    for i in range(n):
        p = points[i]
        for f in range(m):
            _tri_closest(p, tri[f, 0], tri[f, 1], tri[f, 2], q)
            dx = p[0] - q[0]
            dy = p[1] - q[1]
            dz = p[2] - q[2]
            dd = dx * dx + dy * dy + dz * dz
            if dd < best_d2[i]:
                best_d2[i] = dd
                best_q[i] = q
                best_f[i] = f
    return np.sqrt(best_d2), best_q, best_f


@njit
def _closest_subset_nb(points, tri, offsets, cand):
    """Like _closest_nb, but point i only scans faces cand[offsets[i]:offsets[i+1]]."""
    n = points.shape[0]
    best_d2 = np.full(n, np.inf)
    best_q = np.zeros((n, 3))
    best_f = np.full(n, -1, dtype=np.int64)
    q = np.zeros(3)
    for i in range(n):
        p = points[i]
        for k in range(offsets[i], offsets[i + 1]):
            f = cand[k]
            _tri_closest(p, tri[f, 0], tri[f, 1], tri[f, 2], q)
            dx = p[0] - q[0]
            dy = p[1] - q[1]
            dz = p[2] - q[2]
            dd = dx * dx + dy * dy + dz * dz
            if dd < best_d2[i]:
                best_d2[i] = dd
                best_q[i] = q
                best_f[i] = f
    return np.sqrt(best_d2), best_q, best_f


def _seg_closest_np(p, u, v):
    e = v - u
    ee = np.einsum("...i,...i->...", e, e)
    t = np.einsum("...i,...i->...", p - u, e) / np.where(ee > 0, ee, 1.0)
    t = np.clip(t, 0.0, 1.0)
    return u + t[..., None] * e


def _closest_np(points, tri):
    n = len(points)
    dist = np.empty(n)
    closest = np.empty((n, 3))
    face = np.empty(n, dtype=np.int64)
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab, ac = b - a, c - a
    nrm = np.cross(ab, ac)
    nn = np.einsum("ij,ij->i", nrm, nrm)
    for s in range(0, n, _CHUNK):
        p = points[s : s + _CHUNK, None, :]
        # projection onto the supporting plane, accepted if inside the triangle
        ap = p - a[None]
        h = np.einsum("fi,pfi->pf", nrm, ap) / nn[None]
        proj = p - h[..., None] * nrm[None]
        w = proj - a[None]
        u1 = np.einsum("pfi,fi->pf", np.cross(w, ac[None]), nrm) / nn[None]
        u2 = np.einsum("pfi,fi->pf", np.cross(ab[None], w), nrm) / nn[None]
        inside = (u1 >= 0) & (u2 >= 0) & (u1 + u2 <= 1)
        cands = [
            np.where(inside[..., None], proj, np.inf),
            _seg_closest_np(p, a[None], b[None]),
            _seg_closest_np(p, b[None], c[None]),
            _seg_closest_np(p, c[None], a[None]),
        ]
        cand = np.stack(cands, axis=0)
        d2 = np.einsum("kpfi,kpfi->kpf", cand - p[None], cand - p[None])
        d2 = np.where(np.isnan(d2), np.inf, d2)
        k = np.argmin(d2, axis=0)
        d2k = np.take_along_axis(d2, k[None], axis=0)[0]
        f = np.argmin(d2k, axis=1)
        rows = np.arange(len(f))
        kk = k[rows, f]
        dist[s : s + _CHUNK] = np.sqrt(d2k[rows, f])
        closest[s : s + _CHUNK] = cand[kk, rows, f]
        face[s : s + _CHUNK] = f
    return dist, closest, face


def closest_points(points, vertices, faces):
    """Exact closest surface point of each query. Returns (dist, point, face)."""
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    tri = _as_tri(vertices, faces)
    if len(points) == 0:
        return np.zeros(0), np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    if USE_NUMBA:
        return _closest_nb(points, tri)
    return _closest_np(points, tri)


def _closest_subset_np(points, tri, offsets, cand):
    n = len(points)
    dist = np.empty(n)
    closest = np.empty((n, 3))
    face = np.empty(n, dtype=np.int64)
    for i in range(n):
        sub = cand[offsets[i] : offsets[i + 1]]
        d, q, f = _closest_np(points[i : i + 1], tri[sub])
        dist[i], closest[i], face[i] = d[0], q[0], sub[f[0]]
    return dist, closest, face


def closest_points_subset(points, tri, offsets, cand):
    """Exact closest point restricted to per-point candidate faces (CSR lists)."""
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    cand = np.ascontiguousarray(cand, dtype=np.int64)
    if len(points) == 0:
        return np.zeros(0), np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    if USE_NUMBA:
        return _closest_subset_nb(points, tri, offsets, cand)
    return _closest_subset_np(points, tri, offsets, cand)


# --------------------------------------------------------------------------
# ray casting


@njit
def _rays_nb(origins, dirs, tri, t_min):
    n = origins.shape[0]
    m = tri.shape[0]
    best_t = np.full(n, np.inf)
    best_f = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        o = origins[i]
        d = dirs[i]
        for f in range(m):
            v0 = tri[f, 0]
            e1 = tri[f, 1] - v0
            e2 = tri[f, 2] - v0
            px = d[1] * e2[2] - d[2] * e2[1]
            py = d[2] * e2[0] - d[0] * e2[2]
            pz = d[0] * e2[1] - d[1] * e2[0]
            det = e1[0] * px + e1[1] * py + e1[2] * pz
            if abs(det) < 1e-15:
                continue
            inv = 1.0 / det
            s = o - v0
            u = (s[0] * px + s[1] * py + s[2] * pz) * inv
            if u < 0.0 or u > 1.0:
                continue
            qx = s[1] * e1[2] - s[2] * e1[1]
            qy = s[2] * e1[0] - s[0] * e1[2]
            qz = s[0] * e1[1] - s[1] * e1[0]
            v = (d[0] * qx + d[1] * qy + d[2] * qz) * inv
            if v < 0.0 or u + v > 1.0:
                continue
            t = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv
            if t > t_min and t < best_t[i]:
                best_t[i] = t
                best_f[i] = f
    return best_t, best_f


def _rays_np(origins, dirs, tri, t_min):
    v0 = tri[:, 0]
    e1 = tri[:, 1] - v0
    e2 = tri[:, 2] - v0
    best_t = np.full(len(origins), np.inf)
    best_f = np.full(len(origins), -1, dtype=np.int64)
    for s in range(0, len(origins), _CHUNK):
        o = origins[s : s + _CHUNK, None, :]
        d = dirs[s : s + _CHUNK, None, :]
        pv = np.cross(d, e2[None])
        det = np.einsum("fi,rfi->rf", e1, pv)
        ok = np.abs(det) >= 1e-15
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        sv = o - v0[None]
        u = np.einsum("rfi,rfi->rf", sv, pv) * inv
        qv = np.cross(sv, e1[None])
        v = np.einsum("rfi,rfi->rf", d, qv) * inv
        t = np.einsum("fi,rfi->rf", e2, qv) * inv
        hit = ok & (u >= 0) & (u <= 1) & (v >= 0) & (u + v <= 1) & (t > t_min)
        t = np.where(hit, t, np.inf)
        f = np.argmin(t, axis=1)
        rows = np.arange(len(f))
        tt = t[rows, f]
        best_t[s : s + _CHUNK] = tt
        best_f[s : s + _CHUNK] = np.where(np.isfinite(tt), f, -1)
    return best_t, best_f


def cast_rays(origins, dirs, vertices, faces, t_min=1e-9):
    """Nearest hit of each ray. Returns (t, face); misses have t=inf, face=-1."""
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, 3)
    tri = _as_tri(vertices, faces)
    if USE_NUMBA:
        return _rays_nb(origins, dirs, tri, t_min)
    return _rays_np(origins, dirs, tri, t_min)


# --------------------------------------------------------------------------
# capsule-union + ellipsoid solids (hand volumes)


@njit
def _solid_nb(points, seg_a, seg_b, radii, ell_center, ell_inv):
    n = points.shape[0]
    k = seg_a.shape[0]
    inside = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        p = points[i]
        dx = p[0] - ell_center[0]
        dy = p[1] - ell_center[1]
        dz = p[2] - ell_center[2]
        ex = ell_inv[0, 0] * dx + ell_inv[0, 1] * dy + ell_inv[0, 2] * dz
        ey = ell_inv[1, 0] * dx + ell_inv[1, 1] * dy + ell_inv[1, 2] * dz
        ez = ell_inv[2, 0] * dx + ell_inv[2, 1] * dy + ell_inv[2, 2] * dz
        if ex * ex + ey * ey + ez * ez < 1.0:
            inside[i] = True
            continue
        for j in range(k):
            e = seg_b[j] - seg_a[j]
            ee = e[0] * e[0] + e[1] * e[1] + e[2] * e[2]
            w = p - seg_a[j]
            t = 0.0
            if ee > 0.0:
                t = (w[0] * e[0] + w[1] * e[1] + w[2] * e[2]) / ee
                t = min(max(t, 0.0), 1.0)
            qx = w[0] - t * e[0]
            qy = w[1] - t * e[1]
            qz = w[2] - t * e[2]
            if qx * qx + qy * qy + qz * qz < radii[j] * radii[j]:
                inside[i] = True
                break
    return inside


def _solid_np(points, seg_a, seg_b, radii, ell_center, ell_inv):
    e = (points - ell_center) @ ell_inv.T
    inside = np.einsum("ij,ij->i", e, e) < 1.0
    for s in range(0, len(points), 4 * _CHUNK):
        p = points[s : s + 4 * _CHUNK, None, :]
        q = _seg_closest_np(p, seg_a[None], seg_b[None])
        d2 = np.einsum("pki,pki->pk", p - q, p - q)
        inside[s : s + 4 * _CHUNK] |= (d2 < radii[None] ** 2).any(axis=1)
    return inside


def inside_solid(points, seg_a, seg_b, radii, ell_center, ell_inv):
    """Membership in a union of capsules plus one ellipsoid.

    ``ell_inv`` maps ``p - ell_center`` to the unit-sphere frame of the ellipsoid.
    """
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    args = (
        points,
        np.ascontiguousarray(seg_a, dtype=np.float64),
        np.ascontiguousarray(seg_b, dtype=np.float64),
        np.ascontiguousarray(radii, dtype=np.float64),
        np.ascontiguousarray(ell_center, dtype=np.float64),
        np.ascontiguousarray(ell_inv, dtype=np.float64),
    )
    if USE_NUMBA:
        return _solid_nb(*args)
    return _solid_np(*args)


NUMBA_KERNELS = {
    "winding": _winding_nb,
    "closest": _closest_nb,
    "closest_subset": _closest_subset_nb,
    "rays": _rays_nb,
    "solid": _solid_nb,
}
NUMPY_KERNELS = {
    "winding": _winding_np,
    "closest": _closest_np,
    "closest_subset": _closest_subset_np,
    "rays": _rays_np,
    "solid": _solid_np,
}
