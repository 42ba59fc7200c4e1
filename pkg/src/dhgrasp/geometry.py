"""Point clouds, triangle meshes and the queries the energies are built on."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull, cKDTree

from . import kernels

AXES = ("x", "y", "z")
MERGE_TOL = 1e-7
DEFAULT_CLOUD_SIZE = 2048


class GeometryError(ValueError):
    """Invalid geometric input."""


def axis_index(axis) -> int:
    if isinstance(axis, str):
        try:
            return AXES.index(axis.lower())
        except ValueError:
            raise GeometryError(f"unknown axis {axis!r}") from None
    axis = int(axis)
    if axis not in (0, 1, 2):
        raise GeometryError(f"axis index must be 0, 1 or 2, got {axis}")
    return axis


def reflection_matrix(axis) -> np.ndarray:
    s = np.eye(3)
    s[axis_index(axis), axis_index(axis)] = -1.0
    return s


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise GeometryError("point cloud has non-finite coordinates")
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(nrm) != len(pts):
                raise GeometryError("normals and points differ in length")
            if len(nrm) and np.max(np.abs(np.linalg.norm(nrm, axis=1) - 1.0)) > 1e-6:
                raise GeometryError("normals must be unit length")
            object.__setattr__(self, "normals", nrm)

    def __len__(self):
        return len(self.points)

    @cached_property
    def index(self) -> SpatialIndex:
        return SpatialIndex(self.points)

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def translated(self, offset) -> PointCloud:
        return PointCloud(self.points + np.asarray(offset, dtype=np.float64), self.normals)


class SpatialIndex:
    """Exact nearest-neighbour index (k-d tree)."""

    def __init__(self, points):
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(self.points) == 0:
            raise GeometryError("cannot index an empty point set")
        self._tree = cKDTree(self.points)

    def query(self, queries):
        """Distance to and index of the nearest indexed point for each query."""
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        dist, idx = self._tree.query(q, k=1)
        return np.asarray(dist, dtype=np.float64), np.asarray(idx, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangle mesh, cleaned on construction.

    Duplicate vertices closer than ``MERGE_TOL`` are merged and zero-area faces
    dropped. Non-watertight meshes are accepted; ``watertight`` records it.
    """

    vertices: np.ndarray
    faces: np.ndarray
    clean: bool = True
    watertight: bool = field(init=False, default=False)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise GeometryError("face index out of range")
        if not np.all(np.isfinite(v)):
            raise GeometryError("mesh has non-finite vertices")
        if self.clean:
            v, f = _clean(v, f)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "watertight", _edge_manifold(f))

    @cached_property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    @cached_property
    def face_normals(self) -> np.ndarray:
        t = self.triangles
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @cached_property
    def face_areas(self) -> np.ndarray:
        t = self.triangles
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    @cached_property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @cached_property
    def face_index(self):
        """(cKDTree over face centroids, max centroid-to-vertex distance)."""
        t = self.triangles
        c = t.mean(axis=1)
        r = float(np.linalg.norm(t - c[:, None], axis=2).max()) if len(t) else 0.0
        return cKDTree(c), r

    @cached_property
    def max_edge(self) -> float:
        t = self.triangles
        e = np.concatenate([t[:, 1] - t[:, 0], t[:, 2] - t[:, 1], t[:, 0] - t[:, 2]])
        return float(np.linalg.norm(e, axis=1).max())

    def translated(self, offset) -> TriMesh:
        return TriMesh(self.vertices + np.asarray(offset, dtype=np.float64), self.faces, clean=False)

    def transformed(self, rot) -> TriMesh:
        v = self.vertices @ np.asarray(rot, dtype=np.float64).T
        f = self.faces if np.linalg.det(rot) > 0 else self.faces[:, ::-1]
        return TriMesh(v, f, clean=False)


def _clean(v, f):
    if len(v) == 0:
        return v, f
    key = np.round(v / MERGE_TOL).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    v = v[first[order]]
    f = rank[inverse[f]]
    t = v[f]
    area = 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)
    keep = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2]) & (area > 1e-16)
    return v, f[keep]


def _edge_manifold(f) -> bool:
    if len(f) == 0:
        return False
    e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return bool(np.all(counts == 2))


# --------------------------------------------------------------------------
# queries


def _pts(x) -> np.ndarray:
    if isinstance(x, PointCloud):
        return x.points
    return np.asarray(x, dtype=np.float64).reshape(-1, 3)


def chamfer_distance(a, b) -> float:
    """Mean squared nearest distance a->b plus b->a."""
    pa, pb = _pts(a), _pts(b)
    if len(pa) == 0 or len(pb) == 0:
        raise GeometryError("chamfer distance of an empty cloud")
    ia = a.index if isinstance(a, PointCloud) else SpatialIndex(pa)
    ib = b.index if isinstance(b, PointCloud) else SpatialIndex(pb)
    dab, _ = ib.query(pa)
    dba, _ = ia.query(pb)
    return float(np.mean(dab**2) + np.mean(dba**2))


@dataclass
class InsideResult:
    inside: np.ndarray
    winding: np.ndarray
    ambiguous: int


def winding_number(points, mesh: TriMesh) -> np.ndarray:
    return kernels.winding_numbers(_pts(points), mesh.vertices, mesh.faces)


def points_in_mesh(points, mesh: TriMesh, diagnostics: bool = False):
    """Inside test by generalized winding number > 0.5.

    Points outside the mesh bounding box skip the winding evaluation. With
    ``diagnostics`` an :class:`InsideResult` is returned whose ``ambiguous``
    counts queries with winding in [0.4, 0.6] on a non-watertight mesh (these
    are reported as outside).
    """
    p = _pts(points)
    lo, hi = mesh.bounds
    box = np.all((p >= lo) & (p <= hi), axis=1)
    w = np.zeros(len(p))
    if box.any():
        w[box] = winding_number(p[box], mesh)
    inside = w > 0.5
    amb = 0
    if not mesh.watertight:
        band = (w >= 0.4) & (w <= 0.6)
        amb = int(band.sum())
        inside &= ~band
    if diagnostics:
        return InsideResult(inside, w, amb)
    return inside


def point_in_mesh(p, mesh: TriMesh) -> bool:
    return bool(points_in_mesh(np.asarray(p, dtype=np.float64)[None], mesh)[0])


_BRUTE_FACES = 64


def closest_on_mesh(points, mesh: TriMesh):
    """(distance, closest point, face index) for every query point.

    Large meshes are pruned with a KD-tree over face centroids: a face can only
    hold the closest point if its centroid lies within (distance to the nearest
    centroid + largest centroid-to-vertex radius) of the query.
    """
    q = _pts(points)
    if len(mesh.faces) <= _BRUTE_FACES or len(q) == 0:
        return kernels.closest_points(q, mesh.vertices, mesh.faces)
    tree, radius = mesh.face_index
    upper, _ = tree.query(q)
    lists = tree.query_ball_point(q, upper + radius * (1 + 1e-9) + 1e-12)
    sizes = np.fromiter((len(x) for x in lists), dtype=np.int64, count=len(lists))
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    cand = np.fromiter((f for x in lists for f in x), dtype=np.int64, count=int(offsets[-1]))
    return kernels.closest_points_subset(q, np.ascontiguousarray(mesh.triangles), offsets, cand)


def distance_to_surface(p, target) -> float | np.ndarray:
    """Unsigned distance to a mesh surface (exact) or to a cloud's nearest vertex.

    Accepts a single 3-vector (returns a float) or an (n, 3) array.
    """
    arr = np.asarray(p, dtype=np.float64)
    single = arr.ndim == 1
    q = arr.reshape(-1, 3)
    if isinstance(target, TriMesh):
        if len(target.faces) == 0:
            raise GeometryError("empty mesh")
        d = closest_on_mesh(q, target)[0]
    elif isinstance(target, SpatialIndex):
        d = target.query(q)[0]
    else:
        pts = _pts(target)
        if len(pts) == 0:
            raise GeometryError("empty target cloud")
        idx = target.index if isinstance(target, PointCloud) else SpatialIndex(pts)
        d = idx.query(q)[0]
    return float(d[0]) if single else d


@dataclass(frozen=True)
class RayHit:
    point: np.ndarray
    face: int
    t: float


def _check_dirs(dirs):
    n = np.linalg.norm(dirs, axis=-1)
    if np.any(np.abs(n - 1.0) > 1e-6):
        raise GeometryError("ray direction must be normalized")


def ray_mesh_intersect(origin, direction, mesh: TriMesh) -> RayHit | None:
    o = np.asarray(origin, dtype=np.float64).reshape(3)
    d = np.asarray(direction, dtype=np.float64).reshape(3)
    _check_dirs(d)
    t, f = kernels.cast_rays(o[None], d[None], mesh.vertices, mesh.faces)
    if f[0] < 0:
        return None
    return RayHit(o + t[0] * d, int(f[0]), float(t[0]))


def cast_rays(origins, directions, mesh: TriMesh):
    """Vectorised ray casting. Returns (hit points, face ids, t); misses are nan / -1 / inf."""
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    if len(o) == 1 and len(d) > 1:
        o = np.repeat(o, len(d), axis=0)
    _check_dirs(d)
    t, f = kernels.cast_rays(o, d, mesh.vertices, mesh.faces)
    pts = np.where((f >= 0)[:, None], o + np.where(np.isfinite(t), t, 0.0)[:, None] * d, np.nan)
    return pts, f, t


def reflect_points(cloud, axis):
    """Negate one coordinate (and the same normal component)."""
    k = axis_index(axis)
    if isinstance(cloud, PointCloud):
        p = cloud.points.copy()
        p[:, k] *= -1.0
        n = None
        if cloud.normals is not None:
            n = cloud.normals.copy()
            n[:, k] *= -1.0
        return PointCloud(p, n)
    p = np.array(cloud, dtype=np.float64)
    p[..., k] *= -1.0
    return p


def sample_surface(mesh: TriMesh, n: int = DEFAULT_CLOUD_SIZE, rng=None) -> PointCloud:
    """Area-weighted uniform surface samples with face normals."""
    rng = np.random.default_rng(rng)
    areas = mesh.face_areas
    face = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    t = mesh.triangles[face]
    pts = (1 - r1)[:, None] * t[:, 0] + (r1 * (1 - r2))[:, None] * t[:, 1] + (r1 * r2)[:, None] * t[:, 2]
    return PointCloud(pts, mesh.face_normals[face])


def max_pairwise_distance(points) -> float:
    p = _pts(points)
    if len(p) < 2:
        return 0.0
    try:
        hull = p[ConvexHull(p).vertices]
    except Exception:
        hull = p
    d = np.linalg.norm(hull[:, None] - hull[None], axis=-1)
    return float(d.max())


# --------------------------------------------------------------------------
# objects


@dataclass(eq=False)
class ObjectModel:
    """A grasped object: mesh, sampled cloud, optional per-point part labels."""

    object_id: str
    mesh: TriMesh
    cloud: PointCloud
    scale: float = 1.0
    parts: np.ndarray | None = None

    @classmethod
    def from_mesh(cls, object_id, mesh: TriMesh, n_points=DEFAULT_CLOUD_SIZE, seed=0, scale=None):
        cloud = sample_surface(mesh, n_points, rng=seed)
        obj = cls(object_id, mesh, cloud, 1.0)
        obj.scale = float(scale) if scale is not None else obj.diameter
        return obj

    @cached_property
    def center(self) -> np.ndarray:
        return self.cloud.centroid()

    @cached_property
    def max_radius(self) -> float:
        return float(np.linalg.norm(self.cloud.points - self.center, axis=1).max())

    @cached_property
    def diameter(self) -> float:
        return max_pairwise_distance(self.cloud.points)

    def translated(self, offset) -> ObjectModel:
        off = np.asarray(offset, dtype=np.float64)
        return ObjectModel(
            self.object_id, self.mesh.translated(off), self.cloud.translated(off), self.scale, self.parts
        )

    def centered(self) -> tuple[ObjectModel, np.ndarray]:
        c = self.center.copy()
        return self.translated(-c), c

    def contains(self, points, diagnostics=False):
        return points_in_mesh(points, self.mesh, diagnostics=diagnostics)

    def surface_distance(self, points):
        return closest_on_mesh(points, self.mesh)

    def part_names(self) -> list[str]:
        if self.parts is None:
            return []
        return sorted(set(self.parts.tolist()))


# --------------------------------------------------------------------------
# file formats


def load_mesh(path) -> TriMesh:
    path = Path(path)
    text = path.read_text()
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return _parse_obj(text)
    if suffix == ".off":
        return _parse_off(text)
    raise GeometryError(f"unsupported mesh format: {path.suffix}")


def _parse_obj(text):
    verts, faces = [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(tok.split("/")[0]) for tok in parts[1:]]
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts or not faces:
        raise GeometryError("OBJ file has no vertices or faces")
    return TriMesh(np.array(verts), np.array(faces))


def _parse_off(text):
    tokens = []
    for line in text.splitlines():
        line = line.split("#")[0].strip()
        if line:
            tokens.append(line)
    if not tokens:
        raise GeometryError("empty OFF file")
    head = tokens[0].split()
    if head[0] != "OFF":
        raise GeometryError("missing OFF header")
    rest = head[1:]
    body = tokens[1:]
    if not rest:
        rest = body[0].split()
        body = body[1:]
    nv, nf = int(rest[0]), int(rest[1])
    verts = np.array([[float(x) for x in body[i].split()[:3]] for i in range(nv)])
    faces = []
    for line in body[nv : nv + nf]:
        vals = [int(x) for x in line.split()]
        idx = vals[1 : 1 + vals[0]]
        for k in range(1, len(idx) - 1):
            faces.append([idx[0], idx[k], idx[k + 1]])
    return TriMesh(verts, np.array(faces))


def save_obj(path, mesh: TriMesh, extra_points=None):
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    for a, b, c in mesh.faces + 1:
        lines.append(f"f {a} {b} {c}")
    if extra_points is not None:
        for group, pts in extra_points.items():
            lines.append(f"o {group}")
            lines.extend(f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in np.asarray(pts))
    Path(path).write_text("\n".join(lines) + "\n")


DHPC_MAGIC = b"DHPC"


def write_dhpc(path, cloud: PointCloud):
    """Little-endian binary cloud: magic, u32 count, u8 has-normals, f32 xyz (then normals)."""
    has_n = cloud.normals is not None
    with open(path, "wb") as fh:
        fh.write(DHPC_MAGIC)
        fh.write(struct.pack("<IB", len(cloud), 1 if has_n else 0))
        fh.write(cloud.points.astype("<f4").tobytes())
        if has_n:
            fh.write(cloud.normals.astype("<f4").tobytes())


def read_dhpc(path) -> PointCloud:
    data = Path(path).read_bytes()
    if data[:4] != DHPC_MAGIC:
        raise GeometryError("not a DHPC file")
    count, flag = struct.unpack("<IB", data[4:9])
    n3 = 3 * count
    pts = np.frombuffer(data, dtype="<f4", count=n3, offset=9).reshape(-1, 3).astype(np.float64)
    normals = None
    if flag:
        normals = np.frombuffer(data, dtype="<f4", count=n3, offset=9 + 4 * n3).reshape(-1, 3)
        normals = normals.astype(np.float64)
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(pts, normals)
