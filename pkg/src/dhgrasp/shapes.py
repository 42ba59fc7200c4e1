"""Procedural closed meshes used as fixtures and demo objects."""
import numpy as np

from .geometry import ObjectModel, TriMesh


def icosphere(radius=1.0, subdivisions=3, center=(0.0, 0.0, 0.0)) -> TriMesh:
    t = (1.0 + 5**0.5) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    verts = list(v / np.linalg.norm(v, axis=1, keepdims=True))
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        f = np.array(nf)
    return TriMesh(np.array(verts) * radius + np.asarray(center), f)


def box(extents=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Axis-aligned box with full side lengths ``extents``."""
    h = np.asarray(extents, dtype=np.float64) / 2.0
    v = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64)
    f = np.array(
        [
            [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
            [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
            [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
        ]
    )
    return TriMesh(v * h + np.asarray(center), f)


def _revolve(profile, segments):
    """Close a surface of revolution about z from a (r, z) profile whose ends have r=0."""
    profile = np.asarray(profile, dtype=np.float64)
    ang = 2 * np.pi * np.arange(segments) / segments
    verts = [[0.0, 0.0, profile[0, 1]]]
    rings = []
    for r, z in profile[1:-1]:
        rings.append(len(verts))
        verts.extend([[r * np.cos(a), r * np.sin(a), z] for a in ang])
    verts.append([0.0, 0.0, profile[-1, 1]])
    top = len(verts) - 1
    faces = []
    for j in range(segments):
        k = (j + 1) % segments
        faces.append([0, rings[0] + k, rings[0] + j])
        for a, b in zip(rings[:-1], rings[1:]):
            faces.append([a + j, a + k, b + k])
            faces.append([a + j, b + k, b + j])
        faces.append([top, rings[-1] + j, rings[-1] + k])
    return np.array(verts), np.array(faces)


def cylinder(radius=0.5, height=1.0, segments=32, center=(0.0, 0.0, 0.0), rings=4) -> TriMesh:
    """Capped cylinder along z."""
    h = height / 2.0
    prof = [(0.0, -h), (radius * 0.5, -h)]
    prof += [(radius, z) for z in np.linspace(-h, h, rings + 1)]
    prof += [(radius * 0.5, h), (0.0, h)]
    v, f = _revolve(prof, segments)
    return TriMesh(v + np.asarray(center), f)


def capsule(radius=0.5, length=1.0, segments=32, cap_rings=8, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Capsule along z; ``length`` is the distance between the cap centres."""
    h = length / 2.0
    ph = np.linspace(-np.pi / 2, 0, cap_rings + 1)
    prof = [(radius * np.cos(p), -h + radius * np.sin(p)) for p in ph]
    prof += [(radius, z) for z in np.linspace(-h, h, 5)[1:-1]]
    prof += [(radius * np.cos(p), h + radius * np.sin(p)) for p in ph[::-1]]
    v, f = _revolve(prof, segments)
    return TriMesh(v + np.asarray(center), f)


def merge(*meshes) -> TriMesh:
    """Concatenate meshes (overlaps are left in place; winding handles them)."""
    vs, fs, off = [], [], 0
    for m in meshes:
        vs.append(m.vertices)
        fs.append(m.faces + off)
        off += len(m.vertices)
    return TriMesh(np.concatenate(vs), np.concatenate(fs), clean=False)


def rotate(mesh: TriMesh, rot) -> TriMesh:
    return mesh.transformed(np.asarray(rot, dtype=np.float64))


def _triangulate(poly):
    """Ear clipping for a simple counter-clockwise polygon."""
    idx = list(range(len(poly)))
    tris = []

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    while len(idx) > 3:
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = poly[i0], poly[i1], poly[i2]
            if cross(a, b, c) <= 0:
                continue
            others = [poly[j] for j in idx if j not in (i0, i1, i2)]
            if any(cross(a, b, p) >= 0 and cross(b, c, p) >= 0 and cross(c, a, p) >= 0 for p in others):
                continue
            tris.append([i0, i1, i2])
            idx.pop(k)
            break
        else:
            raise ValueError("polygon is not simple")
    tris.append(idx)
    return np.array(tris)


def extrude_xz(polygon, half_width) -> TriMesh:
    """Extrude a CCW polygon in the (x, z) plane along y over [-w, w]."""
    poly = np.asarray(polygon, dtype=np.float64)
    n = len(poly)
    tri = _triangulate(poly)
    lo = np.column_stack([poly[:, 0], np.full(n, -half_width), poly[:, 1]])
    hi = np.column_stack([poly[:, 0], np.full(n, half_width), poly[:, 1]])
    v = np.concatenate([lo, hi])
    # CCW in (x, z) viewed from +y has outward normal -y
    faces = [t for t in tri] + [t[::-1] + n for t in tri]
    for i in range(n):
        j = (i + 1) % n
        faces.append([i, i + n, j + n])
        faces.append([i, j + n, j])
    return TriMesh(v, np.array(faces))


def hammer(head=(0.1, 0.03), handle=(0.025, 0.2), half_width=0.015) -> TriMesh:
    """L-shaped hammer-like prism: symmetric only about the y=0 plane."""
    hw, hh = head
    gw, gh = handle
    poly = [(0.0, 0.0), (gw, 0.0), (gw, gh), (hw, gh), (hw, gh + hh), (0.0, gh + hh)]
    return extrude_xz(poly, half_width)


def object_from_mesh(name, mesh, n_points=2048, seed=0) -> ObjectModel:
    return ObjectModel.from_mesh(name, mesh, n_points=n_points, seed=seed)


def fixture_objects(seed=0):
    """Ten mirror-symmetric objects (spheres, boxes, cylinders, capsule unions), 8-20 cm."""
    rot_x = np.array([[1.0, 0, 0], [0, 0, -1], [0, 1, 0]])
    rot_y = np.array([[0.0, 0, 1], [0, 1, 0], [-1, 0, 0]])
    meshes = {
        "sphere_r40": icosphere(0.04, 3),
        "sphere_r55": icosphere(0.055, 3),
        "box_08x06x05": box((0.08, 0.06, 0.05)),
        "box_06x12x06": box((0.06, 0.12, 0.06)),
        "cylinder_r35_h12": cylinder(0.035, 0.12, 32),
        "cylinder_r30_h16": rotate(cylinder(0.03, 0.16, 32), rot_x),
        "capsule_r30_l10": capsule(0.03, 0.10, 24, 6),
        "capsule_r25_l12": rotate(capsule(0.025, 0.12, 24, 6), rot_y),
        "capsule_cross": merge(capsule(0.022, 0.12, 20, 5), rotate(capsule(0.022, 0.12, 20, 5), rot_y)),
        "dumbbell": merge(
            rotate(capsule(0.015, 0.12, 20, 5), rot_y),
            icosphere(0.03, 2, (0.075, 0, 0)),
            icosphere(0.03, 2, (-0.075, 0, 0)),
        ),
    }
    return [object_from_mesh(k, m, seed=seed + i) for i, (k, m) in enumerate(meshes.items())]
