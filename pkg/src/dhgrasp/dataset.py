"""Dataset plumbing: single-hand ingestion, dual-hand records, affordance labels, balancing.

Records are stored as JSON Lines. Pose floats go through ``repr`` so they
round-trip bit-exactly; contact blocks are little-endian f32, base64 encoded.
"""
from __future__ import annotations

import base64
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .contact import PART_THRESHOLD, ContactRepresentation, HandContact
from .geometry import GeometryError, ObjectModel, SpatialIndex
from .hand_model import N_DOF, HandPose, rot6d_to_matrix

log = logging.getLogger(__name__)

DEFAULT_CATEGORIES = (
    "bottle",
    "pistol",
    "flashlight",
    "hammer",
    "headphones",
    "lightbulb",
    "lock",
    "knife",
    "usbstick",
)
LABEL_CUTOFF = 0.95
_TOKEN = re.compile(r"^[a-z0-9_\-]+$")


class SchemaError(ValueError):
    """Input that does not follow the documented record schema."""


# --------------------------------------------------------------------------
# labels


def _token(s, what):
    t = str(s).strip().lower()
    if not _TOKEN.match(t):
        raise SchemaError(f"{what} must be a single lowercase token, got {s!r}")
    return t


@dataclass(frozen=True)
class AffordanceLabel:
    category: str
    right_part: str
    left_part: str

    def __post_init__(self):
        object.__setattr__(self, "category", _token(self.category, "category"))
        object.__setattr__(self, "right_part", _token(self.right_part, "part"))
        object.__setattr__(self, "left_part", _token(self.left_part, "part"))

    def render(self, chirality) -> str:
        part = {"right": self.right_part, "left": self.left_part}[chirality]
        return f"{chirality} {self.category} {part}"

    @property
    def text(self) -> str:
        return f"{self.render('right')}, {self.render('left')}"

    @property
    def key(self) -> str:
        """Affordance type used for balancing."""
        return self.text

    def to_dict(self):
        return {"category": self.category, "right": self.render("right"), "left": self.render("left")}

    @classmethod
    def from_dict(cls, d) -> AffordanceLabel:
        r = d["right"].split()
        l_ = d["left"].split()
        if len(r) != 3 or len(l_) != 3 or r[0] != "right" or l_[0] != "left":
            raise SchemaError(f"malformed label {d!r}")
        return cls(d.get("category", r[1]), r[2], l_[2])


def part_fractions(contact, labels, threshold=PART_THRESHOLD) -> dict:
    """Share of contact mass (sum of c over contacted points) per object part."""
    c = np.asarray(contact, dtype=np.float64)
    labels = np.asarray(labels)
    if len(c) != len(labels):
        raise ValueError(f"{len(c)} contact values vs {len(labels)} part labels")
    sel = c >= threshold
    total = c[sel].sum()
    if total <= 0:
        return {}
    return {str(p): float(c[sel & (labels == p)].sum() / total) for p in np.unique(labels[sel])}


def _dominant(fr):
    if not fr:
        return None
    part = max(sorted(fr), key=lambda k: fr[k])
    return part if fr[part] > LABEL_CUTOFF else None


def label_from_fractions(right_fr: dict, left_fr: dict, category) -> AffordanceLabel | None:
    r, l_ = _dominant(right_fr), _dominant(left_fr)
    if r is None or l_ is None:
        return None
    return AffordanceLabel(category, r, l_)


# --------------------------------------------------------------------------
# records


@dataclass
class GraspRecord:
    object_id: str
    scale: float
    right: HandPose
    left: HandPose | None = None
    contact: ContactRepresentation | None = None
    label: AffordanceLabel | None = None
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {"object": self.object_id, "scale": float(self.scale)}
        d.update(_pose_fields(self.right, ""))
        if self.left is not None:
            d.update(_pose_fields(self.left, "left_"))
        if self.contact is not None:
            d["contact"] = _encode_contact(self.contact)
        if self.label is not None:
            d["label"] = self.label.to_dict()
        if self.provenance:
            d["provenance"] = self.provenance
        return d

    @classmethod
    def from_dict(cls, d) -> GraspRecord:
        right = _pose_from(d, "", "right")
        left = _pose_from(d, "left_", "left") if "left_trans" in d else None
        contact = _decode_contact(d["contact"]) if "contact" in d else None
        label = AffordanceLabel.from_dict(d["label"]) if d.get("label") else None
        return cls(str(d["object"]), float(d.get("scale", 1.0)), right, left, contact, label, d.get("provenance", {}))


def _floats(a):
    return [float(x) for x in np.asarray(a).ravel()]


def _pose_fields(p: HandPose, prefix):
    return {f"{prefix}trans": _floats(p.trans), f"{prefix}rot6d": _floats(p.rot6d), f"{prefix}theta": _floats(p.theta)}


def _vec(d, key, n):
    v = d.get(key)
    if not isinstance(v, list) or len(v) != n:
        got = "missing" if v is None else f"length {len(v)}" if isinstance(v, list) else type(v).__name__
        raise SchemaError(f"field {key!r}: expected {n} numbers, {got}")
    if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise SchemaError(f"field {key!r}: non-numeric entry")
    if not all(math.isfinite(x) for x in v):
        raise SchemaError(f"field {key!r}: non-finite entry")
    return np.array(v, dtype=np.float64)


def _pose_from(d, prefix, chirality) -> HandPose:
    trans = _vec(d, f"{prefix}trans", 3)
    r6 = _vec(d, f"{prefix}rot6d", 6)
    theta = _vec(d, f"{prefix}theta", N_DOF)
    try:
        rot6d_to_matrix(r6)
    except GeometryError as exc:
        raise SchemaError(f"field {prefix}rot6d: {exc}") from None
    return HandPose(chirality, trans, r6, theta)


def _b64(a):
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f4").tobytes()).decode("ascii")


def _unb64(s, shape):
    return np.frombuffer(base64.b64decode(s), dtype="<f4").reshape(shape).astype(np.float64)


def _encode_contact(rep: ContactRepresentation):
    n = len(rep.right.C)
    out = {"dtype": "f32", "n": n, "parts": rep.right.P.shape[1], "b": rep.right.D.shape[0]}
    for name, h in (("right", rep.right), ("left", rep.left)):
        out[name] = {k: _b64(getattr(h, k)) for k in ("C", "P", "D", "M")}
    return out


def _decode_contact(d) -> ContactRepresentation:
    if d.get("dtype") != "f32":
        raise SchemaError(f"unsupported contact dtype {d.get('dtype')!r}")
    n, k, b = int(d["n"]), int(d["parts"]), int(d["b"])
    shapes = {"C": (n,), "P": (n, k), "D": (b, 3), "M": (b,)}
    hands = [HandContact(**{key: _unb64(d[h][key], shapes[key]) for key in shapes}) for h in ("right", "left")]
    return ContactRepresentation(*hands)


def write_records(path, records):
    path = Path(path)
    with path.open("w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), separators=(",", ":")) + "\n")


def read_records(path) -> list[GraspRecord]:
    out = []
    for no, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(GraspRecord.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, SchemaError, GeometryError) as exc:
            raise SchemaError(f"{path}:{no}: {exc}") from None
    return out


# --------------------------------------------------------------------------
# ingestion


@dataclass
class IngestError:
    line: int
    message: str

    def __str__(self):
        return f"line {self.line}: {self.message}"


@dataclass
class IngestResult:
    records: list
    errors: list

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


def parse_single_hand(obj) -> tuple[str, float, HandPose]:
    if not isinstance(obj, dict):
        raise SchemaError("line is not a JSON object")
    oid = obj.get("object")
    if not isinstance(oid, str) or not oid:
        raise SchemaError("field 'object': expected a non-empty string")
    scale = obj.get("scale", 1.0)
    if not isinstance(scale, (int, float)) or isinstance(scale, bool) or not scale > 0 or not math.isfinite(scale):
        raise SchemaError("field 'scale': expected a positive number")
    return oid, float(scale), _pose_from(obj, "", "right")


def ingest_single_hand(path) -> IngestResult:
    """Read single right-hand grasps; bad lines are reported, good ones kept."""
    records, errors = [], []
    for no, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(parse_single_hand(json.loads(line)))
        except json.JSONDecodeError as exc:
            errors.append(IngestError(no, f"invalid JSON: {exc.msg} at column {exc.colno}"))
        except SchemaError as exc:
            errors.append(IngestError(no, str(exc)))
    for e in errors:
        log.warning("%s: %s", path, e)
    return IngestResult(records, errors)


def write_single_hand(path, items):
    """Write ``(object_id, scale, HandPose)`` triples in the ingestion schema."""
    with Path(path).open("w") as fh:
        for oid, scale, pose in items:
            d = {"object": oid, "scale": float(scale)}
            d.update(_pose_fields(pose, ""))
            fh.write(json.dumps(d, separators=(",", ":")) + "\n")


# --------------------------------------------------------------------------
# part mappings and labelling


def load_part_mapping(path, obj: ObjectModel | None = None) -> np.ndarray:
    """Per-point part labels; transferred by nearest neighbour if not aligned to ``obj``'s cloud."""
    d = json.loads(Path(path).read_text())
    try:
        pts = np.asarray(d["points"], dtype=np.float64).reshape(-1, 3)
        labels = np.array([str(p) for p in d["part"]])
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaError(f"{path}: part mapping needs 'points' and 'part': {exc}") from None
    if len(pts) != len(labels):
        raise SchemaError(f"{path}: {len(pts)} points but {len(labels)} part labels")
    if obj is None:
        return labels
    cloud = obj.cloud.points
    if len(cloud) == len(pts) and np.allclose(cloud, pts, atol=1e-6):
        return labels
    _, j = SpatialIndex(pts).query(cloud)
    return labels[j]


def label_grasp(record: GraspRecord, labels, category, threshold=PART_THRESHOLD) -> AffordanceLabel | None:
    """Label a dual grasp when each hand puts more than 95% of its contact mass on one part."""
    if record.contact is None:
        raise ValueError("record has no contact representation")
    fr = {}
    for h in ("right", "left"):
        fr[h] = part_fractions(getattr(record.contact, h).C, labels, threshold)
        if not fr[h]:
            log.info("label: %s hand of %s has no contact", h, record.object_id)
    return label_from_fractions(fr["right"], fr["left"], category)


# --------------------------------------------------------------------------
# balancing


def _pose_key(r: GraspRecord):
    v = r.right.as_vector()
    return np.concatenate([v, r.left.as_vector()]) if r.left is not None else v


def diverse_subset(vectors, k) -> np.ndarray:
    """Farthest-point selection seeded at the vector nearest the mean; sorted indices."""
    x = np.asarray(vectors, dtype=np.float64)
    if k >= len(x):
        return np.arange(len(x))
    first = int(np.argmin(np.linalg.norm(x - x.mean(axis=0), axis=1)))
    chosen = [first]
    d = np.linalg.norm(x - x[first], axis=1)
    for _ in range(k - 1):
        i = int(np.argmax(d))
        chosen.append(i)
        d = np.minimum(d, np.linalg.norm(x - x[i], axis=1))
    return np.sort(np.array(chosen))


def balance_counts(counts: dict) -> dict:
    """Target count per affordance type under the 2x rule."""
    if len(counts) < 2:
        return dict(counts)
    order = sorted(counts, key=lambda k: (-counts[k], k))
    n1, n2 = counts[order[0]], counts[order[1]]
    out = dict(counts)
    if n1 > 2 * n2:
        out[order[0]] = 2 * n2
    return out


def balance_affordances(records, key=None):
    """Truncate the dominant affordance type to twice the runner-up, keeping a diverse subset."""
    records = list(records)
    if key is None:
        if any(r.label is None for r in records):
            raise ValueError("balancing needs labelled records")
        key = lambda r: r.label.key  # noqa: E731
    keys = [key(r) for r in records]
    counts = Counter(keys)
    target = balance_counts(counts)
    drop = set()
    for k, n in target.items():
        if n < counts[k]:
            idx = [i for i, kk in enumerate(keys) if kk == k]
            keep = diverse_subset([_pose_key(records[i]) for i in idx], n)
            drop |= set(idx) - {idx[j] for j in keep}
            log.info("balance: %r truncated %d -> %d", k, counts[k], n)
    return [r for i, r in enumerate(records) if i not in drop]
