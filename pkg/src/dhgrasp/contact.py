"""Object-side dual-hand contact representation: contact map, part map, affordance directions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import ObjectModel, SpatialIndex
from .hand_model import N_PARTS, HandSurface

CONTACT_K = 150.0  # 1/m
PART_THRESHOLD = 0.4
NO_CONTACT = N_PARTS


def _points(obj):
    return obj.cloud.points if isinstance(obj, ObjectModel) else np.asarray(obj, dtype=np.float64).reshape(-1, 3)


def contact_values(dist, k=CONTACT_K):
    """c = 1 - 2 (sigmoid(k d) - 0.5), written in an overflow-safe form."""
    d = np.asarray(dist, dtype=np.float64)
    return 2.0 / (1.0 + np.exp(np.minimum(k * d, 700.0)))


def contact_map(obj, hand: HandSurface, k=CONTACT_K) -> np.ndarray:
    """Per object point contact value in [0, 1] from its distance to the nearest hand vertex."""
    d, _ = SpatialIndex(hand.vertices).query(_points(obj))
    return contact_values(d, k)


def part_map(obj, hand: HandSurface, contact, threshold=PART_THRESHOLD) -> np.ndarray:
    """One-hot (N, B+1): nearest hand part for contacted points, last column = no contact."""
    pts = _points(obj)
    contact = np.asarray(contact, dtype=np.float64)
    _, j = SpatialIndex(hand.vertices).query(pts)
    cls = np.where(contact >= threshold, hand.parts[j], NO_CONTACT)
    out = np.zeros((len(pts), N_PARTS + 1))
    out[np.arange(len(pts)), cls] = 1.0
    return out


@dataclass
class Directions:
    D: np.ndarray
    M: np.ndarray
    degenerate: list = field(default_factory=list)


def affordance_directions(obj, parts, center=None) -> Directions:
    """Unit vectors from the object centre to each hand part's contact centroid.

    ``parts`` is the one-hot part map. A part with no contacted point gets a zero
    row and mask 0. A centroid on the centre gives a zero row with mask 1 and is
    listed in ``degenerate``.
    """
    pts = _points(obj)
    if center is None:
        center = obj.center if isinstance(obj, ObjectModel) else pts.mean(axis=0)
    center = np.asarray(center, dtype=np.float64)
    cls = np.argmax(np.asarray(parts), axis=1)
    D = np.zeros((N_PARTS, 3))
    M = np.zeros(N_PARTS)
    degenerate = []
    for b in range(N_PARTS):
        sel = cls == b
        if not sel.any():
            continue
        M[b] = 1.0
        v = pts[sel].mean(axis=0) - center
        n = np.linalg.norm(v)
        if n < 1e-9:
            degenerate.append(b)
            continue
        D[b] = v / n
    return Directions(D, M, degenerate)


@dataclass
class HandContact:
    C: np.ndarray
    P: np.ndarray
    D: np.ndarray
    M: np.ndarray


@dataclass
class ContactRepresentation:
    right: HandContact
    left: HandContact

    def hands(self):
        return {"r": self.right, "l": self.left}


def hand_contact(obj: ObjectModel, hand: HandSurface, k=CONTACT_K, threshold=PART_THRESHOLD, center=None):
    c = contact_map(obj, hand, k)
    p = part_map(obj, hand, c, threshold)
    dirs = affordance_directions(obj, p, center)
    return HandContact(c, p, dirs.D, dirs.M)


def contact_representation(obj: ObjectModel, right: HandSurface, left: HandSurface, **kw) -> ContactRepresentation:
    return ContactRepresentation(hand_contact(obj, right, **kw), hand_contact(obj, left, **kw))
