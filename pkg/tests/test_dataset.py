import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_pose
from dhgrasp.contact import contact_representation
from dhgrasp.dataset import (
    AffordanceLabel,
    GraspRecord,
    SchemaError,
    balance_affordances,
    balance_counts,
    diverse_subset,
    ingest_single_hand,
    label_from_fractions,
    label_grasp,
    load_part_mapping,
    part_fractions,
    read_records,
    write_records,
    write_single_hand,
)
from dhgrasp.hand_model import forward_kinematics

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_subnormal=True)


def test_part_fraction_oracle():
    c = np.array([1.0, 0.5, 0.5, 0.1])
    labels = np.array(["a", "a", "b", "b"])
    # the 0.1 point is below the contact threshold
    assert part_fractions(c, labels) == {"a": 0.75, "b": 0.25}
    assert part_fractions(np.zeros(4), labels) == {}
    with pytest.raises(ValueError):
        part_fractions(c, labels[:2])


@pytest.mark.parametrize("frac,labelled", [(0.97, True), (0.951, True), (0.95, False), (0.9, False)])
def test_strict_cutoff(frac, labelled):
    lab = label_from_fractions({"handle": frac, "head": 1 - frac}, {"head": 1.0}, "hammer")
    assert (lab is not None) is labelled
    if labelled:
        assert lab.text == "right hammer handle, left hammer head"


def test_label_needs_both_hands():
    assert label_from_fractions({"a": 1.0}, {}, "mug") is None


def test_label_tokens_validated():
    with pytest.raises(SchemaError):
        AffordanceLabel("two words", "a", "b")
    lab = AffordanceLabel("Bottle", "cap", "body")
    assert lab.category == "bottle"
    assert AffordanceLabel.from_dict(lab.to_dict()) == lab
    with pytest.raises(SchemaError):
        AffordanceLabel.from_dict({"right": "left x y", "left": "left x y"})


def test_label_grasp_on_record(sphere, template):
    rng = np.random.default_rng(0)
    r = random_pose(rng, template=template, trans_scale=0.01)
    l_ = random_pose(rng, "left", template, trans_scale=0.01)
    rep = contact_representation(sphere, forward_kinematics(r, template), forward_kinematics(l_, template))
    rec = GraspRecord("s", 1.0, r, l_, rep)
    one_part = np.array(["body"] * len(sphere.cloud.points))
    assert label_grasp(rec, one_part, "ball").text == "right ball body, left ball body"
    rec.contact = None
    with pytest.raises(ValueError):
        label_grasp(rec, one_part, "ball")


def make_record(rng, with_contact=False, sphere=None):
    r, l_ = random_pose(rng), random_pose(rng, "left")
    rep = None
    if with_contact:
        rep = contact_representation(sphere, forward_kinematics(r), forward_kinematics(l_))
    return GraspRecord("obj", 0.1, r, l_, rep, AffordanceLabel("mug", "handle", "body"), {"seed": 3})


def test_record_round_trip_lossless(tmp_path, sphere):
    rng = np.random.default_rng(1)
    recs = [make_record(rng, True, sphere), make_record(rng)]
    path = tmp_path / "r.jsonl"
    write_records(path, recs)
    back = read_records(path)
    for a, b in zip(recs, back):
        assert a.right.as_vector().tobytes() == b.right.as_vector().tobytes()
        assert a.left.as_vector().tobytes() == b.left.as_vector().tobytes()
        assert a.label == b.label and a.provenance == b.provenance
    np.testing.assert_allclose(back[0].contact.right.C, recs[0].contact.right.C, atol=1e-7)
    np.testing.assert_array_equal(back[0].contact.left.M, recs[0].contact.left.M)
    assert back[1].contact is None


@given(st.lists(finite, min_size=31, max_size=31))
def test_pose_floats_round_trip_exactly(vals):
    v = np.array(vals)
    v[3:9] = [1, 0, 0, 0, 1, 0]
    rec = GraspRecord.from_dict(json.loads(json.dumps({"object": "o", "trans": v[:3].tolist(), "rot6d": v[3:9].tolist(), "theta": v[9:].tolist()})))
    assert rec.right.as_vector().tobytes() == v.tobytes()


def test_read_records_reports_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"object": "o", "trans": [0, 0], "rot6d": [1,0,0,0,1,0], "theta": []}\n')
    with pytest.raises(SchemaError, match="bad.jsonl:1: field 'trans'"):
        read_records(p)


def test_ingest_keeps_good_lines(tmp_path):
    rng = np.random.default_rng(2)
    p = tmp_path / "in.jsonl"
    write_single_hand(p, [("mug", 0.1, random_pose(rng)), ("mug", 0.2, random_pose(rng))])
    with p.open("a") as fh:
        fh.write("{not json\n")
        fh.write('{"object": "mug", "scale": -1, "trans": [0,0,0], "rot6d": [1,0,0,0,1,0], "theta": [0]}\n')
        fh.write('{"object": "mug", "trans": [0,0,0], "rot6d": [1,0,0,2,0,0], "theta": ' + str([0] * 22) + "}\n")
        fh.write('{"object": "mug", "trans": [0,0,"x"], "rot6d": [1,0,0,0,1,0], "theta": ' + str([0] * 22) + "}\n")
    res = ingest_single_hand(p)
    assert len(res) == 2 and [e.line for e in res.errors] == [3, 4, 5, 6]
    assert "invalid JSON" in str(res.errors[0]) and "scale" in str(res.errors[1])
    assert "rot6d" in str(res.errors[2]) and "non-numeric" in str(res.errors[3])


def test_part_mapping_transfer(tmp_path, sphere):
    pts = sphere.cloud.points
    labels = np.where(pts[:, 2] > 0, "top", "bottom")
    p = tmp_path / "parts.json"
    p.write_text(json.dumps({"points": pts.tolist(), "part": labels.tolist()}))
    np.testing.assert_array_equal(load_part_mapping(p, sphere), labels)
    shifted = tmp_path / "coarse.json"
    shifted.write_text(json.dumps({"points": (pts[::4] * 1.001).tolist(), "part": labels[::4].tolist()}))
    moved = load_part_mapping(shifted, sphere)
    assert (moved == labels).mean() > 0.95
    (tmp_path / "broken.json").write_text('{"points": [[0,0,0]], "part": []}')
    with pytest.raises(SchemaError):
        load_part_mapping(tmp_path / "broken.json")


def test_balance_counts_example():
    assert balance_counts({"a": 100, "b": 30, "c": 20}) == {"a": 60, "b": 30, "c": 20}
    assert balance_counts({"a": 50}) == {"a": 50}
    assert balance_counts({"a": 60, "b": 30}) == {"a": 60, "b": 30}


@given(st.dictionaries(st.sampled_from("abcdefg"), st.integers(1, 500), min_size=2))
def test_balance_invariant(counts):
    out = balance_counts(counts)
    top = sorted(out.values(), reverse=True)
    assert top[0] <= 2 * top[1]
    assert all(out[k] <= counts[k] for k in counts)
    # only the dominant type is ever truncated
    assert sum(out[k] != counts[k] for k in counts) <= 1


def test_diverse_subset():
    x = np.array([[0.0], [0.1], [5.0], [10.0], [0.2]])
    # seeded at 5.0 (nearest the mean 3.06), then the farthest points 0.0 and 10.0
    assert diverse_subset(x, 3).tolist() == [0, 2, 3]
    assert len(diverse_subset(x, 10)) == 5


def test_balance_affordances_records():
    rng = np.random.default_rng(4)
    recs = []
    for name, n in (("a", 100), ("b", 30), ("c", 20)):
        for _ in range(n):
            recs.append(GraspRecord("o", 1.0, random_pose(rng), random_pose(rng, "left"), None, AffordanceLabel("mug", name, "body")))
    out = balance_affordances(recs)
    counts = Counter(r.label.right_part for r in out)
    assert counts == {"a": 60, "b": 30, "c": 20}
    assert balance_affordances(recs) == out  # deterministic
    recs[0].label = None
    with pytest.raises(ValueError):
        balance_affordances(recs)
