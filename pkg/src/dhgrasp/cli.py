"""``dhgrasp`` command line.

Data goes to files only and logs go to stderr. Every command writes
``<out>.manifest.json`` next to its output. Exit codes: 0 ok, 1 internal
error, 2 bad input.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .contact import contact_representation
from .dataset import (
    DEFAULT_CATEGORIES,
    GraspRecord,
    SchemaError,
    balance_affordances,
    ingest_single_hand,
    label_grasp,
    load_part_mapping,
    read_records,
    write_records,
)
from .ddpm import AffordanceState, ToyDenoiser, finalize_state, reverse_sample
from .geometry import GeometryError, ObjectModel, load_mesh, save_obj
from .hand_model import forward_kinematics
from .metrics import grasp_metrics, render_table, summarize
from .symmetry import detect_symmetry_plane
from .symopt import OPTIMIZED, DualGrasp, run_symopt
from .tta import refine

log = logging.getLogger("dhgrasp")


class InputError(Exception):
    """Bad user input: exit code 2."""


@dataclass
class RunManifest:
    command: str
    config_digest: str
    seed: int
    inputs: dict
    outputs: dict
    version: str = __version__
    seconds: float = 0.0
    counts: dict = field(default_factory=dict)

    def write(self, out):
        path = Path(str(out) + ".manifest.json")
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


# --------------------------------------------------------------------------
# helpers


def _existing(path, what):
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} not found: {p}")
    return p


def _load_object(args) -> ObjectModel:
    p = _existing(args.object, "object mesh")
    obj = ObjectModel.from_mesh(p.stem, load_mesh(p), n_points=args.points, seed=args.seed)
    if getattr(args, "parts", None):
        obj.parts = load_part_mapping(_existing(args.parts, "part mapping"), obj)
    return obj


def _records(path):
    return read_records(_existing(path, "grasp file"))


def _dual(rec: GraspRecord) -> DualGrasp:
    if rec.left is None:
        raise InputError(f"record for {rec.object_id!r} has no left hand")
    return DualGrasp(rec.right, rec.left, rec.object_id)


def _record(g: DualGrasp, scale, extra=None) -> GraspRecord:
    prov = {"status": g.status, "e_phh": g.e_phh, "e_pho": g.e_pho}
    prov.update({k: v for k, v in g.diagnostics.items() if k != "tta"})
    if extra:
        prov.update(extra)
    return GraspRecord(g.object_id, scale, g.right, g.left, provenance=prov)


def _pmap(fn, items, threads):
    """Map preserving input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, items))


def _digest_bytes(*paths):
    h = hashlib.sha256()
    for p in paths:
        if p:
            h.update(Path(p).read_bytes())
    return h.hexdigest()


def _write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# commands


def cmd_symmetry(args, cfg):
    obj = _load_object(args)
    rep = detect_symmetry_plane(obj)
    _write_json(args.out, rep.to_dict())
    return {"axis": rep.axis}


def cmd_symopt(args, cfg):
    obj = _load_object(args)
    res = ingest_single_hand(_existing(args.grasps, "grasp file"))
    if res.errors:
        raise InputError(f"{args.grasps}: {len(res.errors)} malformed line(s), first: {res.errors[0]}")
    rights = [pose for oid, _, pose in res.records]
    out = run_symopt(obj, rights, cfg.energy, seed=args.seed, threads=args.threads) if rights else []
    kept = [g for g in out if args.keep_discarded or g.status == OPTIMIZED]
    write_records(args.out, [_record(g, obj.scale) for g in kept])
    n_opt = sum(g.status == OPTIMIZED for g in out)
    return {"inputs": len(rights), "proposals": len(out), "optimized": n_opt, "discarded": len(out) - n_opt}


def cmd_metrics(args, cfg):
    obj = _load_object(args)
    recs = _records(args.grasps)
    duals = [_dual(r) for r in recs]

    def one(g):
        sr, sl = forward_kinematics(g.right), forward_kinematics(g.left)
        return grasp_metrics(obj, sr, sl, mu=args.mu, m=args.cone_edges), sr, sl

    rows = _pmap(one, duals, args.threads)
    data = {"grasps": [r.to_dict() for r, _, _ in rows]}
    if rows:
        groups = [r.label.key if r.label else "" for r in recs] if all(r.label for r in recs) else None
        summary = summarize([r for r, _, _ in rows], [s for _, s, _ in rows], [s for _, _, s in rows], groups)
        data["summary"] = summary.to_dict()
        log.info("\n%s", render_table(summary))
    _write_json(args.out, data)
    return {"grasps": len(rows)}


def cmd_label(args, cfg):
    obj = _load_object(args)
    if obj.parts is None:
        raise InputError("labelling needs --parts")
    if args.category not in DEFAULT_CATEGORIES:
        log.warning("category %r is not one of the default categories", args.category)
    out, labelled = [], 0
    for rec in _records(args.grasps):
        if rec.contact is None:
            g = _dual(rec)
            rec.contact = contact_representation(
                obj, forward_kinematics(g.right), forward_kinematics(g.left), k=cfg.contact.k,
                threshold=cfg.contact.threshold,
            )
        rec.label = label_grasp(rec, obj.parts, args.category, cfg.contact.threshold)
        labelled += rec.label is not None
        if rec.label is not None or args.keep_unlabelled:
            out.append(rec)
    write_records(args.out, out)
    return {"labelled": labelled, "written": len(out)}


def cmd_balance(args, cfg):
    recs = _records(getattr(args, "in"))
    try:
        kept = balance_affordances(recs)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    write_records(args.out, kept)
    return {"inputs": len(recs), "kept": len(kept)}


def _read_dirs(path, n):
    rows = [json.loads(line) for line in _existing(path, "direction file").read_text().splitlines() if line.strip()]
    try:
        states = [finalize_state(AffordanceState(r["D"], r["M"])) for r in rows]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: bad direction record: {exc}") from None
    if len(states) == 1:
        states = states * n
    if len(states) != n:
        raise InputError(f"{path}: {len(states)} direction records for {n} grasps")
    return [s.D * s.M[:, None] for s in states]


def cmd_refine(args, cfg):
    obj = _load_object(args)
    recs = _records(args.grasps)
    dirs = _read_dirs(args.dirs, len(recs))

    def one(pair):
        rec, d = pair
        out = refine(_dual(rec), obj, d, cfg.tta)
        tta = out.diagnostics["tta"]
        rec = GraspRecord(rec.object_id, rec.scale, out.right, out.left, None, rec.label, dict(rec.provenance))
        rec.provenance["tta"] = {k: v for k, v in tta.items() if k != "components"}
        return rec

    done = _pmap(one, list(zip(recs, dirs)), args.threads)
    write_records(args.out, done)
    return {"grasps": len(done), "failed": sum(r.provenance["tta"]["failed"] for r in done)}


def cmd_sample_dirs(args, cfg):
    model = ToyDenoiser.load(_existing(args.denoiser, "denoiser file"))
    sched = cfg.ddpm.schedule()
    if model.T != sched.T:
        raise InputError(f"denoiser was built for T={model.T}, schedule has T={sched.T}")
    cond = None if args.cond is None else np.asarray(json.loads(args.cond), dtype=np.float64)
    s = cfg.ddpm.guidance if args.guidance is None else args.guidance
    with Path(args.out).open("w") as fh:
        for i in range(args.n):
            st = reverse_sample(model, sched, cond, s, seed=args.seed + i, shape=(model.state_dim,))
            fh.write(json.dumps(st.to_dict(), separators=(",", ":")) + "\n")
    return {"samples": args.n}


def cmd_export(args, cfg):
    obj = _load_object(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    recs = _records(args.grasps)
    for i, rec in enumerate(recs):
        pts = {"right_hand": forward_kinematics(rec.right).vertices}
        if rec.left is not None:
            pts["left_hand"] = forward_kinematics(rec.left).vertices
        save_obj(out / f"{rec.object_id}_{i:04d}.obj", obj.mesh, pts)
    return {"scenes": len(recs)}


COMMANDS = {
    "symmetry": cmd_symmetry,
    "symopt": cmd_symopt,
    "metrics": cmd_metrics,
    "label": cmd_label,
    "balance": cmd_balance,
    "refine": cmd_refine,
    "sample-dirs": cmd_sample_dirs,
    "export": cmd_export,
}


# --------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(prog="dhgrasp", description="Dual-hand grasp pipeline")
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("--points", type=int, default=2048, help="object cloud size")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_, *, obj=True, grasps=True):
        sp = sub.add_parser(name, parents=[common], help=help_)
        if obj:
            sp.add_argument("--object", required=True, help="object mesh (.obj or .off)")
        if grasps:
            sp.add_argument("--grasps", required=True, help="grasp JSON-Lines file")
        sp.add_argument("--out", required=True)
        return sp

    add("symmetry", "pseudo-symmetry plane of an object", grasps=False)
    sp = add("symopt", "mirror and optimise single right-hand grasps")
    sp.add_argument("--keep-discarded", action="store_true")
    sp = add("metrics", "Q1, penetration and diversity metrics")
    sp.add_argument("--mu", type=float, default=1.0)
    sp.add_argument("--cone-edges", type=int, default=8)
    sp = add("label", "affordance labels from part contact")
    sp.add_argument("--parts", required=True, help="part mapping JSON")
    sp.add_argument("--category", required=True)
    sp.add_argument("--keep-unlabelled", action="store_true")
    sp = sub.add_parser("balance", parents=[common], help="cap the dominant affordance type")
    sp.add_argument("--in", required=True)
    sp.add_argument("--out", required=True)
    sp = add("refine", "test-time refinement")
    sp.add_argument("--dirs", required=True, help="JSON-Lines of {D, M} states")
    sp = sub.add_parser("sample-dirs", parents=[common], help="sample affordance states from a toy denoiser")
    sp.add_argument("--schedule", help="TOML file whose [ddpm] table sets the schedule")
    sp.add_argument("--denoiser", required=True, help=".npz written by ToyDenoiser.save")
    sp.add_argument("--cond", help="conditioning vector as a JSON list")
    sp.add_argument("--guidance", type=float)
    sp.add_argument("-n", type=int, default=1)
    sp.add_argument("--out", required=True)
    add("export", "write OBJ scenes (object mesh plus hand vertices) into a directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    t0 = time.perf_counter()
    try:
        cfg_path = getattr(args, "schedule", None) or args.config
        if cfg_path:
            _existing(cfg_path, "config file")
        cfg = load_config(cfg_path)
        counts = COMMANDS[args.command](args, cfg)
    except (InputError, SchemaError, GeometryError, ConfigError) as exc:
        log.error("%s", exc)
        return 2
    except Exception:  # noqa: BLE001
        log.exception("internal error")
        return 1
    ins = {k: str(v) for k, v in vars(args).items() if k in ("object", "grasps", "parts", "dirs", "denoiser", "in")}
    ins = {k: v for k, v in ins.items() if v != "None"}
    manifest = RunManifest(
        command=args.command,
        config_digest=cfg.digest,
        seed=args.seed,
        inputs={k: {"path": v, "sha256": _digest_bytes(v)} for k, v in ins.items()},
        outputs={"out": str(args.out)},
        seconds=round(time.perf_counter() - t0, 3),
        counts=counts or {},
    )
    manifest.write(args.out)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
