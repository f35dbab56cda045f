"""Command-line entry point.

Subcommands: gen (build a dataset), train (tagger and matching modules),
eval (top-1 accuracy by ambiguity type with failure diagnosis), ground (one
query against one scene, with an annotated render), repl (interactive
grounding against a sampled scene), validate (re-check dataset artifacts).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import grounding as gnd
from . import harness
from . import querygen as qg
from . import tagger as tg
from .config import Config, load_config
from .lexicon import OOVError
from .scene import Catalogue
from .scenegen import annotate_bbox, render, sample_scene, write_ppm
from .tags import ParseError, format_tag


def _load_cfg(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    return cfg


def tokenize(text: str) -> list[str]:
    return [tok.strip(".,!?;:") for tok in text.lower().split() if tok.strip(".,!?;:")]


def _describe_object(catalogue: Catalogue, scene, index: int) -> str:
    inst = catalogue.instances[scene.objects[index].instance_id]
    alias = f" ({inst.alias})" if inst.alias else ""
    return f"{inst.color} {inst.category}{alias}"


def _print_objects(catalogue: Catalogue, scene) -> None:
    print(f"scene {scene.scene_id}: {len(scene.objects)} objects "
          f"({scene.width}x{scene.height})")
    for obj in scene.objects:
        print(f"  #{obj.index} {_describe_object(catalogue, scene, obj.index):28s} "
              f"bbox={obj.bbox}")


def describe_assembly(tokens: list[str], tags) -> list[str]:
    """Human-readable module assembly recovered from the tag sequence."""
    groups: dict[int, dict[str, list[str]]] = {}
    rels: dict[int, list[str]] = {}
    for token, (role, k) in zip(tokens, tags):
        if role == "MASK":
            continue
        if role == "REL":
            rels.setdefault(k, []).append(token)
        else:
            groups.setdefault(k, {}).setdefault(role, []).append(token)
    lines = []
    for k in sorted(groups):
        parts = []
        for role, mod in (("ENT", "E"), ("ABS", "E"), ("ATT", "A"), ("LOC", "L")):
            if role in groups[k]:
                parts.append(f"{mod}({' '.join(groups[k][role])})")
        lines.append(f"  group {k}: " + " * ".join(parts))
        if k in rels:
            lines.append(f"  hop {k}: B({' '.join(rels[k])})")
    return lines


# ---------------------------------------------------------------------------
# Commands


def cmd_gen(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out or cfg.out_dir) / "dataset"
    summary = harness.write_dataset(cfg, out, render_scenes=args.render,
                                    progress=print)
    print(f"dataset written to {summary['out']}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out or cfg.out_dir) / "model"
    metrics = harness.train_pipeline(cfg, args.data, out, stage=args.stage,
                                     resume=args.resume, max_steps=args.max_steps,
                                     progress=print)
    print(f"checkpoints written to {out}")
    if "tagger" in metrics and not metrics["tagger"].get("finished", True):
        print("tagger training paused by --max-steps; rerun with --resume")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out or cfg.out_dir) / "eval"
    report = harness.eval_pipeline(cfg, args.data, args.ckpt, out,
                                   set_name=args.set, split_filter=args.split)
    print(report.to_text())
    print(f"report written to {out}")
    return 0


def cmd_validate(args) -> int:
    try:
        totals = harness.validate_dataset(args.data, progress=print)
    except ValueError as exc:
        print(f"INVALID: {exc}", file=sys.stderr)
        return 1
    print(f"all checks passed: {totals['scenes']} scenes, "
          f"{totals['queries']} queries")
    return 0


def _scene_for_args(args, cfg: Config, catalogue: Catalogue):
    if args.scene_file:
        _, rows = harness.read_jsonl(Path(args.scene_file))
        from .scene import scene_from_dict
        for row in rows:
            if row["scene_id"] == args.scene_id:
                return scene_from_dict(row)
        raise SystemExit(f"scene_id {args.scene_id} not found in {args.scene_file}")
    return sample_scene(args.scene_seed, catalogue,
                        n_objects=(cfg.scene.min_objects, cfg.scene.max_objects),
                        width=cfg.scene.width, height=cfg.scene.height,
                        duplicate_prob=cfg.scene.duplicate_prob)


def _ground_one(query: str, scene, catalogue, tagger, nets, cfg):
    tokens = tokenize(query)
    if not tokens:
        raise OOVError("")
    shot = render(scene, catalogue)
    provider = harness.provider_for(cfg, catalogue)
    from .features import scene_representations
    reps = scene_representations(scene, catalogue, shot.crops, provider)
    tags, _ = tagger.tag(tokens)
    parsed = tg.recover_structure(tokens, tags, tagger.table)
    result = gnd.compose_and_ground(reps, parsed, *nets)
    result.tags = tags
    return tokens, tags, result, shot


def cmd_ground(args) -> int:
    cfg = _load_cfg(args)
    catalogue = harness.catalogue_for(cfg)
    tagger = harness.load_tagger_bundle(args.ckpt)
    nets = harness.load_modules(args.ckpt)
    scene = _scene_for_args(args, cfg, catalogue)
    if not tokenize(args.query):
        print("usage error: empty query", file=sys.stderr)
        return 2
    try:
        tokens, tags, result, shot = _ground_one(args.query, scene, catalogue,
                                                 tagger, nets, cfg)
    except OOVError as exc:
        print(f"unknown word: {exc.token!r} is outside the query vocabulary",
              file=sys.stderr)
        return 2
    except ParseError as exc:
        print(f"query structure not understood: {exc}", file=sys.stderr)
        return 2
    _print_objects(catalogue, scene)
    print("tags: " + " ".join(f"{tok}/{format_tag(t)}" for tok, t in zip(tokens, tags)))
    for line in describe_assembly(tokens, tags):
        print(line)
    print("scores: " + " ".join(f"#{i}:{s:.3f}" for i, s in enumerate(result.scores)))
    print(f"predicted: #{result.predicted} "
          f"({_describe_object(catalogue, scene, result.predicted)}) "
          f"confidence {result.confidence:.3f}")
    if result.low_confidence:
        print("warning: low confidence")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        bbox = scene.objects[result.predicted].bbox
        annotated = annotate_bbox(shot.pixels, bbox)
        write_ppm(out / "grounded.ppm", annotated, comment=f"seed={cfg.seed}")
        with open(out / "trace.json", "w", encoding="utf-8") as fh:
            json.dump({"seed": cfg.seed, "query": args.query,
                       "scene_id": scene.scene_id, "result": result.to_dict()},
                      fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"annotated render and trace written to {out}")
    return 0


def cmd_repl(args) -> int:
    cfg = _load_cfg(args)
    catalogue = harness.catalogue_for(cfg)
    tagger = harness.load_tagger_bundle(args.ckpt)
    nets = harness.load_modules(args.ckpt)
    scene = _scene_for_args(args, cfg, catalogue)
    _print_objects(catalogue, scene)
    suggestions: dict[str, qg.QueryRecord] = {}
    for i, split in enumerate(qg.SPLITS):
        try:
            rec = qg.generate_query(scene, catalogue, split,
                                    harness.rng_from(cfg.seed, 211, i))
            suggestions[" ".join(rec.tokens)] = rec
        except ValueError:
            continue
    if suggestions:
        print("example queries (answer known, full diagnosis available):")
        for text in suggestions:
            print(f"  {text}")
    print("type a query; 'objects' reprints the scene, 'quit' exits")
    out_dir = Path(args.out) if args.out else None
    n_traces = 0
    while True:
        try:
            line = input("query> ").strip()
        except EOFError:
            break
        if not line:
            continue
        if line in ("quit", "exit"):
            break
        if line == "objects":
            _print_objects(catalogue, scene)
            continue
        try:
            tokens, tags, result, _ = _ground_one(line, scene, catalogue,
                                                  tagger, nets, cfg)
        except OOVError as exc:
            print(f"unknown word: {exc.token!r} is outside the query vocabulary")
            continue
        except ParseError as exc:
            print(f"query structure not understood: {exc}")
            continue
        print("tags: " + " ".join(f"{tok}/{format_tag(t)}"
                                  for tok, t in zip(tokens, tags)))
        print(f"answer: #{result.predicted} "
              f"({_describe_object(catalogue, scene, result.predicted)}) "
              f"confidence {result.confidence:.3f}"
              + (" [low confidence]" if result.low_confidence else ""))
        gold = suggestions.get(" ".join(tokens))
        if gold is not None:
            klass = gnd.diagnose(result, gold.tags, gold.target_index)
            print(f"gold: #{gold.target_index}; outcome: {klass}")
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            with open(out_dir / f"repl_trace_{n_traces:03d}.json", "w",
                      encoding="utf-8") as fh:
                json.dump({"seed": cfg.seed, "query": line,
                           "scene_id": scene.scene_id,
                           "result": result.to_dict()}, fh, indent=2, sort_keys=True)
                fh.write("\n")
            n_traces += 1
    return 0


# ---------------------------------------------------------------------------
# Argument wiring


def _common(sub):
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--seed", type=int, help="override the config seed")
    sub.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refground",
        description="synthetic-scene referring-expression grounding")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen", help="generate a dataset")
    _common(p)
    p.add_argument("--render", action="store_true",
                   help="also write PPM renders and per-object crops")
    p.set_defaults(func=cmd_gen)

    p = subs.add_parser("train", help="train the tagger and matching modules")
    p.add_argument("data", help="dataset directory from `gen`")
    _common(p)
    p.add_argument("--stage", choices=["tagger", "modules", "all"], default="all")
    p.add_argument("--resume", action="store_true",
                   help="continue a paused tagger run from its checkpoint")
    p.add_argument("--max-steps", type=int, default=None,
                   help="pause tagger training after this many steps")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="evaluate grounding accuracy by split")
    p.add_argument("data", help="dataset directory")
    p.add_argument("ckpt", help="checkpoint directory from `train`")
    _common(p)
    p.add_argument("--set", choices=["train", "dev", "test"], default="test")
    p.add_argument("--split", choices=list(qg.SPLITS), default=None,
                   help="restrict to one ambiguity type")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("ground", help="ground a single query")
    p.add_argument("ckpt", help="checkpoint directory")
    p.add_argument("query", help="the referring expression")
    _common(p)
    p.add_argument("--scene-seed", type=int, default=0)
    p.add_argument("--scene-file", help="scenes_*.jsonl to read a scene from")
    p.add_argument("--scene-id", type=int, default=0)
    p.add_argument("--render", action="store_true",
                   help="(renders are always produced when --out is given)")
    p.set_defaults(func=cmd_ground)

    p = subs.add_parser("repl", help="interactive grounding session")
    p.add_argument("ckpt", help="checkpoint directory")
    _common(p)
    p.add_argument("--scene-seed", type=int, default=0)
    p.add_argument("--scene-file")
    p.add_argument("--scene-id", type=int, default=0)
    p.set_defaults(func=cmd_repl)

    p = subs.add_parser("validate", help="re-check a generated dataset")
    p.add_argument("data", help="dataset directory")
    _common(p)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
