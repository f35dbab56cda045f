"""Dataset building, training orchestration, and the evaluation harness.

All artifacts are line-delimited JSON (first line a header record carrying
the seed), CSV curves with a seed comment, or the binary checkpoint format.
Nothing embeds wall-clock state, so fixed seeds give bit-identical outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import features as feats
from . import grounding as gnd
from . import querygen as qg
from . import tagger as tg
from .config import Config
from .lexicon import EmbeddingTable, load_embeddings
from .neural import AdamW, load_checkpoint, save_checkpoint
from .scene import Catalogue, SceneGraph, default_catalogue, load_catalogue, save_catalogue
from .scene import scene_from_dict, scene_to_dict, validate_scene
from .scenegen import render, rng_from, sample_scene, write_ppm
from .tags import ParseError, format_tag

SPLIT_SETS = ("train", "dev", "test")
SCENE_ID_OFFSET = {"train": 0, "dev": 1_000_000, "test": 2_000_000}
SCENE_BUILD_ATTEMPTS = 60


# ---------------------------------------------------------------------------
# JSONL plumbing


def write_jsonl(path: Path, header: dict, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"header": header}, sort_keys=True,
                            separators=(",", ":")) + "\n")
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")


def read_jsonl(path: Path) -> tuple[dict, list[dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line for line in fh if line.strip()]
    header = json.loads(lines[0])["header"]
    return header, [json.loads(line) for line in lines[1:]]


def catalogue_for(cfg: Config) -> Catalogue:
    return load_catalogue(cfg.catalogue) if cfg.catalogue else default_catalogue()


# ---------------------------------------------------------------------------
# Dataset generation


def _draw_split(rng: np.random.Generator, mix: dict[str, float]) -> str:
    weights = np.array([mix.get(s, 0.0) for s in qg.SPLITS], dtype=np.float64)
    weights = weights / weights.sum()
    r = rng.random()
    cum = 0.0
    for split, w in zip(qg.SPLITS, weights):
        cum += w
        if r < cum:
            return split
    return qg.SPLITS[-1]


def build_scene_with_queries(cfg: Config, catalogue: Catalogue, set_tag: int,
                             index: int) -> tuple[SceneGraph, list[qg.QueryRecord]]:
    """Sample scenes until one hosts a full query draw for its slot."""
    for attempt in range(SCENE_BUILD_ATTEMPTS):
        scene_seed_parts = (cfg.seed, 101, set_tag, index, attempt)
        scene = sample_scene(
            int(rng_from(*scene_seed_parts).integers(2 ** 31)),
            catalogue,
            n_objects=(cfg.scene.min_objects, cfg.scene.max_objects),
            width=cfg.scene.width, height=cfg.scene.height,
            duplicate_prob=cfg.scene.duplicate_prob,
        )
        split_rng = rng_from(cfg.seed, 103, set_tag, index, attempt)
        wanted = [_draw_split(split_rng, cfg.dataset.split_mix)
                  for _ in range(cfg.dataset.queries_per_scene)]
        records: list[qg.QueryRecord] = []
        try:
            for qi, split in enumerate(wanted):
                rng = rng_from(cfg.seed, 107, set_tag, index, attempt, qi)
                records.append(qg.generate_query(scene, catalogue, split, rng))
        except ValueError:
            continue
        return scene, records
    raise RuntimeError(f"could not build scene {index} after "
                       f"{SCENE_BUILD_ATTEMPTS} attempts")


def generate_split(cfg: Config, catalogue: Catalogue, set_name: str,
                   n_scenes: int) -> tuple[list[SceneGraph], list[qg.QueryRecord]]:
    set_tag = SPLIT_SETS.index(set_name)
    offset = SCENE_ID_OFFSET[set_name]
    scenes: list[SceneGraph] = []
    records: list[qg.QueryRecord] = []
    for index in range(n_scenes):
        scene, recs = build_scene_with_queries(cfg, catalogue, set_tag, index)
        scene.scene_id = offset + index
        for rec in recs:
            rec.scene_id = scene.scene_id
            qg.validate_record(scene, rec, catalogue)
        scenes.append(scene)
        records.extend(recs)
    return scenes, records


def write_dataset(cfg: Config, out_dir: str | Path, render_scenes: bool = False,
                  progress=None) -> dict:
    """Generate and write all three splits; every record is oracle-validated."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    catalogue = catalogue_for(cfg)
    save_catalogue(catalogue, out / "catalogue.json")
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    vocab = qg.vocabulary(catalogue)
    with open(out / "vocab.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(w + "\n" for w in vocab)
    counts = {"train": cfg.dataset.train_scenes, "dev": cfg.dataset.dev_scenes,
              "test": cfg.dataset.test_scenes}
    summary: dict = {"out": str(out), "splits": {}}
    for set_name in SPLIT_SETS:
        scenes, records = generate_split(cfg, catalogue, set_name, counts[set_name])
        header = {"kind": "scenes", "set": set_name, "seed": cfg.seed,
                  "count": len(scenes), "width": cfg.scene.width,
                  "height": cfg.scene.height}
        write_jsonl(out / f"scenes_{set_name}.jsonl", header,
                    (scene_to_dict(s) for s in scenes))
        qheader = {"kind": "queries", "set": set_name, "seed": cfg.seed,
                   "count": len(records)}
        write_jsonl(out / f"queries_{set_name}.jsonl", qheader,
                    (qg.record_to_dict(r) for r in records))
        if render_scenes:
            rdir = out / "renders"
            rdir.mkdir(exist_ok=True)
            for scene in scenes:
                shot = render(scene, catalogue)
                stem = f"scene{scene.scene_id:07d}"
                write_ppm(rdir / f"{stem}.ppm", shot.pixels, comment=f"seed={cfg.seed}")
                for obj, crop in zip(scene.objects, shot.crops):
                    write_ppm(rdir / f"{stem}_obj{obj.index}.ppm", crop,
                              comment=f"seed={cfg.seed}")
        summary["splits"][set_name] = {"scenes": len(scenes), "queries": len(records)}
        if progress:
            progress(f"{set_name}: {len(scenes)} scenes, {len(records)} queries")
    return summary


def load_split(data_dir: str | Path, set_name: str) -> tuple[list[SceneGraph], list[qg.QueryRecord]]:
    data = Path(data_dir)
    _, scene_rows = read_jsonl(data / f"scenes_{set_name}.jsonl")
    _, record_rows = read_jsonl(data / f"queries_{set_name}.jsonl")
    scenes = [scene_from_dict(row) for row in scene_rows]
    records = [qg.record_from_dict(row) for row in record_rows]
    return scenes, records


def validate_dataset(data_dir: str | Path, progress=None) -> dict:
    """Re-check every scene invariant and every record against the oracle."""
    data = Path(data_dir)
    catalogue = load_catalogue(data / "catalogue.json")
    vocab = set(qg.vocabulary(catalogue))
    totals = {"scenes": 0, "queries": 0}
    for set_name in SPLIT_SETS:
        if not (data / f"scenes_{set_name}.jsonl").exists():
            continue
        scenes, records = load_split(data, set_name)
        by_id = {s.scene_id: s for s in scenes}
        for scene in scenes:
            validate_scene(scene)
        for rec in records:
            qg.validate_record(by_id[rec.scene_id], rec, catalogue)
            oov = [t for t in rec.tokens if t not in vocab]
            if oov:
                raise ValueError(f"tokens outside vocabulary: {oov}")
        totals["scenes"] += len(scenes)
        totals["queries"] += len(records)
        if progress:
            progress(f"{set_name}: {len(scenes)} scenes, {len(records)} queries OK")
    return totals


# ---------------------------------------------------------------------------
# Representations and module datasets


def representations_for(scenes: list[SceneGraph], catalogue: Catalogue,
                        provider) -> dict[int, list[feats.ObjectRepresentation]]:
    out = {}
    for scene in scenes:
        shot = render(scene, catalogue)
        out[scene.scene_id] = feats.scene_representations(scene, catalogue,
                                                          shot.crops, provider)
    return out


def provider_for(cfg: Config, catalogue: Catalogue):
    return feats.EntityFeatureProvider(
        catalogue, dim=cfg.model.entity_dim, sigma=cfg.model.entity_sigma,
        seed=cfg.seed)


def _phrase_vector(table: EmbeddingTable, phrase: str,
                   cache: dict[str, np.ndarray]) -> np.ndarray:
    if phrase not in cache:
        cache[phrase] = table.embed_phrase(phrase.split())
    return cache[phrase]


def unary_dataset(rows, reps_by_scene, table: EmbeddingTable,
                  kind: str) -> gnd.UnaryDataset:
    cache: dict[str, np.ndarray] = {}
    feats_list = []
    queries = []
    targets = np.empty(len(rows))
    for i, (scene_id, obj, word, match) in enumerate(rows):
        rep = reps_by_scene[scene_id][obj]
        feats_list.append(rep.z_ent if kind == "entity" else rep.z_att)
        queries.append(_phrase_vector(table, word, cache))
        targets[i] = 1.0 if match else 0.0
    return gnd.UnaryDataset(np.stack(feats_list), np.stack(queries), targets)


def spatial_dataset(rows, scenes_by_id, table: EmbeddingTable) -> list[gnd.SpatialRecord]:
    cache: dict[str, np.ndarray] = {}
    bcache: dict[int, np.ndarray] = {}
    records = []
    for scene_id, word, matrix in rows:
        if scene_id not in bcache:
            scene = scenes_by_id[scene_id]
            boxes = np.stack([feats.bbox_features(o.bbox, scene.width, scene.height)
                              for o in scene.objects])
            bcache[scene_id] = gnd.pair_features(boxes)
        n = matrix.shape[0]
        mask = ~np.eye(n, dtype=bool).reshape(-1)
        records.append(gnd.SpatialRecord(
            pair_inputs=bcache[scene_id],
            targets=matrix.astype(np.float64).reshape(-1),
            mask=mask,
            query=_phrase_vector(table, word, cache),
        ))
    return records


# ---------------------------------------------------------------------------
# Training pipeline


def _write_curve(path: Path, seed: int, columns: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# seed={seed}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join("" if v is None else repr(v) if isinstance(v, float)
                              else str(v) for v in row) + "\n")


def build_table(cfg: Config, catalogue: Catalogue) -> EmbeddingTable:
    vocab = qg.vocabulary(catalogue)
    if cfg.model.embedding_file:
        return load_embeddings(cfg.model.embedding_file, vocab,
                               dim=cfg.model.embed_dim, seed=cfg.seed)
    return EmbeddingTable.random(vocab, dim=cfg.model.embed_dim, seed=cfg.seed)


def train_tagger_stage(cfg: Config, data_dir: str | Path, out_dir: str | Path,
                       resume: bool = False, max_steps: int | None = None,
                       progress=None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    catalogue = catalogue_for(cfg)
    _, train_records = load_split(data_dir, "train")
    _, dev_records = load_split(data_dir, "dev")
    train_rows = [(r.tokens, r.tags) for r in train_records]
    dev_rows = [(r.tokens, r.tags) for r in dev_records]
    tcfg = tg.TaggerTrainConfig(
        batch_size=cfg.train.tagger_batch, lr=cfg.train.tagger_lr,
        weight_decay=cfg.train.weight_decay, epochs=cfg.train.tagger_epochs,
        patience=cfg.train.patience, hidden=cfg.model.gru_hidden, seed=cfg.seed)
    ckpt_path = out / "tagger.ckpt"
    start_step = 0
    tagger = None
    optimizer = None
    resume_state = None
    if resume and ckpt_path.exists():
        arrays, meta = load_checkpoint(ckpt_path)
        tagger = tg.tagger_from_arrays(arrays, meta)
        optimizer = AdamW(tagger.parameters(), lr=tcfg.lr,
                          total_steps=meta["total_steps"],
                          weight_decay=tcfg.weight_decay)
        optimizer.load_state_arrays(arrays, meta["step"])
        start_step = meta["step"]
        resume_state = {
            "best_metric": meta["best_metric"],
            "bad_evals": meta["bad_evals"],
            "best_arrays": {k[len("best."):]: v for k, v in arrays.items()
                            if k.startswith("best.")},
        }
        table = tagger.table
    else:
        table = build_table(cfg, catalogue)
    tagger, optimizer, metrics, curve = tg.train_tagger(
        train_rows, dev_rows, table, tcfg,
        start_step=start_step, max_steps=max_steps,
        tagger=tagger, optimizer=optimizer, resume_state=resume_state)
    arrays = tg.tagger_arrays(tagger, optimizer)
    for name, arr in metrics["best_arrays"].items():
        arrays[f"best.{name}"] = arr
    meta = tg.tagger_meta(tagger, extra={
        "seed": cfg.seed,
        "step": optimizer.step_count,
        "total_steps": metrics["total_steps"],
        "best_metric": metrics["best_dev_sentence_acc"],
        "bad_evals": metrics["bad_evals"],
        "finished": metrics["finished"],
        "dev_token_acc": metrics["dev_token_acc"],
        "dev_sentence_acc": metrics["dev_sentence_acc"],
    })
    save_checkpoint(ckpt_path, arrays, meta)
    _write_curve(out / "curves_tagger.csv", cfg.seed,
                 ["step", "lr", "loss", "dev_token_acc", "dev_sentence_acc"], curve)
    if progress:
        progress(f"tagger: dev token acc {metrics['dev_token_acc']:.4f}, "
                 f"sentence acc {metrics['dev_sentence_acc']:.4f}")
    return metrics


def load_tagger_bundle(ckpt_dir: str | Path) -> tg.Tagger:
    arrays, meta = load_checkpoint(Path(ckpt_dir) / "tagger.ckpt")
    return tg.tagger_from_arrays(arrays, meta)


def train_modules_stage(cfg: Config, data_dir: str | Path, out_dir: str | Path,
                        progress=None) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tagger = load_tagger_bundle(out)
    table = tagger.table
    catalogue = catalogue_for(cfg)
    train_scenes, train_records = load_split(data_dir, "train")
    dev_scenes, dev_records = load_split(data_dir, "dev")
    provider = provider_for(cfg, catalogue)
    train_reps = representations_for(train_scenes, catalogue, provider)
    dev_reps = representations_for(dev_scenes, catalogue, provider)
    by_id = {s.scene_id: s for s in train_scenes}
    dev_by_id = {s.scene_id: s for s in dev_scenes}
    train_sets = qg.build_module_datasets(
        [(by_id[r.scene_id], r) for r in train_records])
    dev_sets = qg.build_module_datasets(
        [(dev_by_id[r.scene_id], r) for r in dev_records])
    mcfg = gnd.ModuleTrainConfig(
        unary_batch=cfg.train.unary_batch, spatial_batch=cfg.train.spatial_batch,
        lr=cfg.train.module_lr, weight_decay=cfg.train.weight_decay,
        epochs=cfg.train.module_epochs, patience=cfg.train.patience,
        joint_dim=cfg.model.joint_dim, seed=cfg.seed,
        normalize_eps=cfg.model.normalize_eps)
    ent_train = unary_dataset(train_sets.entity, train_reps, table, "entity")
    ent_dev = unary_dataset(dev_sets.entity, dev_reps, table, "entity")
    att_train = unary_dataset(train_sets.attribute, train_reps, table, "attribute")
    att_dev = unary_dataset(dev_sets.attribute, dev_reps, table, "attribute")
    spt_train = spatial_dataset(train_sets.spatial, by_id, table)
    spt_dev = spatial_dataset(dev_sets.spatial, dev_by_id, table)
    ent_net, ent_opt, ent_metrics, ent_curve = gnd.train_unary_module(
        "ent", cfg.model.entity_dim, ent_train, ent_dev, mcfg)
    att_net, att_opt, att_metrics, att_curve = gnd.train_unary_module(
        "att", feats.ATTRIBUTE_DIM, att_train, att_dev, mcfg)
    spt_net, spt_opt, spt_metrics, spt_curve = gnd.train_spatial_module(
        spt_train, spt_dev, mcfg)
    arrays: dict[str, np.ndarray] = {}
    for net, opt in ((ent_net, ent_opt), (att_net, att_opt), (spt_net, spt_opt)):
        arrays.update(net.named_arrays())
        arrays.update(opt.state_arrays())
    meta = {
        "kind": "modules", "seed": cfg.seed,
        "entity_dim": cfg.model.entity_dim, "attribute_dim": feats.ATTRIBUTE_DIM,
        "joint_dim": cfg.model.joint_dim, "normalize_eps": cfg.model.normalize_eps,
        "ent_dev_acc": ent_metrics["dev_acc"],
        "att_dev_acc": att_metrics["dev_acc"],
        "spt_dev_acc": spt_metrics["dev_acc"],
    }
    save_checkpoint(out / "modules.ckpt", arrays, meta)
    _write_curve(out / "curves_entity.csv", cfg.seed,
                 ["step", "lr", "loss", "dev_acc"], ent_curve)
    _write_curve(out / "curves_attribute.csv", cfg.seed,
                 ["step", "lr", "loss", "dev_acc"], att_curve)
    _write_curve(out / "curves_spatial.csv", cfg.seed,
                 ["step", "lr", "loss", "dev_acc"], spt_curve)
    if progress:
        progress(f"modules: ent {ent_metrics['dev_acc']:.4f}, "
                 f"att {att_metrics['dev_acc']:.4f}, spt {spt_metrics['dev_acc']:.4f}")
    return {"entity": ent_metrics, "attribute": att_metrics, "spatial": spt_metrics}


def load_modules(ckpt_dir: str | Path):
    arrays, meta = load_checkpoint(Path(ckpt_dir) / "modules.ckpt")
    ent = gnd.MatchingNetwork("ent", meta["entity_dim"], meta["joint_dim"],
                              normalize_eps=meta["normalize_eps"])
    att = gnd.MatchingNetwork("att", meta["attribute_dim"], meta["joint_dim"],
                              normalize_eps=meta["normalize_eps"])
    spt = gnd.MatchingNetwork("spt", 10, meta["joint_dim"],
                              normalize_eps=meta["normalize_eps"])
    for net in (ent, att, spt):
        net.load_arrays(arrays)
    return ent, att, spt


def train_pipeline(cfg: Config, data_dir: str | Path, out_dir: str | Path,
                   stage: str = "all", resume: bool = False,
                   max_steps: int | None = None, progress=None) -> dict:
    if stage not in ("tagger", "modules", "all"):
        raise ValueError(f"unknown stage {stage!r}")
    metrics: dict = {}
    if stage in ("tagger", "all"):
        metrics["tagger"] = train_tagger_stage(cfg, data_dir, out_dir,
                                               resume=resume, max_steps=max_steps,
                                               progress=progress)
    if stage in ("modules", "all"):
        if not (Path(out_dir) / "tagger.ckpt").exists():
            raise FileNotFoundError("modules stage needs tagger.ckpt "
                                    "(run the tagger stage first)")
        if stage == "all" and not metrics["tagger"]["finished"]:
            return metrics  # paused mid-tagger; resume before training modules
        metrics["modules"] = train_modules_stage(cfg, data_dir, out_dir,
                                                 progress=progress)
    return metrics


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class SplitStats:
    count: int = 0
    top1: int = 0
    parsing: int = 0
    perception: int = 0
    correct: int = 0
    lucky: int = 0

    @property
    def accuracy(self) -> float:
        return self.top1 / self.count if self.count else 0.0


@dataclass
class EvalReport:
    per_split: dict[str, SplitStats]
    seed: int

    @property
    def average(self) -> float:
        accs = [s.accuracy for s in self.per_split.values() if s.count]
        return float(np.mean(accs)) if accs else 0.0

    @property
    def total(self) -> int:
        return sum(s.count for s in self.per_split.values())

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "average": self.average,
            "total": self.total,
            "splits": {
                name: {
                    "count": s.count, "top1": s.top1, "accuracy": s.accuracy,
                    "parsing": s.parsing, "perception": s.perception,
                    "correct": s.correct, "lucky": s.lucky,
                }
                for name, s in self.per_split.items()
            },
        }

    def to_text(self) -> str:
        lines = [f"{'split':8s} {'count':>6s} {'top-1':>7s} {'parse.F':>8s} "
                 f"{'perc.F':>7s} {'lucky':>6s}"]
        for name in qg.SPLITS:
            if name not in self.per_split:
                continue
            s = self.per_split[name]
            lines.append(f"{name:8s} {s.count:6d} {100 * s.accuracy:6.1f}% "
                         f"{s.parsing:8d} {s.perception:7d} {s.lucky:6d}")
        lines.append(f"{'Average':8s} {self.total:6d} {100 * self.average:6.1f}%")
        return "\n".join(lines)


def ground_record(record: qg.QueryRecord, reps, tagger: tg.Tagger,
                  nets) -> tuple[gnd.GroundingResult | None, list]:
    """Tag, parse, and compose one record; None result on structural failure."""
    ent_net, att_net, spt_net = nets
    tags, _ = tagger.tag(record.tokens)
    try:
        parsed = tg.recover_structure(record.tokens, tags, tagger.table)
        result = gnd.compose_and_ground(reps, parsed, ent_net, att_net, spt_net)
        result.tags = tags
        return result, tags
    except (ParseError, ValueError):
        return None, tags


def evaluate_grounding(cfg: Config, catalogue: Catalogue,
                       scenes: list[SceneGraph], records: list[qg.QueryRecord],
                       tagger: tg.Tagger, nets, trace_sink=None) -> EvalReport:
    provider = provider_for(cfg, catalogue)
    reps_by_scene = representations_for(scenes, catalogue, provider)
    per_split = {name: SplitStats() for name in qg.SPLITS}
    for qid, record in enumerate(records):
        stats = per_split[record.split]
        stats.count += 1
        result, tags = ground_record(record, reps_by_scene[record.scene_id],
                                     tagger, nets)
        predicted = result.predicted if result is not None else None
        if predicted == record.target_index:
            stats.top1 += 1
        if result is None:
            klass = "parsing"  # structural failure implies tags differ from gold
        else:
            klass = gnd.diagnose(result, record.tags, record.target_index)
        if klass == "parsing":
            stats.parsing += 1
            if predicted == record.target_index:
                stats.lucky += 1
        elif klass == "perception":
            stats.perception += 1
        else:
            stats.correct += 1
        if trace_sink is not None:
            row = {
                "qid": qid, "scene_id": record.scene_id, "split": record.split,
                "target": record.target_index, "predicted": predicted,
                "class": klass,
                "gold_tags": [format_tag(t) for t in record.tags],
                "tags": [format_tag(t) for t in tags],
                "result": None if result is None else result.to_dict(),
            }
            trace_sink(row)
    return EvalReport(per_split=per_split, seed=cfg.seed)


def eval_pipeline(cfg: Config, data_dir: str | Path, ckpt_dir: str | Path,
                  out_dir: str | Path | None, set_name: str = "test",
                  split_filter: str | None = None, progress=None) -> EvalReport:
    catalogue = catalogue_for(cfg)
    scenes, records = load_split(data_dir, set_name)
    if split_filter:
        records = [r for r in records if r.split == split_filter]
    tagger = load_tagger_bundle(ckpt_dir)
    nets = load_modules(ckpt_dir)
    trace_rows: list[dict] = []
    report = evaluate_grounding(cfg, catalogue, scenes, records, tagger, nets,
                                trace_sink=trace_rows.append)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_jsonl(out / f"eval_traces_{set_name}.jsonl",
                    {"kind": "eval_traces", "seed": cfg.seed, "set": set_name},
                    trace_rows)
        with open(out / f"eval_report_{set_name}.json", "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    if progress:
        progress(report.to_text())
    return report
