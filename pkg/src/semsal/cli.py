"""Command-line pipeline.

Stages read and write fixed artifact names under the output directory so a
run can be resumed or inspected stage by stage:

* ``synth``     -> ``dataset/manifest.json`` (plus blobs and PGMs)
* ``ingest``    -> ``ingest_summary.json``
* ``retrieve``  -> ``retrieval.tsv``
* ``pairs``     -> ``pairs.srp``, ``pairs_summary.json``
* ``train``     -> ``ranker.srm``, ``train_log.txt``
* ``rank``      -> ``rank.tsv`` (and ``coarse/`` with ``--write-masks``)
* ``fuse``      -> ``final/<image>.pgm``, ``confidence.tsv``
* ``eval``      -> ``report.json``, ``report.txt``
* ``pipeline``  -> retrieve, pairs, train, rank, fuse, eval in sequence

Configuration comes from an optional JSON file (one section per stage) with
``--seed`` and ``--jobs`` overriding.  Runs are deterministic: artifacts
carry no timestamps, and every write is logged with its stage, config hash
and seed, which are also collected into ``run_summary.json``.  Exit codes:
0 success, 1 validation/config error, 2 I/O or corrupt-file error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dataio, metrics
from .dataio import BBox, Dataset, load_manifest
from .errors import FormatError, SemsalError, ValidationError
from .fusion import FusionConfig, fuse_image
from .localization import coarse_mask, localize
from .metrics import MetricConfig, evaluate_dataset, localization_prf
from .pairs import (PairConfig, TrainingSet, enumerate_all_pairs,
                    read_pair_file, write_pair_file)
from .proposals import FilterConfig
from .ranker import RankerModel, TrainConfig, train_ranker
from .retrieval import RetrievalConfig, retrieve_all
from .synthetic import SyntheticConfig, generate_fixture

log = logging.getLogger("semsal")

_SECTIONS = {
    "filter": FilterConfig,
    "retrieval": RetrievalConfig,
    "pairs": PairConfig,
    "train": TrainConfig,
    "fusion": FusionConfig,
    "metrics": MetricConfig,
    "synthetic": SyntheticConfig,
}


@dataclass
class RunConfig:
    """All stage configs plus global settings for one invocation."""

    filter: FilterConfig = field(default_factory=FilterConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    pairs: PairConfig = field(default_factory=PairConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    jobs: int = 1

    def hash(self) -> str:
        doc = {name: asdict(getattr(self, name)) for name in _SECTIONS}
        doc["jobs"] = self.jobs
        canon = json.dumps(doc, sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Fold ``--set section.key=value`` flags into the config document."""
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ValidationError(f"--set expects section.key=value, got "
                                  f"'{item}'")
        dotted, raw = item.split("=", 1)
        section, key = dotted.split(".", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings allowed unquoted
        doc.setdefault(section, {})
        if not isinstance(doc[section], dict):
            raise ValidationError(f"--set: section '{section}' is not an "
                                  f"object")
        doc[section][key] = value
    return doc


def load_run_config(path: str | None, seed: int | None = None,
                    jobs: int | None = None,
                    overrides: list[str] | None = None) -> RunConfig:
    """Merge defaults, config-file sections, --set overrides, then seed/jobs."""
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config '{path}': invalid JSON: {exc}")
        if not isinstance(doc, dict):
            raise ValidationError(f"config '{path}': top level must be an "
                                  f"object")
    doc = _apply_overrides(doc, overrides or [])
    kwargs = {}
    for name, value in doc.items():
        if name == "jobs":
            continue
        if name not in _SECTIONS:
            raise ValidationError(f"config: unknown section '{name}' "
                                  f"(expected one of {sorted(_SECTIONS)})")
        if not isinstance(value, dict):
            raise ValidationError(f"config: section '{name}' must be an object")
        cls = _SECTIONS[name]
        fields = {f for f in cls.__dataclass_fields__}
        for key in value:
            if key not in fields:
                raise ValidationError(f"config: section '{name}' has unknown "
                                      f"key '{key}'")
        section = dict(value)
        if "hidden_dims" in section:
            section["hidden_dims"] = tuple(section["hidden_dims"])
        try:
            kwargs[name] = cls(**section)
        except TypeError as exc:
            raise ValidationError(f"config: section '{name}': {exc}")
    cfg = RunConfig(**kwargs)
    if jobs is not None:
        if jobs < 1:
            raise ValidationError(f"--jobs must be >= 1, got {jobs}")
        cfg.jobs = jobs
    elif isinstance(doc.get("jobs"), int):
        cfg.jobs = doc["jobs"]
    if seed is not None:
        cfg.train = TrainConfig(**{**asdict(cfg.train), "seed": seed,
                                   "hidden_dims": cfg.train.hidden_dims})
        cfg.synthetic = SyntheticConfig(**{**asdict(cfg.synthetic),
                                           "seed": seed})
    return cfg


class Run:
    """Tracks artifacts written during one invocation for the summary file."""

    def __init__(self, command: str, cfg: RunConfig, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.artifacts: list[dict] = []
        out.mkdir(parents=True, exist_ok=True)

    def record(self, stage: str, path: Path) -> None:
        rel = str(path.relative_to(self.out)) if path.is_relative_to(self.out) \
            else str(path)
        self.artifacts.append({"stage": stage, "path": rel})
        log.info("stage=%s config=%s seed=%d wrote %s", stage,
                 self.cfg.hash(), self.cfg.train.seed, path)

    def finish(self) -> None:
        doc = {
            "command": self.command,
            "config_hash": self.cfg.hash(),
            "seed": self.cfg.train.seed,
            "jobs": self.cfg.jobs,
            "artifacts": self.artifacts,
        }
        dataio.save_manifest(doc, self.out / "run_summary.json")


# ---------------------------------------------------------------------------
# stage implementations


def stage_synth(run: Run) -> Path:
    manifest = generate_fixture(run.cfg.synthetic, run.out / "dataset")
    run.record("synth", manifest)
    return manifest


def stage_ingest(run: Run, dataset: Dataset) -> dict:
    n_props = sum(len(rec.proposals) for rec in dataset)
    summary = {
        "images": len(dataset),
        "proposals": n_props,
        "with_gt": sum(1 for rec in dataset if rec.has_gt),
        "candidate_maps": sum(len(rec.candidate_map_paths) for rec in dataset),
        "feature_count": dataset.features.count,
        "feature_dim": dataset.features.dim,
    }
    path = run.out / "ingest_summary.json"
    dataio.save_manifest(summary, path)
    run.record("ingest", path)
    return summary


def stage_retrieve(run: Run, dataset: Dataset) -> dict[str, list[str]]:
    neighbors = retrieve_all(dataset, run.cfg.retrieval, jobs=run.cfg.jobs)
    path = run.out / "retrieval.tsv"
    lines = ["\t".join([rec.id] + neighbors[rec.id]) for rec in dataset]
    path.write_text("\n".join(lines) + "\n")
    run.record("retrieve", path)
    return neighbors


def read_retrieval(path, dataset: Dataset) -> dict[str, list[str]]:
    path = Path(path)
    neighbors: dict[str, list[str]] = {}
    for ln, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        query, rest = parts[0], [p for p in parts[1:] if p]
        dataset.get(query)  # raises on unknown ids
        for other in rest:
            dataset.get(other)
        if query in neighbors:
            raise ValidationError(f"retrieval table '{path}' line {ln}: "
                                  f"duplicate query '{query}'")
        neighbors[query] = rest
    return neighbors


def stage_pairs(run: Run, dataset: Dataset,
                neighbors: dict[str, list[str]]) -> list:
    records = enumerate_all_pairs(dataset, neighbors, run.cfg.pairs,
                                  run.cfg.filter)
    if not records:
        raise ValidationError("pair generation produced no pairs")
    path = run.out / "pairs.srp"
    write_pair_file(records, path)
    run.record("pairs", path)
    training = TrainingSet.from_records(records, dataset.features)
    summary_path = run.out / "pairs_summary.json"
    dataio.save_manifest(training.summary(), summary_path)
    run.record("pairs", summary_path)
    return records


def stage_train(run: Run, dataset: Dataset, records: list) -> RankerModel:
    training = TrainingSet.from_records(records, dataset.features)
    result = train_ranker(training, run.cfg.train)
    ckpt_path = run.out / "ranker.srm"
    dataio.save_checkpoint(result.model.to_checkpoint(), ckpt_path)
    run.record("train", ckpt_path)
    log_path = run.out / "train_log.txt"
    lines = [f"epoch {s.epoch}\ttrain_loss {s.train_loss:.6f}"
             f"\tval_loss {s.val_loss:.6f}" for s in result.history]
    lines.append(f"best epoch {result.model.epoch}\tval_loss "
                 f"{result.model.loss:.6f}")
    log_path.write_text("\n".join(lines) + "\n")
    run.record("train", log_path)
    return result.model


def stage_rank(run: Run, dataset: Dataset, neighbors: dict[str, list[str]],
               model: RankerModel, write_masks: bool = False) -> dict:
    results = {}
    lines = []
    mask_dir = run.out / "coarse"
    if write_masks:
        mask_dir.mkdir(exist_ok=True)
    for rec in dataset:
        table, q, selected, mask = localize(model, dataset, rec,
                                            neighbors.get(rec.id, []),
                                            run.cfg.filter)
        if not table.entries:
            log.warning("image '%s': no proposals to rank", rec.id)
        results[rec.id] = (q, selected)
        scores = ",".join(f"{e.proposal_id}:{e.wins}" for e in table.entries)
        boxes = ",".join(f"{e.proposal_id}:{e.box.x}:{e.box.y}:{e.box.w}"
                         f":{e.box.h}" for e in selected)
        lines.append(f"{rec.id}\t{q}\t{scores}\t{boxes}")
        if write_masks:
            write_path = mask_dir / f"{rec.id}.pgm"
            dataio.write_map(mask, write_path)
            run.record("rank", write_path)
    path = run.out / "rank.tsv"
    path.write_text("\n".join(lines) + "\n")
    run.record("rank", path)
    return results


def read_rank_table(path, dataset: Dataset) -> dict[str, list[tuple[str, BBox]]]:
    """Selected (proposal id, box) lists per image from ``rank.tsv``."""
    path = Path(path)
    selected: dict[str, list[tuple[str, BBox]]] = {}
    for ln, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValidationError(f"rank table '{path}' line {ln}: expected "
                                  f"4 tab-separated fields, got {len(parts)}")
        image_id, q_text, _, boxes_text = parts
        dataset.get(image_id)
        entries = []
        if boxes_text:
            for item in boxes_text.split(","):
                bits = item.split(":")
                if len(bits) != 5:
                    raise ValidationError(f"rank table '{path}' line {ln}: "
                                          f"bad box entry '{item}'")
                pid, x, y, w, h = bits
                entries.append((pid, BBox(int(x), int(y), int(w), int(h))))
        if int(q_text) != len(entries):
            raise ValidationError(f"rank table '{path}' line {ln}: q="
                                  f"{q_text} but {len(entries)} boxes listed")
        selected[image_id] = entries
    return selected


def stage_fuse(run: Run, dataset: Dataset,
               selected: dict[str, list[tuple[str, BBox]]]) -> list[Path]:
    final_dir = run.out / "final"
    final_dir.mkdir(exist_ok=True)
    conf_lines = []
    written = []
    for rec in dataset:
        boxes = [box for _, box in selected.get(rec.id, [])]
        maps = dataset.candidate_maps(rec)
        if boxes and maps:
            coarse = coarse_mask(rec.width, rec.height, boxes)
            conf, fused = fuse_image(maps, coarse, boxes, run.cfg.fusion)
            for i in range(conf.shape[0]):
                for j in range(conf.shape[1]):
                    conf_lines.append(f"{rec.id}\t{i}\t{j}\t{conf[i, j]:.6f}")
        else:
            log.warning("image '%s': nothing to fuse (boxes=%d, maps=%d)",
                        rec.id, len(boxes), len(maps))
            fused = np.zeros((rec.height, rec.width))
        out_path = final_dir / f"{rec.id}.pgm"
        dataio.write_map(fused, out_path)
        written.append(out_path)
    run.record("fuse", final_dir)
    conf_path = run.out / "confidence.tsv"
    conf_path.write_text("\n".join(conf_lines) + "\n")
    run.record("fuse", conf_path)
    return written


def stage_eval(run: Run, dataset: Dataset,
               selected: dict[str, list[tuple[str, BBox]]]) -> dict:
    preds, gts, ids = [], [], []
    selected_boxes, loc_masks = [], []
    for rec in dataset:
        gt = dataset.gt_mask(rec)
        if gt is None:
            continue
        pred_path = _stage_input(run.out / "final" / f"{rec.id}.pgm",
                                 "fuse")
        pred = dataio.read_map(pred_path)
        if pred.shape != gt.shape:
            raise ValidationError(f"image '{rec.id}': prediction shape "
                                  f"{pred.shape} does not match ground truth "
                                  f"{gt.shape}")
        preds.append(pred)
        gts.append(gt)
        ids.append(rec.id)
        selected_boxes.append([box for _, box in selected.get(rec.id, [])])
        loc_masks.append(gt)
    if not preds:
        raise ValidationError("eval: no images with ground truth")
    result = evaluate_dataset(preds, gts, run.cfg.metrics)
    precision, recall, f_loc = localization_prf(selected_boxes, loc_masks,
                                                run.cfg.metrics)
    report = {
        "images": len(preds),
        "map_metrics": result["mean"],
        "per_image": dict(zip(ids, result["per_image"])),
        "localization": {"precision": precision, "recall": recall,
                         "f_measure": f_loc},
    }
    json_path = run.out / "report.json"
    dataio.save_manifest(report, json_path)
    run.record("eval", json_path)

    rows = [("images", float(len(preds)))]
    rows += [(name, result["mean"][name]) for name in metrics.MAP_METRIC_NAMES]
    rows += [("locPrecision", precision), ("locRecall", recall),
             ("locFmeasure", f_loc)]
    width = max(len(name) for name, _ in rows)
    text = "\n".join(f"{name:<{width}}  {value:.4f}" for name, value in rows)
    txt_path = run.out / "report.txt"
    txt_path.write_text(text + "\n")
    run.record("eval", txt_path)
    print(text)
    return report


# ---------------------------------------------------------------------------
# command wiring


def _dataset_from_args(args) -> Dataset:
    if not args.manifest:
        raise ValidationError("--manifest is required for this command")
    return load_manifest(args.manifest)


def _stage_input(path, producing_stage: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing stage input '{path}'; run the "
                                f"'{producing_stage}' stage first")
    return path


def cmd_synth(args, cfg: RunConfig) -> None:
    run = Run("synth", cfg, Path(args.out))
    stage_synth(run)
    run.finish()


def cmd_ingest(args, cfg: RunConfig) -> None:
    run = Run("ingest", cfg, Path(args.out))
    summary = stage_ingest(run, _dataset_from_args(args))
    run.finish()
    print(json.dumps(summary, sort_keys=True))


def cmd_retrieve(args, cfg: RunConfig) -> None:
    run = Run("retrieve", cfg, Path(args.out))
    stage_retrieve(run, _dataset_from_args(args))
    run.finish()


def cmd_pairs(args, cfg: RunConfig) -> None:
    run = Run("pairs", cfg, Path(args.out))
    dataset = _dataset_from_args(args)
    neighbors = read_retrieval(
        _stage_input(args.retrieval or run.out / "retrieval.tsv", "retrieve"),
        dataset)
    stage_pairs(run, dataset, neighbors)
    run.finish()


def cmd_train(args, cfg: RunConfig) -> None:
    run = Run("train", cfg, Path(args.out))
    dataset = _dataset_from_args(args)
    records = read_pair_file(
        _stage_input(args.pairs or run.out / "pairs.srp", "pairs"))
    stage_train(run, dataset, records)
    run.finish()


def _load_model(path) -> RankerModel:
    return RankerModel.from_checkpoint(dataio.load_checkpoint(path))


def cmd_rank(args, cfg: RunConfig) -> None:
    run = Run("rank", cfg, Path(args.out))
    dataset = _dataset_from_args(args)
    neighbors = read_retrieval(
        _stage_input(args.retrieval or run.out / "retrieval.tsv", "retrieve"),
        dataset)
    model = _load_model(
        _stage_input(args.checkpoint or run.out / "ranker.srm", "train"))
    stage_rank(run, dataset, neighbors, model, write_masks=args.write_masks)
    run.finish()


def cmd_fuse(args, cfg: RunConfig) -> None:
    run = Run("fuse", cfg, Path(args.out))
    dataset = _dataset_from_args(args)
    selected = read_rank_table(
        _stage_input(args.rank or run.out / "rank.tsv", "rank"), dataset)
    stage_fuse(run, dataset, selected)
    run.finish()


def cmd_eval(args, cfg: RunConfig) -> None:
    run = Run("eval", cfg, Path(args.out))
    dataset = _dataset_from_args(args)
    selected = read_rank_table(
        _stage_input(args.rank or run.out / "rank.tsv", "rank"), dataset)
    stage_eval(run, dataset, selected)
    run.finish()


def cmd_pipeline(args, cfg: RunConfig) -> None:
    run = Run("pipeline", cfg, Path(args.out))
    dataset = _dataset_from_args(args)
    stage_ingest(run, dataset)
    neighbors = stage_retrieve(run, dataset)
    records = stage_pairs(run, dataset, neighbors)
    model = stage_train(run, dataset, records)
    stage_rank(run, dataset, neighbors, model, write_masks=args.write_masks)
    selected = read_rank_table(run.out / "rank.tsv", dataset)
    stage_fuse(run, dataset, selected)
    stage_eval(run, dataset, selected)
    run.finish()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semsal",
        description="Two-stage salient object detection: proposal ranking "
                    "plus confidence-weighted map fusion.")
    sub = parser.add_subparsers(dest="command", required=True)

    def _common(p, manifest=True):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override training/synthesis seed")
        p.add_argument("--jobs", type=int, default=None,
                       help="worker threads for parallel stages")
        p.add_argument("--set", action="append", default=[], metavar="S.K=V",
                       dest="overrides",
                       help="override one config value (section.key=value)")
        if manifest:
            p.add_argument("--manifest", default=None,
                           help="dataset manifest path")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _common(p, manifest=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="validate a manifest and summarize it")
    _common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("retrieve", help="build per-image neighbor lists")
    _common(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("pairs", help="generate labeled training pairs")
    _common(p)
    p.add_argument("--retrieval", default=None, help="retrieval table path")
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("train", help="train the pairwise ranker")
    _common(p)
    p.add_argument("--pairs", default=None, help="pair file path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rank", help="score proposals and select objects")
    _common(p)
    p.add_argument("--retrieval", default=None, help="retrieval table path")
    p.add_argument("--checkpoint", default=None, help="ranker checkpoint path")
    p.add_argument("--write-masks", action="store_true",
                   help="also write coarse object masks as PGM")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("fuse", help="fuse candidate maps inside selected boxes")
    _common(p)
    p.add_argument("--rank", default=None, help="rank table path")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="evaluate fused maps against ground truth")
    _common(p)
    p.add_argument("--rank", default=None, help="rank table path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run retrieve through eval")
    _common(p)
    p.add_argument("--write-masks", action="store_true",
                   help="also write coarse object masks as PGM")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_run_config(args.config, seed=args.seed, jobs=args.jobs,
                              overrides=args.overrides)
        args.func(args, cfg)
    except (FormatError, OSError) as exc:
        log.error("%s", exc)
        return 2
    except SemsalError as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
