"""Command-line entry point: ``metseg <subcommand> [--config FILE] [overrides]``.

Every subcommand reads a flat YAML/JSON config, applies ``--set key=value``
and dedicated flag overrides on top, and writes a JSON manifest next to
its outputs. Failures print one JSON object on stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

import yaml

from metseg.data.dataset import discover_dataset, load_image
from metseg.data.nifti import find_nifti, load_label_file, save_label_volume, strip_nifti_suffix
from metseg.data.stats import dataset_stats, save_stats
from metseg.data.synthetic import SyntheticSpec, generate_synthetic, write_synthetic_dataset
from metseg.data.volumes import normalize, parse_modalities
from metseg.evaluation.report import AggregateReport, aggregate, evaluate_case, run_means
from metseg.exceptions import ConfigError, DataError, MetsegError
from metseg.models.checkpoint import Checkpoint
from metseg.pipeline.ablation import AblationSpec, run_ablation
from metseg.pipeline.config import PipelineConfig
from metseg.pipeline.inference import run_gated_inference
from metseg.pipeline.manifest import RunManifest, now, unique_path
from metseg.pipeline.runner import INDEX_FILE, available_modalities, load_cases
from metseg.pipeline.tables import LAYOUTS, render_tables
from metseg.training.loops import train_detector, train_segmentor

log = logging.getLogger("metseg")

EXIT_ERROR = 1
EXIT_CONFIG = 2


# -- config handling ----------------------------------------------------


def _parse_set(items: Sequence[str]) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = yaml.safe_load(value)
    return out


def load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    cfg = cfg.from_dict({**cfg.to_dict(), **_parse_set(args.set)})
    flags = {
        "data_root": getattr(args, "data_root", None),
        "out_dir": getattr(args, "out", None),
        "modalities": getattr(args, "modalities", None),
        "detector_ckpt": getattr(args, "detector", None),
        "segmentor_ckpt": getattr(args, "segmentor", None),
        "det_threshold": getattr(args, "threshold", None),
    }
    seeds = getattr(args, "seeds", None)
    if seeds is not None:
        flags["seeds"] = tuple(range(seeds)) if isinstance(seeds, int) else seeds
    return cfg.override(**flags)


def _write_manifest(cfg: PipelineConfig, command: str, out_dir: Path, started: str, **fields) -> Path:
    manifest = RunManifest(command=command, config=cfg.to_dict(), started=started, finished=now(), **fields)
    return manifest.write(unique_path(out_dir, f"manifest-{command}"))


def _dump(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, default=str))
    return path


# -- subcommands --------------------------------------------------------


def cmd_prepare(args) -> int:
    cfg = load_config(args)
    started = now()
    if cfg.data_root is None:
        raise ConfigError("prepare needs --data-root (or data_root in the config)")
    index = discover_dataset(cfg.data_root, parse_modalities(cfg.modalities), cfg.split)
    out = Path(cfg.out_dir)
    index_path = index.save(Path(args.index) if args.index else Path(cfg.data_root) / INDEX_FILE)
    stats = dataset_stats(index, cfg.match_config())
    save_stats(stats, out / "stats.json", out / "lesion_counts.svg")
    _write_manifest(
        cfg, "prepare", out, started,
        artifacts={"index": str(index_path), "stats": str(out / "stats.json"), "plot": str(out / "lesion_counts.svg")},
        metrics={"n_cases": len(index.cases), "splits": {k: len(v) for k, v in index.splits.items()},
                 "failures": len(stats["failures"])},
    )
    print(f"indexed {len(index.cases)} cases -> {index_path}")
    return 0


def cmd_synth(args) -> int:
    spec = SyntheticSpec(n_cases=args.n_cases, shape=tuple(args.shape), seed=args.seed)
    root = write_synthetic_dataset(args.out, generate_synthetic(spec))
    print(f"wrote {spec.n_cases} synthetic cases -> {root}")
    return 0


def _train_inputs(cfg: PipelineConfig):
    train = load_cases(cfg, "train")
    if not train:
        raise DataError("training split is empty")
    val = load_cases(cfg, "val") if cfg.data_root else None
    return train, (val or None)


def cmd_train_detector(args) -> int:
    cfg = load_config(args)
    started = now()
    seed = cfg.seeds[0]
    train, val = _train_inputs(cfg)
    out = Path(cfg.out_dir)
    ckpt = train_detector(
        train, cfg.detector_config(), cfg.adam(), cfg.detector_schedule(),
        epochs=cfg.det_epochs, batch_size=cfg.det_batch_size,
        crops_per_patient=cfg.det_crops_per_patient, fg_fraction=cfg.fg_fraction,
        seed=seed, val_cases=val, min_fg=cfg.min_fg, val_every=cfg.det_val_every,
        stride=cfg.stride, augmentation=cfg.augmentation_config(), out_dir=out,
    )
    _write_manifest(
        cfg, "train-detector", out, started, seed=seed,
        artifacts={"checkpoint": str(out / "detector.pt"), "log": str(out / "detector_log.csv")},
        metrics={k: v for k, v in ckpt.extra.items()},
    )
    print(f"detector best val accuracy {ckpt.extra['best_val_accuracy']:.4f} -> {out / 'detector.pt'}")
    return 0


def cmd_train_segmentor(args) -> int:
    cfg = load_config(args)
    started = now()
    seed = cfg.seeds[0]
    train, val = _train_inputs(cfg)
    out = Path(cfg.out_dir)
    resume = Checkpoint.load(args.resume) if args.resume else None
    ckpt = train_segmentor(
        train, cfg.segmentor_config(), cfg.sgd(), cfg.segmentor_schedule(),
        iterations=cfg.seg_iterations, batch_size=cfg.seg_batch_size,
        iters_per_epoch=cfg.seg_iters_per_epoch, fg_fraction=cfg.fg_fraction,
        seed=seed, augmentation=cfg.augmentation_config(), resume=resume,
        val_cases=val, out_dir=out,
    )
    _write_manifest(
        cfg, "train-segmentor", out, started, seed=seed,
        artifacts={"checkpoint": str(out / "segmentor.pt"), "log": str(out / "segmentor_log.csv")},
        metrics={k: v for k, v in ckpt.extra.items()},
    )
    print(f"segmentor trained for {ckpt.position.get('iteration')} iterations -> {out / 'segmentor.pt'}")
    return 0


def _load_checkpoint(path: str | None, kind: str) -> Checkpoint:
    if not path:
        raise ConfigError(f"no {kind} checkpoint given (--{kind} or {kind}_ckpt in the config)")
    if not Path(path).is_file():
        raise ConfigError(f"{kind} checkpoint not found: {path}")
    ckpt = Checkpoint.load(path)
    if ckpt.kind != kind:
        raise ConfigError(f"{path} holds a {ckpt.kind} checkpoint, expected {kind}")
    return ckpt


def cmd_infer(args) -> int:
    cfg = load_config(args)
    started = now()
    det = _load_checkpoint(cfg.detector_ckpt, "detector")
    seg = _load_checkpoint(cfg.segmentor_ckpt, "segmentor")
    mods = parse_modalities(cfg.modalities)
    src = Path(args.input)
    index = discover_dataset(src, mods, (1.0, 0.0, 0.0), label_suffix=None)
    out = Path(cfg.out_dir)
    settings = cfg.gate_settings()
    costs, preds = {}, {}
    for entry in index.cases:
        vol = load_image(entry, mods)
        result = run_gated_inference(normalize(vol), det, seg, settings)
        path = save_label_volume(out / f"{entry.case_id}-seg.nii.gz", result.labels)
        preds[entry.case_id] = str(path)
        costs[entry.case_id] = result.cost.to_dict()
    _dump(out / "cost.json", costs)
    _write_manifest(
        cfg, "infer", out, started,
        artifacts={"predictions": preds, "cost": str(out / "cost.json"),
                   "detector": str(cfg.detector_ckpt), "segmentor": str(cfg.segmentor_ckpt)},
        metrics={"cases": len(preds)},
    )
    print(f"segmented {len(preds)} cases -> {out}")
    return 0


def _label_files(directory: Path) -> dict[str, Path]:
    """Case id -> label file for a flat directory or a ``<id>/<id>-seg`` layout."""
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    found = {}
    for p in sorted(directory.iterdir()):
        if p.is_dir():
            f = find_nifti(p, f"{p.name}-seg")
            if f is not None:
                found[p.name] = f
        elif strip_nifti_suffix(p.name) != p.name:
            stem = strip_nifti_suffix(p.name)
            found[stem[:-4] if stem.endswith("-seg") else stem] = p
    if not found:
        raise DataError(f"no label volumes found under {directory}")
    return found


def cmd_evaluate(args) -> int:
    cfg = load_config(args)
    started = now()
    preds, gts = _label_files(Path(args.pred)), _label_files(Path(args.gt))
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise DataError(f"no prediction for {len(missing)} case(s): {', '.join(missing[:10])}")
    mcfg = cfg.match_config()
    reports = [
        evaluate_case(load_label_file(preds[cid], cid), load_label_file(gts[cid], cid), mcfg)
        for cid in sorted(gts)
    ]
    agg = aggregate([reports])
    out = Path(args.out)
    _dump(out, {
        "per_case": [r.to_dict() for r in reports],
        "run_means": run_means(reports),
        "aggregate": agg.to_dict(),
        "match_config": asdict(mcfg),
    })
    _write_manifest(cfg, "evaluate", out.parent, started, artifacts={"report": str(out)},
                    metrics={"n_cases": len(reports), "mean": agg.mean})
    print(f"evaluated {len(reports)} cases -> {out}")
    return 0


def _write_tables(reports, out: Path, stem: str, layout: str) -> dict[str, str]:
    paths = {}
    for fmt, ext in (("text", "txt"), ("csv", "csv"), ("markdown", "md")):
        p = out / f"{stem}.{ext}"
        p.write_text(render_tables(reports, fmt, layout))
        paths[fmt] = str(p)
    return paths


def cmd_ablate(args) -> int:
    cfg = load_config(args)
    started = now()
    subsets = tuple(parse_modalities(s) for s in args.subset) if args.subset else ()
    if not subsets and args.modalities:
        subsets = (parse_modalities(args.modalities),)
    spec = AblationSpec(cfg, subsets, args.det_epochs, args.seg_iterations, available_modalities(cfg))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    result = run_ablation(spec, out_dir=out / "runs")
    _dump(out / "ablation.json", result.to_dict())
    tables = _write_tables(result.reports, out, "ablation", "ablation")
    _write_manifest(
        cfg, "ablate", out, started,
        artifacts={"results": str(out / "ablation.json"), **tables},
        metrics={"subsets": len(spec.subsets), "failures": result.failures, "best": result.best,
                 "wall_clock_s": time.time() - t0},
    )
    print(render_tables(result.reports, "text", "ablation"), end="")
    if result.failures:
        print(f"{len(result.failures)} subset(s) failed: {', '.join(result.failures)}", file=sys.stderr)
    return 0 if len(result.failures) < len(spec.subsets) else EXIT_ERROR


def _reports_from_file(path: Path) -> dict[str, AggregateReport | None]:
    data = json.loads(path.read_text())
    if "reports" in data:
        return {k: (AggregateReport.from_dict(v) if v else None) for k, v in data["reports"].items()}
    if "aggregate" in data:
        return {path.stem: AggregateReport.from_dict(data["aggregate"])}
    if "mean" in data and "std" in data:
        return {path.stem: AggregateReport.from_dict(data)}
    raise DataError(f"{path}: not an ablation or evaluation report")


def cmd_report(args) -> int:
    reports: dict[str, AggregateReport | None] = {}
    for p in args.inputs:
        reports.update(_reports_from_file(Path(p)))
    text = render_tables(reports, args.format, args.layout)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 0


# -- parser -------------------------------------------------------------


def _common(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--config", help="YAML or JSON run config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key (repeatable)")
    p.add_argument("--out", help="output directory (config: out_dir)")
    if data:
        p.add_argument("--data-root", help="dataset root; omit to use synthetic data")
        p.add_argument("--modalities", help="modality subset, e.g. t1c,t1,f")


def _shape(text: str) -> list[int]:
    parts = [int(s) for s in text.replace("x", ",").split(",")]
    if len(parts) == 1:
        parts *= 3
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("shape must be N or D,H,W")
    return parts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metseg", description="Two-stage brain metastasis segmentation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("prepare", help="index a dataset and write lesion-count statistics")
    _common(p)
    p.add_argument("--index", help="where to write the index (default: <data-root>/index.json)")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="write a synthetic NIfTI dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-cases", type=int, default=8)
    p.add_argument("--shape", type=_shape, default=[48, 48, 48])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    for name, func, helptext in (
        ("train-detector", cmd_train_detector, "train the patch detector"),
        ("train-segmentor", cmd_train_segmentor, "train the region segmentor"),
    ):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--seed", dest="seeds", type=lambda s: (int(s),), help="training seed")
        if name == "train-segmentor":
            p.add_argument("--resume", help="checkpoint to continue from")
        p.set_defaults(func=func)

    p = sub.add_parser("infer", help="gated two-stage inference on a directory of cases")
    _common(p, data=False)
    p.add_argument("--input", required=True, help="directory of <id>/<id>-<modality>.nii.gz cases")
    p.add_argument("--modalities")
    p.add_argument("--detector", help="detector checkpoint")
    p.add_argument("--segmentor", help="segmentor checkpoint")
    p.add_argument("--threshold", type=float, help="detector threshold")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="score predicted label volumes against ground truth")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="modality-subset ablation")
    _common(p)
    p.add_argument("--subset", action="append", help="one subset to run (repeatable); default all")
    p.add_argument("--seeds", type=int, help="number of seeds (0..N-1)")
    p.add_argument("--det-epochs", type=int)
    p.add_argument("--seg-iterations", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="render saved reports as tables")
    p.add_argument("inputs", nargs="+", help="ablation.json or evaluate report files")
    p.add_argument("--format", choices=("text", "csv", "markdown"), default="text")
    p.add_argument("--layout", choices=sorted(LAYOUTS), default="ablation")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, FileExistsError) as exc:
        _error(args.command, exc)
        return EXIT_CONFIG
    except (MetsegError, ValueError, OSError) as exc:
        _error(args.command, exc)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - last resort, still structured
        log.debug("unhandled error", exc_info=True)
        _error(args.command, exc)
        return EXIT_ERROR


def _error(command: str, exc: BaseException) -> None:
    print(json.dumps({"command": command, "error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
