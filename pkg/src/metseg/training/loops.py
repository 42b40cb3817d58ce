"""Detector and segmentor training loops."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from metseg.data.volumes import LabelVolume, MultiModalVolume, compose_regions
from metseg.exceptions import TrainingError
from metseg.models.checkpoint import Checkpoint, snapshot
from metseg.models.detector import DenseNet3D, DetectorConfig
from metseg.models.segmentor import ResidualUNet3D, SegmentorConfig
from metseg.patching import PatchCoord, PatchSample, PatchSpec, extract_patch, sample_crop_origin, sample_training_crops, tile_grid
from metseg.training.augment import AugmentationConfig, augment
from metseg.training.losses import LossConfig, bce_loss, downsample_target, total_segmentation_loss
from metseg.training.schedules import AdamConfig, PolySchedule, SGDConfig, WarmupCosineSchedule, set_lr

log = logging.getLogger(__name__)

Case = tuple[MultiModalVolume, LabelVolume]
GRAD_CLIP = 12.0


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    best_metric: float = -math.inf
    history: list[dict] = field(default_factory=list)

    def log(self, **row) -> None:
        self.history.append(row)

    def losses(self) -> list[float]:
        return [r["loss"] for r in self.history if "loss" in r]


def _rng_state(rng: np.random.Generator) -> dict:
    return {"numpy": rng.bit_generator.state, "torch": torch.get_rng_state()}


def _restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state["numpy"]
    torch.set_rng_state(state["torch"])
    return rng


def _check_finite(loss: torch.Tensor, **context) -> None:
    if not torch.isfinite(loss):
        details = ", ".join(f"{k}={v}" for k, v in context.items())
        raise TrainingError(f"non-finite loss {loss.item()} ({details})")


def _write_history(out_dir: Path | None, name: str, history: list[dict]) -> None:
    if out_dir is None or not history:
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    keys = sorted({k for row in history for k in row})
    with open(out_dir / f"{name}_log.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(history)


def _modalities(cases: Sequence[Case]) -> tuple[str, ...]:
    return tuple(m.value for m in cases[0][0].modalities)


def grid_patches(cases: Sequence[Case], spec: PatchSpec, min_fg: int = 1):
    """Every tile-grid patch of ``cases`` with its positivity label."""
    for vol, lab in cases:
        for coord in tile_grid(vol.spatial_shape, spec):
            region = extract_patch(lab.data, coord, spec.size)
            yield vol, coord, int(np.count_nonzero(region)) >= min_fg


def detector_patch_accuracy(
    model: DenseNet3D, cases: Sequence[Case], spec: PatchSpec, min_fg: int = 1, threshold: float = 0.5
) -> float:
    """Fraction of tile-grid patches classified correctly at ``threshold``."""
    from metseg.pipeline.inference import detector_patch_probs

    correct = total = 0
    for vol, lab in cases:
        coords = tile_grid(vol.spatial_shape, spec)
        truth = np.array([int(np.count_nonzero(extract_patch(lab.data, c, spec.size))) >= min_fg for c in coords])
        pred = detector_patch_probs(model, vol, coords, spec.size) >= threshold
        correct += int((pred == truth).sum())
        total += len(coords)
    return correct / total if total else float("nan")


def train_detector(
    cases: Sequence[Case],
    config: DetectorConfig,
    optim: AdamConfig = AdamConfig(),
    schedule: WarmupCosineSchedule | None = None,
    epochs: int = 400,
    batch_size: int = 2,
    crops_per_patient: int = 5,
    fg_fraction: float = 0.5,
    seed: int = 0,
    val_cases: Sequence[Case] | None = None,
    augmentation: AugmentationConfig | None = None,
    min_fg: int = 1,
    val_every: int = 1,
    stride: int | None = None,
    out_dir: str | Path | None = None,
    callback: Callable[[TrainState], None] | None = None,
) -> Checkpoint:
    """Train the patch detector with BCE on crop positivity.

    One epoch is a shuffled pass over ``crops_per_patient`` crops freshly
    drawn from every case. The returned checkpoint holds the weights with
    the best validation patch accuracy (``val_cases`` or, if absent, the
    training cases) and the full loss/lr history.
    """
    if not cases:
        raise TrainingError("detector training split is empty")
    schedule = schedule or WarmupCosineSchedule(max_epoch=epochs, warmup_epochs=min(10, epochs - 1))
    size = (config.patch_size,) * 3
    spec = PatchSpec(size, (stride or config.patch_size // 2,) * 3)
    val_cases = val_cases or cases
    out_dir = Path(out_dir) if out_dir is not None else None

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = DenseNet3D(config)
    optimizer = optim.build(model.parameters())
    state = TrainState()
    best: Checkpoint | None = None
    started = time.time()

    for epoch in range(epochs):
        state.epoch = epoch
        lr = schedule(epoch)
        set_lr(optimizer, lr)
        crops: list[PatchSample] = []
        for case in cases:
            crops += sample_training_crops(case, crops_per_patient, fg_fraction, rng, size, min_fg)
        if augmentation is not None:
            crops = [augment(c, augmentation, rng, min_fg) for c in crops]
        order = rng.permutation(len(crops))
        model.train()
        for i in range(0, len(order), batch_size):
            batch = [crops[j] for j in order[i : i + batch_size]]
            x = torch.from_numpy(np.stack([c.data for c in batch]).astype(np.float32))
            y = torch.tensor([float(c.positive) for c in batch])
            loss = bce_loss(torch.sigmoid(model(x)), y)
            _check_finite(loss, epoch=epoch, step=state.step, lr=lr)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            state.step += 1
            state.log(step=state.step, epoch=epoch, lr=lr, loss=float(loss.item()))
        if (epoch + 1) % val_every == 0 or epoch == epochs - 1:
            acc = detector_patch_accuracy(model, val_cases, spec, min_fg)
            state.log(epoch=epoch, val_accuracy=acc)
            log.info("detector epoch %d lr %.3g val acc %.4f", epoch, lr, acc)
            if acc >= state.best_metric:
                state.best_metric = acc
                best = snapshot(
                    "detector", model,
                    modalities=_modalities(cases),
                    optimizer_state=optimizer.state_dict(),
                    position={"epoch": epoch, "step": state.step},
                    rng_state=_rng_state(rng),
                    extra={"val_accuracy": acc},
                )
        if callback is not None:
            callback(state)

    assert best is not None
    best.history = list(state.history)
    best.extra.update(best_val_accuracy=state.best_metric, wall_clock_s=time.time() - started)
    _write_history(out_dir, "detector", state.history)
    if out_dir is not None:
        best.save(out_dir / "detector.pt")
    return best


def _segmentor_batch(cases, size, batch_size, fg_fraction, rng, augmentation):
    n_fg = math.ceil(fg_fraction * batch_size)
    images, targets = [], []
    for b in range(batch_size):
        vol, lab = cases[int(rng.integers(len(cases)))]
        coord = PatchCoord(sample_crop_origin(lab.data, size, b < n_fg, rng))
        sample = PatchSample(extract_patch(vol.data, coord, size), extract_patch(lab.data, coord, size), False, coord.origin)
        if augmentation is not None:
            sample = augment(sample, augmentation, rng)
        images.append(sample.data)
        targets.append(compose_regions(sample.label_patch).stack())
    return (
        torch.from_numpy(np.stack(images).astype(np.float32)),
        torch.from_numpy(np.stack(targets)),
    )


def train_segmentor(
    cases: Sequence[Case],
    config: SegmentorConfig,
    optim: SGDConfig = SGDConfig(),
    schedule: PolySchedule | None = None,
    iterations: int = 250_000,
    batch_size: int = 2,
    iters_per_epoch: int = 250,
    fg_fraction: float = 0.5,
    seed: int = 0,
    loss_cfg: LossConfig = LossConfig(),
    augmentation: AugmentationConfig | None = None,
    resume: Checkpoint | None = None,
    stop_at: int | None = None,
    val_cases: Sequence[Case] | None = None,
    out_dir: str | Path | None = None,
    callback: Callable[[TrainState], None] | None = None,
) -> Checkpoint:
    """Train the region segmentor with deep-supervised Dice + BCE.

    The schedule advances once per ``iters_per_epoch`` iterations. With
    ``val_cases`` the checkpoint with the best mean lesion-wise WT Dice
    (checked at epoch boundaries) is returned, otherwise the final one.
    ``stop_at`` ends early at that iteration; passing the result back as
    ``resume`` continues the identical trajectory.
    """
    if not cases:
        raise TrainingError("segmentor training split is empty")
    max_epoch = math.ceil(iterations / iters_per_epoch)
    schedule = schedule or PolySchedule(base_lr=optim.base_lr, max_epoch=max_epoch)
    size = (config.patch_size,) * 3
    out_dir = Path(out_dir) if out_dir is not None else None

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = ResidualUNet3D(config)
    optimizer = optim.build(model.parameters())
    state = TrainState()
    if resume is not None:
        model.load_state_dict(resume.model_state)
        optimizer.load_state_dict(resume.optimizer_state)
        rng = _restore_rng(resume.rng_state)
        state.step = resume.position.get("iteration", 0)
        state.history = list(resume.history)
        state.best_metric = resume.extra.get("best_metric", -math.inf)
    best: Checkpoint | None = None
    end = iterations if stop_at is None else min(stop_at, iterations)
    started = time.time()

    def checkpoint_now() -> Checkpoint:
        return snapshot(
            "segmentor", model,
            modalities=_modalities(cases),
            optimizer_state=optimizer.state_dict(),
            position={"iteration": state.step, "epoch": state.epoch},
            rng_state=_rng_state(rng),
            history=state.history,
            extra={"best_metric": state.best_metric},
        )

    model.train()
    while state.step < end:
        it = state.step
        state.epoch = it // iters_per_epoch
        lr = schedule(state.epoch)
        set_lr(optimizer, lr)
        x, target = _segmentor_batch(cases, size, batch_size, fg_fraction, rng, augmentation)
        outputs = model(x)
        heads = [(torch.sigmoid(o), downsample_target(target, o.shape[2:])) for o in outputs]
        loss = total_segmentation_loss(heads, loss_cfg)
        _check_finite(loss, iteration=it, epoch=state.epoch, lr=lr)
        optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), GRAD_CLIP)
        optimizer.step()
        state.step += 1
        state.log(step=state.step, epoch=state.epoch, lr=lr, loss=float(loss.item()))
        at_boundary = state.step % iters_per_epoch == 0 or state.step == iterations
        if val_cases and at_boundary:
            score = _validate_segmentor(model, val_cases)
            state.log(step=state.step, epoch=state.epoch, val_lesionwise_dsc_wt=score)
            if score >= state.best_metric:
                state.best_metric = score
                best = checkpoint_now()
            model.train()
        if callback is not None:
            callback(state)

    final = checkpoint_now()
    final.extra["wall_clock_s"] = time.time() - started
    result = best if (best is not None and state.step >= iterations) else final
    result.history = list(state.history)
    _write_history(out_dir, "segmentor", state.history)
    if out_dir is not None:
        result.save(out_dir / "segmentor.pt")
    return result


def _validate_segmentor(model: ResidualUNet3D, cases: Sequence[Case]) -> float:
    from metseg.evaluation import evaluate_case
    from metseg.pipeline.inference import segment_volume

    spec = PatchSpec((model.config.patch_size,) * 3, (model.config.patch_size // 2,) * 3)
    scores = [
        evaluate_case(segment_volume(model, vol, spec), lab, include_labels=False).value("WT", "lesionwise_dsc")
        for vol, lab in cases
    ]
    return float(np.mean(scores))
