"""Acceptance checks, one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
Tolerances are pinned below; C7, C9 and C10 train networks and are marked slow.
"""
import math
import sys
import time

import mpmath
import numpy as np
import pytest
import torch

from metseg.data import SyntheticSpec, compose_regions, generate_synthetic, normalize
from metseg.evaluation import MatchConfig, connected_components, evaluate_masks, run_means
from metseg.models import (
    DenseNet3D,
    DetectorConfig,
    ResidualUNet3D,
    estimate_flops,
    reference_unet_config,
    regions_to_labels,
)
from metseg.patching import tile_grid
from metseg.pipeline import (
    AblationSpec,
    GateSettings,
    PipelineConfig,
    cost_report,
    enumerate_subsets,
    evaluate_two_stage,
    load_cases,
    render_tables,
    run_ablation,
    run_gated_inference,
    sliding_window_regions,
    train_two_stage,
)
from metseg.training import PolySchedule, WarmupCosineSchedule, bce_loss, dice_loss, poly_lr, warmup_cosine_lr

from oracles import oracle_lesionwise, perturb, random_blob_volume

# pinned tolerances
C1_CASES, C1_DSC_TOL, C1_HD_TOL, C1_SECONDS = 200, 1e-9, 1e-6, 60.0
C3_EPOCHS, C3_REL = 1000, 1e-12
C4_REL = 1e-4
C5_VOLUMES = 1000
C6_CASES = 3
C7_DET_ACC, C7_DET_SECONDS, C7_WT_DSC, C7_PIPE_SECONDS = 0.95, 15 * 60, 0.8, 2 * 3600
C8_DET_G, C8_REF_G, C8_REL, C8_REDUCTION, C8_RED_TOL = 7.0, 478.0, 0.25, 0.85, 0.03
C10_STEPS = 100


@pytest.fixture
def verdict(capsys):
    def emit(criterion: str, ok: bool, detail: str = ""):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {criterion}: {detail}")
        assert ok, f"{criterion}: {detail}"
    return emit


def test_c1_lesionwise_oracle(verdict):
    cfg = MatchConfig()
    rng = np.random.default_rng(2024)
    pairs = []
    for i in range(C1_CASES):
        gt = random_blob_volume(rng, (32, 32, 32), 6, (1, 5))
        # alternate a perturbed copy with an unrelated volume
        pred = perturb(rng, gt) if i % 2 == 0 else random_blob_volume(rng, (32, 32, 32), 6, (1, 5))
        pairs.append((pred, gt))

    started = time.perf_counter()
    ours = [evaluate_masks(p, g, cfg) for p, g in pairs]
    elapsed = time.perf_counter() - started

    bad = []
    for i, ((p, g), o) in enumerate(zip(pairs, ours)):
        ref = oracle_lesionwise(p, g)
        if (o["tp"], o["fn"], o["fp"]) != (ref["tp"], ref["fn"], ref["fp"]) \
                or abs(o["lesionwise_dsc"] - ref["dsc"]) > C1_DSC_TOL \
                or abs(o["lesionwise_hd95"] - ref["hd95"]) > C1_HD_TOL:
            bad.append(i)
    ok = not bad and elapsed <= C1_SECONDS
    verdict("C1 lesion-wise oracle equivalence", ok,
            f"{C1_CASES - len(bad)}/{C1_CASES} cases agree, module runtime {elapsed:.1f}s (limit {C1_SECONDS:.0f}s)")


def test_c2_edge_cases(verdict):
    cfg = MatchConfig()
    shape = (12, 12, 12)
    empty = np.zeros(shape, bool)
    blob = empty.copy()
    blob[3:6, 3:6, 3:6] = True
    speck = empty.copy()
    speck[9, 9, 9] = True
    diag = empty.copy()
    diag[1, 1, 1] = diag[2, 2, 2] = True

    rows = [
        ("both empty", evaluate_masks(empty, empty, cfg),
         dict(legacy_dsc=1.0, legacy_hd95=0.0, lesionwise_dsc=1.0, lesionwise_hd95=0.0)),
        ("pred empty", evaluate_masks(empty, blob, cfg),
         dict(legacy_dsc=0.0, legacy_hd95=374.0, lesionwise_dsc=0.0, lesionwise_hd95=374.0, fn=1)),
        ("gt empty", evaluate_masks(blob, empty, cfg),
         dict(legacy_dsc=0.0, legacy_hd95=374.0, lesionwise_dsc=0.0, lesionwise_hd95=374.0, fp=1)),
        ("sub-min-size gt only", evaluate_masks(empty, speck, cfg),
         dict(legacy_dsc=0.0, lesionwise_dsc=1.0, lesionwise_hd95=0.0, tp=0, fn=0, fp=0)),
        ("diagonal pair kept at 26", evaluate_masks(diag, diag, cfg),
         dict(lesionwise_dsc=1.0, lesionwise_hd95=0.0, tp=1)),
    ]
    failures = [name for name, got, want in rows if any(got[k] != v for k, v in want.items())]
    comps = (connected_components(diag, 26).count, connected_components(diag, 6).count)
    if comps != (1, 2):
        failures.append("diagonal connectivity")
    if evaluate_masks(diag, diag, MatchConfig(connectivity=6))["tp"] != 0:
        failures.append("diagonal pair filtered at 6")
    verdict("C2 metric edge cases", not failures, "all conventions hold" if not failures else f"wrong: {failures}")


def _poly_ref(e, base, n, k):
    return base * (mpmath.mpf(n - e) / n) ** mpmath.mpf(k)


def _cosine_ref(e, start, peak, w, n):
    if e < w:
        return start + (peak - start) * mpmath.mpf(e) / w
    return peak * (1 + mpmath.cos(mpmath.pi * mpmath.mpf(e - w) / (n - w))) / 2


def test_c3_schedules(verdict):
    mpmath.mp.dps = 50
    poly = PolySchedule(base_lr=0.01, max_epoch=C3_EPOCHS)
    wc = WarmupCosineSchedule(max_epoch=C3_EPOCHS)
    worst = 0.0
    for e in range(C3_EPOCHS + 1):
        for got, ref in ((poly_lr(e, poly), _poly_ref(e, mpmath.mpf("0.01"), C3_EPOCHS, "0.9")),
                         (warmup_cosine_lr(e, wc), _cosine_ref(e, mpmath.mpf("1e-6"), mpmath.mpf("4e-4"), 10, C3_EPOCHS))):
            if ref == 0:
                # epoch max_epoch: exactly zero, cosine form leaves ~1e-36
                worst = max(worst, 0.0 if abs(got) < 1e-30 else math.inf)
            else:
                worst = max(worst, float(abs(got - ref) / abs(ref)))
    ends = warmup_cosine_lr(0, wc) == 1e-6 and warmup_cosine_lr(10, wc) == 4e-4
    verdict("C3 schedule closed forms", worst <= C3_REL and ends,
            f"max relative error {worst:.2e} over {C3_EPOCHS + 1} epochs; start 1e-6 and warm-up end 4e-4 exact: {ends}")


def _fd_rel_error(fn, p, t, h=1e-6):
    p = p.clone().requires_grad_()
    fn(p, t).backward()
    analytic = p.grad.detach().reshape(-1)
    flat = p.detach().reshape(-1)
    numeric = torch.empty_like(flat)
    for i in range(flat.numel()):
        up, dn = flat.clone(), flat.clone()
        up[i] += h
        dn[i] -= h
        numeric[i] = (fn(up.view_as(p), t) - fn(dn.view_as(p), t)) / (2 * h)
    return ((analytic - numeric).norm() / numeric.norm()).item()


def test_c4_losses(verdict):
    eps = 1e-5
    t = torch.zeros(1, 4, 4, 4, dtype=torch.float64)
    t.view(-1)[:8] = 1
    half = torch.zeros_like(t)
    half.view(-1)[4:12] = 1
    examples = [
        abs(dice_loss(t, t).item()) <= 1e-6,
        abs(dice_loss(half, t, eps).item() - (1 - (8 + eps) / (16 + eps))) <= 1e-12,
        abs(dice_loss(torch.zeros_like(t), torch.zeros_like(t)).item()) <= 1e-7,
        abs(bce_loss(torch.full((10,), 0.5, dtype=torch.float64), torch.ones(10, dtype=torch.float64)).item() - math.log(2)) <= 1e-12,
        abs(bce_loss(torch.zeros(1, dtype=torch.float64), torch.ones(1, dtype=torch.float64)).item() + math.log(1e-7)) <= 1e-9,
    ]
    g = torch.Generator().manual_seed(0)
    errs = []
    for _ in range(3):
        p = torch.rand(2, 3, 3, 3, 3, dtype=torch.float64, generator=g).clamp(0.05, 0.95)
        y = (torch.rand(2, 3, 3, 3, 3, dtype=torch.float64, generator=g) > 0.5).double()
        errs += [_fd_rel_error(dice_loss, p, y), _fd_rel_error(bce_loss, p, y)]
    ok = all(examples) and max(errs) <= C4_REL
    verdict("C4 loss correctness", ok,
            f"{sum(examples)}/{len(examples)} closed forms, worst finite-difference relative error {max(errs):.1e}")


def test_c5_region_round_trip(verdict):
    rng = np.random.default_rng(5)
    bad = 0
    for i in range(C5_VOLUMES):
        shape = (3, *rng.integers(2, 9, size=3))
        # half the volumes sit on a grid that hits the 0.5 threshold exactly
        p = rng.random(shape) if i % 2 else rng.integers(0, 5, size=shape) / 4.0
        regions = compose_regions(regions_to_labels(p))
        wt = p[0] >= 0.5
        tc = np.logical_and(wt, p[1] >= 0.5)
        et = np.logical_and(tc, p[2] >= 0.5)
        nested = not (regions.et & ~regions.tc).any() and not (regions.tc & ~regions.wt).any()
        same = (regions.wt == wt).all() and (regions.tc == tc).all() and (regions.et == et).all()
        bad += not (nested and same)
    verdict("C5 region round trip", bad == 0, f"{C5_VOLUMES - bad}/{C5_VOLUMES} volumes nested and equal to gated thresholding")


def test_c6_gating_invariants(verdict, desk_config):
    cases = generate_synthetic(SyntheticSpec(n_cases=C6_CASES, shape=(32, 32, 32), seed=6))
    cases = [(normalize(v.select(desk_config.modalities)), lab) for v, lab in cases]
    torch.manual_seed(0)
    det, seg = DenseNet3D(desk_config.detector_config()), ResidualUNet3D(desk_config.segmentor_config())
    spec = desk_config.patch_spec()
    transparent = silent = counted = 0
    runs = 0
    for vol, _ in cases:
        full = run_gated_inference(vol, det, seg, GateSettings(spec=spec, threshold=0.0))
        ungated = sliding_window_regions(seg, vol, spec)
        transparent += bool(np.array_equal(full.region_probs, ungated)
                            and np.array_equal(full.labels.data, regions_to_labels(ungated).data)
                            and full.cost.flagged_patches == len(tile_grid(vol.spatial_shape, spec)))
        none = run_gated_inference(vol, det, seg, GateSettings(spec=spec, threshold=1.0))
        silent += not none.labels.data.any()
        mid = run_gated_inference(vol, det, seg, GateSettings(spec=spec, threshold=0.5))
        for r in (full, none, mid):
            runs += 1
            counted += r.cost.segmentor_invocations == r.cost.flagged_patches == len(r.flagged)
    ok = transparent == silent == C6_CASES and counted == runs
    verdict("C6 gating invariants", ok,
            f"theta=0 bitwise {transparent}/{C6_CASES}, theta=1 background {silent}/{C6_CASES}, "
            f"invocations == flagged in {counted}/{runs} runs")


@pytest.mark.slow
def test_c7_desk_overfit(verdict, desk_config):
    cases = load_cases(desk_config)
    started = time.perf_counter()
    det, seg = train_two_stage(desk_config, cases, seed=desk_config.seeds[0])
    reports, _ = evaluate_two_stage(desk_config, det, seg, cases, include_labels=False)
    total = time.perf_counter() - started
    acc, det_s = det.extra["best_val_accuracy"], det.extra["wall_clock_s"]
    wt = run_means(reports)["WT"]["lesionwise_dsc"]
    ok = acc >= C7_DET_ACC and det_s <= C7_DET_SECONDS and wt >= C7_WT_DSC and total <= C7_PIPE_SECONDS
    verdict("C7 desk-scale overfit", ok,
            f"{len(cases)} cases at {desk_config.synth_shape[0]}^3: detector accuracy {acc:.3f} in {det_s:.0f}s, "
            f"training-set lesion-wise WT DSC {wt:.3f}, pipeline {total:.0f}s")


def test_c8_flops(verdict):
    det_g = estimate_flops(DetectorConfig(), (3, 64, 64, 64))
    ref_cfg = reference_unet_config()
    ref_g = estimate_flops(ref_cfg, (4, 128, 128, 128))
    seg_g = estimate_flops(PipelineConfig().segmentor_config(), (3, 64, 64, 64))
    # one flagged window: detector + segmentor on it, against one reference window
    red = cost_report(1, 1, det_g, seg_g, ref_g).reduction
    ok = (abs(det_g - C8_DET_G) <= C8_REL * C8_DET_G and abs(ref_g - C8_REF_G) <= C8_REL * C8_REF_G
          and abs(red - C8_REDUCTION) <= C8_RED_TOL)
    verdict("C8 FLOP estimator", ok,
            f"detector {det_g:.2f} G (target 7 +-25%), reference U-Net {ref_g:.2f} G (target 478 +-25%), "
            f"segmentor {seg_g:.2f} G, reduction {red:.3f} (target 0.85 +-0.03)")


@pytest.mark.slow
def test_c9_ablation(verdict, desk_config, tmp_path):
    cfg = desk_config.override(synth_cases=2, synth_shape=(32, 32, 32), ablation_det_epochs=1,
                               ablation_seg_iterations=2, det_val_every=1, seg_iters_per_epoch=2)
    subsets = enumerate_subsets()
    result = run_ablation(AblationSpec(cfg), out_dir=tmp_path)
    table = render_tables(result.reports, "csv").splitlines()
    ok = (len(subsets) == 15 == len(set(map(frozenset, subsets))) and not result.failures
          and len(result.reports) == 15 and len(table) == 16 and len(table[0].split(",")) == 11)
    verdict("C9 ablation harness", ok,
            f"{len(subsets)} subsets, {len(result.reports) - len(result.failures)} ran, "
            f"{len(result.failures)} failed, table {len(table) - 1} rows x {len(table[0].split(','))} columns")


def _seeded_run(cfg):
    cases = load_cases(cfg)
    det, seg = train_two_stage(cfg, cases, seed=0)
    reports, costs = evaluate_two_stage(cfg, det, seg, cases, include_labels=False)
    det_losses = [r["loss"] for r in det.history if "loss" in r]
    seg_losses = [r["loss"] for r in seg.history if "loss" in r]
    return det_losses, seg_losses, [r.to_dict() for r in reports], [c.to_dict() for c in costs]


@pytest.mark.slow
def test_c10_determinism(verdict, desk_config):
    # desk layout, budget cut to just past 100 optimizer steps per network
    steps_per_epoch = desk_config.synth_cases * desk_config.det_crops_per_patient // desk_config.det_batch_size
    cfg = desk_config.override(det_epochs=math.ceil(C10_STEPS / steps_per_epoch) + 1, det_val_every=1,
                               seg_iterations=C10_STEPS)
    a, b = _seeded_run(cfg), _seeded_run(cfg)
    enough = min(len(a[0]), len(a[1])) >= C10_STEPS
    same = (a[0][:C10_STEPS] == b[0][:C10_STEPS] and a[1][:C10_STEPS] == b[1][:C10_STEPS]
            and a[2] == b[2] and a[3] == b[3])
    verdict("C10 determinism", enough and same,
            f"detector {len(a[0])} and segmentor {len(a[1])} logged steps; traces 1-{C10_STEPS} and "
            f"{len(a[2])} case reports identical: {same}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
