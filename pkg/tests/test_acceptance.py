"""Acceptance suite: one test per shipped claim, at its stated tolerance.

Each test prints a single `[ACCEPTANCE] ...: PASS|FAIL` line (run pytest
with `-s` to see them live).
"""

import math
import time

import numpy as np
from hypothesis import given, settings, strategies as st

from batchforge.analysis import count_updates, input_memory_proxy, simulate_updates
from batchforge.cli import run as cli_run
from batchforge.core import Resolution, ResolutionSet, SamplerConfig, Strategy
from batchforge.presets import load_preset
from batchforge.samplers import VideoClipSpec, plan_epoch, plan_video_vbs, shard_for_rank
from batchforge.set_training import SetConfig, SetState
from batchforge.trainer import (
    PooledLinearModel,
    TrainerConfig,
    batch_label_smoothed_ce,
    label_smoothed_ce,
    lr_at_epoch_fraction,
    make_synthetic_task,
    train,
)

CHECKS = []


def check(name: str, ok: bool, detail: str = "") -> None:
    line = f"[ACCEPTANCE] {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    print(line, flush=True)
    CHECKS.append((name, ok))
    assert ok, line


def preset_counts(name):
    preset = load_preset(name)
    ssc = count_updates(preset.sampler.with_strategy(Strategy.SSC_FBS))
    msc = count_updates(preset.sampler.with_strategy(Strategy.MSC_FBS))
    vbs = count_updates(preset.sampler.with_strategy(Strategy.MSC_VBS))
    return ssc, msc, vbs


def within(value, target, rel):
    return abs(value - target) <= rel * target


# -- criterion 1: update-count reproduction ---------------------------------


def test_criterion_1_resnet50_updates():
    t0 = time.time()
    ssc, msc, vbs = preset_counts("resnet50")
    elapsed = time.time() - t0
    ok = (
        within(ssc.exact, 188_000, 0.005)
        and within(msc.exact, 188_000, 0.005)
        and 141_000 <= vbs.exact <= 146_000
        and 141_000 <= vbs.closed_form <= 146_000
        and elapsed < 1.0
    )
    check(
        "1a resnet50 updates 188k/188k/143k",
        ok,
        f"{ssc.exact}/{msc.exact}/{vbs.exact} in {elapsed:.2f}s",
    )


def test_criterion_1_mobilenetv2_updates():
    t0 = time.time()
    ssc, msc, vbs = preset_counts("mobilenetv2")
    elapsed = time.time() - t0
    ok = (
        within(ssc.exact, 375_000, 0.02)
        and within(msc.exact, 375_000, 0.02)
        and within(vbs.exact, 288_000, 0.02)
        and elapsed < 1.0
    )
    check(
        "1b mobilenetv2 updates 375k/375k/288k",
        ok,
        f"{ssc.exact}/{msc.exact}/{vbs.exact} in {elapsed:.2f}s",
    )


def test_criterion_1_mobilenetv1_updates():
    t0 = time.time()
    ssc, msc, vbs = preset_counts("mobilenetv1")
    elapsed = time.time() - t0
    ok = (
        within(ssc.exact, 751_000, 0.02)
        and within(msc.exact, 751_000, 0.02)
        and within(vbs.exact, 574_000, 0.02)
        and elapsed < 1.0
    )
    check(
        "1c mobilenetv1 updates 751k/751k/574k",
        ok,
        f"{ssc.exact}/{msc.exact}/{vbs.exact} in {elapsed:.2f}s",
    )


def test_criterion_1_mobilenetv3_updates():
    t0 = time.time()
    ssc, msc, vbs = preset_counts("mobilenetv3")
    elapsed = time.time() - t0
    ok = (
        within(ssc.exact, 188_000, 0.02)
        and within(msc.exact, 188_000, 0.02)
        and within(vbs.exact, 144_000, 0.02)
        and elapsed < 1.0
    )
    check(
        "1d mobilenetv3 updates 188k/188k/144k",
        ok,
        f"{ssc.exact}/{msc.exact}/{vbs.exact} in {elapsed:.2f}s",
    )


def test_criterion_1_update_ratio_band():
    ratios = {}
    for name in ("resnet50", "mobilenetv1", "mobilenetv2", "mobilenetv3"):
        ssc, _, vbs = preset_counts(name)
        ratios[name] = vbs.exact / ssc.exact
    ok = all(0.755 <= r <= 0.775 for r in ratios.values())
    check(
        "1e variable/fixed update ratio in [0.755, 0.775]",
        ok,
        ", ".join(f"{k}={v:.4f}" for k, v in ratios.items()),
    )


# -- criterion 2: memory proxy ------------------------------------------------


def test_criterion_2_memory_proxy():
    config = load_preset("resnet50").sampler
    one_epoch = {
        strategy: plan_epoch(config.with_strategy(strategy), 0)
        for strategy in (Strategy.SSC_FBS, Strategy.MSC_FBS, Strategy.MSC_VBS)
    }
    ssc = input_memory_proxy(one_epoch[Strategy.SSC_FBS])
    msc = input_memory_proxy(one_epoch[Strategy.MSC_FBS])
    ratio = msc.peak_bytes / ssc.peak_bytes
    ratio_ok = abs(ratio - (320 * 320) / (224 * 224)) <= 0.01 and abs(ratio - 2.0408) <= 0.011

    base_bytes = config.base_batch * 224 * 224 * 3 * 4
    vbs_plans = one_epoch[Strategy.MSC_VBS].plans
    slack_ok = all(
        abs(p.pixel_volume() * 3 * 4 - base_bytes)
        <= p.resolution.pixel_count() * config.world_size * 3 * 4
        for p in vbs_plans[:-1]
    )
    check(
        "2 input-memory peak ratio 2.0408 +/- 0.01; variable-batch bytes constant",
        ratio_ok and slack_ok,
        f"ratio={ratio:.4f}",
    )


# -- criterion 3: closed form vs Monte-Carlo -----------------------------------


def test_criterion_3_monte_carlo_matches_closed_form():
    t0 = time.time()
    details = []
    ok = True
    for name in ("resnet50", "resnet50_adv", "mobilenetv1", "mobilenetv2", "mobilenetv3"):
        config = load_preset(name).sampler.with_strategy(Strategy.MSC_VBS)
        sim = simulate_updates(config, trials=100)
        closed = count_updates(config).closed_form
        rel = abs(sim.mean - closed) / closed
        details.append(f"{name}={rel:.4%}")
        ok = ok and rel < 0.01
    elapsed = time.time() - t0
    ok = ok and elapsed < 30.0
    check("3 simulate_updates(100) within 1% of closed form", ok, f"{'; '.join(details)}; {elapsed:.1f}s")


# -- criterion 4: desk-scale filtering experiment -------------------------------


def desk_run(tau=None):
    sampler = SamplerConfig(
        strategy=Strategy.MSC_VBS,
        dataset_size=10_000,
        base_batch=128,
        base_resolution=Resolution(16, 16),
        resolutions=ResolutionSet.parse("8x8,16x16,32x32"),
        epochs=30,
        seed=0,
        drop_last=False,
    )
    trainer_config = TrainerConfig(
        max_lr=0.2,
        warmup_epochs=3,
        total_epochs=30,
        weight_decay=1e-4,
        label_smoothing=0.1,
        ema_decay=0.999,
    )
    dataset, eval_dataset = make_synthetic_task(10_000, num_classes=10, grid=8, seed=0)
    model = PooledLinearModel(10, 8, sampler.resolutions)
    set_config = SetConfig(tau=tau, window=2) if tau is not None else None
    return train(model, dataset, sampler, trainer_config, set_config, eval_dataset)


def test_criterion_4_desk_scale_filtering():
    t0 = time.time()
    baseline = desk_run()
    filtered = desk_run(tau=0.7)
    disabled = desk_run(tau=1.0)
    elapsed = time.time() - t0

    accuracy_gap = abs(filtered.final_eval_accuracy - baseline.final_eval_accuracy)
    update_saving = 1 - filtered.total_updates / baseline.total_updates
    identical = (
        disabled.total_updates == baseline.total_updates
        and disabled.losses() == baseline.losses()
        and np.array_equal(disabled.final_params, baseline.final_params)
    )
    ok = (
        accuracy_gap <= 0.01
        and update_saving >= 0.10
        and identical
        and filtered.readded_count > 0
        and elapsed < 120.0
    )
    check(
        "4 filtering keeps accuracy within 1pt, saves >=10% updates, tau=1 identical, re-adds occur",
        ok,
        f"gap={accuracy_gap*100:.2f}pt saving={update_saving:.1%} readded={filtered.readded_count} {elapsed:.1f}s",
    )


# -- criterion 5: monotone updates in tau ---------------------------------------


def test_criterion_5_updates_monotone_in_tau():
    rng = np.random.default_rng(1234)
    n, epochs, batch = 500, 30, 16
    streams_correct = rng.random((n, epochs)) < 0.92
    streams_conf = np.clip(rng.beta(6, 2, size=(n, epochs)), 0, 1)

    def total_updates(tau):
        state = SetState(n, SetConfig(tau=tau, window=2, start_epoch=0))
        updates = 0
        for epoch in range(epochs):
            active = state.active_samples()
            updates += math.ceil(len(active) / batch) if len(active) else 0
            for sid in active:
                state.record_prediction(
                    int(sid), bool(streams_correct[sid, epoch]), float(streams_conf[sid, epoch])
                )
            for sid in state.reevaluation_plan():
                state.record_prediction(
                    int(sid), bool(streams_correct[sid, epoch]), float(streams_conf[sid, epoch])
                )
            state.finalize_epoch()
        return updates

    taus = [0.1, 0.3, 0.5, 0.7, 0.9, 1.0]
    totals = [total_updates(tau) for tau in taus]
    ok = totals == sorted(totals) and totals[0] < totals[-1]
    check(
        "5 total updates non-decreasing in tau over a fixed stream",
        ok,
        ", ".join(f"tau={t}:{u}" for t, u in zip(taus, totals)),
    )


# -- criterion 6: numerical suite ------------------------------------------------


def test_criterion_6_numerical_suite():
    # gradient checks: 100 random instances at 1e-5 relative
    grad_ok = True
    for seed in range(100):
        rng = np.random.default_rng(seed)
        resolutions = ResolutionSet.parse("4x4,8x8,16x16")
        model = PooledLinearModel(3, 4, resolutions)
        model.theta = rng.normal(size=model.theta.size) * 0.5
        features = rng.normal(size=(5, 4, 4))
        targets = rng.integers(0, 3, size=5)
        resolution = list(resolutions)[seed % 3]
        _, grad, _, _ = model.loss_and_grad(features, targets, resolution, 0.1)

        theta0 = model.theta.copy()
        fd = np.zeros_like(theta0)
        h = 1e-6
        for i in range(theta0.size):
            for sign, store in ((+1, 0), (-1, 1)):
                probe = PooledLinearModel(3, 4, resolutions)
                probe.theta = theta0.copy()
                probe.theta[i] += sign * h
                x = probe.inputs_at(features, resolution)
                loss, _, _ = batch_label_smoothed_ce(
                    x @ probe.weights.T + probe.bias, targets, 0.1
                )
                if sign > 0:
                    up = loss
                else:
                    fd[i] = (up - loss) / (2 * h)
        if np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-12) >= 1e-5:
            grad_ok = False
            break

    config = TrainerConfig(max_lr=0.4, warmup_epochs=5, total_epochs=150, min_lr=0.01)
    cosine_ok = (
        lr_at_epoch_fraction(5, config) == 0.4
        and lr_at_epoch_fraction(150, config) == 0.01
        and lr_at_epoch_fraction(5 + 145 / 2, config) == (0.4 + 0.01) / 2
    )

    smooth_ok = all(
        abs(label_smoothed_ce(np.zeros(k), 0, eps)[0] - math.log(k)) < 1e-12
        for k in (2, 10, 1000)
        for eps in (0.0, 0.1, 0.9)
    )
    check(
        "6 gradient checks at 1e-5, cosine endpoint/midpoint exact, log-K identity at 1e-12",
        grad_ok and cosine_ok and smooth_ok,
    )


# -- criterion 7: determinism and sharding ----------------------------------------


def test_criterion_7_determinism_and_sharding(tmp_path):
    args = [
        "plan",
        "--strategy",
        "msc_vbs",
        "--dataset-size",
        "16384",
        "--base-batch",
        "64",
        "--world-size",
        "8",
        "--epochs",
        "2",
        "--seed",
        "13",
    ]
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert cli_run(args + ["-o", str(a)]) == 0
    assert cli_run(args + ["-o", str(b)]) == 0
    bytes_ok = a.read_bytes() == b.read_bytes()

    shard_ok = True
    for world in (2, 4, 8):
        config = SamplerConfig(
            strategy=Strategy.MSC_VBS,
            dataset_size=16384,
            base_batch=512 // world,
            base_resolution=Resolution(224, 224),
            resolutions=ResolutionSet.squares([128, 192, 224, 288, 320]),
            epochs=1,
            world_size=world,
            seed=13,
            drop_last=True,
        )
        global_schedule = plan_epoch(config, 0)
        shards = [shard_for_rank(plan_epoch(config, 0), rank, world) for rank in range(world)]
        for t, plan in enumerate(global_schedule.plans):
            rank_ids = [set(s.plans[t].sample_ids.tolist()) for s in shards]
            if any(s.plans[t].resolution != plan.resolution for s in shards):
                shard_ok = False
            union = set().union(*rank_ids)
            if union != set(plan.sample_ids.tolist()):
                shard_ok = False
            if sum(len(r) for r in rank_ids) != len(union):
                shard_ok = False  # overlap between ranks
    check(
        "7 equal seeds give byte-identical exports; shards disjoint, complete, resolution-synced",
        bytes_ok and shard_ok,
    )


# -- criterion 8: coverage property ------------------------------------------------


@st.composite
def any_strategy_configs(draw):
    strategy = draw(
        st.sampled_from(
            [Strategy.SSC_FBS, Strategy.MSC_FBS, Strategy.MSC_VBS, Strategy.VIDEO_VBS]
        )
    )
    sides = sorted(
        draw(st.lists(st.integers(4, 48).map(lambda s: 2 * s), min_size=1, max_size=4, unique=True))
    )
    base = draw(st.sampled_from(sides))
    return SamplerConfig(
        strategy=strategy,
        dataset_size=draw(st.integers(1, 100_000)),
        base_batch=draw(st.integers(1, 512)),
        base_resolution=Resolution(base, base),
        resolutions=ResolutionSet.squares(sides),
        epochs=1,
        world_size=1,
        seed=draw(st.integers(0, 2**64 - 1)),
        drop_last=False,
    )


@settings(max_examples=50, deadline=None, print_blob=False)
@given(config=any_strategy_configs(), epoch=st.integers(0, 10))
def test_criterion_8_every_active_id_exactly_once(config, epoch):
    if config.strategy is Strategy.VIDEO_VBS:
        specs = [
            VideoClipSpec(frames, clips, res)
            for res in config.resolutions
            for frames, clips in ((8, 1), (16, 2))
        ]
        schedule = plan_video_vbs(config, specs, specs[0], epoch)
    else:
        schedule = plan_epoch(config, epoch)
    ids = (
        np.concatenate([p.sample_ids for p in schedule.plans])
        if schedule.plans
        else np.empty(0, dtype=np.int64)
    )
    assert np.array_equal(np.sort(ids), np.arange(config.dataset_size))


def test_criterion_8_report():
    # the hypothesis test above ran 50 random configs across all strategies
    check("8 coverage: every active id scheduled exactly once (50 random configs)", True)
