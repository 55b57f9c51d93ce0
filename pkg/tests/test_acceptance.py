"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. The ablation-direction criterion trains three models on a 200-video
synthetic dataset and takes a few minutes; everything else is fast.
"""

import math
import time
from pathlib import Path

import numpy as np
import numpy.testing as npt
import pytest

from traitfusion import Tensor
from traitfusion.behaviour import (
    BEHAVIOURS,
    DEFAULT_RULES,
    KeypointFrame,
    encode_frame,
    sigmoid_confidence,
)
from traitfusion.config import ModelConfig
from traitfusion.data import SynthSpec, chunk_stride, chunk_video, gen_synthetic_dataset
from traitfusion.model import attention_weights, init_transformer_params, transformer_forward
from traitfusion.training import PlateauScheduler, TrainConfig, ablate, mean_accuracy, train
from traitfusion.verify import run_all

REPO_ROOT = Path(__file__).resolve().parent.parent

# Table-3 figures from the source experiments; listed here only to assert
# that this artifact documents them as NOT reproduced (criterion 1)
UNREPRODUCED_MEANS = (".9263", ".9095", ".9006", ".8978", ".9225", ".8962")


def ok(n, msg):
    print(f"ACCEPTANCE {n} PASS - {msg}")


def test_criterion_1_irreproducibility_statement():
    """The published absolute accuracies need the real dataset and pretrained
    backbones; the README must state they are out of scope, not reproduce them."""
    readme = (REPO_ROOT / "README.md").read_text()
    assert "First Impressions" in readme
    for value in UNREPRODUCED_MEANS:
        assert value in readme, f"README must cite the unreproduced figure {value}"
    lowered = readme.lower()
    assert "not reproduced" in lowered or "not reproducible" in lowered
    ok(1, "README states the published accuracies are not reproduced here")


def test_criterion_2_gradient_suite():
    cfg = ModelConfig.toy()
    assert cfg.face_shape == (8, 2, 4, 4)
    assert cfg.context_shape == (8, 2, 2, 2)
    assert cfg.num_tokens == 8
    assert cfg.transcript_dim == 16

    t0 = time.perf_counter()
    results = run_all(seed=0)
    elapsed = time.perf_counter() - t0

    failures = [(r.name, r.max_rel_error) for r in results if not r.passed]
    assert not failures, f"gradient checks failed: {failures}"
    worst = max(r.max_rel_error for r in results)
    assert worst < 1e-4
    assert elapsed < 60.0, f"grad suite took {elapsed:.1f}s, budget is 60s"
    ok(2, f"{len(results)} checks, worst rel err {worst:.2e}, {elapsed:.1f}s")


def test_criterion_3_attention_normalization_and_permutation():
    cfg = ModelConfig.toy()
    rows_checked = 0
    for trial in range(100):
        rng = np.random.default_rng(3000 + trial)
        params = init_transformer_params(np.random.default_rng(trial), cfg)
        n = int(rng.integers(1, 12))
        q = Tensor(rng.normal(size=(1, 128)).astype(np.float32))
        keys = Tensor(rng.normal(size=(n, 128)).astype(np.float32))
        for layer in params.layers:
            for row in attention_weights(q, keys, layer):
                assert np.all(row >= 0.0)
                assert abs(row.sum() - 1.0) < 1e-6
                rows_checked += 1

    for trial in range(10):
        rng = np.random.default_rng(3300 + trial)
        params = init_transformer_params(np.random.default_rng(500 + trial), cfg)
        n = int(rng.integers(2, 12))
        q = Tensor(rng.normal(size=(1, 128)).astype(np.float32))
        keys = Tensor(rng.normal(size=(n, 128)).astype(np.float32))
        values = Tensor(rng.normal(size=(n, 128)).astype(np.float32))
        base = transformer_forward(q, keys, values, params)
        perm = rng.permutation(n)
        permuted = transformer_forward(
            q, Tensor(keys.data[perm].copy()), Tensor(values.data[perm].copy()),
            params)
        npt.assert_allclose(permuted.data, base.data, atol=1e-6)
    ok(3, f"{rows_checked} attention rows normalized; output permutation-stable")


NEUTRAL_JOINTS = {
    "head": (0.0, 170.0, 0.0),
    "root": (0.0, 100.0, 0.0),
    "left_shoulder": (-20.0, 150.0, 0.0),
    "right_shoulder": (20.0, 150.0, 0.0),
    "left_elbow": (-25.0, 125.0, 0.0),
    "right_elbow": (25.0, 125.0, 0.0),
    "left_wrist": (-25.0, 100.0, 0.0),
    "right_wrist": (25.0, 100.0, 0.0),
    "left_knee": (-10.0, 50.0, 0.0),
    "right_knee": (10.0, 50.0, 0.0),
}


def _frame(i, roll=0.0, pitch=0.0, yaw=0.0, trans=(0.0, 0.0, 0.0), joints=None,
           aus=None):
    merged = dict(NEUTRAL_JOINTS)
    if joints:
        merged.update(joints)
    return KeypointFrame(i, i / 30.0, roll, pitch, yaw, trans, merged, aus or {})


def test_criterion_4_behaviour_closed_forms():
    neutral = [_frame(i) for i in range(5)]
    tilted = [_frame(i, roll=30.0) for i in range(5)]

    j_tilt = BEHAVIOURS.index("head_tilt")
    assert encode_frame(tilted, 2)[j_tilt] > 0.999
    assert encode_frame(neutral, 2)[j_tilt] < 0.001

    j_frown = BEHAVIOURS.index("frown")
    frowning = [_frame(i, aus={"brow_lowerer": 1.2}) for i in range(5)]
    assert abs(encode_frame(frowning, 2)[j_frown] - 0.5) <= 1e-9

    # every behaviour: a neutral/planted feature pair checked against the
    # printed sigmoid parameters (or the direct AU scaling for lips_in)
    neutral_features = {
        "head_tilt": 0.0, "thrust": 0.0, "bob": 0.0,
        "mouth_corner": 0.0, "frown": 0.0, "small_mouth": 0.0, "wrinkle": 0.0,
        "crouch": math.sqrt(10.0 ** 2 + 120.0 ** 2),
        "lean_forward": 0.0,
        "hand_to_face": math.sqrt(25.0 ** 2 + 70.0 ** 2),
        "hand_to_mouth": math.sqrt(25.0 ** 2 + 60.0 ** 2),
    }
    covered = {"lips_in", "fold_arms"}
    for bid, x_neutral in neutral_features.items():
        rule = DEFAULT_RULES[bid]
        x_planted = rule.c_sigma  # drive the feature exactly to the center
        planted_conf = sigmoid_confidence(x_planted, rule.c_sigma, rule.lambda_sigma)
        neutral_conf = sigmoid_confidence(x_neutral, rule.c_sigma, rule.lambda_sigma)
        assert abs(planted_conf - 0.5) <= 1e-12, bid
        expect = 1.0 / (1.0 + math.exp(-rule.lambda_sigma * (x_neutral - rule.c_sigma)))
        assert neutral_conf == pytest.approx(expect, rel=1e-12), bid
        covered.add(bid)

    # lips_in: direct AU scaling, no sigmoid parameters
    j_lips = BEHAVIOURS.index("lips_in")
    assert encode_frame(neutral, 2)[j_lips] == 0.0
    sucked = [_frame(i, aus={"lip_suck": 2.5}) for i in range(5)]
    assert encode_frame(sucked, 2)[j_lips] == pytest.approx(0.5)

    # fold_arms: gated out at neutral (confidence 0), center distance gives 0.5
    j_fold = BEHAVIOURS.index("fold_arms")
    assert encode_frame(neutral, 2)[j_fold] == 0.0
    folded_joints = {
        "left_elbow": (-10.0, 105.0, 0.0), "right_elbow": (10.0, 105.0, 0.0),
        "left_wrist": (-10.0, 105.0, 0.0), "right_wrist": (10.0, 105.0, 0.0),
    }
    folded = [_frame(i, joints=folded_joints) for i in range(5)]
    assert encode_frame(folded, 2)[j_fold] == pytest.approx(0.5, abs=1e-12)

    assert covered == set(BEHAVIOURS)
    ok(4, "all 13 behaviours verified against their closed forms")


def test_criterion_5_overfit_oracle():
    spec = SynthSpec(num_videos=32, seed=2024)
    samples = gen_synthetic_dataset(spec)
    cfg = TrainConfig.desk(max_epochs=500, seed=2024, target_train_mse=0.01)

    t0 = time.perf_counter()
    _, first = train(samples, cfg, spec.model)
    elapsed = time.perf_counter() - t0
    assert first.final_train_mse < 0.01
    assert first.epochs_run <= 500
    assert elapsed < 600.0, f"overfit run took {elapsed:.0f}s, budget is 10 min"

    _, second = train(samples, cfg, spec.model)
    assert first.train_mse == second.train_mse
    assert first.val_mse == second.val_mse
    assert first.lr == second.lr
    ok(5, f"train MSE {first.final_train_mse:.4f} after {first.epochs_run} epochs "
          f"({elapsed:.0f}s); history bit-identical across reruns")


def test_criterion_6_ablation_direction():
    spec = SynthSpec(num_videos=200, seed=777, noise=0.01, visual_gain=0.0,
                     max_plants=6, distractor_pool=8, distractor_scale=0.15,
                     metadata_weights=np.zeros((5, 7)))
    samples = gen_synthetic_dataset(spec)
    cfg = TrainConfig(learning_rate=2e-3, max_epochs=40, seed=777, patience=10)
    reports = ablate(samples, cfg, spec.model,
                     configs=[("full", ()), ("no_behaviour", ("behaviour",)),
                              ("no_lstm", ("lstm",))])
    by_name = {r.name: r for r in reports}
    assert all(r.epochs_run == 40 for r in reports), "equal epoch budgets"

    gap = by_name["full"].mean_accuracy - by_name["no_behaviour"].mean_accuracy
    assert gap >= 0.01, (
        f"behaviour ablation gap {gap:+.4f} below the required 0.01")

    lstm_margin = by_name["full"].mean_accuracy - by_name["no_lstm"].mean_accuracy
    assert math.isfinite(lstm_margin)  # margin reported, direction not asserted
    ok(6, f"full {by_name['full'].mean_accuracy:.4f} vs no_behaviour "
          f"{by_name['no_behaviour'].mean_accuracy:.4f} (gap {gap:+.4f}); "
          f"no_lstm margin {lstm_margin:+.4f} (sign not asserted)")


def test_criterion_7_metric_exactness():
    t = np.random.default_rng(7).uniform(size=(4, 5))
    per_trait, mean = mean_accuracy(t, t)
    assert mean == 1.0 and np.all(per_trait == 1.0)

    per_trait, mean = mean_accuracy(np.array([[0.0, 1.0, 0.0, 1.0, 0.0]]),
                                    np.array([[1.0, 0.0, 1.0, 0.0, 1.0]]))
    assert mean == 0.0 and np.all(per_trait == 0.0)

    targets = np.array([[0.6, 0.5, 0.4, 0.7, 0.3]])
    preds = np.array([[0.5, 0.5, 0.5, 0.5, 0.5]])
    per_trait, mean = mean_accuracy(preds, targets)
    expect = np.array([1.0 - abs(a - b) for a, b in zip(preds[0], targets[0])])
    npt.assert_array_equal(per_trait, expect)
    assert mean == expect.sum() / 5.0
    assert mean == pytest.approx(0.88, abs=1e-15)
    ok(7, "A = 1, A = 0 and A = .88 cases reproduced exactly at f64")


def test_criterion_8_chunking():
    chunks = chunk_video(450, 30.0)
    assert len(chunks) == 7
    assert all(len(r) == 32 and r.step == 2 for r in chunks)
    seen = set()
    for r in chunks:
        assert not (set(r) & seen)
        seen |= set(r)

    rng = np.random.default_rng(8)
    tested = 0
    while tested < 1000:
        fps = float(rng.uniform(10.0, 120.0))
        frame_count = int(rng.integers(64, 5000))
        if frame_count < 32 * chunk_stride(fps):
            continue
        ranges = chunk_video(frame_count, fps)
        flat = [i for r in ranges for i in r]
        assert len(flat) == len(set(flat)), "duplicate sampled index"
        assert all(0 <= i < frame_count for i in flat), "index out of range"
        tested += 1
    ok(8, "450@30fps gives 7 stride-2 chunks; 1000 random pairs clean")


def test_criterion_9_scheduler_trace():
    sched = PlateauScheduler(1e-5, patience=5, factor=0.5)
    sched.prime(0.3)
    lrs = []
    for _ in range(12):
        lrs.append(sched.lr)
        sched.step(0.3)  # artificially non-improving validation loss
    assert sched.reduction_epochs == [6, 12]
    assert lrs == [1e-5] * 6 + [5e-6] * 6
    assert sched.lr == 2.5e-6

    # the train loop drives its LR through exactly this scheduler: replaying
    # a real run's validation history must reproduce its LR history
    samples = gen_synthetic_dataset(SynthSpec(num_videos=10, seed=99))
    cfg = TrainConfig.desk(max_epochs=6, seed=99, patience=2)
    _, report = train(samples, cfg, ModelConfig.toy())
    replay_sched = PlateauScheduler(cfg.learning_rate, cfg.patience, cfg.factor,
                                    cfg.improvement_threshold)
    replay_sched.prime(report.initial_val_mse)
    replay = []
    for v in report.val_mse:
        replay.append(replay_sched.lr)
        replay_sched.step(v)
    assert replay == report.lr
    ok(9, "LR trace 1e-5 -> 5e-6 -> 2.5e-6 with reductions at epochs 6 and 12")
