"""Finite-difference verification suite behind the `grad-check` command.

Every differentiable kernel is checked coordinate-exhaustively on small f64
tensors; composite paths (encoder layer, query pipeline, spatiotemporal
encoding, full model) are checked on sampled coordinates, since probing every
one of the model's ~800k parameters twice per coordinate is not tractable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .data import SynthSpec, gen_synthetic_video
from .encoding import init_tables, spatiotemporal_encoding
from .model import encoder_layer, init_model_params, init_transformer_params, model_forward
from .pipeline import encode_metadata, init_pipeline_params, prepare_keys_values, prepare_query
from .tensor import Tensor, grad_check

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _rand(rng, *shape):
    return Tensor(rng.normal(size=shape), dtype=np.float64)


def _readout(x):
    """Deterministic scalar readout keeping every output coordinate live.

    Must be a pure function of x: grad_check re-evaluates it per coordinate.
    """
    w = Tensor(np.linspace(0.3, 1.1, x.size).reshape(x.shape), dtype=np.float64)
    return T.sum_all(T.mul(x, w))


def _op_checks(rng) -> list[tuple[str, callable, list[Tensor]]]:
    r = rng
    relu_x = Tensor(np.sign(np.random.default_rng(5).normal(size=(4, 4)))
                    * (0.2 + np.abs(np.random.default_rng(6).normal(size=(4, 4)))),
                    dtype=np.float64)
    return [
        ("add", lambda a, b: _readout(T.add(a, b)), [_rand(r, 3, 4), _rand(r, 3, 4)]),
        ("sub", lambda a, b: _readout(T.sub(a, b)), [_rand(r, 2, 5), _rand(r, 2, 5)]),
        ("mul", lambda a, b: _readout(T.mul(a, b)), [_rand(r, 4), _rand(r, 4)]),
        ("scale", lambda a: _readout(T.scale(a, -2.5)), [_rand(r, 3, 3)]),
        ("matmul", lambda a, b: _readout(T.matmul(a, b)),
         [_rand(r, 3, 4), _rand(r, 4, 2)]),
        ("linear", lambda x, w, b: _readout(T.linear(x, w, b)),
         [_rand(r, 4, 5), _rand(r, 5, 3), _rand(r, 3)]),
        ("relu", lambda x: _readout(T.relu(x)), [relu_x]),
        ("sigmoid", lambda x: _readout(T.sigmoid(x)), [_rand(r, 3, 5)]),
        ("tanh", lambda x: _readout(T.tanh(x)), [_rand(r, 6)]),
        ("softmax", lambda x: _readout(T.softmax(x, axis=-1)), [_rand(r, 3, 6)]),
        ("pool_max", lambda x: _readout(T.pool_max(x, (2, 2), (2, 2))),
         [_rand(r, 2, 6, 6)]),
        ("convolve2d", lambda x, k, b: _readout(T.convolve(x, k, b, spatial_rank=2)),
         [_rand(r, 2, 5, 5), _rand(r, 3, 2, 2, 2), _rand(r, 3)]),
        ("convolve3d", lambda x, k, b: _readout(T.convolve(x, k, b, spatial_rank=3)),
         [_rand(r, 2, 3, 4, 4), _rand(r, 4, 2, 1, 1, 1), _rand(r, 4)]),
        ("dropout", lambda x: _readout(
            T.dropout(x, 0.4, True, np.random.default_rng(7))), [_rand(r, 5, 5)]),
        ("concat", lambda a, b: _readout(T.concat([a, b], axis=1)),
         [_rand(r, 3, 2), _rand(r, 3, 4)]),
        ("broadcast_concat", lambda x, v: _readout(T.broadcast_concat(x, v, axis=0)),
         [_rand(r, 3, 4, 5), _rand(r, 2)]),
        ("reshape", lambda x: _readout(T.reshape(x, (6, 4))), [_rand(r, 2, 3, 4)]),
        ("transpose", lambda x: _readout(T.transpose(x, (2, 0, 1))),
         [_rand(r, 2, 3, 4)]),
        ("broadcast_to", lambda x: _readout(T.broadcast_to(x, (3, 4))),
         [_rand(r, 1, 4)]),
        ("take_row", lambda x: _readout(T.take_row(x, 2)), [_rand(r, 5, 3)]),
        ("layer_norm", lambda x, g, b: _readout(T.layer_norm(x, g, b)),
         [_rand(r, 3, 8), _rand(r, 8), _rand(r, 8)]),
        ("median_rows", lambda x: _readout(T.median_rows(x)), [_rand(r, 5, 3)]),
        ("mse", lambda p, t: T.mse(p, t), [_rand(r, 4, 5), _rand(r, 4, 5)]),
    ]


def run_op_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, xs in _op_checks(rng):
        t0 = time.perf_counter()
        err = grad_check(fn, xs)
        results.append(CheckResult(name, float(err), TOLERANCE,
                                   time.perf_counter() - t0))
    return results


def run_composite_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed + 1)
    cfg = ModelConfig.toy()
    results = []

    t0 = time.perf_counter()
    layer = init_transformer_params(np.random.default_rng(seed + 2), cfg,
                                    dtype=np.float64).layers[0]
    q = _rand(rng, 1, 128)
    keys = _rand(rng, 4, 128)
    values = _rand(rng, 4, 128)
    w = _rand(rng, 1, 128)
    err = grad_check(
        lambda q, k, v: T.sum_all(T.mul(encoder_layer(q, k, v, layer), w)),
        [q, keys, values], max_coords=40, rng=np.random.default_rng(seed + 3))
    results.append(CheckResult("encoder_layer", float(err), TOLERANCE,
                               time.perf_counter() - t0))

    t0 = time.perf_counter()
    tables = init_tables(3, 2, 2, 4, 4, 8, np.random.default_rng(seed + 4),
                         dtype=np.float64)
    ste_w = _rand(rng, 8, 3, 2, 2)
    err = grad_check(
        lambda *ps: T.sum_all(T.mul(spatiotemporal_encoding(tables), ste_w)),
        list(tables.named_parameters().values()),
        rng=np.random.default_rng(seed + 5))
    results.append(CheckResult("spatiotemporal_encoding", float(err), TOLERANCE,
                               time.perf_counter() - t0))

    t0 = time.perf_counter()
    pparams = init_pipeline_params(cfg, np.random.default_rng(seed + 6),
                                   dtype=np.float64)
    meta = encode_metadata("caucasian", "female", 40.0, 0.5, cfg)
    face = _rand(rng, *cfg.face_shape)
    qw = _rand(rng, 1, 128)
    err = grad_check(
        lambda f: T.sum_all(T.mul(prepare_query(f, meta, pparams, cfg), qw)),
        face, max_coords=64, rng=np.random.default_rng(seed + 7))
    results.append(CheckResult("prepare_query", float(err), TOLERANCE,
                               time.perf_counter() - t0))

    t0 = time.perf_counter()
    context = _rand(rng, *cfg.context_shape)
    ste = _rand(rng, cfg.d_t + cfg.d_s, *cfg.grid)
    behaviour = Tensor(np.random.default_rng(seed + 8).uniform(size=13),
                       dtype=np.float64)
    audio = _rand(rng, cfg.audio_dim)
    kw = _rand(rng, cfg.num_tokens, 128)

    def kv_fn(ctx, beh, aud):
        keys, values = prepare_keys_values(ctx, ste, beh, aud, pparams, cfg)
        return T.sum_all(T.add(T.mul(keys, kw), T.mul(values, kw)))

    err = grad_check(kv_fn, [context, behaviour, audio], max_coords=48,
                     rng=np.random.default_rng(seed + 9))
    results.append(CheckResult("prepare_keys_values", float(err), TOLERANCE,
                               time.perf_counter() - t0))
    return results


FD_GRAD_FLOOR = 1e-6   # below this, central differences carry no signal here
FD_ATOL = 5e-8          # numeric-gradient noise bound at eps 1e-6, |loss| ~ 0.4


def run_end_to_end_check(seed: int = 0, coords_per_tensor: int = 4,
                         eps: float = 1e-6) -> CheckResult:
    """Gradient-check the whole model on a 2-chunk toy sample.

    For each parameter tensor the `coords_per_tensor` largest-magnitude
    analytic-gradient coordinates are probed with central differences and
    compared by relative error. Tensors whose entire gradient sits below the
    difference noise floor cannot be resolved by FD at this loss scale and
    are instead spot-checked at random coordinates with an absolute guard,
    which still catches an analytic gradient that wrongly reports zero.
    """
    t0 = time.perf_counter()
    cfg = ModelConfig.toy()
    sample = gen_synthetic_video(SynthSpec(num_videos=1, seed=seed + 40), 0)
    params = init_model_params(cfg, np.random.default_rng(seed + 41),
                               dtype=np.float64)
    target = Tensor(sample.targets.as_array().reshape(1, -1), dtype=np.float64)

    # the forward must run at f64 for the differences to resolve
    for chunk in sample.chunks:
        chunk.face = chunk.face.astype(np.float64)
        chunk.context = chunk.context.astype(np.float64)
        chunk.audio = chunk.audio.astype(np.float64)
    sample.transcript = sample.transcript.astype(np.float64)

    def fn():
        return T.mse(model_forward(sample, params, cfg, training=False), target)

    from .tensor import Tape

    named = params.named_parameters()
    with Tape() as tape:
        tape.backward(fn())
        analytic = {name: tape.grad(p).copy() for name, p in named.items()}

    rng = np.random.default_rng(seed + 42)
    worst = 0.0
    for name, p in named.items():
        a = analytic[name].reshape(-1)
        flat = p.data.reshape(-1)
        by_magnitude = np.argsort(-np.abs(a))[:coords_per_tensor]
        spot = rng.choice(a.size, size=min(2, a.size), replace=False)
        for c in np.concatenate([by_magnitude, spot]):
            orig = flat[c]
            flat[c] = orig + eps
            fp = fn().item()
            flat[c] = orig - eps
            fm = fn().item()
            flat[c] = orig
            num = (fp - fm) / (2.0 * eps)
            if max(abs(a[c]), abs(num)) < FD_GRAD_FLOOR:
                # both zero at FD resolution: consistent, nothing to compare
                continue
            err = abs(a[c] - num) / max(abs(a[c]), abs(num), 1e-8)
            if abs(a[c]) < FD_GRAD_FLOOR or abs(num) < FD_GRAD_FLOOR:
                # one side is sub-floor: demand agreement within the noise bound
                if abs(a[c] - num) > FD_ATOL:
                    err = max(err, 1.0)
                else:
                    err = 0.0
            worst = max(worst, err)
    return CheckResult("model_end_to_end", float(worst), TOLERANCE,
                       time.perf_counter() - t0)


def run_all(seed: int = 0, coords_per_tensor: int = 4) -> list[CheckResult]:
    results = run_op_checks(seed)
    results += run_composite_checks(seed)
    results.append(run_end_to_end_check(seed, coords_per_tensor))
    return results
