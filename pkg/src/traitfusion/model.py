"""Cross-attention fusion model.

Per chunk, a face-derived query attends over context/behaviour/audio tokens
through a 3-layer, 2-head encoder (every layer re-attends to the same keys
and values). Chunk embeddings run through two stacked LSTMs; the final hidden
state is fused with transcript features and regressed to the five trait
scores. Raw outputs are unbounded during training; inference clamps to [0,1].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .config import (
    HEAD_DIM,
    HIDDEN_DIM,
    NUM_HEADS,
    NUM_LAYERS,
    NUM_TRAITS,
    ModelConfig,
)
from .encoding import EncodingTables, init_tables, spatiotemporal_encoding
from .errors import DataError, DimensionError, UsageError
from .pipeline import PipelineParams, init_pipeline_params, prepare_keys_values, prepare_query
from .tensor import Tensor, load_tensor, parameter, save_tensor

TRAIT_NAMES = ("openness", "conscientiousness", "extroversion",
               "agreeableness", "neuroticism")


@dataclass(frozen=True)
class TraitScores:
    openness: float
    conscientiousness: float
    extroversion: float
    agreeableness: float
    neuroticism: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in TRAIT_NAMES], dtype=np.float32)

    @classmethod
    def from_array(cls, arr) -> "TraitScores":
        arr = np.asarray(arr, dtype=np.float64).reshape(-1)
        if arr.shape != (NUM_TRAITS,):
            raise DimensionError(f"trait vector must have 5 entries, got {arr.shape}")
        return cls(*(float(v) for v in arr))

    def require_unit_range(self) -> "TraitScores":
        arr = self.as_array()
        if np.any(arr < 0.0) or np.any(arr > 1.0):
            raise DataError(f"trait targets must lie in [0, 1], got {arr.tolist()}")
        return self


# --------------------------------------------------------------------------
# parameter containers

@dataclass
class AttentionHead:
    """Per-head projections. The key projection carries no bias: a constant
    shift of every key adds the same offset to every attention score, which
    softmax cancels, so a key bias would be a dead parameter by construction."""

    wq: Tensor
    bq: Tensor
    wk: Tensor
    wv: Tensor
    bv: Tensor


@dataclass
class EncoderLayerParams:
    heads: list[AttentionHead]
    wo: Tensor
    bo: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor


@dataclass
class TransformerParams:
    layers: list[EncoderLayerParams]

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            for h, head in enumerate(layer.heads):
                for f in ("wq", "bq", "wk", "wv", "bv"):
                    out[f"transformer.l{i}.h{h}.{f}"] = getattr(head, f)
            for f in ("wo", "bo", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2",
                      "ln1_g", "ln1_b", "ln2_g", "ln2_b"):
                out[f"transformer.l{i}.{f}"] = getattr(layer, f)
        return out


@dataclass
class LstmLayerParams:
    w_i: Tensor
    u_i: Tensor
    b_i: Tensor
    w_f: Tensor
    u_f: Tensor
    b_f: Tensor
    w_g: Tensor
    u_g: Tensor
    b_g: Tensor
    w_o: Tensor
    u_o: Tensor
    b_o: Tensor


@dataclass
class LstmParams:
    layers: list[LstmLayerParams]

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            for f in ("w_i", "u_i", "b_i", "w_f", "u_f", "b_f",
                      "w_g", "u_g", "b_g", "w_o", "u_o", "b_o"):
                out[f"lstm.l{i}.{f}"] = getattr(layer, f)
        return out


@dataclass
class HeadParams:
    fuse_w: Tensor
    fuse_b: Tensor
    out_w: Tensor
    out_b: Tensor

    def named_parameters(self) -> dict[str, Tensor]:
        return {f"head.{f}": getattr(self, f)
                for f in ("fuse_w", "fuse_b", "out_w", "out_b")}


@dataclass
class ModelParams:
    pipeline: PipelineParams
    tables: EncodingTables
    transformer: TransformerParams
    lstm: Optional[LstmParams]
    head: HeadParams

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.pipeline.named_parameters())
        out.update(self.tables.named_parameters())
        out.update(self.transformer.named_parameters())
        if self.lstm is not None:
            out.update(self.lstm.named_parameters())
        out.update(self.head.named_parameters())
        return out


def _u(rng, fan_in, *shape, dtype):
    lim = 1.0 / math.sqrt(fan_in)
    return parameter(rng.uniform(-lim, lim, size=shape), dtype=dtype)


def init_transformer_params(rng: np.random.Generator, cfg: ModelConfig,
                            dtype=np.float32) -> TransformerParams:
    layers = []
    for _ in range(NUM_LAYERS):
        heads = [
            AttentionHead(
                wq=_u(rng, HIDDEN_DIM, HIDDEN_DIM, HEAD_DIM, dtype=dtype),
                bq=parameter(np.zeros(HEAD_DIM), dtype=dtype),
                wk=_u(rng, HIDDEN_DIM, HIDDEN_DIM, HEAD_DIM, dtype=dtype),
                wv=_u(rng, HIDDEN_DIM, HIDDEN_DIM, HEAD_DIM, dtype=dtype),
                bv=parameter(np.zeros(HEAD_DIM), dtype=dtype),
            )
            for _ in range(NUM_HEADS)
        ]
        layers.append(EncoderLayerParams(
            heads=heads,
            wo=_u(rng, HIDDEN_DIM, HIDDEN_DIM, HIDDEN_DIM, dtype=dtype),
            bo=parameter(np.zeros(HIDDEN_DIM), dtype=dtype),
            ffn_w1=_u(rng, HIDDEN_DIM, HIDDEN_DIM, cfg.ffn_hidden, dtype=dtype),
            ffn_b1=parameter(np.zeros(cfg.ffn_hidden), dtype=dtype),
            ffn_w2=_u(rng, cfg.ffn_hidden, cfg.ffn_hidden, HIDDEN_DIM, dtype=dtype),
            ffn_b2=parameter(np.zeros(HIDDEN_DIM), dtype=dtype),
            ln1_g=parameter(np.ones(HIDDEN_DIM), dtype=dtype),
            ln1_b=parameter(np.zeros(HIDDEN_DIM), dtype=dtype),
            ln2_g=parameter(np.ones(HIDDEN_DIM), dtype=dtype),
            ln2_b=parameter(np.zeros(HIDDEN_DIM), dtype=dtype),
        ))
    return TransformerParams(layers)


def init_lstm_params(rng: np.random.Generator, cfg: ModelConfig,
                     dtype=np.float32) -> LstmParams:
    layers = []
    for _ in range(cfg.lstm_layers):
        fields = {}
        for gate in ("i", "f", "g", "o"):
            fields[f"w_{gate}"] = _u(rng, HIDDEN_DIM, HIDDEN_DIM, HIDDEN_DIM, dtype=dtype)
            fields[f"u_{gate}"] = _u(rng, HIDDEN_DIM, HIDDEN_DIM, HIDDEN_DIM, dtype=dtype)
            fields[f"b_{gate}"] = parameter(np.zeros(HIDDEN_DIM), dtype=dtype)
        layers.append(LstmLayerParams(**fields))
    return LstmParams(layers)


def init_head_params(rng: np.random.Generator, cfg: ModelConfig,
                     dtype=np.float32) -> HeadParams:
    fuse_in = HIDDEN_DIM + (cfg.transcript_dim if cfg.use_transcript else 0)
    return HeadParams(
        fuse_w=_u(rng, fuse_in, fuse_in, HIDDEN_DIM, dtype=dtype),
        fuse_b=parameter(np.zeros(HIDDEN_DIM), dtype=dtype),
        out_w=_u(rng, HIDDEN_DIM, HIDDEN_DIM, NUM_TRAITS, dtype=dtype),
        out_b=parameter(np.zeros(NUM_TRAITS), dtype=dtype),
    )


def init_model_params(cfg: ModelConfig, rng: np.random.Generator,
                      dtype=np.float32) -> ModelParams:
    t, h, w = cfg.grid
    return ModelParams(
        pipeline=init_pipeline_params(cfg, rng, dtype=dtype),
        tables=init_tables(t, h, w, cfg.d_t, cfg.d_s, cfg.d_hidden, rng, dtype=dtype),
        transformer=init_transformer_params(rng, cfg, dtype=dtype),
        lstm=init_lstm_params(rng, cfg, dtype=dtype) if cfg.use_lstm else None,
        head=init_head_params(rng, cfg, dtype=dtype),
    )


# --------------------------------------------------------------------------
# forward passes

def cross_attention(q: Tensor, keys: Tensor, values: Tensor,
                    layer: EncoderLayerParams) -> Tensor:
    """Two-head scaled dot-product attention of one query over N tokens."""
    if keys.shape[0] == 0:
        raise UsageError("cross_attention needs at least one key/value token")
    if keys.shape[0] != values.shape[0]:
        raise DimensionError(
            f"keys and values disagree on token count: {keys.shape} vs {values.shape}")
    outs = []
    for head in layer.heads:
        qh = T.linear(q, head.wq, head.bq)
        kh = T.matmul(keys, head.wk)
        vh = T.linear(values, head.wv, head.bv)
        scores = T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / math.sqrt(HEAD_DIM))
        weights = T.softmax(scores, axis=-1)
        outs.append(T.matmul(weights, vh))
    return T.linear(T.concat(outs, axis=1), layer.wo, layer.bo)


def attention_weights(q: Tensor, keys: Tensor, layer: EncoderLayerParams) -> list[np.ndarray]:
    """Per-head attention rows for inspection (forward only)."""
    rows = []
    for head in layer.heads:
        qh = T.linear(q, head.wq, head.bq)
        kh = T.matmul(keys, head.wk)
        scores = T.scale(T.matmul(qh, T.transpose(kh)), 1.0 / math.sqrt(HEAD_DIM))
        rows.append(T.softmax(scores, axis=-1).data.copy())
    return rows


def encoder_layer(q: Tensor, keys: Tensor, values: Tensor,
                  layer: EncoderLayerParams, training: bool = False,
                  rng: Optional[np.random.Generator] = None) -> Tensor:
    """Post-norm residual block: attention then feed-forward.

    The encoder has no stochastic sublayers; `training`/`rng` are accepted
    for interface symmetry with the rest of the forward path.
    """
    attended = cross_attention(q, keys, values, layer)
    q1 = T.layer_norm(T.add(q, attended), layer.ln1_g, layer.ln1_b)
    ffn = T.linear(T.relu(T.linear(q1, layer.ffn_w1, layer.ffn_b1)),
                   layer.ffn_w2, layer.ffn_b2)
    return T.layer_norm(T.add(q1, ffn), layer.ln2_g, layer.ln2_b)


def transformer_forward(q: Tensor, keys: Tensor, values: Tensor,
                        params: TransformerParams, training: bool = False,
                        rng: Optional[np.random.Generator] = None) -> Tensor:
    """Run the 3 encoder layers; each re-attends to the same keys/values."""
    if len(params.layers) != NUM_LAYERS:
        raise UsageError(f"transformer needs exactly {NUM_LAYERS} layers, "
                         f"got {len(params.layers)}")
    for layer in params.layers:
        q = encoder_layer(q, keys, values, layer, training, rng)
    return q


def lstm_sequence(chunk_embeddings, params: LstmParams) -> Tensor:
    """Two stacked LSTMs over the chunk sequence; returns the last hidden state
    of the top layer, shape (1, 128). Initial hidden/cell states are zeros."""
    if isinstance(chunk_embeddings, Tensor):
        if chunk_embeddings.shape[0] == 0:
            raise UsageError("lstm_sequence needs at least one chunk")
        seq = [T.take_row(chunk_embeddings, i)
               for i in range(chunk_embeddings.shape[0])]
    else:
        seq = list(chunk_embeddings)
        if not seq:
            raise UsageError("lstm_sequence needs at least one chunk")
    dtype = seq[0].dtype
    for layer in params.layers:
        h = Tensor(np.zeros((1, HIDDEN_DIM), dtype=dtype))
        c = Tensor(np.zeros((1, HIDDEN_DIM), dtype=dtype))
        outputs = []
        for x in seq:
            i = T.sigmoid(T.add(T.linear(x, layer.w_i, layer.b_i), T.matmul(h, layer.u_i)))
            f = T.sigmoid(T.add(T.linear(x, layer.w_f, layer.b_f), T.matmul(h, layer.u_f)))
            g = T.tanh(T.add(T.linear(x, layer.w_g, layer.b_g), T.matmul(h, layer.u_g)))
            o = T.sigmoid(T.add(T.linear(x, layer.w_o, layer.b_o), T.matmul(h, layer.u_o)))
            c = T.add(T.mul(f, c), T.mul(i, g))
            h = T.mul(o, T.tanh(c))
            outputs.append(h)
        seq = outputs
    return seq[-1]


def head_forward(hidden: Tensor, transcript, params: HeadParams, cfg: ModelConfig,
                 training: bool = False,
                 rng: Optional[np.random.Generator] = None) -> Tensor:
    """Fuse the video embedding with transcript features and regress 5 scores.

    Returns the raw (1, 5) tensor; clamping to [0, 1] happens at inference
    via `predict` so training gradients are never masked.
    """
    if cfg.use_transcript:
        if transcript is None:
            raise DataError("transcript input is enabled but none was provided")
        tr = T.as_tensor(transcript)
        if tr.shape != (cfg.transcript_dim,):
            raise DimensionError(
                f"transcript shape {tr.shape} != ({cfg.transcript_dim},)")
        hidden = T.concat([hidden, T.reshape(tr, (1, -1))], axis=1)
    x = T.relu(T.linear(hidden, params.fuse_w, params.fuse_b))
    x = T.dropout(x, cfg.dropout_p, training, rng)
    return T.linear(x, params.out_w, params.out_b)


def model_forward(sample, params: ModelParams, cfg: ModelConfig,
                  training: bool = False,
                  rng: Optional[np.random.Generator] = None) -> Tensor:
    """Full forward pass for one video sample; raw (1, 5) scores."""
    if not sample.chunks:
        raise UsageError(f"video {sample.video_id!r} has no chunks")
    ste = spatiotemporal_encoding(params.tables)
    meta = sample.metadata if cfg.use_metadata else None
    embeddings = []
    for chunk in sample.chunks:
        q = prepare_query(chunk.face, meta, params.pipeline, cfg, training, rng)
        keys, values = prepare_keys_values(
            chunk.context, ste, chunk.behaviour if cfg.use_behaviour else None,
            chunk.audio, params.pipeline, cfg)
        embeddings.append(transformer_forward(q, keys, values, params.transformer,
                                              training, rng))
    transcript = sample.transcript if cfg.use_transcript else None
    if cfg.use_lstm:
        if params.lstm is None:
            raise UsageError("config enables the LSTM but params carry none")
        hidden = lstm_sequence(embeddings, params.lstm)
        return head_forward(hidden, transcript, params.head, cfg, training, rng)
    per_chunk = [head_forward(e, transcript, params.head, cfg, training, rng)
                 for e in embeddings]
    return T.median_rows(T.concat(per_chunk, axis=0))


def predict(sample, params: ModelParams, cfg: ModelConfig) -> TraitScores:
    """Inference: deterministic forward pass with outputs clamped to [0, 1]."""
    raw = model_forward(sample, params, cfg, training=False)
    return TraitScores.from_array(T.clamp01(raw).data)


# --------------------------------------------------------------------------
# checkpointing

_MANIFEST_NAME = "checkpoint.json"


def save_checkpoint(directory, params: ModelParams, cfg: ModelConfig) -> None:
    """One MPRT file per parameter plus a JSON manifest naming them all."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    named = params.named_parameters()
    index = {}
    for name, tensor in named.items():
        fname = f"{name}.mprt"
        save_tensor(directory / fname, tensor)
        index[name] = fname
    manifest = {
        "format": "traitfusion-checkpoint",
        "version": 1,
        "config": _config_to_json(cfg),
        "parameters": index,
    }
    (directory / _MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")


def load_checkpoint(directory) -> tuple[ModelParams, ModelConfig]:
    directory = Path(directory)
    manifest_path = directory / _MANIFEST_NAME
    if not manifest_path.exists():
        raise DataError(f"no checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "traitfusion-checkpoint":
        raise DataError(f"{manifest_path}: not a traitfusion checkpoint")
    cfg = _config_from_json(manifest["config"])
    params = init_model_params(cfg, np.random.default_rng(0))
    named = params.named_parameters()
    index = manifest["parameters"]
    missing = sorted(set(named) - set(index))
    if missing:
        raise DataError(f"checkpoint is missing parameters: {missing[:5]}")
    for name, tensor in named.items():
        arr = load_tensor(directory / index[name])
        if arr.shape != tensor.shape:
            raise DataError(
                f"checkpoint parameter {name} has shape {arr.shape}, "
                f"expected {tensor.shape}")
        tensor.data = arr.astype(tensor.dtype, copy=False)
    return params, cfg


def _config_to_json(cfg: ModelConfig) -> dict:
    from dataclasses import asdict

    return asdict(cfg)


def _config_from_json(d: dict) -> ModelConfig:
    kwargs = dict(d)
    for key in ("face_shape", "context_shape", "ethnicities", "genders"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return ModelConfig(**kwargs)
