"""Query and key/value preparation for the cross-attention fusion.

The face chunk is reduced to a single 128-d query through a fixed pool/conv
stack and fused with demographic metadata. Context features (already carrying
the spatiotemporal encoding) are augmented with the behaviour vector and the
projected audio vector at every grid position, then flattened into N tokens
and mapped to per-token keys and values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .config import (
    AUDIO_PROJ_DIM,
    CONV2D_KERNELS,
    CONV3D_KERNELS,
    HIDDEN_DIM,
    METADATA_DIM,
    NUM_BEHAVIOURS,
    ModelConfig,
)
from .errors import DataError, DimensionError
from .tensor import Tensor, parameter


@dataclass(frozen=True)
class DemographicMetadata:
    """One-hot ethnicity (3) and gender (2), plus age and attractiveness in [0, 1]."""

    ethnicity: np.ndarray
    gender: np.ndarray
    age: float
    attractiveness: float

    def __post_init__(self):
        for name, arr, n in (("ethnicity", self.ethnicity, 3),
                             ("gender", self.gender, 2)):
            a = np.asarray(arr, dtype=np.float64)
            if a.shape != (n,) or not np.isin(a, (0.0, 1.0)).all() or a.sum() != 1.0:
                raise DataError(f"{name} must be a one-hot vector of length {n}")

    def vector(self) -> np.ndarray:
        """The 7-d metadata vector: ethnicity | gender | age | attractiveness."""
        return np.concatenate([
            np.asarray(self.ethnicity, dtype=np.float32),
            np.asarray(self.gender, dtype=np.float32),
            [np.float32(self.age)],
            [np.float32(self.attractiveness)],
        ])


def encode_metadata(ethnicity: str, gender: str, age_years: float,
                    attractiveness: Optional[float] = None,
                    cfg: ModelConfig = ModelConfig()) -> DemographicMetadata:
    """One-hot the categorical labels and normalize age by the configured max.

    Attractiveness is only available for caucasian subjects; everyone else
    gets the default value 0, as does a missing annotation.
    """
    if ethnicity not in cfg.ethnicities:
        raise DataError(f"unknown ethnicity {ethnicity!r}, expected one of {cfg.ethnicities}")
    if gender not in cfg.genders:
        raise DataError(f"unknown gender {gender!r}, expected one of {cfg.genders}")
    eth = np.zeros(len(cfg.ethnicities))
    eth[cfg.ethnicities.index(ethnicity)] = 1.0
    gen = np.zeros(len(cfg.genders))
    gen[cfg.genders.index(gender)] = 1.0
    if attractiveness is None or ethnicity != "caucasian":
        attract = 0.0
    else:
        if not 0.0 <= attractiveness <= 1.0:
            raise DataError(f"attractiveness must be in [0, 1], got {attractiveness}")
        attract = float(attractiveness)
    age = min(max(age_years / cfg.age_max, 0.0), 1.0)
    return DemographicMetadata(eth, gen, age, attract)


@dataclass
class PipelineParams:
    """Every trainable tensor of the query/key/value preparation."""

    conv3d_k: Tensor
    conv3d_b: Tensor
    conv2d_k: Tensor
    conv2d_b: Tensor
    fc1_w: Tensor
    fc1_b: Tensor
    meta_w: Tensor
    meta_b: Tensor
    audio_w: Tensor
    audio_b: Tensor
    key_w: Tensor
    key_b: Tensor
    value_w: Tensor
    value_b: Tensor

    def named_parameters(self) -> dict[str, Tensor]:
        return {f"qkv.{name}": getattr(self, name) for name in (
            "conv3d_k", "conv3d_b", "conv2d_k", "conv2d_b", "fc1_w", "fc1_b",
            "meta_w", "meta_b", "audio_w", "audio_b",
            "key_w", "key_b", "value_w", "value_b",
        )}


def _uniform(rng, fan_in, *shape, dtype):
    lim = 1.0 / np.sqrt(fan_in)
    return parameter(rng.uniform(-lim, lim, size=shape), dtype=dtype)


def init_pipeline_params(cfg: ModelConfig, rng: np.random.Generator,
                         dtype=np.float32) -> PipelineParams:
    c_f, t = cfg.face_shape[0], cfg.chunk_t
    ck = cfg.conv2d_kernel
    flat = cfg.query_flat_dim
    meta_in = HIDDEN_DIM + (METADATA_DIM if cfg.use_metadata else 0)
    return PipelineParams(
        conv3d_k=_uniform(rng, c_f, CONV3D_KERNELS, c_f, 1, 1, 1, dtype=dtype),
        conv3d_b=parameter(np.zeros(CONV3D_KERNELS), dtype=dtype),
        conv2d_k=_uniform(rng, CONV3D_KERNELS * t * ck * ck,
                          CONV2D_KERNELS, CONV3D_KERNELS * t, ck, ck, dtype=dtype),
        conv2d_b=parameter(np.zeros(CONV2D_KERNELS), dtype=dtype),
        fc1_w=_uniform(rng, flat, flat, HIDDEN_DIM, dtype=dtype),
        fc1_b=parameter(np.zeros(HIDDEN_DIM), dtype=dtype),
        meta_w=_uniform(rng, meta_in, meta_in, HIDDEN_DIM, dtype=dtype),
        meta_b=parameter(np.zeros(HIDDEN_DIM), dtype=dtype),
        audio_w=_uniform(rng, cfg.audio_dim, cfg.audio_dim, AUDIO_PROJ_DIM, dtype=dtype),
        audio_b=parameter(np.zeros(AUDIO_PROJ_DIM), dtype=dtype),
        key_w=_uniform(rng, cfg.token_dim, cfg.token_dim, HIDDEN_DIM, dtype=dtype),
        key_b=parameter(np.zeros(HIDDEN_DIM), dtype=dtype),
        value_w=_uniform(rng, cfg.token_dim, cfg.token_dim, HIDDEN_DIM, dtype=dtype),
        value_b=parameter(np.zeros(HIDDEN_DIM), dtype=dtype),
    )


def prepare_query(face, meta: Optional[DemographicMetadata], params: PipelineParams,
                  cfg: ModelConfig, training: bool = False,
                  rng: Optional[np.random.Generator] = None) -> Tensor:
    """Reduce one face chunk to the (1, 128) attention query.

    Pool/conv stack -> flatten -> 128-d with dropout, then metadata fusion
    (concat + linear + ReLU). With metadata disabled the fusion layer still
    runs, just without the concat.
    """
    face = T.as_tensor(face)
    if face.shape != cfg.face_shape:
        raise DimensionError(
            f"face chunk shape {face.shape} != configured {cfg.face_shape}")
    t = cfg.chunk_t
    pk = cfg.pool2d_kernel
    x = T.pool_max(face, (1, 2, 2), (1, 2, 2))
    x = T.convolve(x, params.conv3d_k, params.conv3d_b, spatial_rank=3)
    x = T.relu(x)
    x = T.reshape(x, (CONV3D_KERNELS * t,) + x.shape[2:])
    x = T.pool_max(x, (pk, pk), (pk, pk))
    x = T.convolve(x, params.conv2d_k, params.conv2d_b, spatial_rank=2)
    x = T.relu(x)
    x = T.reshape(x, (1, -1))
    x = T.relu(T.linear(x, params.fc1_w, params.fc1_b))
    x = T.dropout(x, cfg.dropout_p, training, rng)
    if cfg.use_metadata:
        if meta is None:
            raise DataError("metadata is enabled but none was provided")
        x = T.concat([x, Tensor(meta.vector().reshape(1, -1))], axis=1)
    return T.relu(T.linear(x, params.meta_w, params.meta_b))


def prepare_keys_values(context, ste, behaviour, audio, params: PipelineParams,
                        cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """Per-token keys and values, each (N, 128) with N = T*H*W.

    Context and encoding are channel-concatenated, the behaviour vector and
    the 100-d audio projection are broadcast onto every grid position, and
    separate linear+ReLU maps produce keys and values.
    """
    context = T.as_tensor(context)
    ste = T.as_tensor(ste)
    if context.shape != cfg.context_shape:
        raise DimensionError(
            f"context chunk shape {context.shape} != configured {cfg.context_shape}")
    if ste.shape != (cfg.d_t + cfg.d_s,) + cfg.grid:
        raise DimensionError(
            f"encoding shape {ste.shape} does not match grid "
            f"{(cfg.d_t + cfg.d_s,) + cfg.grid}")
    x = T.concat([context, ste], axis=0)
    if cfg.use_behaviour:
        behaviour = T.as_tensor(behaviour)
        if behaviour.shape != (NUM_BEHAVIOURS,):
            raise DimensionError(
                f"behaviour vector shape {behaviour.shape} != ({NUM_BEHAVIOURS},)")
        x = T.broadcast_concat(x, behaviour, axis=0)
    audio = T.as_tensor(audio)
    if audio.shape != (cfg.audio_dim,):
        raise DimensionError(f"audio vector shape {audio.shape} != ({cfg.audio_dim},)")
    audio_feat = T.linear(T.reshape(audio, (1, -1)), params.audio_w, params.audio_b)
    x = T.broadcast_concat(x, T.reshape(audio_feat, (AUDIO_PROJ_DIM,)), axis=0)
    tokens = T.transpose(T.reshape(x, (cfg.token_dim, cfg.num_tokens)))
    keys = T.relu(T.linear(tokens, params.key_w, params.key_b))
    values = T.relu(T.linear(tokens, params.value_w, params.value_b))
    return keys, values
