"""Learned spatiotemporal positional encodings.

Separate temporal (T rows) and spatial (H*W rows) tables are each refined by
a two-layer fully connected network, then broadcast against each other into a
(d_t + d_s, T, H, W) encoding that gets channel-concatenated onto context
features. Everything here is trainable and lives on the gradient tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ParameterError
from .tensor import Tensor, parameter

INIT_RANGE = 0.1


@dataclass
class EncodingTables:
    """Learnable encoding tables plus their refinement networks."""

    grid: tuple[int, int, int]          # (T, H, W)
    temporal_table: Tensor              # (T, d_t)
    spatial_table: Tensor               # (H*W, d_s)
    temporal_w1: Tensor
    temporal_b1: Tensor
    temporal_w2: Tensor
    temporal_b2: Tensor
    spatial_w1: Tensor
    spatial_b1: Tensor
    spatial_w2: Tensor
    spatial_b2: Tensor

    def named_parameters(self) -> dict[str, Tensor]:
        return {
            f"ste.{name}": getattr(self, name)
            for name in (
                "temporal_table", "spatial_table",
                "temporal_w1", "temporal_b1", "temporal_w2", "temporal_b2",
                "spatial_w1", "spatial_b1", "spatial_w2", "spatial_b2",
            )
        }


def init_tables(t: int, h: int, w: int, d_t: int, d_s: int, d_hidden: int,
                rng: np.random.Generator, dtype=np.float32) -> EncodingTables:
    """Fresh tables and MLPs, uniform in [-0.1, 0.1] from the seeded generator."""
    for name, v in (("T", t), ("H", h), ("W", w), ("d_t", d_t), ("d_s", d_s),
                    ("d_hidden", d_hidden)):
        if v <= 0:
            raise ParameterError(f"encoding extent {name} must be positive, got {v}")

    def u(*shape):
        return parameter(rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape), dtype=dtype)

    return EncodingTables(
        grid=(t, h, w),
        temporal_table=u(t, d_t),
        spatial_table=u(h * w, d_s),
        temporal_w1=u(d_t, d_hidden),
        temporal_b1=u(d_hidden),
        temporal_w2=u(d_hidden, d_t),
        temporal_b2=u(d_t),
        spatial_w1=u(d_s, d_hidden),
        spatial_b1=u(d_hidden),
        spatial_w2=u(d_hidden, d_s),
        spatial_b2=u(d_s),
    )


def _refine(table, w1, b1, w2, b2):
    return T.linear(T.relu(T.linear(table, w1, b1)), w2, b2)


def spatiotemporal_encoding(tables: EncodingTables) -> Tensor:
    """The (d_t + d_s, T, H, W) encoding: refined temporal rows broadcast over
    the spatial grid, refined spatial rows broadcast over time, concatenated
    on the channel axis."""
    t, h, w = tables.grid
    temporal = _refine(tables.temporal_table, tables.temporal_w1, tables.temporal_b1,
                       tables.temporal_w2, tables.temporal_b2)        # (T, d_t)
    spatial = _refine(tables.spatial_table, tables.spatial_w1, tables.spatial_b1,
                      tables.spatial_w2, tables.spatial_b2)           # (H*W, d_s)
    d_t = temporal.shape[1]
    d_s = spatial.shape[1]
    temporal = T.reshape(T.transpose(temporal), (d_t, t, 1, 1))
    temporal = T.broadcast_to(temporal, (d_t, t, h, w))
    spatial = T.reshape(T.transpose(spatial), (d_s, 1, h, w))
    spatial = T.broadcast_to(spatial, (d_s, t, h, w))
    return T.concat([temporal, spatial], axis=0)
