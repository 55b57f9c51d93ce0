"""Model architecture configuration.

The transformer width (128), head count (2), layer count (3), the 16-kernel
3D conv, the 128-kernel 2D conv and the 100-d audio projection are fixed
architecture constants. Feature-grid extents and encoding dims are
configurable because the upstream backbones are out of scope and replaced by
pluggable feature providers; `default()` mirrors the backbone-scale grids and
`toy()` is the desk-scale preset used by the verification harness.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import ParameterError

HIDDEN_DIM = 128
NUM_HEADS = 2
NUM_LAYERS = 3
HEAD_DIM = HIDDEN_DIM // NUM_HEADS
CONV3D_KERNELS = 16
CONV2D_KERNELS = 128
AUDIO_PROJ_DIM = 100
NUM_BEHAVIOURS = 13
METADATA_DIM = 7
NUM_TRAITS = 5


@dataclass(frozen=True)
class ModelConfig:
    face_shape: tuple[int, int, int, int] = (64, 8, 14, 14)
    context_shape: tuple[int, int, int, int] = (64, 8, 7, 7)
    audio_dim: int = 128
    transcript_dim: int = 768
    d_t: int = 16
    d_s: int = 16
    d_hidden: int = 32
    ffn_hidden: int = 256
    lstm_layers: int = 2
    dropout_p: float = 0.2
    pool2d_kernel: int = 2
    conv2d_kernel: int = 2
    use_behaviour: bool = True
    use_transcript: bool = True
    use_metadata: bool = True
    use_lstm: bool = True
    ethnicities: tuple[str, ...] = ("asian", "caucasian", "african_american")
    genders: tuple[str, ...] = ("male", "female")
    age_max: float = 100.0

    def __post_init__(self):
        if self.face_shape[1] != self.context_shape[1]:
            raise ParameterError(
                f"face and context chunks must share T: "
                f"{self.face_shape} vs {self.context_shape}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ParameterError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        for name in ("d_t", "d_s", "d_hidden", "audio_dim", "transcript_dim"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be positive")

    @classmethod
    def toy(cls) -> "ModelConfig":
        """Desk-scale grids for gradient checking and fast synthetic runs.

        4x4 faces leave no room for the default 2x2 pooling before the 2x2
        conv, so the toy preset drops the 2D pooling to kernel 1.
        """
        return cls(
            face_shape=(8, 2, 4, 4),
            context_shape=(8, 2, 2, 2),
            audio_dim=16,
            transcript_dim=16,
            d_t=4,
            d_s=4,
            d_hidden=8,
            pool2d_kernel=1,
        )

    def with_disabled(self, disabled: set[str]) -> "ModelConfig":
        """The ablated architecture with the given input channels removed."""
        known = {"behaviour", "transcript", "metadata", "lstm"}
        unknown = set(disabled) - known
        if unknown:
            raise ParameterError(f"unknown ablation inputs: {sorted(unknown)}")
        return replace(
            self,
            use_behaviour="behaviour" not in disabled,
            use_transcript="transcript" not in disabled,
            use_metadata="metadata" not in disabled,
            use_lstm="lstm" not in disabled,
        )

    # --- derived extents -------------------------------------------------

    @property
    def chunk_t(self) -> int:
        return self.face_shape[1]

    @property
    def grid(self) -> tuple[int, int, int]:
        return self.context_shape[1:]

    @property
    def num_tokens(self) -> int:
        t, h, w = self.grid
        return t * h * w

    @property
    def token_dim(self) -> int:
        return (self.context_shape[0] + self.d_t + self.d_s
                + (NUM_BEHAVIOURS if self.use_behaviour else 0)
                + AUDIO_PROJ_DIM)

    def query_shape_trace(self) -> list[tuple[int, ...]]:
        """Shapes after each face-reduction step; raises if a step cannot fit."""
        c, t, h, w = self.face_shape
        trace = [(c, t, h, w)]

        def shrink(n, k, s, step):
            if n < k:
                raise ParameterError(
                    f"face grid too small at step {step}: extent {n} < kernel {k}")
            return (n - k) // s + 1

        h, w = shrink(h, 2, 2, "pool3d"), shrink(w, 2, 2, "pool3d")
        trace.append((c, t, h, w))
        trace.append((CONV3D_KERNELS, t, h, w))
        trace.append((CONV3D_KERNELS * t, h, w))
        pk = self.pool2d_kernel
        h, w = shrink(h, pk, pk, "pool2d"), shrink(w, pk, pk, "pool2d")
        trace.append((CONV3D_KERNELS * t, h, w))
        ck = self.conv2d_kernel
        h, w = shrink(h, ck, 1, "conv2d"), shrink(w, ck, 1, "conv2d")
        trace.append((CONV2D_KERNELS, h, w))
        trace.append((CONV2D_KERNELS * h * w,))
        trace.append((HIDDEN_DIM,))
        return trace

    @property
    def query_flat_dim(self) -> int:
        return self.query_shape_trace()[-2][0]
