"""Dataset types, chunking, keypoint/manifest IO and synthetic generation.

The synthetic harness is the verification oracle for the whole package: it
plants known behaviours as keypoint trajectories that drive the rule features
through their sigmoid centers, modulates the visual feature fields with the
active behaviours, and builds trait targets from a fixed linear-then-clamp
function of the mean behaviour vector and metadata. Because the target
function is known, learning and ablation effects are checkable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .behaviour import (
    AU_SCALE,
    BEHAVIOURS,
    REQUIRED_JOINTS,
    KeypointFrame,
    encode_chunk,
)
from .config import NUM_BEHAVIOURS, ModelConfig
from .errors import DataError, ParameterError, UsageError
from .model import TraitScores, _config_from_json, _config_to_json
from .pipeline import DemographicMetadata, encode_metadata
from .tensor import load_tensor, save_tensor

CHUNK_FRAMES = 32
REFERENCE_FPS = 15.0  # fps at which stride 1 spans the reference chunk length


# --------------------------------------------------------------------------
# chunking

def chunk_stride(fps: float) -> int:
    """Frame stride keeping the chunk time span near the 30fps/stride-2 anchor."""
    if fps <= 0:
        raise ParameterError(f"fps must be positive, got {fps}")
    return max(1, math.floor(fps / REFERENCE_FPS + 0.5))


def chunk_video(frame_count: int, fps: float) -> list[range]:
    """Chunk frame indices: 32 frames sampled at the fps-dependent stride from
    consecutive non-overlapping windows; a trailing partial window is dropped."""
    stride = chunk_stride(fps)
    window = CHUNK_FRAMES * stride
    if frame_count < window:
        raise DataError(
            f"video of {frame_count} frames is shorter than one chunk window "
            f"({window} frames at stride {stride})")
    return [range(k * window, k * window + window, stride)
            for k in range(frame_count // window)]


# --------------------------------------------------------------------------
# sample containers

@dataclass
class ChunkFeatures:
    """One transformer forward pass worth of input."""

    face: np.ndarray       # (C_f, T, H_f, W_f)
    context: np.ndarray    # (C_c, T, H_c, W_c)
    audio: np.ndarray      # (A,)
    behaviour: np.ndarray  # (13,)


@dataclass
class VideoSample:
    video_id: str
    fps: float
    chunks: list[ChunkFeatures]
    metadata: DemographicMetadata
    transcript: np.ndarray
    targets: TraitScores
    split: str = "train"
    keypoints: Optional[list[KeypointFrame]] = None


# --------------------------------------------------------------------------
# keypoint JSON Lines IO

def write_keypoints(stream: Sequence[KeypointFrame], path) -> None:
    with open(path, "w") as fh:
        for f in stream:
            fh.write(json.dumps({
                "frame": f.frame_index,
                "t": f.t,
                "head": {"roll": f.head_roll, "pitch": f.head_pitch,
                         "yaw": f.head_yaw,
                         "tx": f.head_translation[0],
                         "ty": f.head_translation[1],
                         "tz": f.head_translation[2]},
                "joints": {k: list(map(float, v)) for k, v in f.joints.items()},
                "aus": {k: float(v) for k, v in f.aus.items()},
            }) + "\n")


def load_keypoints(path) -> list[KeypointFrame]:
    """Parse a keypoint JSONL stream, enforcing the frame invariants."""
    frames: list[KeypointFrame] = []
    prev_t = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: malformed JSON ({e.msg})") from None
            try:
                head = obj["head"]
                frame = KeypointFrame(
                    frame_index=int(obj["frame"]),
                    t=float(obj["t"]),
                    head_roll=float(head["roll"]),
                    head_pitch=float(head["pitch"]),
                    head_yaw=float(head["yaw"]),
                    head_translation=(float(head["tx"]), float(head["ty"]),
                                      float(head["tz"])),
                    joints={k: tuple(float(x) for x in v)
                            for k, v in obj["joints"].items()},
                    aus={k: float(v) for k, v in obj.get("aus", {}).items()},
                )
            except (KeyError, TypeError, ValueError) as e:
                raise DataError(f"{path}:{lineno}: bad frame record ({e})") from None
            if prev_t is not None and frame.t <= prev_t:
                raise DataError(
                    f"{path}:{lineno}: timestamp {frame.t} not increasing "
                    f"(frame {frame.frame_index})")
            prev_t = frame.t
            for name in REQUIRED_JOINTS:
                if name not in frame.joints:
                    raise DataError(
                        f"{path}:{lineno}: frame {frame.frame_index} missing "
                        f"required joint '{name}'")
            coords = [frame.head_roll, frame.head_pitch, frame.head_yaw,
                      *frame.head_translation]
            coords += [x for v in frame.joints.values() for x in v]
            if not np.all(np.isfinite(coords)):
                raise DataError(
                    f"{path}:{lineno}: non-finite coordinate in frame "
                    f"{frame.frame_index}")
            for au, val in frame.aus.items():
                if not 0.0 <= val <= AU_SCALE:
                    raise DataError(
                        f"{path}:{lineno}: AU '{au}' intensity {val} outside "
                        f"[0, {AU_SCALE}] in frame {frame.frame_index}")
            frames.append(frame)
    return frames


# --------------------------------------------------------------------------
# synthetic generation

NEUTRAL_POSE = {
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

# confidences of a neutral interior frame, idealized: thrust and bob sit at
# rate 0, far above their negative centers, so they saturate near 1
NEUTRAL_REFERENCE = np.array(
    [0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])

# trait target function: clamp(bias + B (mean_behaviour - neutral) + C meta + noise)
TRAIT_FUNCTION_BIAS = np.full(5, 0.5)

TRAIT_BEHAVIOUR_WEIGHTS = np.array([
    # tilt thrst bob  lips  mcor  frwn  smth  wrnk  crch  lean  fold  h2f   h2m
    [1.2,  -0.8, 0.0, 0.0,  0.5,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  0.0],
    [0.0,   0.0, -0.6, 0.0, 0.0,  1.0,  0.0,  0.0,  0.0,  0.7,  0.0,  0.0,  0.0],
    [0.0,   0.0, 0.0,  0.0, 1.1,  0.0,  -0.5, 0.0,  0.0,  0.0,  0.0,  0.8,  0.0],
    [0.0,   0.0, 0.0,  0.9, 0.0,  0.0,  0.0,  -0.7, 0.6,  0.0,  0.0,  0.0,  0.0],
    [-0.6,  0.0, 0.0,  0.0, 0.0,  0.0,  0.0,  0.0,  0.0,  0.0,  1.0,  0.0,  0.8],
])

TRAIT_METADATA_WEIGHTS = np.array([
    [0.05, 0.0, 0.0, 0.0, 0.0, 0.1, 0.0],
    [0.0, 0.05, 0.0, 0.0, 0.0, 0.0, 0.1],
    [0.0, 0.0, 0.05, 0.1, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.05, 0.0, 0.1],
    [0.1, 0.0, 0.0, 0.05, 0.0, 0.0, 0.0],
])

# plant intensity ranges bracketing each rule's sigmoid center
PLANT_RANGES = {
    "head_tilt": (15.0, 45.0),
    "thrust": (-40.0, -10.0),
    "bob": (-80.0, -20.0),
    "lips_in": (1.0, 5.0),
    "mouth_corner": (0.8, 2.0),
    "frown": (0.8, 2.0),
    "small_mouth": (0.8, 2.0),
    "wrinkle": (0.8, 2.0),
    "crouch": (15.0, 45.0),
    "lean_forward": (5.0, 20.0),
    "fold_arms": (10.0, 30.0),
    "hand_to_face": (20.0, 50.0),
    "hand_to_mouth": (10.0, 40.0),
}

MAX_TILT_DEG = 90.0
MAX_PITCH_DEG = 80.0
MAX_TRANSLATION_CM = 80.0

_AU_PLANTS = {"lips_in": "lip_suck", "mouth_corner": "lip_stretcher",
              "frown": "brow_lowerer", "small_mouth": "lip_tightener",
              "wrinkle": "nose_wrinkler"}


@dataclass(frozen=True)
class Plant:
    """One planted behaviour: drive a rule feature to `intensity` over [t0, t1)."""

    behaviour_id: str
    intensity: float
    t0: float
    t1: float

    def __post_init__(self):
        if self.behaviour_id not in BEHAVIOURS:
            raise ParameterError(f"unknown behaviour {self.behaviour_id!r}")
        if self.t1 <= self.t0:
            raise ParameterError(f"empty plant interval [{self.t0}, {self.t1})")
        i = self.intensity
        if self.behaviour_id == "head_tilt" and abs(i) > MAX_TILT_DEG:
            raise ParameterError(f"head tilt of {i} deg is not plausible")
        if self.behaviour_id in _AU_PLANTS and not 0.0 <= i <= AU_SCALE:
            raise ParameterError(f"AU intensity {i} outside [0, {AU_SCALE}]")
        if self.behaviour_id in ("crouch", "fold_arms", "hand_to_face",
                                 "hand_to_mouth", "lean_forward") and i < 0.0:
            raise ParameterError(f"distance intensity {i} must be nonnegative")
        if self.behaviour_id == "crouch" and i < 10.0:
            raise ParameterError(
                "crouch distance below 10 cm cannot be realized by this skeleton")


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a deterministic synthetic dataset.

    `plants` can pin an explicit schedule per video; left None, each video
    gets 1..max_plants random behaviours at random intensities/intervals
    drawn from the seeded generator. `visual_gain` scales how strongly the
    active behaviours modulate the face/context fields; the behaviour signal
    proper always flows through the behaviour vector channels. Trait targets
    are clamp(bias + B (mean_behaviour - neutral) + C metadata + noise), with
    the mean taken over the per-chunk behaviour vectors.

    `distractor_pool` bounds how identifying the audio/transcript stubs are:
    0 draws them fresh per video, k > 0 draws them from k shared seeded
    vectors, so they stay random but cannot serve as per-video labels (the
    setting for ablation oracles, where memorization must not pay).
    `distractor_scale` sets the amplitude of the uninformative channels
    (visual base fields, audio, transcript) relative to the behaviour
    deviations they compete with.
    """

    num_videos: int = 32
    duration_s: float = 4.5
    fps: float = 30.0
    seed: int = 0
    noise: float = 0.0
    visual_gain: float = 0.25
    max_plants: int = 3
    distractor_pool: int = 0
    distractor_scale: float = 1.0
    model: ModelConfig = field(default_factory=ModelConfig.toy)
    plants: Optional[list[list[Plant]]] = None
    trait_bias: np.ndarray = field(default_factory=lambda: TRAIT_FUNCTION_BIAS.copy())
    behaviour_weights: np.ndarray = field(
        default_factory=lambda: TRAIT_BEHAVIOUR_WEIGHTS.copy())
    metadata_weights: np.ndarray = field(
        default_factory=lambda: TRAIT_METADATA_WEIGHTS.copy())

    def __post_init__(self):
        if self.num_videos <= 0:
            raise ParameterError("num_videos must be positive")
        if self.duration_s <= 0 or self.fps <= 0:
            raise ParameterError("duration_s and fps must be positive")
        if self.plants is not None and len(self.plants) != self.num_videos:
            raise ParameterError(
                f"plants has {len(self.plants)} schedules for "
                f"{self.num_videos} videos")
        object.__setattr__(self, "trait_bias",
                           np.asarray(self.trait_bias, dtype=np.float64))
        object.__setattr__(self, "behaviour_weights",
                           np.asarray(self.behaviour_weights, dtype=np.float64))
        object.__setattr__(self, "metadata_weights",
                           np.asarray(self.metadata_weights, dtype=np.float64))
        if self.trait_bias.shape != (5,):
            raise ParameterError("trait_bias must have 5 entries")
        if self.behaviour_weights.shape != (5, NUM_BEHAVIOURS):
            raise ParameterError(
                f"behaviour_weights must be 5x{NUM_BEHAVIOURS}")
        if self.metadata_weights.shape != (5, 7):
            raise ParameterError("metadata_weights must be 5x7")


def _random_schedule(rng: np.random.Generator, spec: SynthSpec) -> list[Plant]:
    count = int(rng.integers(1, spec.max_plants + 1))
    ids = rng.choice(len(BEHAVIOURS), size=count, replace=False)
    plants = []
    for b in ids:
        bid = BEHAVIOURS[b]
        lo, hi = PLANT_RANGES[bid]
        intensity = float(rng.uniform(lo, hi))
        length = float(rng.uniform(0.5, min(2.0, spec.duration_s / 2)))
        t0 = float(rng.uniform(0.0, spec.duration_s - length))
        plants.append(Plant(bid, intensity, t0, t0 + length))
    return plants


def _build_keypoints(spec: SynthSpec, plants: list[Plant]) -> list[KeypointFrame]:
    n = int(round(spec.duration_s * spec.fps))
    dt = 1.0 / spec.fps
    times = np.arange(n) * dt
    roll = np.zeros(n)
    pitch_rate = np.zeros(n)
    yaw = np.zeros(n)
    z_rate = np.zeros(n)
    aus = {name: np.zeros(n) for name in _AU_PLANTS.values()}
    joints = {name: np.tile(np.asarray(pos), (n, 1))
              for name, pos in NEUTRAL_POSE.items()}

    def window(p: Plant) -> slice:
        i0 = max(0, int(math.floor(p.t0 * spec.fps)))
        i1 = min(n, int(math.ceil(p.t1 * spec.fps)))
        return slice(i0, i1)

    # pass 1: head pose, rates, AUs, torso posture
    for p in plants:
        w = window(p)
        if p.behaviour_id == "head_tilt":
            roll[w] = p.intensity
        elif p.behaviour_id == "thrust":
            z_rate[w] = p.intensity
        elif p.behaviour_id == "bob":
            pitch_rate[w] = p.intensity
        elif p.behaviour_id in _AU_PLANTS:
            aus[_AU_PLANTS[p.behaviour_id]][w] = p.intensity
        elif p.behaviour_id == "crouch":
            ky = NEUTRAL_POSE["left_knee"][1]
            kx = NEUTRAL_POSE["left_knee"][0]
            head_y = ky + math.sqrt(max(p.intensity ** 2 - kx ** 2, 0.0))
            joints["head"][w, 1] = head_y
        elif p.behaviour_id == "lean_forward":
            joints["left_shoulder"][w, 2] += p.intensity
            joints["right_shoulder"][w, 2] += p.intensity

    pitch = np.clip(np.cumsum(pitch_rate) * dt, -MAX_PITCH_DEG, MAX_PITCH_DEG)
    tz = np.clip(np.cumsum(z_rate) * dt, -MAX_TRANSLATION_CM, MAX_TRANSLATION_CM)

    # pass 2: arm plants, placed relative to the current head position
    for p in plants:
        w = window(p)
        if p.behaviour_id == "fold_arms":
            root_y = NEUTRAL_POSE["root"][1]
            half = p.intensity / 2.0
            joints["left_elbow"][w] = (-half, root_y + 5.0, 0.0)
            joints["right_wrist"][w] = (half, root_y + 5.0, 0.0)
            joints["right_elbow"][w] = (half, root_y + 5.0, 0.0)
            joints["left_wrist"][w] = (-half, root_y + 5.0, 0.0)
        elif p.behaviour_id == "hand_to_face":
            joints["left_wrist"][w] = joints["head"][w] + [p.intensity, 0.0, 0.0]
        elif p.behaviour_id == "hand_to_mouth":
            joints["right_wrist"][w] = (joints["head"][w]
                                        + [p.intensity, -10.0, 0.0])

    return [
        KeypointFrame(
            frame_index=i,
            t=float(times[i]),
            head_roll=float(roll[i]),
            head_pitch=float(pitch[i]),
            head_yaw=float(yaw[i]),
            head_translation=(0.0, 0.0, float(tz[i])),
            joints={name: tuple(arr[i]) for name, arr in joints.items()},
            aus={name: float(arr[i]) for name, arr in aus.items()},
        )
        for i in range(n)
    ]


def _smooth_field(rng: np.random.Generator, shape, n_modes: int = 3) -> np.ndarray:
    """Low-frequency random field: a few cosine modes per channel."""
    c = shape[0]
    spatial = shape[1:]
    grids = np.meshgrid(*[np.linspace(0.0, 1.0, s) for s in spatial], indexing="ij")
    amps = rng.normal(scale=0.5, size=(c, n_modes))
    phases = rng.uniform(0, 2 * np.pi, size=(c, n_modes))
    freqs = rng.integers(1, 4, size=(c, n_modes, len(spatial)))
    out = np.zeros(shape)
    for m in range(n_modes):
        arg = np.zeros((c,) + tuple(spatial))
        for d, g in enumerate(grids):
            arg += freqs[:, m, d].reshape((c,) + (1,) * len(spatial)) * g
        out += amps[:, m].reshape((c,) + (1,) * len(spatial)) * np.cos(
            2 * np.pi * arg + phases[:, m].reshape((c,) + (1,) * len(spatial)))
    return out


def _behaviour_patterns(spec: SynthSpec, shape) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 7777]))
    return rng.normal(scale=0.5, size=(NUM_BEHAVIOURS,) + tuple(shape))


def gen_synthetic_video(spec: SynthSpec, index: int) -> VideoSample:
    """One deterministic synthetic sample; a pure function of (spec, index)."""
    if not 0 <= index < spec.num_videos:
        raise UsageError(f"video index {index} outside [0, {spec.num_videos})")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index]))
    cfg = spec.model

    plants = (spec.plants[index] if spec.plants is not None
              else _random_schedule(rng, spec))
    stream = _build_keypoints(spec, plants)
    ranges = chunk_video(len(stream), spec.fps)

    face_patterns = _behaviour_patterns(spec, cfg.face_shape)
    ctx_patterns = _behaviour_patterns(spec, cfg.context_shape)

    chunks = []
    for k, r in enumerate(ranges):
        conf = encode_chunk(stream, r)
        # base fields are shared across videos (seeded per chunk index), so
        # the visual channels vary only through the behaviour modulation and
        # never act as per-video identifiers the model could memorize
        base_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 5555, k]))
        face = spec.distractor_scale * _smooth_field(base_rng, cfg.face_shape)
        face += spec.visual_gain * np.tensordot(conf, face_patterns, axes=1)
        context = spec.distractor_scale * _smooth_field(base_rng, cfg.context_shape)
        context += spec.visual_gain * np.tensordot(conf, ctx_patterns, axes=1)
        if spec.distractor_pool > 0:
            pool_rng = np.random.default_rng(np.random.SeedSequence(
                [spec.seed, 6666, int(rng.integers(spec.distractor_pool))]))
            audio = spec.distractor_scale * pool_rng.normal(size=cfg.audio_dim)
        else:
            audio = spec.distractor_scale * rng.normal(size=cfg.audio_dim)
        chunks.append(ChunkFeatures(
            face=face.astype(np.float32),
            context=context.astype(np.float32),
            audio=audio.astype(np.float32),
            behaviour=conf,
        ))

    ethnicity = cfg.ethnicities[int(rng.integers(len(cfg.ethnicities)))]
    gender = cfg.genders[int(rng.integers(len(cfg.genders)))]
    age = float(rng.uniform(18.0, 80.0))
    attractiveness = float(rng.uniform()) if ethnicity == "caucasian" else None
    metadata = encode_metadata(ethnicity, gender, age, attractiveness, cfg)

    if spec.distractor_pool > 0:
        pool_rng = np.random.default_rng(np.random.SeedSequence(
            [spec.seed, 6667, int(rng.integers(spec.distractor_pool))]))
        transcript = (spec.distractor_scale
                      * pool_rng.normal(size=cfg.transcript_dim)).astype(np.float32)
    else:
        transcript = (spec.distractor_scale
                      * rng.normal(size=cfg.transcript_dim)).astype(np.float32)

    mean_behaviour = np.mean([c.behaviour for c in chunks], axis=0)
    raw = (spec.trait_bias
           + spec.behaviour_weights @ (mean_behaviour - NEUTRAL_REFERENCE)
           + spec.metadata_weights @ metadata.vector().astype(np.float64))
    raw = raw + spec.noise * rng.normal(size=5)
    targets = TraitScores.from_array(np.clip(raw, 0.0, 1.0)).require_unit_range()

    return VideoSample(
        video_id=f"synth-{spec.seed}-{index:04d}",
        fps=spec.fps,
        chunks=chunks,
        metadata=metadata,
        transcript=transcript,
        targets=targets,
        split=_split_for_index(spec, index),
        keypoints=stream,
    )


def _split_for_index(spec: SynthSpec, index: int) -> str:
    order = np.random.default_rng(
        np.random.SeedSequence([spec.seed, 424242])).permutation(spec.num_videos)
    rank = int(np.where(order == index)[0][0])
    n_train = round(spec.num_videos * 3 / 5)
    n_val = round(spec.num_videos / 5)
    if rank < n_train:
        return "train"
    if rank < n_train + n_val:
        return "val"
    return "test"


def gen_synthetic_dataset(spec: SynthSpec) -> list[VideoSample]:
    """All videos of the spec, split 3:1:1 into train/val/test."""
    return [gen_synthetic_video(spec, i) for i in range(spec.num_videos)]


# --------------------------------------------------------------------------
# dataset manifest IO

MANIFEST_NAME = "manifest.json"


@dataclass
class ManifestEntry:
    video_id: str
    fps: float
    split: str
    keypoints_path: Path
    chunk_paths: list[dict[str, Path]]
    transcript_path: Path
    metadata: DemographicMetadata
    targets: TraitScores


@dataclass
class DatasetManifest:
    root: Path
    videos: list[ManifestEntry]

    def load_video(self, entry: ManifestEntry) -> VideoSample:
        chunks = [
            ChunkFeatures(
                face=load_tensor(paths["face"]),
                context=load_tensor(paths["context"]),
                audio=load_tensor(paths["audio"]),
                behaviour=load_tensor(paths["behaviour"]),
            )
            for paths in entry.chunk_paths
        ]
        return VideoSample(
            video_id=entry.video_id,
            fps=entry.fps,
            chunks=chunks,
            metadata=entry.metadata,
            transcript=load_tensor(entry.transcript_path),
            targets=entry.targets,
            split=entry.split,
            keypoints=load_keypoints(entry.keypoints_path),
        )

    def load_samples(self) -> list[VideoSample]:
        return [self.load_video(e) for e in self.videos]


def save_dataset(samples: Sequence[VideoSample], out_dir,
                 model_cfg: Optional[ModelConfig] = None) -> Path:
    """Write keypoints, chunk tensors, transcripts and the JSON manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for sample in samples:
        vdir = out / sample.video_id
        vdir.mkdir(exist_ok=True)
        if sample.keypoints is None:
            raise UsageError(f"sample {sample.video_id} carries no keypoints to save")
        write_keypoints(sample.keypoints, vdir / "keypoints.jsonl")
        chunk_records = []
        for k, chunk in enumerate(sample.chunks):
            rec = {}
            for kind in ("face", "context", "audio", "behaviour"):
                fname = f"chunk{k:03d}.{kind}.mprt"
                save_tensor(vdir / fname, getattr(chunk, kind))
                rec[kind] = f"{sample.video_id}/{fname}"
            chunk_records.append(rec)
        save_tensor(vdir / "transcript.mprt", sample.transcript)
        entries.append({
            "id": sample.video_id,
            "fps": sample.fps,
            "split": sample.split,
            "keypoints": f"{sample.video_id}/keypoints.jsonl",
            "chunks": chunk_records,
            "transcript": f"{sample.video_id}/transcript.mprt",
            "metadata": {
                "ethnicity": sample.metadata.ethnicity.tolist(),
                "gender": sample.metadata.gender.tolist(),
                "age": sample.metadata.age,
                "attractiveness": sample.metadata.attractiveness,
            },
            "targets": {n: getattr(sample.targets, n)
                        for n in ("openness", "conscientiousness", "extroversion",
                                  "agreeableness", "neuroticism")},
        })
    manifest = {"format": "traitfusion-dataset", "version": 1, "videos": entries}
    if model_cfg is not None:
        manifest["model"] = _config_to_json(model_cfg)
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")
    return out / MANIFEST_NAME


def load_manifest(path) -> tuple[DatasetManifest, Optional[ModelConfig]]:
    """Parse and validate a dataset manifest; all referenced files must exist
    and chunk counts must match the chunking rule for each video's length."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest {path} does not exist")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: malformed JSON ({e.msg})") from None
    if doc.get("format") != "traitfusion-dataset":
        raise DataError(f"{path}: not a traitfusion dataset manifest")
    root = path.parent
    entries = []
    for i, v in enumerate(doc.get("videos", [])):
        try:
            keypoints_path = root / v["keypoints"]
            chunk_paths = [
                {kind: root / rec[kind]
                 for kind in ("face", "context", "audio", "behaviour")}
                for rec in v["chunks"]
            ]
            entry = ManifestEntry(
                video_id=str(v["id"]),
                fps=float(v["fps"]),
                split=str(v["split"]),
                keypoints_path=keypoints_path,
                chunk_paths=chunk_paths,
                transcript_path=root / v["transcript"],
                metadata=DemographicMetadata(
                    ethnicity=np.asarray(v["metadata"]["ethnicity"], dtype=np.float64),
                    gender=np.asarray(v["metadata"]["gender"], dtype=np.float64),
                    age=float(v["metadata"]["age"]),
                    attractiveness=float(v["metadata"]["attractiveness"]),
                ),
                targets=TraitScores(**v["targets"]).require_unit_range(),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{path}: video entry {i} is malformed ({e})") from None
        if entry.split not in ("train", "val", "test"):
            raise DataError(f"{path}: video {entry.video_id} has bad split "
                            f"{entry.split!r}")
        for p in [entry.keypoints_path, entry.transcript_path,
                  *(q for rec in entry.chunk_paths for q in rec.values())]:
            if not Path(p).exists():
                raise DataError(f"{path}: referenced file missing: {p}")
        n_frames = sum(1 for line in open(entry.keypoints_path) if line.strip())
        expected_chunks = len(chunk_video(n_frames, entry.fps))
        if len(entry.chunk_paths) != expected_chunks:
            raise DataError(
                f"{path}: video {entry.video_id} has {len(entry.chunk_paths)} "
                f"chunks, chunking rule expects {expected_chunks}")
        entries.append(entry)
    model_cfg = _config_from_json(doc["model"]) if "model" in doc else None
    return DatasetManifest(root=root, videos=entries), model_cfg


# --------------------------------------------------------------------------
# SynthSpec JSON form (CLI surface)

def synth_spec_from_json(doc: dict) -> SynthSpec:
    kwargs = dict(doc)
    if "model" in kwargs:
        kwargs["model"] = _config_from_json(kwargs["model"])
    if kwargs.get("plants") is not None:
        kwargs["plants"] = [
            [Plant(p["behaviour"], float(p["intensity"]), float(p["t0"]),
                   float(p["t1"])) for p in schedule]
            for schedule in kwargs["plants"]
        ]
    try:
        return SynthSpec(**kwargs)
    except TypeError as e:
        raise DataError(f"bad synth spec: {e}") from None


def synth_spec_to_json(spec: SynthSpec) -> dict:
    doc = {
        "num_videos": spec.num_videos,
        "duration_s": spec.duration_s,
        "fps": spec.fps,
        "seed": spec.seed,
        "noise": spec.noise,
        "visual_gain": spec.visual_gain,
        "max_plants": spec.max_plants,
        "distractor_pool": spec.distractor_pool,
        "distractor_scale": spec.distractor_scale,
        "model": _config_to_json(spec.model),
        "trait_bias": spec.trait_bias.tolist(),
        "behaviour_weights": spec.behaviour_weights.tolist(),
        "metadata_weights": spec.metadata_weights.tolist(),
    }
    if spec.plants is not None:
        doc["plants"] = [
            [{"behaviour": p.behaviour_id, "intensity": p.intensity,
              "t0": p.t0, "t1": p.t1} for p in schedule]
            for schedule in spec.plants
        ]
    return doc
