"""Rule-based behaviour confidences from keypoint streams.

Thirteen low-level behaviours are scored per frame: a feature is extracted
from head pose, skeleton joints or facial action-unit intensities, then
mapped through a parameterized sigmoid to a confidence in [0, 1]. Derivative
features use a three-frame central stencil, so boundary frames (and frames
failing a rule's gate) score 0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, UsageError

# fixed output order of the confidence vector
BEHAVIOURS = (
    "head_tilt",
    "thrust",
    "bob",
    "lips_in",
    "mouth_corner",
    "frown",
    "small_mouth",
    "wrinkle",
    "crouch",
    "lean_forward",
    "fold_arms",
    "hand_to_face",
    "hand_to_mouth",
)

REQUIRED_JOINTS = (
    "head",
    "root",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_knee",
    "right_knee",
)

# AU intensities ride the 0..5 FACS scale
AU_SCALE = 5.0

_AU_FOR_BEHAVIOUR = {
    "lips_in": "lip_suck",
    "mouth_corner": "lip_stretcher",
    "frown": "brow_lowerer",
    "small_mouth": "lip_tightener",
    "wrinkle": "nose_wrinkler",
}

# gate thresholds; units follow the rule units (cm/s, deg/s, cm)
THRUST_XY_RATE_LIMIT = 10.0
BOB_YAW_RATE_LIMIT = 20.0
FOLD_ARMS_ELBOW_Y_LIMIT = 10.0
MOUTH_Y_OFFSET = -10.0


@dataclass(frozen=True)
class KeypointFrame:
    """One timestamped frame of head pose, joints and AU intensities.

    Angles are degrees, positions centimeters, AU intensities in [0, 5].
    """

    frame_index: int
    t: float
    head_roll: float
    head_pitch: float
    head_yaw: float
    head_translation: tuple[float, float, float]
    joints: dict[str, tuple[float, float, float]]
    aus: dict[str, float] = field(default_factory=dict)

    def joint(self, name: str) -> np.ndarray:
        try:
            return np.asarray(self.joints[name], dtype=np.float64)
        except KeyError:
            raise DataError(
                f"frame {self.frame_index} missing required joint '{name}'"
            ) from None


@dataclass(frozen=True)
class BehaviourRule:
    """Sigmoid parameters (center, multiplier) for one behaviour.

    `c_sigma`/`lambda_sigma` are None for the direct AU-scaled rule, which
    has no sigmoid parameters.
    """

    behaviour_id: str
    c_sigma: Optional[float]
    lambda_sigma: Optional[float]
    gating: Optional[str] = None


DEFAULT_RULES: dict[str, BehaviourRule] = {
    r.behaviour_id: r
    for r in (
        BehaviourRule("head_tilt", 10.0, 1.0),
        BehaviourRule("thrust", -25.0, 1.0,
                      "|x,y rates| < 10 cm/s and z-rate sign stable"),
        BehaviourRule("bob", -50.0, 1.0,
                      "|yaw rate| < 20 deg/s and pitch-rate sign stable"),
        BehaviourRule("lips_in", None, None),
        BehaviourRule("mouth_corner", 1.2, 6.0),
        BehaviourRule("frown", 1.2, 6.0),
        BehaviourRule("small_mouth", 1.2, 6.0),
        BehaviourRule("wrinkle", 1.2, 6.0),
        BehaviourRule("crouch", 30.0, -0.35),
        BehaviourRule("lean_forward", 10.0, 4.0),
        BehaviourRule("fold_arms", 20.0, -0.5, "both elbows within 10 cm above root"),
        BehaviourRule("hand_to_face", 35.0, -0.5),
        BehaviourRule("hand_to_mouth", 25.0, -0.5),
    )
}


def sigmoid_confidence(x: float, c: float, lam: float) -> float:
    """1 / (1 + exp(-lam * (x - c))), evaluated overflow-free."""
    z = lam * (x - c)
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def central_derivative(values: Sequence[float], times: Sequence[float],
                       i: int) -> Optional[float]:
    """(values[i+1] - values[i-1]) / (times[i+1] - times[i-1]), None at boundaries."""
    if len(values) != len(times):
        raise DataError(
            f"series lengths differ: {len(values)} values vs {len(times)} times")
    if i <= 0 or i >= len(values) - 1:
        return None
    dt = times[i + 1] - times[i - 1]
    if dt <= 0 or times[i] <= times[i - 1] or times[i + 1] <= times[i]:
        raise DataError(f"timestamps not strictly increasing around index {i}")
    return (values[i + 1] - values[i - 1]) / dt


def _same_sign(a: float, b: float) -> bool:
    return (a > 0) == (b > 0) and (a < 0) == (b < 0)


def _gated_rate(series, times, i, cross_rates, limit) -> Optional[float]:
    """Central rate at i, gated on cross-axis rates and sign stability at i+-1."""
    d = central_derivative(series, times, i)
    if d is None:
        return None
    for cross in cross_rates:
        dc = central_derivative(cross, times, i)
        if dc is None or abs(dc) >= limit:
            return None
    d_prev = central_derivative(series, times, i - 1)
    d_next = central_derivative(series, times, i + 1)
    if d_prev is None or d_next is None or not _same_sign(d_prev, d_next):
        return None
    return d


def extract_feature(stream: Sequence[KeypointFrame], behaviour_id: str,
                    i: int) -> Optional[float]:
    """The raw feature for one behaviour at frame i, or None when gated out
    or too close to a stream boundary for the derivative stencil."""
    if behaviour_id not in BEHAVIOURS:
        raise UsageError(f"unknown behaviour id {behaviour_id!r}")
    if not 0 <= i < len(stream):
        raise UsageError(f"frame index {i} out of range for stream of {len(stream)}")
    f = stream[i]

    if behaviour_id == "head_tilt":
        return abs(f.head_roll)

    if behaviour_id == "thrust":
        times = [g.t for g in stream]
        tx = [g.head_translation[0] for g in stream]
        ty = [g.head_translation[1] for g in stream]
        tz = [g.head_translation[2] for g in stream]
        return _gated_rate(tz, times, i, (tx, ty), THRUST_XY_RATE_LIMIT)

    if behaviour_id == "bob":
        times = [g.t for g in stream]
        pitch = [g.head_pitch for g in stream]
        yaw = [g.head_yaw for g in stream]
        return _gated_rate(pitch, times, i, (yaw,), BOB_YAW_RATE_LIMIT)

    if behaviour_id in _AU_FOR_BEHAVIOUR:
        return float(f.aus.get(_AU_FOR_BEHAVIOUR[behaviour_id], 0.0))

    head = f.joint("head")
    if behaviour_id == "crouch":
        dl = np.linalg.norm(f.joint("left_knee") - head)
        dr = np.linalg.norm(f.joint("right_knee") - head)
        return float((dl + dr) / 2.0)

    if behaviour_id == "lean_forward":
        mid = (f.joint("left_shoulder") + f.joint("right_shoulder")) / 2.0
        return float((mid - f.joint("root"))[2])

    if behaviour_id == "fold_arms":
        root_y = f.joint("root")[1]
        if (f.joint("left_elbow")[1] - root_y >= FOLD_ARMS_ELBOW_Y_LIMIT
                or f.joint("right_elbow")[1] - root_y >= FOLD_ARMS_ELBOW_Y_LIMIT):
            return None
        d1 = np.linalg.norm(f.joint("left_elbow") - f.joint("right_wrist"))
        d2 = np.linalg.norm(f.joint("right_elbow") - f.joint("left_wrist"))
        return float((d1 + d2) / 2.0)

    if behaviour_id == "hand_to_face":
        return float(min(np.linalg.norm(f.joint("left_wrist") - head),
                         np.linalg.norm(f.joint("right_wrist") - head)))

    if behaviour_id == "hand_to_mouth":
        mouth = head + np.array([0.0, MOUTH_Y_OFFSET, 0.0])
        return float(min(np.linalg.norm(f.joint("left_wrist") - mouth),
                         np.linalg.norm(f.joint("right_wrist") - mouth)))

    raise UsageError(f"no extractor for behaviour {behaviour_id!r}")


def encode_frame(stream: Sequence[KeypointFrame], i: int,
                 rules: Optional[dict[str, BehaviourRule]] = None) -> np.ndarray:
    """The 13 behaviour confidences for frame i, in fixed order.

    Absent features (gates, stream boundaries) score 0. The direct AU rule
    maps its intensity as clamp(AU / 5, 0, 1), skipping the sigmoid.
    """
    rules = DEFAULT_RULES if rules is None else rules
    out = np.zeros(len(BEHAVIOURS), dtype=np.float64)
    for j, bid in enumerate(BEHAVIOURS):
        x = extract_feature(stream, bid, i)
        if x is None:
            continue
        rule = rules[bid]
        if rule.c_sigma is None or rule.lambda_sigma is None:
            out[j] = min(max(x / AU_SCALE, 0.0), 1.0)
        else:
            out[j] = sigmoid_confidence(x, rule.c_sigma, rule.lambda_sigma)
    return out


def encode_chunk(stream: Sequence[KeypointFrame], frame_range,
                 rules: Optional[dict[str, BehaviourRule]] = None) -> np.ndarray:
    """Arithmetic mean of per-frame confidence vectors over `frame_range`."""
    indices = list(frame_range)
    if not indices:
        raise UsageError("encode_chunk needs a non-empty frame range")
    acc = np.zeros(len(BEHAVIOURS), dtype=np.float64)
    for i in indices:
        acc += encode_frame(stream, i, rules)
    return acc / len(indices)


def write_confidence_csv(stream: Sequence[KeypointFrame], path,
                         rules: Optional[dict[str, BehaviourRule]] = None) -> None:
    """Per-frame confidences as CSV: frame, t, then the 13 behaviour columns."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["frame", "t", *BEHAVIOURS])
        for i, f in enumerate(stream):
            conf = encode_frame(stream, i, rules)
            writer.writerow([f.frame_index, repr(float(f.t)),
                             *(repr(float(c)) for c in conf)])
