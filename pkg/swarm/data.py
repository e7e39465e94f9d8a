"""Synthetic video-like sequences, frame selection, batching and accuracy.

Each class is a sinusoid whose temporal frequency grows with the class id, so
telling classes apart needs the order of the frames, not just their values.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from .models.base import SequenceBatch
from .utils import constants
from .utils.handlers import iter_records, write_records

logger = logging.getLogger('SwarmData')

SELECTION_METHODS = ('shadow', 'stride')


@dataclass
class SyntheticVideo:
    """Variable-length sequence of feature frames with a class label"""
    frames: np.ndarray
    label: int

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError(f"a video needs at least one frame of features, got shape {self.frames.shape}")
        self.label = int(self.label)

    def __len__(self) -> int:
        return int(self.frames.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.frames.shape[1])


def class_pattern(label: int, length: int, num_classes: int, feature_dim: int) -> np.ndarray:
    """Noise-free frames of a class: feature j of frame t is sin(2 pi (c+1) t / (2 (C+1)) + j pi / g)"""
    t = np.arange(length, dtype=np.float64)[:, None]
    j = np.arange(feature_dim, dtype=np.float64)[None, :]
    frequency = (label + 1) / (2.0 * (num_classes + 1))
    return np.sin(2.0 * np.pi * frequency * t + j * np.pi / feature_dim)


def generate_dataset(num_classes: int, samples_per_class: int, min_len: int, max_len: int,
                     feature_dim: int, noise_sigma: float, seed: int) -> List[SyntheticVideo]:
    """Class-major list of num_classes * samples_per_class videos, reproducible from the seed"""
    if min_len < 1:
        raise ValueError(f"min_len must be at least 1, got {min_len}")
    if max_len < min_len:
        raise ValueError(f"max_len {max_len} is shorter than min_len {min_len}")
    if num_classes < 1 or samples_per_class < 0 or feature_dim < 1:
        raise ValueError("num_classes and feature_dim must be positive, samples_per_class nonnegative")
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be nonnegative, got {noise_sigma}")

    rng = np.random.default_rng(seed)
    videos = []
    for label in range(num_classes):
        for _ in range(samples_per_class):
            length = int(rng.integers(min_len, max_len + 1))
            frames = class_pattern(label, length, num_classes, feature_dim)
            if noise_sigma > 0:
                frames = frames + rng.normal(0.0, noise_sigma, frames.shape)
            videos.append(SyntheticVideo(frames, label))
    logger.debug(f"Generated {len(videos)} videos over {num_classes} classes (seed={seed})")
    return videos


def shadow_indices(length: int, max_seq_len: int) -> List[int]:
    """First frames up to max_seq_len, then the last frame repeated"""
    if length < 1 or max_seq_len < 1:
        raise ValueError("length and max_seq_len must be positive")
    kept = list(range(min(length, max_seq_len)))
    return kept + [length - 1] * (max_seq_len - len(kept))


def stride_indices(length: int, target_count: int) -> List[int]:
    """Every floor(length / target)-th frame from 0, padded with the last frame"""
    if length < 1 or target_count < 1:
        raise ValueError("length and target_count must be positive")
    step = max(1, length // target_count)
    kept = list(range(0, length, step))[:target_count]
    return kept + [length - 1] * (target_count - len(kept))


def select_frames_shadow(frames: np.ndarray, max_seq_len: int) -> np.ndarray:
    frames = np.asarray(frames)
    return frames[shadow_indices(len(frames), max_seq_len)]


def select_frames_stride(frames: np.ndarray, target_count: int) -> np.ndarray:
    frames = np.asarray(frames)
    return frames[stride_indices(len(frames), target_count)]


def select_frames(frames: np.ndarray, count: int, method: str = 'shadow') -> np.ndarray:
    if method == 'shadow':
        return select_frames_shadow(frames, count)
    if method == 'stride':
        return select_frames_stride(frames, count)
    raise ValueError(f"unknown frame selection method {method!r}, choose from {SELECTION_METHODS}")


def center_crop(frame: np.ndarray, side: int) -> np.ndarray:
    """Square window around the centre; odd remainders drop the extra row/column at the bottom/right"""
    frame = np.asarray(frame)
    height, width = frame.shape[:2]
    if side < 1 or side > height or side > width:
        raise ValueError(f"cannot crop a {side}x{side} square from a {height}x{width} frame")
    top = (height - side) // 2
    left = (width - side) // 2
    return frame[top:top + side, left:left + side]


def accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    predictions = np.asarray(predictions).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if predictions.size == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    if predictions.shape != labels.shape:
        raise ValueError(f"{predictions.size} predictions for {labels.size} labels")
    return float(np.count_nonzero(predictions == labels) / predictions.size)


def split_dataset(videos: Sequence[SyntheticVideo], train_count: int,
                  seed: int) -> Tuple[List[SyntheticVideo], List[SyntheticVideo]]:
    """Seeded shuffle, then the first train_count videos train and the rest test"""
    if not 0 <= train_count <= len(videos):
        raise ValueError(f"train_count {train_count} out of range for {len(videos)} videos")
    order = np.random.default_rng(seed).permutation(len(videos))
    shuffled = [videos[i] for i in order]
    return shuffled[:train_count], shuffled[train_count:]


def to_batch(videos: Sequence[SyntheticVideo], frames: int, method: str = 'shadow',
             num_classes: Optional[int] = None, max_seq_len: Optional[int] = None) -> SequenceBatch:
    """Stack videos into [batch, frames, features] after frame selection.

    max_seq_len first cuts every video to its leading frames, so the stride
    method steps by floor(max_seq_len / frames) over long videos.
    """
    if not videos:
        raise ValueError("cannot batch an empty list of videos")
    if max_seq_len is not None and max_seq_len < 1:
        raise ValueError(f"max_seq_len must be positive, got {max_seq_len}")
    if num_classes is None:
        num_classes = max(v.label for v in videos) + 1
    inputs = np.stack([select_frames(v.frames[:max_seq_len], frames, method) for v in videos])
    labels = np.array([v.label for v in videos], dtype=np.int64)
    return SequenceBatch(inputs, labels, num_classes)


def jitter_features(frames: np.ndarray, zoom_range: float = constants.ZOOM_RANGE,
                    shift_range: float = constants.WIDTH_SHIFT_RANGE,
                    rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Feature-space augmentation: one random scale per video and one random offset per feature"""
    rng = rng or np.random.default_rng()
    frames = np.asarray(frames, dtype=np.float64)
    scale = 1.0 + rng.uniform(-zoom_range, zoom_range)
    shift = rng.uniform(-shift_range, shift_range, frames.shape[-1])
    return frames * scale + shift


def augment_videos(videos: Sequence[SyntheticVideo], copies: int, seed: int,
                   zoom_range: float = constants.ZOOM_RANGE,
                   shift_range: float = constants.WIDTH_SHIFT_RANGE) -> List[SyntheticVideo]:
    """Originals followed by ``copies`` jittered versions of each"""
    rng = np.random.default_rng(seed)
    out = list(videos)
    for _ in range(copies):
        out += [SyntheticVideo(jitter_features(v.frames, zoom_range, shift_range, rng), v.label) for v in videos]
    return out


def save_dataset(path: Union[str, Path], videos: Sequence[SyntheticVideo]) -> Path:
    """One line per video: label, length, feature_dim and the flattened frames"""
    records = [
        {'label': v.label, 'length': len(v), 'feature_dim': v.feature_dim, 'frames': v.frames.reshape(-1).tolist()}
        for v in videos
    ]
    path = write_records(path, records)
    logger.info(f"Saved {len(records)} videos to {path}")
    return path


def load_dataset(path: Union[str, Path]) -> List[SyntheticVideo]:
    videos = []
    for record in iter_records(path):
        try:
            frames = np.asarray(record['frames'], dtype=np.float64).reshape(record['length'], record['feature_dim'])
            videos.append(SyntheticVideo(frames, record['label']))
        except (KeyError, ValueError) as e:
            logger.error(f"Bad dataset record in {path}: {e}")
            raise ValueError(f"Bad dataset record in {path}: {e}") from e
    logger.info(f"Loaded {len(videos)} videos from {path}")
    return videos
