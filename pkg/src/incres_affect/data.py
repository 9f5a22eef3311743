"""Annotated face frames: CSV/PNG I/O, subject-level splits, synthetic data.

On disk a dataset is a directory holding ``annotations.csv`` and images at
``<root>/<video_id>/<frame_index>.png``. The CSV header is exactly::

    video_id,subject_id,frame_index,image_path,valence,arousal

with ``image_path`` relative to the dataset root.
"""
from __future__ import annotations

import csv
import math
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (EmptyDataset, IoFailure, LabelOutOfRange, MalformedAnnotation, MissingImage,
                     TooFewSubjects)
from .tensor import Rng

IMAGE_SIZE = 49
CSV_HEADER = ("video_id", "subject_id", "frame_index", "image_path", "valence", "arousal")
ANNOTATIONS = "annotations.csv"


@dataclass(eq=False)
class AnnotatedFrame:
    image: np.ndarray  # 49 x 49 x 3, values in [0, 1]
    valence: float
    arousal: float
    subject_id: str
    video_id: str
    frame_index: int

    def __post_init__(self):
        if self.image.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
            raise ValueError(f"frame image must be 49x49x3, got {self.image.shape}")
        for name in ("valence", "arousal"):
            if not -1.0 <= getattr(self, name) <= 1.0:
                raise LabelOutOfRange(f"{name}={getattr(self, name)} outside [-1, 1]")

    @property
    def labels(self) -> tuple[float, float]:
        return (self.valence, self.arousal)


@dataclass
class DatasetSplit:
    train: list[AnnotatedFrame]
    validation: list[AnnotatedFrame]
    validation_subject_fraction: float = 0.10

    def subjects(self, part: str) -> set[str]:
        return {f.subject_id for f in getattr(self, part)}


def frames_to_arrays(frames) -> tuple[np.ndarray, np.ndarray]:
    """Stack frames into (n, 49, 49, 3) images and (n, 2) labels."""
    if not frames:
        return np.zeros((0, IMAGE_SIZE, IMAGE_SIZE, 3)), np.zeros((0, 2))
    images = np.stack([f.image for f in frames])
    labels = np.array([f.labels for f in frames], dtype=np.float64)
    return images, labels


def image_relpath(video_id: str, frame_index: int) -> str:
    return f"{video_id}/{frame_index}.png"


def _read_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.size != (IMAGE_SIZE, IMAGE_SIZE):
            im = im.resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
        return np.asarray(im, dtype=np.float64) / 255.0


def load_dataset(image_dir, annotations=None) -> list[AnnotatedFrame]:
    """Read frames listed in the annotation CSV, in file order."""
    root = Path(image_dir)
    ann = Path(annotations) if annotations is not None else root / ANNOTATIONS
    if not ann.is_file():
        raise IoFailure(f"annotation file not found: {ann}")
    frames = []
    with open(ann, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return frames
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise MalformedAnnotation(f"{ann}: header must be {','.join(CSV_HEADER)}, got {','.join(header)}")
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_HEADER):
                raise MalformedAnnotation(f"{ann} row {row_no}: expected 6 fields, got {len(row)}")
            video_id, subject_id, frame_index, image_path, valence, arousal = row
            try:
                frame_index = int(frame_index)
                valence = float(valence)
                arousal = float(arousal)
            except ValueError as exc:
                raise MalformedAnnotation(f"{ann} row {row_no}: {exc}") from None
            if frame_index < 0:
                raise MalformedAnnotation(f"{ann} row {row_no}: negative frame_index")
            for name, value in (("valence", valence), ("arousal", arousal)):
                if not -1.0 <= value <= 1.0:
                    raise LabelOutOfRange(f"{ann} row {row_no}: {name}={value} outside [-1, 1]")
            path = root / image_path
            if not path.is_file():
                raise MissingImage(f"{ann} row {row_no}: image not found: {path}")
            try:
                image = _read_image(path)
            except OSError as exc:
                raise MissingImage(f"{ann} row {row_no}: cannot decode {path}: {exc}") from None
            frames.append(AnnotatedFrame(image, valence, arousal, subject_id, video_id, frame_index))
    return frames


def write_dataset(frames, root) -> Path:
    """Write PNGs and annotations.csv; returns the CSV path."""
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
        ann = root / ANNOTATIONS
        with open(ann, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for f in frames:
                rel = image_relpath(f.video_id, f.frame_index)
                (root / f.video_id).mkdir(exist_ok=True)
                pixels = np.clip(np.rint(f.image * 255.0), 0, 255).astype(np.uint8)
                Image.fromarray(pixels, "RGB").save(root / rel)
                writer.writerow([f.video_id, f.subject_id, f.frame_index, rel,
                                 repr(float(f.valence)), repr(float(f.arousal))])
    except OSError as exc:
        raise IoFailure(f"cannot write dataset to {root}: {exc}") from exc
    return ann


def validation_subject_count(n_subjects: int, fraction: float) -> int:
    return max(1, int(math.floor(fraction * n_subjects + 0.5)))


def split_by_subject(frames, fraction: float = 0.10, rng: Rng | None = None) -> DatasetSplit:
    """Hold out whole subjects for validation; frame order is preserved."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    subjects = sorted({f.subject_id for f in frames})
    if len(subjects) < 2:
        raise TooFewSubjects(f"need at least 2 subjects to split, got {len(subjects)}")
    rng = rng or Rng(0)
    order = rng.permutation(len(subjects))
    k = min(validation_subject_count(len(subjects), fraction), len(subjects) - 1)
    held_out = {subjects[i] for i in order[:k]}
    train = [f for f in frames if f.subject_id not in held_out]
    val = [f for f in frames if f.subject_id in held_out]
    return DatasetSplit(train, val, fraction)


# Synthetic faces ---------------------------------------------------------

_YY, _XX = np.meshgrid(np.linspace(-1, 1, IMAGE_SIZE), np.linspace(-1, 1, IMAGE_SIZE), indexing="ij")


def _subject_look(subject_id: str) -> dict:
    g = np.random.Generator(np.random.PCG64(zlib.crc32(subject_id.encode("utf-8"))))
    return {
        "skin_blue": g.uniform(0.5, 0.9),
        "background_blue": g.uniform(0.0, 0.3),
        "offset": g.uniform(-0.06, 0.06, 2),
        "radius": g.uniform(0.62, 0.72),
    }


def render_face(valence: float, arousal: float, subject_id: str) -> np.ndarray:
    """Noise-free synthetic face whose appearance encodes the two labels.

    Valence tints the red channel of the face and bends the mouth; arousal
    tints green and opens the eyes. Subject identity only changes the blue
    channel, the face size, and its position, so labels transfer across
    subjects.
    """
    look = _subject_look(subject_id)
    dy, dx = look["offset"]
    yy, xx = _YY - dy, _XX - dx
    face = ((yy / (look["radius"] * 1.15)) ** 2 + (xx / look["radius"]) ** 2) <= 1.0
    img = np.empty((IMAGE_SIZE, IMAGE_SIZE, 3))
    img[:] = (0.3, 0.3, look["background_blue"])
    img[face] = (0.3 + 0.3 * valence, 0.3 + 0.3 * arousal, look["skin_blue"])

    eye_h = 0.05 + 0.07 * (arousal + 1.0)
    for ex in (-0.3, 0.3):
        eye = ((yy + 0.2) / eye_h) ** 2 + ((xx - ex) / 0.14) ** 2 <= 1.0
        img[eye] = (0.05, 0.05, 0.05)
    curve = 0.42 - 0.22 * valence * (1.0 - (xx / 0.4) ** 2)
    mouth = (np.abs(xx) <= 0.4) & (np.abs(yy - curve) <= 0.05)
    img[mouth] = (0.05, 0.05, 0.05)
    return img


def _draw_labels(rng: Rng, n: int, center_bias: float) -> np.ndarray:
    labels = np.empty((n, 2))
    for k in range(n):
        if rng.random() < center_bias:
            while True:
                v, a = rng.normal(2, 0.1)
                if abs(v) <= 1.0 and abs(a) <= 1.0:
                    break
        else:
            r = math.sqrt(rng.random())
            theta = rng.uniform(0.0, 2.0 * math.pi)
            v, a = r * math.cos(theta), r * math.sin(theta)
        labels[k] = (v, a)
    return np.clip(labels, -1.0, 1.0)


def synth_generate(n_subjects: int, frames_per_subject: int, center_bias: float = 0.6,
                   rng: Rng | None = None, noise: float = 0.02) -> list[AnnotatedFrame]:
    """Synthetic dataset: one video per subject, labels from a center-heavy mixture.

    With probability ``center_bias`` a label pair comes from N(0, 0.1^2) per
    axis (resampled until inside [-1, 1]^2), otherwise uniformly from the
    unit disk.
    """
    if n_subjects < 1 or frames_per_subject < 1:
        raise ValueError("n_subjects and frames_per_subject must be at least 1")
    if not 0.0 <= center_bias <= 1.0:
        raise ValueError("center_bias must lie in [0, 1]")
    rng = rng or Rng(0)
    frames = []
    for s in range(n_subjects):
        subject_id = f"subject{s:03d}"
        video_id = f"video{s:03d}"
        labels = _draw_labels(rng, frames_per_subject, center_bias)
        for t, (v, a) in enumerate(labels):
            img = render_face(v, a, subject_id)
            if noise > 0:
                img = img + rng.normal(img.shape, noise)
            frames.append(AnnotatedFrame(np.clip(img, 0.0, 1.0), float(v), float(a),
                                         subject_id, video_id, t))
    return frames


def require_frames(frames, what="training"):
    if not frames:
        raise EmptyDataset(f"{what} set is empty")
    return frames
