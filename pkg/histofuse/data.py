"""BreaKHis filename grammar, manifests, splits, image loading and augmentation.

File names follow ``METHOD_CLASS_SUBTYPE-YY-NNNN-MAG-SEQ.ext``, for example
``SOB_B_TA-14-4659-40-001.png``: method SOB, benign tubular adenoma, patient
``14-4659``, 40X magnification, first image.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError, ImageFormatError, LabelError, ParseError, ReportInputError, TaxonomyError


logger = logging.getLogger(__name__)

TUMOR_CLASSES = ("B", "M")
BENIGN_SUBTYPES = ("A", "F", "PT", "TA")
MALIGNANT_SUBTYPES = ("DC", "LC", "MC", "PC")
ALL_SUBTYPES = BENIGN_SUBTYPES + MALIGNANT_SUBTYPES
SUBTYPE_NAMES = {
    "A": "adenosis",
    "F": "fibroadenoma",
    "PT": "phyllodes tumor",
    "TA": "tubular adenoma",
    "DC": "ductal carcinoma",
    "LC": "lobular carcinoma",
    "MC": "mucinous carcinoma",
    "PC": "papillary carcinoma",
}
TAXONOMY = {"B": BENIGN_SUBTYPES, "M": MALIGNANT_SUBTYPES}
MAGNIFICATIONS = (40, 100, 200, 400)
IMAGE_EXTENSIONS = ("png", "ppm", "jpg", "jpeg", "tif", "tiff", "bmp")
DEFAULT_RESCALE = 1.0 / 255.0
TASKS = ("binary", "benign", "malignant")
TASK_LABELS = {
    "binary": ("benign", "malignant"),
    "benign": BENIGN_SUBTYPES,
    "malignant": MALIGNANT_SUBTYPES,
}
MANIFEST_HEADER = ("path", "method", "class", "subtype", "patient_id", "magnification", "seq")

_METHOD_RE = re.compile(r"^[A-Za-z]+$")
_YEAR_RE = re.compile(r"^[0-9]{2}$")
_PATIENT_RE = re.compile(r"^[0-9]+[A-Za-z]*$")
_DIGITS_RE = re.compile(r"^[0-9]+$")


@dataclass(frozen=True)
class BiopsyRecord:
    biopsy_method: str
    tumor_class: str
    subtype: str
    patient_id: str
    magnification: int
    seq: int
    path: str = field(default="", compare=False)

    def to_row(self) -> list[str]:
        return [
            self.path,
            self.biopsy_method,
            self.tumor_class,
            self.subtype,
            self.patient_id,
            str(self.magnification),
            str(self.seq),
        ]


def parse_breakhis_filename(name: str | Path) -> BiopsyRecord:
    """Decode a BreaKHis file name; directories in *name* are kept as the record path."""
    path = str(name)
    base = Path(path).name
    stem, dot, ext = base.rpartition(".")
    if not dot or not stem:
        raise ParseError(f"{base}: missing file extension", segment=base)
    if ext.lower() not in IMAGE_EXTENSIONS:
        raise ParseError(f"{base}: unsupported extension '{ext}'", segment=ext)
    head, sep, tail = stem.partition("-")
    if not sep:
        raise ParseError(f"{base}: expected '-' after METHOD_CLASS_SUBTYPE", segment=stem)
    head_parts = head.split("_")
    if len(head_parts) != 3:
        raise ParseError(f"{base}: expected METHOD_CLASS_SUBTYPE, got '{head}'", segment=head)
    method, tumor_class, subtype = head_parts
    if not _METHOD_RE.match(method):
        raise ParseError(f"{base}: bad biopsy method '{method}'", segment=method)
    if tumor_class not in TUMOR_CLASSES:
        raise ParseError(f"{base}: bad tumor class '{tumor_class}'", segment=tumor_class)
    if subtype not in ALL_SUBTYPES:
        raise ParseError(f"{base}: unknown subtype '{subtype}'", segment=subtype)
    if subtype not in TAXONOMY[tumor_class]:
        raise TaxonomyError(
            f"{base}: subtype '{subtype}' does not belong to class '{tumor_class}'",
            segment=f"{tumor_class}_{subtype}",
        )
    tail_parts = tail.split("-")
    if len(tail_parts) != 4:
        raise ParseError(f"{base}: expected YY-NNNN-MAG-SEQ, got '{tail}'", segment=tail)
    year, number, magnification, seq = tail_parts
    if not _YEAR_RE.match(year):
        raise ParseError(f"{base}: bad patient year '{year}'", segment=year)
    if not _PATIENT_RE.match(number):
        raise ParseError(f"{base}: bad patient number '{number}'", segment=number)
    if not _DIGITS_RE.match(magnification) or int(magnification) not in MAGNIFICATIONS:
        raise ParseError(f"{base}: bad magnification '{magnification}'", segment=magnification)
    if not _DIGITS_RE.match(seq) or int(seq) < 1:
        raise ParseError(f"{base}: bad sequence number '{seq}'", segment=seq)
    return BiopsyRecord(
        biopsy_method=method,
        tumor_class=tumor_class,
        subtype=subtype,
        patient_id=f"{year}-{number}",
        magnification=int(magnification),
        seq=int(seq),
        path=path,
    )


def format_breakhis_filename(record: BiopsyRecord, ext: str = "png") -> str:
    return (
        f"{record.biopsy_method}_{record.tumor_class}_{record.subtype}-"
        f"{record.patient_id}-{record.magnification}-{record.seq:03d}.{ext}"
    )


# ---- manifests ----


@dataclass
class Manifest:
    records: list[BiopsyRecord] = field(default_factory=list)
    source: str = ""
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for record in self.records:
            if record.path and record.path in seen:
                raise ConfigError(f"duplicate manifest path: {record.path}")
            seen.add(record.path)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def subset(self, records: Iterable[BiopsyRecord]) -> "Manifest":
        return Manifest(records=list(records), source=self.source)

    def counts(self, by: str = "subtype") -> dict[str, int]:
        out: dict[str, int] = {}
        for record in self.records:
            key = str(getattr(record, by))
            out[key] = out.get(key, 0) + 1
        return dict(sorted(out.items()))

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for record in self.records:
            writer.writerow(record.to_row())
        return buffer.getvalue()

    def skip_report(self) -> str:
        return "".join(f"{path}\t{reason}\n" for path, reason in self.skipped)

    def write(self, manifest_path: str | Path, skip_path: str | Path | None = None) -> None:
        target = Path(manifest_path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(self.to_csv(), encoding="utf-8", newline="")
        if skip_path is not None:
            Path(skip_path).write_text(self.skip_report(), encoding="utf-8", newline="")


def read_manifest(path: str | Path) -> Manifest:
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != MANIFEST_HEADER:
        raise ReportInputError(f"manifest header must be {','.join(MANIFEST_HEADER)}", line=1)
    records: list[BiopsyRecord] = []
    for line_number, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(MANIFEST_HEADER):
            raise ReportInputError(f"expected {len(MANIFEST_HEADER)} fields, got {len(row)}", line=line_number)
        path_value, method, tumor_class, subtype, patient_id, magnification, seq = row
        try:
            record = BiopsyRecord(
                biopsy_method=method,
                tumor_class=tumor_class,
                subtype=subtype,
                patient_id=patient_id,
                magnification=int(magnification),
                seq=int(seq),
                path=path_value,
            )
        except ValueError as exc:
            raise ReportInputError(str(exc), line=line_number) from exc
        if subtype not in TAXONOMY.get(tumor_class, ()):
            raise ReportInputError(f"subtype '{subtype}' does not belong to class '{tumor_class}'", line=line_number)
        if record.magnification not in MAGNIFICATIONS:
            raise ReportInputError(f"bad magnification {record.magnification}", line=line_number)
        records.append(record)
    return Manifest(records=records, source=str(path))


def scan_directory(root: str | Path) -> Manifest:
    """Recursively collect parseable BreaKHis files under *root* in lexicographic order."""
    base = Path(root)
    if not base.is_dir():
        raise NotADirectoryError(f"not a readable directory: {root}")
    records: list[BiopsyRecord] = []
    skipped: list[tuple[str, str]] = []
    files = sorted((p for p in base.rglob("*") if p.is_file()), key=lambda p: p.relative_to(base).as_posix())
    for file_path in files:
        absolute = str(file_path.resolve())
        try:
            record = parse_breakhis_filename(file_path.name)
        except ParseError as exc:
            skipped.append((absolute, str(exc)))
            continue
        records.append(replace(record, path=absolute))
    logger.info("scanned %s: %d records, %d skipped", base, len(records), len(skipped))
    return Manifest(records=records, source=str(base.resolve()), skipped=skipped)


def split_by_magnification(manifest: Manifest) -> dict[int, Manifest]:
    groups: dict[int, list[BiopsyRecord]] = {m: [] for m in MAGNIFICATIONS}
    for record in manifest.records:
        groups[record.magnification].append(record)
    return {m: manifest.subset(groups[m]) for m in MAGNIFICATIONS}


def _group_indices(records: Sequence[BiopsyRecord], by: str) -> dict[str, list[int]]:
    groups: dict[str, list[int]] = {}
    for index, record in enumerate(records):
        groups.setdefault(str(getattr(record, by)), []).append(index)
    return dict(sorted(groups.items()))


def balance_classes(manifest: Manifest, target: int, seed: int, by: str = "subtype") -> Manifest:
    """Undersample every class above *target*; smaller classes pass through."""
    if target < 1:
        raise ConfigError(f"balance target must be >= 1, got {target}")
    rng = np.random.default_rng(seed)
    keep: set[int] = set()
    for indices in _group_indices(manifest.records, by).values():
        if len(indices) <= target:
            keep.update(indices)
            continue
        chosen = rng.choice(len(indices), size=target, replace=False)
        keep.update(indices[i] for i in chosen)
    return manifest.subset(r for i, r in enumerate(manifest.records) if i in keep)


def stratified_split(
    manifest: Manifest,
    val_fraction: float = 0.2,
    seed: int = 0,
    by: str = "subtype",
) -> tuple[Manifest, Manifest]:
    """Per class, ``floor(n * val_fraction)`` records go to validation."""
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"validation fraction must be in (0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    val_indices: set[int] = set()
    for key, indices in _group_indices(manifest.records, by).items():
        if len(indices) < 2:
            logger.warning("class %s has %d record(s); keeping it in the training split", key, len(indices))
            continue
        n_val = int(math.floor(len(indices) * val_fraction))
        order = rng.permutation(len(indices))
        val_indices.update(indices[i] for i in order[:n_val])
    train = [r for i, r in enumerate(manifest.records) if i not in val_indices]
    val = [r for i, r in enumerate(manifest.records) if i in val_indices]
    return manifest.subset(train), manifest.subset(val)


def patient_leakage(train: Manifest, val: Manifest) -> list[str]:
    """Patient ids that have images on both sides of a split."""
    return sorted({r.patient_id for r in train.records} & {r.patient_id for r in val.records})


def labels_for(records: Iterable[BiopsyRecord], task: str) -> np.ndarray:
    if task not in TASKS:
        raise KeyError(f"Unknown task: {task}")
    labels = []
    for record in records:
        if task == "binary":
            labels.append(TUMOR_CLASSES.index(record.tumor_class))
        elif record.subtype in TASK_LABELS[task]:
            labels.append(TASK_LABELS[task].index(record.subtype))
        else:
            raise LabelError(f"{record.subtype} is not a {task} subtype ({record.path})")
    return np.asarray(labels, dtype=np.int64)


def select_task(manifest: Manifest, task: str) -> Manifest:
    """Records relevant to *task*: everything for binary, one tumor class for subtype tasks."""
    if task == "binary":
        return manifest
    wanted = "B" if task == "benign" else "M"
    return manifest.subset(r for r in manifest.records if r.tumor_class == wanted)


# ---- images ----


@dataclass
class LabeledSet:
    images: np.ndarray
    labels: np.ndarray
    class_labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise ConfigError(
                f"labeled set needs N×H×W×C images and N labels, got {self.images.shape} and {self.labels.shape}"
            )

    def __len__(self) -> int:
        return int(len(self.labels))

    def subset(self, indices: Sequence[int] | np.ndarray) -> "LabeledSet":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledSet(self.images[idx], self.labels[idx], self.class_labels)


def load_image(path: str | Path, size: int, rescale: float = DEFAULT_RESCALE) -> np.ndarray:
    """Decode to RGB, bilinear-resize each channel to size×size, multiply by *rescale*."""
    if rescale <= 0:
        raise ConfigError(f"rescale must be positive, got {rescale}")
    try:
        with Image.open(path) as handle:
            rgb = handle.convert("RGB")
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageFormatError(f"cannot decode image {path}: {exc}") from exc
    channels = []
    for band in rgb.split():
        plane = band.convert("F")
        if plane.size != (size, size):
            plane = plane.resize((size, size), Image.Resampling.BILINEAR)
        channels.append(np.asarray(plane, dtype=np.float32))
    image = np.stack(channels, axis=-1) * np.float32(rescale)
    return np.clip(image, 0.0, 255.0 * rescale).astype(np.float32)


def load_dataset(
    records: Sequence[BiopsyRecord],
    task: str,
    size: int,
    threads: int = 1,
    rescale: float = DEFAULT_RESCALE,
) -> LabeledSet:
    if not records:
        raise ConfigError(f"no records for task {task}")
    labels = labels_for(records, task)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        images = list(pool.map(lambda r: load_image(r.path, size, rescale), records))
    return LabeledSet(np.stack(images), labels, TASK_LABELS[task])


# ---- augmentation ----


@dataclass(frozen=True)
class AugmentationConfig:
    rescale: float = DEFAULT_RESCALE
    width_shift: float = 0.2
    height_shift: float = 0.2
    shear: float = 0.2
    zoom: float = 0.2
    horizontal_flip: bool = True
    fill_mode: str = "nearest"
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("width_shift", "height_shift", "shear", "zoom"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ConfigError(f"augmentation.{name} must be in [0, 1), got {value}")
        if self.fill_mode != "nearest":
            raise ConfigError(f"augmentation.fill_mode only supports 'nearest', got {self.fill_mode}")
        if self.rescale <= 0:
            raise ConfigError(f"augmentation.rescale must be positive, got {self.rescale}")

    @classmethod
    def identity(cls) -> "AugmentationConfig":
        return cls(width_shift=0.0, height_shift=0.0, shear=0.0, zoom=0.0, horizontal_flip=False)


@dataclass(frozen=True)
class AugmentationParams:
    flip: bool = False
    shift_x: float = 0.0
    shift_y: float = 0.0
    shear: float = 0.0
    zoom: float = 1.0


def sample_augmentation(config: AugmentationConfig, rng: np.random.Generator, height: int, width: int) -> AugmentationParams:
    # Always five draws so the stream position does not depend on the config.
    flip_draw = rng.random()
    shift_x = rng.uniform(-1.0, 1.0) * config.width_shift * width
    shift_y = rng.uniform(-1.0, 1.0) * config.height_shift * height
    shear = rng.uniform(-1.0, 1.0) * config.shear
    zoom = 1.0 + rng.uniform(-1.0, 1.0) * config.zoom
    return AugmentationParams(
        flip=bool(config.horizontal_flip and flip_draw < 0.5),
        shift_x=float(shift_x),
        shift_y=float(shift_y),
        shear=float(shear),
        zoom=float(zoom),
    )


def apply_augmentation(image: np.ndarray, params: AugmentationParams) -> np.ndarray:
    """Flip, then shear/zoom about the centre and translate; bilinear, edge-replicating."""
    out = image[:, ::-1] if params.flip else image
    if params.shift_x == 0.0 and params.shift_y == 0.0 and params.shear == 0.0 and params.zoom == 1.0:
        return np.array(out, copy=True)
    height, width = image.shape[:2]
    forward = np.array([[1.0, math.tan(params.shear)], [0.0, 1.0]]) @ np.diag([params.zoom, params.zoom])
    inverse = np.linalg.inv(forward)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    dx = xs - cx - params.shift_x
    dy = ys - cy - params.shift_y
    src_x = np.clip(inverse[0, 0] * dx + inverse[0, 1] * dy + cx, 0.0, width - 1.0)
    src_y = np.clip(inverse[1, 0] * dx + inverse[1, 1] * dy + cy, 0.0, height - 1.0)
    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = (src_x - x0)[..., None]
    fy = (src_y - y0)[..., None]
    sampled = (
        out[y0, x0] * (1.0 - fx) * (1.0 - fy)
        + out[y0, x1] * fx * (1.0 - fy)
        + out[y1, x0] * (1.0 - fx) * fy
        + out[y1, x1] * fx * fy
    )
    return sampled.astype(image.dtype)


def augment(image: np.ndarray, config: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    params = sample_augmentation(config, rng, image.shape[0], image.shape[1])
    return apply_augmentation(image, params)


def augment_batch(images: np.ndarray, config: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    return np.stack([augment(image, config, rng) for image in images])


# ---- synthetic data ----


def _class_tint(class_index: int, num_classes: int) -> np.ndarray:
    angle = 2.0 * math.pi * class_index / num_classes
    offsets = np.array([0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0])
    return 0.35 + 0.3 * np.cos(angle + offsets)


def synthetic_image(class_index: int, num_classes: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """One procedural texture: class tint, oriented stripes, dark blobs, noise."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) / size
    theta = math.pi * class_index / num_classes
    cycles = 3 + 2 * (class_index % 3)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    stripes = 0.12 * np.sin(2.0 * math.pi * cycles * (xs * math.cos(theta) + ys * math.sin(theta)) + phase)
    blobs = np.zeros((size, size))
    radius = 1.0 / 12.0
    for _ in range(3 + 2 * (class_index % 4)):
        bx, by = rng.uniform(0.0, 1.0, size=2)
        blobs += np.exp(-((xs - bx) ** 2 + (ys - by) ** 2) / (2.0 * radius**2))
    tint = _class_tint(class_index, num_classes) + rng.uniform(-0.03, 0.03, size=3)
    image = tint[None, None, :] + stripes[..., None] - 0.15 * np.minimum(blobs, 1.0)[..., None]
    image = image + rng.normal(0.0, 0.04, size=image.shape)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def make_synthetic_dataset(num_classes: int, per_class: int, size: int, seed: int) -> LabeledSet:
    """Class-interleaved synthetic texture set; labels follow ``ALL_SUBTYPES`` order."""
    if not 1 <= num_classes <= len(ALL_SUBTYPES):
        raise ConfigError(f"synthetic classes must be in [1, {len(ALL_SUBTYPES)}], got {num_classes}")
    if per_class < 1 or size < 1:
        raise ConfigError("synthetic per_class and size must be positive")
    rng = np.random.default_rng(seed)
    images = []
    labels = []
    for _ in range(per_class):
        for class_index in range(num_classes):
            images.append(synthetic_image(class_index, num_classes, size, rng))
            labels.append(class_index)
    return LabeledSet(np.stack(images), np.asarray(labels), ALL_SUBTYPES[:num_classes])


def collapse_to_binary(dataset: LabeledSet) -> LabeledSet:
    """Map the 8 synthetic subtypes onto benign (0-3) and malignant (4-7)."""
    return LabeledSet(dataset.images, dataset.labels // len(BENIGN_SUBTYPES), TASK_LABELS["binary"])


def synthetic_task_set(dataset: LabeledSet, task: str) -> LabeledSet:
    """Relabel a synthetic set for *task*.

    A set with exactly as many classes as the task is relabelled in place;
    an 8-class set is collapsed (binary) or cut to one tumor class.
    """
    if task not in TASKS:
        raise KeyError(f"Unknown task: {task}")
    k = len(dataset.class_labels)
    wanted = len(TASK_LABELS[task])
    if k == wanted:
        return LabeledSet(dataset.images, dataset.labels, TASK_LABELS[task])
    if k != len(ALL_SUBTYPES):
        raise ConfigError(f"a {k}-class synthetic set cannot feed the {task} task; use {wanted} or 8 classes")
    if task == "binary":
        return collapse_to_binary(dataset)
    offset = 0 if task == "benign" else len(BENIGN_SUBTYPES)
    keep = np.flatnonzero((dataset.labels >= offset) & (dataset.labels < offset + wanted))
    return LabeledSet(dataset.images[keep], dataset.labels[keep] - offset, TASK_LABELS[task])


def split_labeled(dataset: LabeledSet, val_fraction: float = 0.2, seed: int = 0) -> tuple[LabeledSet, LabeledSet]:
    """:func:`stratified_split` for in-memory sets, stratified on the label."""
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"validation fraction must be in (0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    val_mask = np.zeros(len(dataset), dtype=bool)
    for label in np.unique(dataset.labels):
        indices = np.flatnonzero(dataset.labels == label)
        if len(indices) < 2:
            logger.warning("class %s has %d sample(s); keeping it in the training split", label, len(indices))
            continue
        n_val = int(math.floor(len(indices) * val_fraction))
        val_mask[indices[rng.permutation(len(indices))[:n_val]]] = True
    return dataset.subset(np.flatnonzero(~val_mask)), dataset.subset(np.flatnonzero(val_mask))


def plant_synthetic_tree(
    root: str | Path,
    counts: Mapping[str, int],
    size: int = 64,
    seed: int = 0,
) -> list[Path]:
    """Write BreaKHis-named PNGs under ``root/<benign|malignant>/<subtype>/``."""
    base = Path(root)
    rng = np.random.default_rng(seed)
    written: list[Path] = []
    for subtype in ALL_SUBTYPES:
        count = int(counts.get(subtype, 0))
        if count < 0:
            raise ConfigError(f"planted count for {subtype} must be >= 0")
        class_index = ALL_SUBTYPES.index(subtype)
        tumor_class = "B" if subtype in BENIGN_SUBTYPES else "M"
        folder = base / ("benign" if tumor_class == "B" else "malignant") / subtype
        folder.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            record = BiopsyRecord(
                biopsy_method="SOB",
                tumor_class=tumor_class,
                subtype=subtype,
                patient_id=f"14-{1000 + 10 * class_index + i % 3}",
                magnification=MAGNIFICATIONS[i % len(MAGNIFICATIONS)],
                seq=i // len(MAGNIFICATIONS) + 1,
            )
            pixels = synthetic_image(class_index, len(ALL_SUBTYPES), size, rng)
            target = folder / format_breakhis_filename(record)
            Image.fromarray(np.round(pixels * 255.0).astype(np.uint8)).save(target)
            written.append(target)
    return sorted(written)
