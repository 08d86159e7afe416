"""
Dataset loading: OpenI-style manifests, CheXpert-style label CSVs,
precomputed text embeddings, XTEN activation/gradient tensors, and image
decoding to 8-bit grayscale.
"""

import csv
import logging
import math
import os
import re
from typing import Dict, Iterator, List, Optional, Tuple, Union

import imageio.v3 as iio
import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from .core import GrayImage, LabelValue, Study, coerce_label, validate_study
from .exceptions import (
    BadHeader,
    BrokenReference,
    CountMismatch,
    CsvParseError,
    DecodeError,
    IngestError,
    ManifestMissing,
    NonFinite,
    RaggedRows,
    StudyError,
)
from .xai import Tensor3

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.csv"
MANIFEST_COLUMNS = ("study_id", "frontal", "lateral", "report_file")
INLINE_REPORT_COLUMN = "report"
XTEN_MAGIC = "XTEN"

# Rec. 601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

CHEXPERT_METADATA = ("Path", "Sex", "Age", "Frontal/Lateral", "AP/PA")


class ManifestEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    study_id: str = Field(min_length=1)
    frontal: Optional[str] = None
    lateral: Optional[str] = None
    report_file: Optional[str] = None
    report_text: Optional[str] = None
    labels: Dict[str, LabelValue] = {}
    line: int = 0


class DatasetManifest(BaseModel):
    """Parsed manifest.csv; paths are relative to root."""

    model_config = ConfigDict(frozen=True)

    root: str
    entries: Tuple[ManifestEntry, ...]

    def resolve(self, rel: str) -> str:
        return os.path.join(self.root, rel)


class EmbeddingTable(BaseModel):
    """Precomputed report embeddings keyed by study id."""

    model_config = ConfigDict(frozen=True)

    dim: int = Field(gt=0)
    vectors: Dict[str, Tuple[float, ...]]


def _parser_line(error: Exception) -> int:
    m = re.search(r"line (\d+)", str(error))
    return int(m.group(1)) if m else 0


def _read_csv(path: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.ParserError as e:
        raise CsvParseError(_parser_line(e), str(e)) from e
    except pd.errors.EmptyDataError as e:
        raise CsvParseError(1, "file is empty") from e
    except UnicodeDecodeError as e:
        raise CsvParseError(0, f"not UTF-8: {e}") from e
    return frame.fillna("")


def decode_image(path: str) -> GrayImage:
    """Decode PNG/PGM/JPEG to 8-bit grayscale.

    Colour inputs are converted by Rec. 601 luminance; 16-bit inputs are
    rescaled to [0, 255].
    """
    if not os.path.exists(path):
        raise BrokenReference(path)
    try:
        arr = np.asarray(iio.imread(path))
    except Exception as e:
        raise DecodeError(f"cannot decode image {path}: {e}") from e
    return GrayImage.from_array(to_gray8(arr, path))


def to_gray8(arr: np.ndarray, source: str = "<array>") -> np.ndarray:
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8) * 255
    scale = 255.0 / 65535.0 if arr.dtype == np.uint16 else 1.0
    data = arr.astype(np.float64) * scale
    if data.ndim == 3:
        channels = data.shape[2]
        if channels == 1:
            data = data[:, :, 0]
        elif channels in (3, 4):
            data = data[:, :, :3] @ LUMA_WEIGHTS
        elif channels == 2:
            data = data[:, :, 0]
        else:
            raise DecodeError(f"{source}: unsupported channel count {channels}")
    elif data.ndim != 2:
        raise DecodeError(f"{source}: unsupported image shape {arr.shape}")
    if data.size == 0:
        raise DecodeError(f"{source}: image has no pixels")
    return np.clip(np.rint(data), 0, 255)


def read_manifest(root: str) -> DatasetManifest:
    """Parse root/manifest.csv; columns beyond the fixed ones are labels."""
    path = os.path.join(root, MANIFEST_NAME)
    if not os.path.isfile(path):
        raise ManifestMissing(f"no {MANIFEST_NAME} in {root}")
    frame = _read_csv(path)
    missing = [c for c in MANIFEST_COLUMNS if c not in frame.columns]
    if missing:
        raise CsvParseError(1, f"manifest lacks columns {missing}")
    label_columns = [
        c for c in frame.columns if c not in MANIFEST_COLUMNS and c != INLINE_REPORT_COLUMN
    ]

    entries = []
    seen = set()
    for index, row in frame.iterrows():
        line = int(index) + 2
        study_id = row["study_id"].strip()
        if not study_id:
            raise CsvParseError(line, "empty study_id")
        if study_id in seen:
            raise CsvParseError(line, f"duplicate study_id {study_id}")
        seen.add(study_id)
        try:
            labels = {c: coerce_label(row[c]) for c in label_columns}
        except ValueError as e:
            raise CsvParseError(line, str(e)) from e
        entries.append(
            ManifestEntry(
                study_id=study_id,
                frontal=row["frontal"].strip() or None,
                lateral=row["lateral"].strip() or None,
                report_file=row["report_file"].strip() or None,
                report_text=row.get(INLINE_REPORT_COLUMN) or None,
                labels=labels,
                line=line,
            )
        )
    return DatasetManifest(root=root, entries=tuple(entries))


def load_entry(manifest: DatasetManifest, entry: ManifestEntry) -> Study:
    """Decode one manifest entry into a validated study."""
    images = {}
    for view in ("frontal", "lateral"):
        rel = getattr(entry, view)
        if rel is not None:
            images[view] = decode_image(manifest.resolve(rel))

    report = entry.report_text or ""
    if entry.report_file is not None:
        report_path = manifest.resolve(entry.report_file)
        if not os.path.isfile(report_path):
            raise BrokenReference(report_path)
        try:
            with open(report_path, "r", encoding="utf-8") as f:
                report = f.read().strip()
        except UnicodeDecodeError as e:
            raise DecodeError(f"report {report_path} is not UTF-8: {e}") from e

    study = Study(
        id=entry.study_id,
        frontal_image=images.get("frontal"),
        lateral_image=images.get("lateral"),
        report=report,
        labels=entry.labels or None,
    )
    return validate_study(study)


def scan_manifest(
    manifest: DatasetManifest,
) -> Iterator[Tuple[ManifestEntry, Union[Study, IngestError, StudyError]]]:
    """Yield (entry, study or error) in manifest order without stopping on errors."""
    for entry in manifest.entries:
        try:
            yield entry, load_entry(manifest, entry)
        except (IngestError, StudyError) as e:
            logger.warning(f"Study {entry.study_id} (line {entry.line}) skipped: {e}")
            yield entry, e


def scan_openi(
    root: str,
) -> Iterator[Tuple[ManifestEntry, Union[Study, IngestError, StudyError]]]:
    return scan_manifest(read_manifest(root))


def _load_all(manifest: DatasetManifest) -> List[Study]:
    studies = []
    for _, result in scan_manifest(manifest):
        if isinstance(result, Exception):
            raise result
        studies.append(result)
    logger.info(f"Loaded {len(studies)} studies from {manifest.root}")
    return studies


def load_openi(root: str) -> List[Study]:
    """Load every study listed in root/manifest.csv.

    Raises:
        ManifestMissing: no manifest.csv in root.
        BrokenReference: a referenced image or report does not exist.
        DecodeError: an image cannot be decoded.
    """
    return _load_all(read_manifest(root))


def _chexpert_study_id(path: str) -> str:
    parts = path.replace("\\", "/").split("/")
    for i, part in enumerate(parts):
        if part.startswith("patient") and i + 1 < len(parts):
            return f"{part}/{parts[i + 1]}"
    return os.path.splitext(path)[0]


def read_chexpert(csv_path: str, image_root: str) -> DatasetManifest:
    """Turn a CheXpert-style label CSV into a manifest rooted at image_root.

    Rows of one study (patientXXXX/studyN) are merged; the first frontal and
    first lateral view are kept and labels come from the study's first row.
    """
    if not os.path.isfile(csv_path):
        raise BrokenReference(csv_path)
    frame = _read_csv(csv_path)
    if "Path" not in frame.columns:
        raise CsvParseError(1, "CheXpert CSV lacks a Path column")
    label_columns = [c for c in frame.columns if c not in CHEXPERT_METADATA]

    grouped: Dict[str, Dict[str, object]] = {}
    for index, row in frame.iterrows():
        line = int(index) + 2
        rel = row["Path"].strip()
        if not rel:
            raise CsvParseError(line, "empty Path")
        try:
            labels = {c: coerce_label(row[c]) for c in label_columns}
        except ValueError as e:
            raise CsvParseError(line, str(e)) from e

        study_id = _chexpert_study_id(rel)
        view = row.get("Frontal/Lateral", "").strip().lower()
        is_lateral = view == "lateral" or (not view and "lateral" in rel.lower())
        record = grouped.setdefault(study_id, {"labels": labels, "line": line})
        record.setdefault("lateral" if is_lateral else "frontal", rel)

    entries = tuple(
        ManifestEntry(
            study_id=study_id,
            frontal=record.get("frontal"),
            lateral=record.get("lateral"),
            labels=record["labels"],
            line=record["line"],
        )
        for study_id, record in grouped.items()
    )
    return DatasetManifest(root=image_root, entries=entries)


def load_chexpert(csv_path: str, image_root: str) -> List[Study]:
    """Load a CheXpert-style label CSV; reports are empty.

    1.0 maps to label 1, 0.0 to 0, and -1.0 or blank to unknown.

    Raises:
        CsvParseError: a malformed row, with its line number.
        BrokenReference: a listed image does not exist.
    """
    return _load_all(read_chexpert(csv_path, image_root))


def load_embeddings(path: str) -> EmbeddingTable:
    """Read `study_id,v1,v2,...` rows; an optional `study_id,...` header is skipped.

    Raises:
        RaggedRows: rows of different lengths.
        NonFinite: a NaN or infinite value.
        CsvParseError: a value that is not a number, or a duplicate id.
    """
    if not os.path.isfile(path):
        raise BrokenReference(path)
    vectors: Dict[str, Tuple[float, ...]] = {}
    dim: Optional[int] = None
    with open(path, "r", encoding="utf-8", newline="") as f:
        for line_no, row in enumerate(csv.reader(f), start=1):
            if not row or not any(cell.strip() for cell in row):
                continue
            if line_no == 1 and row[0].strip().lower() == "study_id":
                continue
            study_id, cells = row[0].strip(), row[1:]
            if not cells:
                raise RaggedRows(f"line {line_no}: no embedding values")
            try:
                values = tuple(float(c) for c in cells)
            except ValueError as e:
                raise CsvParseError(line_no, str(e)) from e
            if not all(math.isfinite(v) for v in values):
                raise NonFinite(f"line {line_no}: embedding for {study_id} is not finite")
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise RaggedRows(f"line {line_no}: {len(values)} values, expected {dim}")
            if study_id in vectors:
                raise CsvParseError(line_no, f"duplicate study_id {study_id}")
            vectors[study_id] = values
    if dim is None:
        raise CsvParseError(1, f"no embedding rows in {path}")
    return EmbeddingTable(dim=dim, vectors=vectors)


def parse_tensor(text: str, source: str = "<text>") -> Tensor3:
    """Parse XTEN text: header `XTEN <K> <h> <w>` then K*h*w reals."""
    header, _, body = text.partition("\n")
    fields = header.split()
    if len(fields) != 4 or fields[0] != XTEN_MAGIC:
        raise BadHeader(f"{source}: header must be 'XTEN <K> <h> <w>', got {header[:60]!r}")
    try:
        k, h, w = (int(x) for x in fields[1:])
    except ValueError:
        raise BadHeader(f"{source}: non-integer dimensions in {header!r}")
    if min(k, h, w) <= 0:
        raise BadHeader(f"{source}: dimensions must be positive, got {k}x{h}x{w}")

    tokens = body.split()
    if len(tokens) != k * h * w:
        raise CountMismatch(
            f"{source}: header declares {k * h * w} values, found {len(tokens)}"
        )
    try:
        values = np.asarray([float(t) for t in tokens], dtype=np.float64)
    except ValueError as e:
        raise DecodeError(f"{source}: {e}") from e
    if not np.all(np.isfinite(values)):
        raise NonFinite(f"{source}: tensor contains non-finite values")
    return Tensor3(channels=k, height=h, width=w, values=tuple(values.tolist()))


def load_tensor(path: str) -> Tensor3:
    if not os.path.isfile(path):
        raise BrokenReference(path)
    with open(path, "r", encoding="utf-8") as f:
        return parse_tensor(f.read(), path)


def format_tensor(tensor: Union[Tensor3, np.ndarray]) -> str:
    """XTEN text with one row of values per line."""
    arr = tensor.to_array() if isinstance(tensor, Tensor3) else np.asarray(tensor, dtype=np.float64)
    k, h, w = arr.shape
    lines = [f"{XTEN_MAGIC} {k} {h} {w}"]
    for channel in arr:
        for row in channel:
            lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def write_tensor(path: str, tensor: Union[Tensor3, np.ndarray]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_tensor(tensor))


def tensor_paths(tensor_dir: str, study_id: str) -> Tuple[str, str]:
    """Activation and gradient file paths for a study."""
    safe = study_id.replace("/", "_")
    return (
        os.path.join(tensor_dir, f"{safe}.acts.xten"),
        os.path.join(tensor_dir, f"{safe}.grads.xten"),
    )
