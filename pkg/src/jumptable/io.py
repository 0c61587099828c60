"""File formats: device (G, dG) CSVs, MNIST IDX files, model JSON documents, run records."""

from __future__ import annotations

import csv
import gzip
import hashlib
import json
import logging
import math
import os
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from jumptable.device import ConductanceBounds, DeviceDataset, JumpTablePair, Profile

logger = logging.getLogger(__name__)

DEVICE_CSV_HEADER = ("g_ns", "delta_g_ns")
MEASURED_VOLTAGES = (-1.8, -1.65, -1.5, -1.35, 1.35, 1.5, 1.65, 1.8)
MODEL_SCHEMA_VERSION = "1"

MNIST_MEAN = 0.1307
MNIST_SCALE = 0.3801
CROP = 4
MNIST_DIR_ENV = "JUMPTABLE_MNIST_DIR"


class DataError(ValueError):
    """Input data is missing, malformed or empty."""


class SchemaError(ValueError):
    """A model document has the wrong schema version or violates model invariants."""


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def compliance_transform(g, delta_g, bounds: ConductanceBounds):
    """Clip states into the bounds and changes so that G + dG stays inside them."""
    g = bounds.clip(np.asarray(g, dtype=np.float64))
    return g, bounds.clip_delta(g, delta_g)


def load_device_csv(path, voltage: Optional[float] = None,
                    bounds: ConductanceBounds = ConductanceBounds()) -> DeviceDataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"device CSV not found: {path}")
    g, dg, dropped = [], [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != DEVICE_CSV_HEADER:
            raise DataError(f"{path}: expected header {','.join(DEVICE_CSV_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                a, b = float(row[0]), float(row[1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if not (math.isfinite(a) and math.isfinite(b)):
                dropped.append(lineno)
                continue
            g.append(a)
            dg.append(b)
    if dropped:
        warnings.warn(f"{path}: dropped non-finite rows at lines {dropped}", stacklevel=2)
    if not g:
        raise DataError(f"{path}: no usable samples")
    g_arr, dg_arr = compliance_transform(g, dg, bounds)
    return DeviceDataset(g_arr, dg_arr, voltage)


def save_device_csv(d: DeviceDataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DEVICE_CSV_HEADER)
        for a, b in zip(d.g.tolist(), d.delta_g.tolist()):
            w.writerow((repr(a), repr(b)))


# --- MNIST -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReducedMnist:
    """20x20 center-cropped, normalized MNIST as flat 400-vectors."""

    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    source: str = "idx"


def _open_maybe_gz(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else path.open("rb")


def read_idx(path) -> np.ndarray:
    """Read an IDX (big-endian) unsigned-byte image or label file."""
    path = Path(path)
    with _open_maybe_gz(path) as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0 or raw[2] != 0x08:
        raise DataError(f"{path}: bad IDX magic number")
    ndim = raw[3]
    if ndim not in (1, 3):
        raise DataError(f"{path}: unexpected IDX rank {ndim}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataError(f"{path}: truncated IDX header")
    dims = tuple(int.from_bytes(raw[4 + 4 * i: 8 + 4 * i], "big") for i in range(ndim))
    expected = int(np.prod(dims))
    body = np.frombuffer(raw, dtype=np.uint8, offset=header)
    if body.size < expected:
        raise DataError(f"{path}: truncated IDX body ({body.size} of {expected} bytes)")
    return body[:expected].reshape(dims)


def crop_and_normalize(images: np.ndarray) -> np.ndarray:
    """Uint8 (n, 28, 28) images -> (n, 400) float vectors."""
    images = np.asarray(images)
    if images.ndim != 3 or images.shape[1:] != (28, 28):
        raise DataError(f"expected (n, 28, 28) images, got {images.shape}")
    crop = images[:, CROP:28 - CROP, CROP:28 - CROP].astype(np.float64) / 255.0
    return ((crop - MNIST_MEAN) / MNIST_SCALE).reshape(len(images), -1)


def denormalize(x) -> np.ndarray:
    return np.asarray(x) * MNIST_SCALE + MNIST_MEAN


def _find(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx"), stem.replace("-idx", ".idx") + ".gz"):
        if (directory / name).exists():
            return directory / name
    raise DataError(f"{directory}: missing MNIST file {stem}")


def load_reduced_mnist(directory) -> ReducedMnist:
    directory = Path(directory)
    parts = {}
    for split, prefix in (("train", "train"), ("test", "t10k")):
        images = read_idx(_find(directory, f"{prefix}-images-idx3-ubyte"))
        labels = read_idx(_find(directory, f"{prefix}-labels-idx1-ubyte"))
        if images.ndim != 3 or labels.ndim != 1 or len(images) != len(labels):
            raise DataError(f"{directory}: {split} images and labels disagree")
        parts[split] = (crop_and_normalize(images), labels.astype(np.int64))
    return ReducedMnist(*parts["train"], *parts["test"], source="idx")


def load_mnist_subset(n_test: int = 1000, seed: int = 0) -> ReducedMnist:
    """The 5,000-digit MNIST sample shipped with mlxtend, split into train/test.

    The test split is stratified (n_test / 10 images per class).
    """
    try:
        from mlxtend.data import mnist_data
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise DataError("no MNIST IDX directory given and mlxtend is not installed") from exc
    x, y = mnist_data()
    images = x.reshape(-1, 28, 28).astype(np.uint8)
    y = y.astype(np.int64)
    rng = np.random.default_rng(seed)
    per_class = n_test // 10
    test_idx = np.concatenate([rng.permutation(np.flatnonzero(y == c))[:per_class] for c in range(10)])
    test_mask = np.zeros(len(y), dtype=bool)
    test_mask[test_idx] = True
    xs = crop_and_normalize(images)
    return ReducedMnist(xs[~test_mask], y[~test_mask], xs[test_mask], y[test_mask], source="mlxtend-5k")


def load_mnist(directory=None) -> ReducedMnist:
    """Full MNIST from an IDX directory if available, otherwise the bundled 5k subset."""
    directory = directory or os.environ.get(MNIST_DIR_ENV)
    if directory:
        return load_reduced_mnist(directory)
    logger.warning("no MNIST directory configured (%s); using the 5,000-image subset", MNIST_DIR_ENV)
    return load_mnist_subset()


# --- model documents -------------------------------------------------------

def _profile_block(p: Profile) -> dict:
    return {"knots": p.knots.tolist(), "mu": p.mu.tolist(), "sigma": p.sigma.tolist()}


def model_document(pair: JumpTablePair, provenance: Optional[dict] = None) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "bounds": {"g_min": pair.bounds.g_min, "g_max": pair.bounds.g_max},
        "set": _profile_block(pair.set_table),
        "reset": _profile_block(pair.reset_table),
        "provenance": dict(provenance or {}),
    }


def save_model(path, pair: JumpTablePair, provenance: Optional[dict] = None) -> None:
    Path(path).write_text(json.dumps(model_document(pair, provenance), indent=2) + "\n", encoding="utf-8")


def model_from_document(doc: dict) -> tuple[JumpTablePair, dict]:
    if str(doc.get("schema_version")) != MODEL_SCHEMA_VERSION:
        raise SchemaError(f"unsupported model schema version {doc.get('schema_version')!r}")
    try:
        bounds = ConductanceBounds(float(doc["bounds"]["g_min"]), float(doc["bounds"]["g_max"]))
        tables = [Profile(doc[d]["knots"], doc[d]["mu"], doc[d]["sigma"]) for d in ("set", "reset")]
        pair = JumpTablePair(tables[0], tables[1], bounds)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"invalid model document: {exc}") from None
    return pair, dict(doc.get("provenance", {}))


def load_model(path, source_csv=None) -> tuple[JumpTablePair, dict]:
    """Load a model document; warns if `source_csv` no longer matches the recorded dataset hash."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    pair, provenance = model_from_document(doc)
    if source_csv is not None:
        recorded = provenance.get("dataset_hash")
        if recorded != file_sha256(source_csv):
            warnings.warn(f"{source_csv} does not match the dataset hash recorded in {path}", stacklevel=2)
    return pair, provenance


# --- run records -----------------------------------------------------------

RUN_CSV_HEADER = ("run_id", "epoch", "split", "accuracy")


def save_run_records(records, path) -> None:
    """Accuracy traces as long-format CSV rows plus a JSON config sidecar."""
    path = Path(path)
    sidecar = {}
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_CSV_HEADER)
        for run_id, rec in enumerate(records):
            for split, trace in (("train", rec.train_acc), ("test", rec.test_acc)):
                for epoch, acc in enumerate(trace, start=1):
                    w.writerow((run_id, epoch, split, repr(float(acc))))
            sidecar[str(run_id)] = {"seed": rec.seed, "provenance": rec.provenance, "config": rec.config,
                                    "initial_test_acc": rec.initial_test_acc}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")


def load_run_records(path) -> list:
    from jumptable.nn import RunRecord

    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    traces: dict = {}
    with path.open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            traces.setdefault(row["run_id"], {"train": [], "test": []})[row["split"]].append(float(row["accuracy"]))
    return [RunRecord(traces[k]["train"], traces[k]["test"], meta["config"], meta["provenance"], meta["seed"],
                      meta.get("initial_test_acc", float("nan")))
            for k, meta in sidecar.items()]
