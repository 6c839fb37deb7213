"""Pool and report persistence.

Embedded pools are stored either in a small self-describing binary format
(bit-exact round trips) or as hand-editable CSV.  Selection results are
written as a JSON document plus a plain newline-separated index file.

Binary embedding format: magic "GEMB", little-endian uint32 version (=1),
little-endian uint64 row count, little-endian uint64 dim, then row-major
little-endian float32 values.  Gradient-norm sidecar: magic "GNRM", version,
count, float32 values.  Label sidecar: CSV of integers, one per line.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC_EMBEDDINGS = b"GEMB"
MAGIC_GRAD_NORMS = b"GNRM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")  # magic, version, rows, dim
_GRAD_HEADER = struct.Struct("<4sIQ")  # magic, version, count

POOL_ROLES = ("training", "validation")

# float32 is the canonical storage type; nine significant digits round-trip
# it exactly through decimal text.
_FLOAT_FMT = "%.9g"


class PoolError(ValueError):
    """Invalid pool data or file contents; messages locate the bad row."""


@dataclass(frozen=True)
class EmbeddedPoint:
    """One pool element: position, embedding vector, optional extras."""

    index: int
    embedding: np.ndarray
    grad_norm: float = 0.0
    label: int | None = None


class Pool:
    """Ordered collection of embedded points with optional norms and labels.

    Embeddings are held as one float32 matrix; ``points`` materializes the
    per-element view on demand.  All arrays are marked read-only.
    """

    def __init__(self, points, role: str = "training"):
        pts = list(points)
        if not pts:
            raise PoolError("pool must contain at least one point")
        emb = []
        grads = []
        labels = []
        for pos, pt in enumerate(pts):
            if pt.index != pos:
                raise PoolError(
                    f"point {pos}: index {pt.index} breaks the 0..{len(pts) - 1} order"
                )
            emb.append(np.asarray(pt.embedding, dtype=np.float32).ravel())
            grads.append(np.float32(pt.grad_norm))
            labels.append(pt.label)
        labelled = [lab is not None for lab in labels]
        if any(labelled) and not all(labelled):
            bad = labelled.index(False)
            raise PoolError(f"point {bad}: label missing while other points carry labels")
        label_arr = np.asarray(labels, dtype=np.int64) if all(labelled) else None
        self._init_arrays(np.stack(emb), np.asarray(grads, dtype=np.float32), label_arr, role)

    @classmethod
    def from_arrays(cls, embeddings, grad_norms=None, labels=None, role: str = "training") -> "Pool":
        """Build a pool directly from arrays, skipping per-point objects."""
        self = cls.__new__(cls)
        emb = np.asarray(embeddings, dtype=np.float32)
        if emb.ndim != 2 or emb.shape[0] == 0 or emb.shape[1] == 0:
            raise PoolError(f"embeddings must be a non-empty 2-D array, got shape {np.shape(embeddings)}")
        if grad_norms is None:
            grads = np.zeros(emb.shape[0], dtype=np.float32)
        else:
            grads = np.asarray(grad_norms, dtype=np.float32).ravel()
        label_arr = None if labels is None else np.asarray(labels, dtype=np.int64).ravel()
        self._init_arrays(emb, grads, label_arr, role)
        return self

    def _init_arrays(self, emb: np.ndarray, grads: np.ndarray, labels, role: str) -> None:
        if role not in POOL_ROLES:
            raise PoolError(f"role must be one of {POOL_ROLES}, got {role!r}")
        bad = np.flatnonzero(~np.isfinite(emb).all(axis=1))
        if bad.size:
            raise PoolError(f"point {bad[0]}: embedding contains a non-finite value")
        if grads.shape != (emb.shape[0],):
            raise PoolError(
                f"gradient norms cover {grads.size} points, pool has {emb.shape[0]}"
            )
        bad = np.flatnonzero(~np.isfinite(grads))
        if bad.size:
            raise PoolError(f"point {bad[0]}: non-finite gradient norm")
        bad = np.flatnonzero(grads < 0)
        if bad.size:
            raise PoolError(f"point {bad[0]}: negative gradient norm {grads[bad[0]]!r}")
        if labels is not None and labels.shape != (emb.shape[0],):
            raise PoolError(f"labels cover {labels.size} points, pool has {emb.shape[0]}")
        for arr in (emb, grads, labels):
            if arr is not None:
                arr.setflags(write=False)
        self._emb = emb
        self._grad = grads
        self._labels = labels
        self.role = role

    def __len__(self) -> int:
        return self._emb.shape[0]

    @property
    def dim(self) -> int:
        return self._emb.shape[1]

    @property
    def embeddings(self) -> np.ndarray:
        return self._emb

    @property
    def grad_norms(self) -> np.ndarray:
        return self._grad

    @property
    def labels(self) -> np.ndarray | None:
        return self._labels

    @property
    def labeled(self) -> bool:
        return self._labels is not None

    def point(self, i: int) -> EmbeddedPoint:
        return EmbeddedPoint(
            index=i,
            embedding=self._emb[i],
            grad_norm=float(self._grad[i]),
            label=None if self._labels is None else int(self._labels[i]),
        )

    @property
    def points(self) -> list[EmbeddedPoint]:
        return [self.point(i) for i in range(len(self))]

    def subset(self, indices, role: str | None = None) -> "Pool":
        """New pool from the given rows, re-indexed 0..len-1 in given order."""
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size == 0:
            raise PoolError("subset must keep at least one point")
        return Pool.from_arrays(
            self._emb[idx],
            self._grad[idx],
            None if self._labels is None else self._labels[idx],
            role=self.role if role is None else role,
        )


def save_pool(pool: Pool, path, format: str = "binary",
              grad_path=None, labels_path=None) -> None:
    """Write embeddings plus optional sidecars in the requested format."""
    path = Path(path)
    if format == "binary":
        payload = np.ascontiguousarray(pool.embeddings, dtype="<f4").tobytes()
        header = _HEADER.pack(MAGIC_EMBEDDINGS, FORMAT_VERSION, len(pool), pool.dim)
        path.write_bytes(header + payload)
    elif format == "csv":
        lines = [",".join(_FLOAT_FMT % x for x in row) for row in pool.embeddings]
        path.write_text("\n".join(lines) + "\n")
    else:
        raise PoolError(f"unknown pool format {format!r}")
    if grad_path is not None:
        grad_path = Path(grad_path)
        if format == "binary":
            header = _GRAD_HEADER.pack(MAGIC_GRAD_NORMS, FORMAT_VERSION, len(pool))
            grad_path.write_bytes(header + pool.grad_norms.astype("<f4").tobytes())
        else:
            grad_path.write_text("\n".join(_FLOAT_FMT % g for g in pool.grad_norms) + "\n")
    if labels_path is not None:
        if not pool.labeled:
            raise PoolError("pool carries no labels to save")
        Path(labels_path).write_text("\n".join(str(int(l)) for l in pool.labels) + "\n")


def _load_embeddings_binary(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise PoolError(f"{path}: truncated header")
    magic, version, rows, dim = _HEADER.unpack_from(raw)
    if magic != MAGIC_EMBEDDINGS:
        raise PoolError(f"{path}: bad magic {magic!r}, expected {MAGIC_EMBEDDINGS!r}")
    if version != FORMAT_VERSION:
        raise PoolError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + rows * dim * 4
    if len(raw) != expected:
        raise PoolError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    return data.reshape(rows, dim).astype(np.float32, copy=True)


def _load_embeddings_csv(path: Path) -> np.ndarray:
    rows = []
    dim = None
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        cells = line.split(",")
        if dim is None:
            dim = len(cells)
        elif len(cells) != dim:
            raise PoolError(f"{path}: row {lineno}: expected {dim} values, got {len(cells)}")
        row = np.empty(len(cells), dtype=np.float32)
        for c, cell in enumerate(cells):
            try:
                value = float(cell)
            except ValueError:
                raise PoolError(f"{path}: row {lineno}: invalid number {cell.strip()!r}") from None
            if not math.isfinite(value):
                raise PoolError(f"{path}: row {lineno}: non-finite value {cell.strip()!r}")
            row[c] = value
        rows.append(row)
    if not rows:
        raise PoolError(f"{path}: no data rows")
    return np.stack(rows)


def load_grad_norms(path) -> np.ndarray:
    """Read a gradient-norm sidecar; binary vs CSV detected by magic bytes."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == MAGIC_GRAD_NORMS:
        if len(raw) < _GRAD_HEADER.size:
            raise PoolError(f"{path}: truncated header")
        magic, version, count = _GRAD_HEADER.unpack_from(raw)
        if version != FORMAT_VERSION:
            raise PoolError(f"{path}: unsupported version {version}")
        if len(raw) != _GRAD_HEADER.size + count * 4:
            raise PoolError(f"{path}: payload size mismatch")
        return np.frombuffer(raw, dtype="<f4", offset=_GRAD_HEADER.size).astype(np.float32, copy=True)
    values = []
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            value = float(line.strip())
        except ValueError:
            raise PoolError(f"{path}: row {lineno}: invalid number {line.strip()!r}") from None
        if not math.isfinite(value):
            raise PoolError(f"{path}: row {lineno}: non-finite value")
        if value < 0:
            raise PoolError(f"{path}: row {lineno}: negative gradient norm {value!r}")
        values.append(value)
    return np.asarray(values, dtype=np.float32)


def load_labels(path) -> np.ndarray:
    """Read an integer-label sidecar (CSV, one label per line)."""
    path = Path(path)
    values = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            values.append(int(line.strip()))
        except ValueError:
            raise PoolError(f"{path}: row {lineno}: invalid label {line.strip()!r}") from None
    if not values:
        raise PoolError(f"{path}: no labels")
    return np.asarray(values, dtype=np.int64)


def load_pool(path, format: str = "binary", grad_path=None, labels_path=None,
              role: str = "training") -> Pool:
    """Load a pool; missing gradient sidecar means zero norms everywhere."""
    path = Path(path)
    if format == "binary":
        emb = _load_embeddings_binary(path)
    elif format == "csv":
        emb = _load_embeddings_csv(path)
    else:
        raise PoolError(f"unknown pool format {format!r}")
    grads = None
    if grad_path is not None:
        grads = load_grad_norms(grad_path)
        if grads.size != emb.shape[0]:
            raise PoolError(
                f"{grad_path}: {grads.size} gradient norms for {emb.shape[0]} points"
            )
    labels = None
    if labels_path is not None:
        labels = load_labels(labels_path)
        if labels.size != emb.shape[0]:
            raise PoolError(f"{labels_path}: {labels.size} labels for {emb.shape[0]} points")
    return Pool.from_arrays(emb, grads, labels, role=role)


@dataclass
class SelectionReport:
    """Everything a selection run produced, in JSON-serializable form.

    ``score_trajectory`` holds (iteration, score) pairs; ``exchange_log``
    holds (removed_index, added_index, score_before, score_after) per
    accepted exchange.
    """

    selected_indices: list[int]
    score_trajectory: list[tuple[int, float]]
    exchange_log: list[tuple[int, int, float, float]]
    config_echo: dict
    timings: dict
    stats: dict = field(default_factory=dict)

    def validate(self) -> None:
        idx = self.selected_indices
        if len(set(idx)) != len(idx):
            raise PoolError("selected_indices contains duplicates")
        if any(i < 0 for i in idx):
            raise PoolError("selected_indices contains a negative index")
        if list(idx) != sorted(idx):
            raise PoolError("selected_indices must be sorted")
        for rec in self.exchange_log:
            removed, added, before, after = rec
            if not after < before:
                raise PoolError(f"exchange ({removed}->{added}) does not decrease the score")


def report_index_path(report_path) -> Path:
    """Index-file path next to a report: report.json -> report.indices.txt."""
    report_path = Path(report_path)
    return report_path.with_suffix("").with_name(report_path.with_suffix("").name + ".indices.txt")


def save_report(report: SelectionReport, path) -> tuple[Path, Path]:
    """Write the JSON report plus the newline-separated index file.

    Returns (report_path, index_path).  Indices are written sorted, one per
    line, trailing newline included.
    """
    report.validate()
    path = Path(path)
    doc = {
        "selected_indices": [int(i) for i in report.selected_indices],
        "score_trajectory": [[int(it), float(sc)] for it, sc in report.score_trajectory],
        "exchange_log": [
            [int(r), int(a), float(b), float(af)] for r, a, b, af in report.exchange_log
        ],
        "config_echo": report.config_echo,
        "timings": report.timings,
        "stats": report.stats,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    index_path = report_index_path(path)
    index_path.write_text("".join(f"{int(i)}\n" for i in sorted(report.selected_indices)))
    return path, index_path


def load_report(path) -> SelectionReport:
    doc = json.loads(Path(path).read_text())
    return SelectionReport(
        selected_indices=[int(i) for i in doc["selected_indices"]],
        score_trajectory=[(int(it), float(sc)) for it, sc in doc["score_trajectory"]],
        exchange_log=[
            (int(r), int(a), float(b), float(af)) for r, a, b, af in doc["exchange_log"]
        ],
        config_echo=doc["config_echo"],
        timings=doc["timings"],
        stats=doc.get("stats", {}),
    )
