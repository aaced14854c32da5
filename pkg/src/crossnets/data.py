"""Synthetic CTR tasks with a polynomial teacher of controllable
interaction order, plus splitting/sharding and delimited-text I/O.

The teacher draws random monomials over a hidden feature vector z (the
dense features concatenated with fixed random embeddings of the
categorical ids), sums them into a logit, standardises the logit by its
empirical std over a 10k probe so the sigmoid does not saturate, and
samples Bernoulli labels. Everything is a pure function of (spec, seed).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import configio as cio
from .blocks import FeatureSchema, schema_from_dict, schema_to_dict
from .engine import rng_from_seed
from .errors import ConfigError, MetricError, ParseError, SchemaError

_M64 = (1 << 64) - 1
_PROBE_N = 10_000

# stream tags to derive independent RNG streams from one task seed
_TAG_TEACHER, _TAG_PROBE, _TAG_ROWS = 1, 2, 3


def mix64(seed: int, tag: int) -> int:
    """splitmix64-style mixer; derives per-stream seeds from a task seed."""
    x = (seed + 0x9E3779B97F4A7C15 * (tag + 1)) & _M64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _M64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _M64
    x ^= x >> 31
    return x


def hash_cell(text: str, cardinality: int) -> int:
    """Fixed 64-bit hash for categorical cells: FNV-1a over the UTF-8
    bytes, a multiply-shift finaliser, then reduction mod cardinality."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _M64
    h ^= h >> 33
    h = (h * 0x9E3779B97F4A7C15) & _M64
    h ^= h >> 29
    return h % cardinality


@dataclass(frozen=True)
class SyntheticTaskSpec:
    schema: FeatureSchema
    teacher_degree: int
    n_terms: int
    coef_scale: float
    label_noise: float
    seed: int

    def validate(self) -> None:
        self.schema.validate()
        if self.teacher_degree < 1:
            raise ConfigError(f"teacher_degree must be >= 1, got {self.teacher_degree}")
        if self.n_terms < 1:
            raise ConfigError(f"n_terms must be >= 1, got {self.n_terms}")
        if self.coef_scale <= 0.0:
            raise ConfigError(f"coef_scale must be > 0, got {self.coef_scale}")
        if not 0.0 <= self.label_noise < 1.0:
            raise ConfigError(f"label_noise must be in [0, 1), got {self.label_noise}")


def task_from_dict(d: dict, path: str = "task") -> SyntheticTaskSpec:
    cio.check_keys(
        d,
        {"n_dense", "fields", "teacher_degree", "n_terms", "coef_scale", "label_noise", "seed"},
        path,
    )
    schema = schema_from_dict({"n_dense": d.get("n_dense", 0), "fields": d.get("fields", [])}, path)
    spec = SyntheticTaskSpec(
        schema=schema,
        teacher_degree=cio.as_int(cio.take(d, "teacher_degree", path), f"{path}.teacher_degree"),
        n_terms=cio.as_int(cio.take(d, "n_terms", path), f"{path}.n_terms"),
        coef_scale=cio.as_float(cio.take(d, "coef_scale", path, default=1.0), f"{path}.coef_scale"),
        label_noise=cio.as_float(cio.take(d, "label_noise", path, default=0.0), f"{path}.label_noise"),
        seed=cio.as_int(cio.take(d, "seed", path), f"{path}.seed"),
    )
    spec.validate()
    return spec


def task_to_dict(spec: SyntheticTaskSpec) -> dict:
    d = schema_to_dict(spec.schema)
    d.update(
        teacher_degree=spec.teacher_degree,
        n_terms=spec.n_terms,
        coef_scale=spec.coef_scale,
        label_noise=spec.label_noise,
        seed=spec.seed,
    )
    return d


@dataclass
class Dataset:
    dense: np.ndarray  # N x n_dense float64
    cat_ids: np.ndarray  # N x n_fields int64
    labels: np.ndarray  # N float64, values 0/1
    teacher_probs: np.ndarray | None  # N float64 in (0,1); None for loaded data

    def __len__(self) -> int:
        return self.labels.shape[0]

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            dense=self.dense[idx],
            cat_ids=self.cat_ids[idx],
            labels=self.labels[idx],
            teacher_probs=None if self.teacher_probs is None else self.teacher_probs[idx],
        )


class Teacher:
    """Ground-truth click-probability function: random monomials of
    bounded degree over the hidden feature vector, at least one of exactly
    the requested degree."""

    def __init__(self, spec: SyntheticTaskSpec):
        spec.validate()
        self.spec = spec
        rng = np.random.default_rng(mix64(spec.seed, _TAG_TEACHER))
        self.tables = [
            rng.standard_normal((f.cardinality, f.emb_dim)) for f in spec.schema.fields
        ]
        width = spec.schema.width
        p = spec.teacher_degree
        self.monomials: list[tuple[float, np.ndarray]] = []
        for j in range(spec.n_terms):
            degree = p if j == 0 else int(rng.integers(1, p + 1))
            coords = rng.integers(0, width, size=degree)
            coef = float(rng.normal(0.0, spec.coef_scale))
            self.monomials.append((coef, coords))
        probe_rng = np.random.default_rng(mix64(spec.seed, _TAG_PROBE))
        probe_logits = self.raw_logits(*_draw_features(spec.schema, probe_rng, _PROBE_N))
        self.normalizer = max(float(probe_logits.std()), 1e-12)

    def hidden_features(self, dense: np.ndarray, cat_ids: np.ndarray) -> np.ndarray:
        parts = [dense] + [
            table[cat_ids[:, i]] for i, table in enumerate(self.tables)
        ]
        return np.concatenate(parts, axis=1) if len(parts) > 1 else parts[0]

    def raw_logits(self, dense: np.ndarray, cat_ids: np.ndarray) -> np.ndarray:
        z = self.hidden_features(dense, cat_ids)
        logits = np.zeros(z.shape[0])
        for coef, coords in self.monomials:
            term = np.full(z.shape[0], coef)
            for c in coords:
                term = term * z[:, c]
            logits += term
        return logits

    def probs(self, dense: np.ndarray, cat_ids: np.ndarray) -> np.ndarray:
        z = self.raw_logits(dense, cat_ids) / self.normalizer
        return np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))


def _draw_features(
    schema: FeatureSchema, rng: np.random.Generator, n: int
) -> tuple[np.ndarray, np.ndarray]:
    dense = rng.standard_normal((n, schema.n_dense))
    cat_ids = np.empty((n, len(schema.fields)), dtype=np.int64)
    for i, f in enumerate(schema.fields):
        cat_ids[:, i] = rng.integers(0, f.cardinality, size=n)
    return dense, cat_ids


def synth_generate(spec: SyntheticTaskSpec, n: int, seed: int | None = None) -> Dataset:
    """Generate n rows. The optional seed overrides the row stream only;
    the teacher (monomials, embeddings, normaliser) is fixed by the spec."""
    if n < 1:
        raise ConfigError(f"synth_generate: n must be >= 1, got {n}")
    teacher = Teacher(spec)
    rng = np.random.default_rng(mix64(spec.seed if seed is None else seed, _TAG_ROWS))
    dense, cat_ids = _draw_features(spec.schema, rng, n)
    probs = teacher.probs(dense, cat_ids)
    labels = (rng.random(n) < probs).astype(np.float64)
    if spec.label_noise > 0.0:
        flips = rng.random(n) < spec.label_noise
        labels = np.where(flips, 1.0 - labels, labels)
    return Dataset(dense=dense, cat_ids=cat_ids, labels=labels, teacher_probs=probs)


def teacher_auc(dataset: Dataset) -> float:
    """AUC of the teacher probabilities against the labels: the ceiling
    any trained model can approach on this dataset."""
    if dataset.teacher_probs is None:
        raise MetricError("dataset has no teacher probabilities (loaded from file?)")
    from .train import auc  # local import; train depends on data types

    return auc(dataset.teacher_probs, dataset.labels)


def split(dataset: Dataset, train_frac: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 < train_frac < 1.0:
        raise ConfigError(f"train_frac must be in (0, 1), got {train_frac}")
    n = len(dataset)
    n_train = int(np.floor(train_frac * n + 0.5))
    if n_train < 1 or n_train >= n:
        raise ConfigError(f"split leaves an empty side: {n_train} of {n} rows")
    perm = rng_from_seed(seed).permutation(n)
    return dataset.take(perm[:n_train]), dataset.take(perm[n_train:])


def shard(dataset: Dataset, n_shards: int) -> list[Dataset]:
    """Contiguous row partition: disjoint, exhaustive, order-preserving."""
    if n_shards < 1:
        raise ConfigError(f"n_shards must be >= 1, got {n_shards}")
    n = len(dataset)
    base, extra = divmod(n, n_shards)
    shards = []
    at = 0
    for i in range(n_shards):
        size = base + (1 if i < extra else 0)
        shards.append(dataset.take(np.arange(at, at + size)))
        at += size
    return shards


# ---------------------------------------------------------------------------
# delimited text: comma-separated, UTF-8, header row
# columns: label, d0..d{n_dense-1}, c0..c{n_fields-1}


def _column_names(schema: FeatureSchema) -> list[str]:
    return (
        ["label"]
        + [f"d{i}" for i in range(schema.n_dense)]
        + [f"c{i}" for i in range(len(schema.fields))]
    )


def save_delimited(dataset: Dataset, schema: FeatureSchema, path: str) -> None:
    names = _column_names(schema)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for i in range(len(dataset)):
            row = [str(int(dataset.labels[i]))]
            row += [repr(float(v)) for v in dataset.dense[i]]
            row += [str(int(v)) for v in dataset.cat_ids[i]]
            writer.writerow(row)


def load_delimited(path: str, schema: FeatureSchema) -> Dataset:
    """Parse a delimited file against the schema. Dense cells are floats;
    categorical cells are hashed into [0, cardinality) with hash_cell, so
    arbitrary string vocabularies are accepted (including, with possible
    collisions, re-imports of exported integer ids)."""
    expected = _column_names(schema)
    dense_rows: list[list[float]] = []
    id_rows: list[list[int]] = []
    labels: list[float] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty file, expected a header row")
        if header != expected:
            unknown = [c for c in header if c not in expected]
            if unknown:
                raise SchemaError(f"{path}: unknown column(s) {unknown}, expected {expected}")
            raise SchemaError(f"{path}: header {header} does not match schema {expected}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise ParseError(
                    f"{path}: line {line_no}: expected {len(expected)} cells, got {len(row)}"
                )
            cells = iter(row)
            raw_label = next(cells)
            if raw_label not in ("0", "1"):
                raise ParseError(
                    f"{path}: line {line_no}: label must be 0 or 1, got {raw_label!r}"
                )
            labels.append(float(raw_label))
            drow = []
            for j in range(schema.n_dense):
                cell = next(cells)
                try:
                    drow.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}: line {line_no}: column d{j}: non-numeric cell {cell!r}"
                    ) from None
            dense_rows.append(drow)
            id_rows.append(
                [hash_cell(next(cells), f.cardinality) for f in schema.fields]
            )
    n = len(labels)
    return Dataset(
        dense=np.array(dense_rows, dtype=np.float64).reshape(n, schema.n_dense),
        cat_ids=np.array(id_rows, dtype=np.int64).reshape(n, len(schema.fields)),
        labels=np.array(labels, dtype=np.float64),
        teacher_probs=None,
    )
