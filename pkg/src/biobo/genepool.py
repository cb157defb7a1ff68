"""Candidate pools for batch experimental design.

A pool bundles gene identifiers, one embedding matrix per modality, and the
hidden phenotype labels that only the label oracle may read. This module also
covers file ingestion (embedding/label CSVs, GMT pathway files), modality
fusion, a synthetic desk-scale benchmark, and train/test splitting.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

CLUSTER_JITTER_SD = 0.3
SIGNAL_LABEL_BONUS = 2.0


@dataclass(frozen=True)
class GenePool:
    """Finite candidate pool with per-modality embeddings and oracle labels.

    ``labels`` is the hidden ground truth: selection policies must never read
    it; only the design loop (acting as the oracle) and evaluation code do.
    Instances are immutable after construction.
    """

    ids: tuple[str, ...]
    modalities: dict[str, np.ndarray]
    labels: dict[str, float]

    def __post_init__(self) -> None:
        ids = tuple(str(g) for g in self.ids)
        object.__setattr__(self, "ids", ids)
        if not ids:
            raise ValueError("pool has no genes")
        if len(set(ids)) != len(ids):
            raise ValueError("gene ids must be unique")
        mats = {}
        for name, mat in self.modalities.items():
            arr = np.asarray(mat, dtype=float)
            if arr.ndim != 2 or arr.shape[0] != len(ids):
                raise ValueError(
                    f"modality {name!r}: expected {len(ids)} rows, got shape {arr.shape}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"modality {name!r} contains non-finite entries")
            mats[name] = arr
        object.__setattr__(self, "modalities", mats)
        if set(self.labels) != set(ids):
            raise ValueError("labels must cover exactly the pool ids")
        labels = {g: float(self.labels[g]) for g in ids}
        if not all(math.isfinite(v) for v in labels.values()):
            raise ValueError("labels contain non-finite values")
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return len(self.ids)

    def index(self) -> dict[str, int]:
        """Map from gene id to its row position."""
        return {g: i for i, g in enumerate(self.ids)}

    def label_vector(self, ids: Sequence[str] | None = None) -> np.ndarray:
        """True labels for ``ids`` (pool order when omitted). Oracle-side only."""
        if ids is None:
            ids = self.ids
        return np.array([self.labels[g] for g in ids], dtype=float)


@dataclass(frozen=True)
class PathwayDB:
    """Named gene sets over some identifier universe."""

    pathways: dict[str, frozenset[str]]
    universe_hint: int | None = None

    def __post_init__(self) -> None:
        sets = {}
        for name, genes in self.pathways.items():
            genes = frozenset(genes)
            if not genes:
                raise ValueError(f"pathway {name!r} is empty")
            sets[str(name)] = genes
        object.__setattr__(self, "pathways", sets)

    def __len__(self) -> int:
        return len(self.pathways)

    def genes(self) -> frozenset[str]:
        out: set[str] = set()
        for members in self.pathways.values():
            out |= members
        return frozenset(out)

    def restrict(self, universe: Iterable[str]) -> "PathwayDB":
        """Drop genes outside ``universe``; drop pathways emptied by that."""
        keep = set(universe)
        restricted = {}
        for name, members in self.pathways.items():
            inside = members & keep
            if inside:
                restricted[name] = inside
        return PathwayDB(restricted, universe_hint=len(keep))


@dataclass
class PoolState:
    """Labeled/unlabeled partition of a pool during a design run.

    Single-writer: only the design loop mutates it, via :meth:`observe`.
    """

    labeled: dict[str, float]
    unlabeled: list[str]
    cycle: int = 0

    @classmethod
    def fresh(cls, pool: GenePool) -> "PoolState":
        return cls(labeled={}, unlabeled=list(pool.ids), cycle=0)

    def observe(self, batch: Sequence[str], values: Sequence[float], cycle: int) -> None:
        """Move ``batch`` from unlabeled to labeled with the observed values."""
        if len(batch) != len(values):
            raise ValueError("batch and values length mismatch")
        if len(set(batch)) != len(batch):
            raise ValueError("batch contains duplicate ids")
        pending = set(batch)
        missing = pending - set(self.unlabeled)
        if missing:
            raise ValueError(f"ids not in the unlabeled set: {sorted(missing)}")
        for g, v in zip(batch, values):
            self.labeled[g] = float(v)
        self.unlabeled = [g for g in self.unlabeled if g not in pending]
        self.cycle = cycle


def _read_csv_table(
    path: str, expected_width: int | None, context: str
) -> tuple[list[str], list[tuple[str, list[float]]]]:
    """Shared strict CSV reader: header + one id column + float columns."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{context}: {path} is empty")
        if header[0] != "gene_id" or len(header) < 2:
            raise ValueError(
                f"{context}: {path} must start with header 'gene_id,...', got {header[:3]}"
            )
        width = len(header) - 1
        if expected_width is not None and width != expected_width:
            raise ValueError(f"{context}: expected {expected_width} value columns, got {width}")
        rows: list[tuple[str, list[float]]] = []
        seen: set[str] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width + 1:
                raise ValueError(
                    f"{context}: {path}:{lineno}: expected {width + 1} fields, got {len(row)}"
                )
            gid = row[0]
            if gid in seen:
                raise ValueError(f"{context}: {path}:{lineno}: duplicate gene id {gid!r}")
            seen.add(gid)
            values = []
            for col, cell in enumerate(row[1:], start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise ValueError(
                        f"{context}: {path}:{lineno}: column {header[col]!r}: "
                        f"cannot parse {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise ValueError(
                        f"{context}: {path}:{lineno}: column {header[col]!r}: "
                        f"non-finite value {cell!r}"
                    )
                values.append(v)
            rows.append((gid, values))
        if not rows:
            raise ValueError(f"{context}: {path} has no data rows")
        return header, rows


def load_embeddings(path: str, modality_name: str) -> dict[str, np.ndarray]:
    """Load one modality from a CSV with header ``gene_id,f0,...,f{d-1}``."""
    header, rows = _read_csv_table(path, None, f"modality {modality_name!r}")
    expected = ["gene_id"] + [f"f{i}" for i in range(len(header) - 1)]
    if header != expected:
        raise ValueError(
            f"modality {modality_name!r}: {path}: header must be gene_id,f0,...,f{{d-1}}"
        )
    return {gid: np.array(values, dtype=float) for gid, values in rows}


def load_labels(path: str) -> dict[str, float]:
    """Load phenotype labels from a CSV with header ``gene_id,value``."""
    header, rows = _read_csv_table(path, 1, "labels")
    if header != ["gene_id", "value"]:
        raise ValueError(f"labels: {path}: header must be gene_id,value")
    return {gid: values[0] for gid, values in rows}


def parse_gmt(path: str) -> PathwayDB:
    """Parse a GMT file: ``name<TAB>description<TAB>gene1<TAB>gene2...`` per line.

    The description column is discarded and gene lists are deduplicated
    within a line.
    """
    pathways: dict[str, frozenset[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) < 3:
                raise ValueError(
                    f"{path}:{lineno}: expected name<TAB>description<TAB>genes..., "
                    f"got {len(fields)} fields"
                )
            name = fields[0]
            if name in pathways:
                raise ValueError(f"{path}:{lineno}: duplicate pathway name {name!r}")
            genes = frozenset(g for g in fields[2:] if g)
            if not genes:
                raise ValueError(f"{path}:{lineno}: pathway {name!r} has no genes")
            pathways[name] = genes
    return PathwayDB(pathways)


def build_pool(
    embedding_tables: Mapping[str, Mapping[str, np.ndarray]],
    labels: Mapping[str, float],
    pathways: PathwayDB,
) -> tuple[GenePool, PathwayDB]:
    """Assemble a pool from per-modality tables and a label table.

    The pool is restricted to ids present in every modality and in the label
    table; the pathway database is restricted to that universe (genes outside
    it removed, emptied pathways dropped). All downstream enrichment
    statistics use the intersected pool as their background.
    """
    if not embedding_tables:
        raise ValueError("at least one modality is required")
    if not labels:
        raise ValueError("label table is empty")
    common = set(labels)
    for table in embedding_tables.values():
        common &= set(table)
    if not common:
        raise ValueError("no gene id appears in every modality and the label table")
    ids = tuple(sorted(common))
    modalities = {
        name: np.array([table[g] for g in ids], dtype=float)
        for name, table in embedding_tables.items()
    }
    pool = GenePool(ids=ids, modalities=modalities, labels={g: float(labels[g]) for g in ids})
    return pool, pathways.restrict(ids)


def fuse(pool: GenePool, modality_names: Sequence[str]) -> np.ndarray:
    """Column-wise concatenation of independently L2-normalized modality rows.

    Each modality's rows are normalized to unit L2 norm (all-zero rows are
    left as zero: they carry no direction), then concatenated in the given
    order. Output width is the sum of modality widths.
    """
    if not modality_names:
        raise ValueError("at least one modality name is required")
    blocks = []
    for name in modality_names:
        if name not in pool.modalities:
            raise ValueError(f"unknown modality {name!r}")
        mat = pool.modalities[name]
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
        blocks.append(mat / np.where(norms == 0.0, 1.0, norms))
    return np.hstack(blocks)


def synth_benchmark(
    n_genes: int,
    d: int = 2,
    n_pathways: int = 20,
    signal_pathways: int = 1,
    noise_sd: float = 0.3,
    seed: int = 0,
) -> tuple[GenePool, PathwayDB]:
    """Generate a clustered synthetic benchmark with pathway-aligned signal.

    Genes are partitioned into ``n_pathways`` equal-size clusters (gene ``i``
    belongs to cluster ``i % n_pathways``); each cluster is one pathway.
    Cluster centers are standard Gaussian in ``d`` dimensions and members sit
    at center plus Gaussian jitter (sd 0.3). Labels are Gaussian noise plus a
    +2.0 bonus for members of the first ``signal_pathways`` clusters, so the
    true optimum genes concentrate in the signal pathways and enrichment is
    informative by construction. Deterministic given ``seed``.
    """
    if n_genes < 50:
        raise ValueError("n_genes must be >= 50")
    if d < 1:
        raise ValueError("d must be >= 1")
    if n_pathways < 1:
        raise ValueError("n_pathways must be >= 1")
    if not 1 <= signal_pathways <= n_pathways:
        raise ValueError("signal_pathways must be in [1, n_pathways]")
    if noise_sd < 0:
        raise ValueError("noise_sd must be >= 0")
    rng = np.random.default_rng(seed)
    ids = tuple(f"G{i:05d}" for i in range(n_genes))
    cluster = np.arange(n_genes) % n_pathways
    centers = rng.standard_normal((n_pathways, d))
    X = centers[cluster] + CLUSTER_JITTER_SD * rng.standard_normal((n_genes, d))
    y = noise_sd * rng.standard_normal(n_genes)
    y[cluster < signal_pathways] += SIGNAL_LABEL_BONUS
    pool = GenePool(
        ids=ids,
        modalities={"embedding": X},
        labels={g: float(v) for g, v in zip(ids, y)},
    )
    pathways = {
        f"PW{m:03d}": frozenset(ids[i] for i in range(n_genes) if cluster[i] == m)
        for m in range(n_pathways)
    }
    return pool, PathwayDB(pathways, universe_hint=n_genes)


def train_test_split(
    pool: GenePool, test_fraction: float, seed: int
) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Disjoint, exhaustive split, stratified on the pool's top-10% genes.

    The test set receives its proportional share of the top-10% labeled genes
    so near-optimum metrics stay well-defined on it. Deterministic given
    ``seed``.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    n = pool.size
    by_value = sorted(pool.ids, key=lambda g: (-pool.labels[g], g))
    k_top = math.ceil(0.1 * n)
    top, rest = by_value[:k_top], by_value[k_top:]
    n_test = min(max(int(n * test_fraction + 0.5), 1), n - 1)
    n_top_test = min(int(k_top * test_fraction + 0.5), len(top), n_test)
    n_rest_test = min(n_test - n_top_test, len(rest))
    rng = np.random.default_rng(seed)
    test: set[str] = set()
    if n_top_test:
        test |= {str(g) for g in rng.choice(sorted(top), size=n_top_test, replace=False)}
    if n_rest_test:
        test |= {str(g) for g in rng.choice(sorted(rest), size=n_rest_test, replace=False)}
    train = tuple(g for g in pool.ids if g not in test)
    return train, tuple(g for g in pool.ids if g in test)
