"""TOML experiment specs: data sources, config grids, seeds.

A spec names either on-disk data (embedding CSVs, a label CSV, GMT pathway
files) or synthetic-benchmark parameters, plus a grid of run settings. Every
field of the run defaults can be overridden; the grid is the cartesian
product of acquisitions x priors x surrogates x modality subsets, each run
over every seed.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .genepool import (
    GenePool,
    PathwayDB,
    build_pool,
    load_embeddings,
    load_labels,
    parse_gmt,
    synth_benchmark,
)
from .loop import RunConfig
from .surrogate import EnsembleConfig, GPConfig

DEFAULT_SEEDS = tuple(range(7))
FUSION = "fusion"
SYNTH_PRIOR_NAME = "synth"


@dataclass(frozen=True)
class SyntheticSource:
    n_genes: int = 1000
    d: int = 2
    n_pathways: int = 20
    signal_pathways: int = 1
    noise_sd: float = 0.3
    seed: int = 0


@dataclass(frozen=True)
class DataSource:
    embeddings: dict[str, str]
    labels: str
    pathways: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentSpec:
    source: SyntheticSource | DataSource
    acquisitions: tuple[str, ...]
    priors: tuple[str, ...]
    surrogates: tuple[str, ...]
    modalities: tuple[Any, ...]  # each entry: FUSION or a tuple of modality names
    seeds: tuple[int, ...]
    run_defaults: dict[str, Any]
    gp: GPConfig
    ensemble: EnsembleConfig
    test_fraction: float
    metric_fractions: tuple[float, ...]
    spec_hash: str

    def prior_names(self) -> tuple[str, ...]:
        return tuple(p for p in self.priors if p != "none")


def _as_tuple(value: Any) -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return (value,)


def load_spec(path: str) -> ExperimentSpec:
    """Parse and validate a TOML experiment spec."""
    with open(path, "rb") as fh:
        raw_bytes = fh.read()
    doc = tomllib.loads(raw_bytes.decode("utf-8"))
    spec_hash = hashlib.sha256(raw_bytes).hexdigest()[:16]

    has_data = "data" in doc
    has_synth = "synthetic" in doc
    if has_data == has_synth:
        raise ValueError("spec must contain exactly one of [data] or [synthetic]")

    if has_synth:
        source: SyntheticSource | DataSource = SyntheticSource(**doc["synthetic"])
    else:
        data = doc["data"]
        if "embeddings" not in data or not data["embeddings"]:
            raise ValueError("[data.embeddings] must name at least one modality CSV")
        if "labels" not in data:
            raise ValueError("[data] must name a labels CSV")
        source = DataSource(
            embeddings=dict(data["embeddings"]),
            labels=data["labels"],
            pathways=dict(data.get("pathways", {})),
        )

    grid = doc.get("grid", {})
    acquisitions = _as_tuple(grid.get("acquisitions", ["ucb"]))
    priors = _as_tuple(grid.get("priors", ["none"]))
    surrogates = _as_tuple(grid.get("surrogates", ["gp"]))
    modalities = tuple(
        m if isinstance(m, str) else tuple(m) for m in grid.get("modalities", [FUSION])
    )
    seeds = tuple(int(s) for s in grid.get("seeds", DEFAULT_SEEDS))
    if not (acquisitions and priors and surrogates and modalities and seeds):
        raise ValueError("grid lists must be non-empty")

    for name in priors:
        if name == "none":
            continue
        if has_synth:
            if name != SYNTH_PRIOR_NAME:
                raise ValueError(
                    f"synthetic specs only support prior {SYNTH_PRIOR_NAME!r}, got {name!r}"
                )
        elif name not in source.pathways:
            raise ValueError(f"prior {name!r} has no entry in [data.pathways]")

    run_defaults = dict(doc.get("run", {}))
    reserved = {"acquisition", "prior", "surrogate", "modalities", "seed", "gp", "ensemble"}
    bad = reserved & set(run_defaults)
    if bad:
        raise ValueError(f"[run] keys {sorted(bad)} belong to [grid] or their own sections")
    gp = GPConfig(**doc.get("gp", {}))
    ensemble = EnsembleConfig(**doc.get("ensemble", {}))
    split = doc.get("split", {})
    return ExperimentSpec(
        source=source,
        acquisitions=acquisitions,
        priors=priors,
        surrogates=surrogates,
        modalities=modalities,
        seeds=seeds,
        run_defaults=run_defaults,
        gp=gp,
        ensemble=ensemble,
        test_fraction=float(split.get("test_fraction", 0.2)),
        metric_fractions=tuple(split.get("fractions", (0.01, 0.05, 0.10))),
        spec_hash=spec_hash,
    )


def materialize(spec: ExperimentSpec) -> tuple[GenePool, dict[str, PathwayDB]]:
    """Load or generate the pool and one restricted pathway DB per prior name."""
    if isinstance(spec.source, SyntheticSource):
        src = spec.source
        pool, db = synth_benchmark(
            n_genes=src.n_genes,
            d=src.d,
            n_pathways=src.n_pathways,
            signal_pathways=src.signal_pathways,
            noise_sd=src.noise_sd,
            seed=src.seed,
        )
        return pool, {SYNTH_PRIOR_NAME: db}
    tables = {
        name: load_embeddings(path, name) for name, path in spec.source.embeddings.items()
    }
    labels = load_labels(spec.source.labels)
    names = list(spec.source.pathways)
    first_db = parse_gmt(spec.source.pathways[names[0]]) if names else PathwayDB({})
    pool, first_restricted = build_pool(tables, labels, first_db)
    dbs: dict[str, PathwayDB] = {}
    if names:
        dbs[names[0]] = first_restricted
        for name in names[1:]:
            dbs[name] = parse_gmt(spec.source.pathways[name]).restrict(pool.ids)
    return pool, dbs


def modality_label(entry: Any) -> str:
    return entry if isinstance(entry, str) else "+".join(entry)


def cell_label(acquisition: str, prior: str, surrogate: str, modality: Any) -> str:
    return f"{acquisition}-{prior}-{surrogate}-{modality_label(modality)}"


def grid_configs(
    spec: ExperimentSpec, pool: GenePool, seed_override: int | None = None
) -> list[tuple[str, RunConfig]]:
    """Expand the grid into (label, RunConfig) pairs, one per cell per seed."""
    seeds = (seed_override,) if seed_override is not None else spec.seeds
    cells = []
    for acq, prior, surrogate, modality in itertools.product(
        spec.acquisitions, spec.priors, spec.surrogates, spec.modalities
    ):
        names = None if modality == FUSION else tuple(modality)
        if names is not None:
            for name in names:
                if name not in pool.modalities:
                    raise ValueError(f"grid modality {name!r} not in the pool")
        label = cell_label(acq, prior, surrogate, modality)
        for seed in seeds:
            config = RunConfig(
                acquisition=acq,
                prior=prior,
                surrogate=surrogate,
                modalities=names,
                seed=int(seed),
                gp=spec.gp,
                ensemble=spec.ensemble,
                **spec.run_defaults,
            )
            cells.append((label, config))
    return cells
