import numpy as np
import pytest

from biobo import GenePool, PathwayDB, synth_benchmark


@pytest.fixture(scope="session")
def tiny_pool() -> GenePool:
    """Four genes, one 2-d modality, handcrafted labels."""
    ids = ("A", "B", "C", "D")
    emb = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    labels = {"A": 0.1, "B": 2.0, "C": 0.5, "D": 1.5}
    return GenePool(ids=ids, modalities={"m": emb}, labels=labels)


@pytest.fixture(scope="session")
def small_bench() -> tuple[GenePool, PathwayDB]:
    """100-gene clustered benchmark with one signal pathway."""
    return synth_benchmark(100, d=4, n_pathways=10, signal_pathways=1, noise_sd=0.1, seed=11)
