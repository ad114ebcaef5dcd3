from types import SimpleNamespace

import numpy as np
import pytest

from app.models.models import BlockMappingMatrix, GroupPartition, RowTag
from app.schemas.schemas import SimConfig


def random_orthogonal(p: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    return q * np.sign(np.diag(r))


def random_unit_rows(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal((n, p))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def plant_mapping(x: np.ndarray, partition: GroupPartition, swaps, weighted) -> BlockMappingMatrix:
    """Меняет местами первые две строки групп swaps, третья строка групп weighted - равные веса"""
    n = partition.n
    tags = np.full(n, RowTag.IDENTITY.value, dtype="<U8")
    targets = np.arange(n, dtype=np.int64)
    for k in swaps:
        a = int(partition.starts[k])
        tags[[a, a + 1]] = RowTag.PERMUTED.value
        targets[a], targets[a + 1] = a + 1, a
    weights = {}
    for k in weighted:
        sl = partition.slice(k)
        i = sl.start + 2
        w = np.ones(partition.sizes[k])
        weights[i] = w / np.linalg.norm(w @ x[sl])
        tags[i] = RowTag.WEIGHTED.value
        targets[i] = -1
    return BlockMappingMatrix(partition, tags, targets, weights)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def noise_free_problem(rng):
    """n=300, p=20, 60 групп по 5 строк; Y = Π X W без шума"""
    partition = GroupPartition.from_sizes([5] * 60)
    x = random_unit_rows(300, 20, rng)
    w = random_orthogonal(20, rng)
    pi = plant_mapping(x, partition, swaps=range(0, 10, 2), weighted=range(20, 25))
    y = pi.apply(x) @ w
    return SimpleNamespace(x=x, y=y, w=w, pi=pi, partition=partition)


@pytest.fixture
def small_sim_config():
    return SimConfig(n=400, p=30, K=80, alpha=0.5, kappa=1000.0, seed=7)
