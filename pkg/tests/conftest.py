import numpy as np
import pytest

from selfloop_seg.data import generate_synthetic_dataset, split_train_pool
from selfloop_seg.network import NetworkConfig, build_network
from selfloop_seg.permutations import enumerate_candidates, select_max_hamming_subset


@pytest.fixture(scope="session")
def grid2_candidates():
    return enumerate_candidates(2, 10**6)


@pytest.fixture(scope="session")
def perm_set_grid2(grid2_candidates):
    return select_max_hamming_subset(grid2_candidates, 8, seed=0)


@pytest.fixture(scope="session")
def perm_set_grid3():
    candidates = enumerate_candidates(3, 2000, seed=0)
    return select_max_hamming_subset(candidates, 12, seed=0)


@pytest.fixture()
def small_net():
    # 16x16-capable net: grid 2 tiles of 8, two pooling stages
    return build_network(NetworkConfig(in_channels=3, base_width=4, depth=2, k_classes=8, seed=0))


@pytest.fixture()
def small_images():
    rng = np.random.default_rng(7)
    return [rng.random((16, 16, 3)).astype(np.float32) for _ in range(3)]


@pytest.fixture(scope="session")
def tiny_split():
    pool = generate_synthetic_dataset(8, 16, (1, 3), 0.05, seed=3, id_prefix="train")
    test = generate_synthetic_dataset(3, 16, (1, 3), 0.05, seed=4, id_prefix="test")
    return split_train_pool(pool, test, 0.5, seed=5)
