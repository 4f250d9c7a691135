import os

import numpy as np
import pytest
import torch

os.environ.setdefault("DEPTHADAPT_DETERMINISTIC", "1")

from depthadapt.core import DepthMap, ImageSample, seeded_rng  # noqa: E402
from depthadapt.datasets import PairedDataset, UnpairedDataset  # noqa: E402
from depthadapt.networks import ArchitectureSpec, build_depth_network  # noqa: E402


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.manual_seed(0)
    yield


def random_pairs(n, res=(64, 64), seed=0, prefix="s"):
    rng = np.random.default_rng(seed)
    items = []
    for i in range(n):
        img = rng.random((*res, 3), dtype=np.float32)
        depth = rng.uniform(0.5, 9.5, size=(*res, 1)).astype(np.float32)
        items.append((ImageSample(img, f"{prefix}{i}"), DepthMap(depth)))
    return items


@pytest.fixture
def tiny_spec():
    return ArchitectureSpec("lightweight-tiny", (64, 64))


@pytest.fixture
def tiny_net(tiny_spec):
    return build_depth_network(tiny_spec, seeded_rng(0, "test/net"))


@pytest.fixture
def small_domains():
    S = PairedDataset(random_pairs(8, seed=1), "src")
    T = UnpairedDataset([im for im, _ in random_pairs(8, seed=2, prefix="t")], "tgt")
    return S, T


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion."""
    results = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(number: int, ok: bool, detail: str) -> bool:
        results[number] = (ok, detail)
        print(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail = results[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
