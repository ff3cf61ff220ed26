import numpy as np
import pytest
from hypothesis import settings

from terrain_loop.ingest import PointCloud

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def random_cloud(n, seed=0, extent=1.0, z_scale=0.1):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, extent, size=(n, 2))
    z = z_scale * np.sin(3 * xy[:, 0]) * np.cos(2 * xy[:, 1]) + 0.01 * rng.standard_normal(n)
    return PointCloud(np.column_stack([xy, z]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_WINDOW = dict(window=1.5, points=600)


def tiny_submaps(count, seed=0):
    """Cheap submaps laid out along a strip, for bookkeeping tests (not for matching)."""
    from terrain_loop import synth
    t = synth.generate_terrain(synth.TerrainSpec(seed=seed))
    out = []
    for i in range(count):
        w = synth.Window((1.0 + 0.4 * i, 4.0), 0.1 * i, (1.5, 1.5))
        s = synth.sample_submap(t, w, 600, 0.02, seed=seed * 100 + i, id=i)
        out.append(s)
    return out


@pytest.fixture(scope="session")
def tiny_config():
    from terrain_loop.config import BuildConfig
    return BuildConfig(fit_hyperparameters=False, downsample_target=600)


# --------------------------------------------------------------------------- acceptance reporting

ACCEPTANCE = {}


class criterion:
    """Context manager that records a PASS/FAIL line for an acceptance criterion."""

    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        ACCEPTANCE[self.number] = (status, self.title, self.detail)
        print(f"\n[{status}] criterion {self.number}: {self.title} {self.detail}")
        return False


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, title, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{status}] {number:2d}. {title} {detail}")
