import numpy as np
import pytest

from nlmap.core import ContextElement, EmbeddingVector
from nlmap.embedding import MockProviderSpec, MockVLM
from nlmap.scene import ChannelSchema, SceneRepresentation


@pytest.fixture(scope="session")
def vlm():
    return MockVLM(MockProviderSpec())


@pytest.fixture(scope="session")
def clean_vlm():
    """No jitter, no blind spots: region vectors sit at exactly true_alignment."""
    return MockVLM(MockProviderSpec(noise_sigma=0.0, blind_spot_rate=0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def unit_rows(rng, n, d):
    m = rng.standard_normal((n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def random_map(rng, n, dims=(("clip", 16), ("vild", 16)), scene_id="rand", spread=4.0):
    schema = ChannelSchema(dims)
    emb = {pid: unit_rows(rng, n, d) for pid, d in dims}
    pos = rng.uniform(0, spread, size=(n, 3))
    radii = rng.uniform(0.05, 0.3, size=n)
    ids = rng.permutation(n * 3)[:n]
    return SceneRepresentation(scene_id, schema, emb, pos, radii, [f"f{i % 7}" for i in range(n)], element_ids=ids)


def element(pos, radius=0.1, eid=0, dim=4):
    v = np.zeros(dim)
    v[0] = 1.0
    return ContextElement({"clip": EmbeddingVector(v, "clip")}, pos, radius, "f0", eid)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
