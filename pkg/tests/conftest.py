import numpy as np
import pytest

from mrseg.cloud import ClassSchema, MergeMap, build_merged_schema
from mrseg.synthetic import make_scene, scene_config


def brute_knn(points: np.ndarray, query: np.ndarray, k: int) -> np.ndarray:
    d2 = ((points - query) ** 2).sum(axis=1)
    return np.lexsort((np.arange(len(points)), d2))[:k]


@pytest.fixture
def wall_schema():
    """Four-class example: walls absorb doors and boards."""
    schema = ClassSchema.from_pairs([("ground", "low"), ("wall", "low"),
                                     ("door", "high"), ("board", "high")])
    merge = MergeMap.from_names(schema, {"door": "wall", "board": "wall"})
    return schema, merge, build_merged_schema(schema, merge)


@pytest.fixture(scope="session")
def scene_cfg():
    return scene_config()


@pytest.fixture(scope="session")
def scene():
    return make_scene(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
