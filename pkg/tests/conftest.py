import functools

import numpy as np
import pytest

from clothgeom.config import Config
from clothgeom.pipeline import analyze
from clothgeom.synth import SceneSpec, generate


@functools.lru_cache(maxsize=None)
def _analyzed(spec: SceneSpec):
    h, mask, truth = generate(spec)
    report, mid = analyze(h, mask, Config(pitch=spec.pitch), keep=True)
    return report, mid, truth


@pytest.fixture(scope="session")
def scene():
    """``scene(**spec_kwargs) -> (report, intermediates, truth)``, cached per spec."""
    def run(**kw):
        return _analyzed(SceneSpec(**kw))
    return run


def angle_gap_deg(a: float, b: float) -> float:
    d = abs(a - b) % 180.0
    return min(d, 180.0 - d)


def direction_deg(v) -> float:
    return float(np.degrees(np.arctan2(v[1], v[0])))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(mod.RESULTS):
            terminalreporter.write_line(mod.RESULTS[n])
