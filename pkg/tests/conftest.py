import re

import numpy as np
import pytest
import torch

from conductor_motion.audio_features import FeatureConfig
from conductor_motion.models import ModelConfig
from conductor_motion.motion_data import synthetic_corpus

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_synth():
    """Four 12 s synthetic clips: (corpus, audio, motions, manifest)."""
    return synthetic_corpus(4, 12.0, seed=3)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(c_audio=24, c_motion=26, d_feat=8, n_layers=2, kernel=3, d_hidden=8, head_layers=2, critic_layers=2)


@pytest.fixture
def feature_cfg():
    return FeatureConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# --- acceptance summary: one line per criterion --------------------------------

_CRITERIA = {}


def _criterion(nodeid):
    m = re.search(r"test_acceptance\.py::test_a(\d+)_(\w+)", nodeid)
    return (int(m.group(1)), m.group(2).replace("_", " ")) if m else None


def pytest_runtest_logreport(report):
    key = _criterion(report.nodeid)
    if key is None:
        return
    if report.when == "call" or report.outcome != "passed":
        prev = _CRITERIA.get(key, {}).get("outcome")
        if prev != "failed":
            detail = "; ".join(str(v) for k, v in report.user_properties if k == "measured")
            _CRITERIA[key] = {"outcome": report.outcome, "detail": detail}


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for (num, title), info in sorted(_CRITERIA.items()):
        verdict = {"passed": "PASS", "failed": "FAIL"}.get(info["outcome"], info["outcome"].upper())
        line = f"A{num:<2} {verdict}  {title}"
        if info["detail"]:
            line += f"  [{info['detail']}]"
        terminalreporter.write_line(line)
