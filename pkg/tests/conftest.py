import os
from pathlib import Path

import numpy as np
import pytest

from fairfrs import Hyperparams, make_synthetic, split, write_movielens

ROOT = Path(__file__).resolve().parents[1]
ML100K = Path(os.environ.get("FAIRFRS_ML100K", ROOT / "data" / "ml-100k"))

# acceptance verdicts, echoed at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])


@pytest.fixture(scope="session")
def synth():
    return make_synthetic(n=60, m=40, k=3, density=0.3, rng_seed=3)


@pytest.fixture(scope="session")
def synth_part(synth):
    return split(synth, 0.8, 0.25, rng_seed=1)


@pytest.fixture
def small_hp():
    return Hyperparams(k=4, T=6, T_predict=2, T_local=2, t_s=3, tau=0.4, gamma=0.3)


@pytest.fixture
def synth_dir(tmp_path, synth):
    return write_movielens(synth, tmp_path / "ml")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
