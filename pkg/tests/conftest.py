import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pdgm import pdmp
from pdgm.streams import stream


@pytest.fixture
def rng():
    return stream(1234)


@pytest.fixture
def zzp2():
    return pdmp.ProcessSpec(kind="zzp", d=2, t_f=5.0, lambda_r=1.0)


@pytest.fixture
def zzp1():
    return pdmp.ProcessSpec(kind="zzp", d=1, t_f=5.0, lambda_r=1.0)


@pytest.fixture
def bps2():
    return pdmp.ProcessSpec(kind="bps", d=2, t_f=5.0, lambda_r=1.0)


@pytest.fixture
def rhmc2():
    return pdmp.ProcessSpec(kind="rhmc", d=2, t_f=5.0, lambda_r=1.0)


def assert_close(a, b, tol, msg=""):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    assert np.max(np.abs(a - b)) <= tol, msg or f"{a} vs {b} (tol {tol})"
