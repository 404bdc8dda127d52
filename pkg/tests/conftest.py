import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from seqdiff import Dims, RngStream, build_schedule, init_params


@pytest.fixture(scope="session")
def schedule_k20():
    return build_schedule("cosine", 20)


@pytest.fixture(scope="session")
def tiny_params():
    return init_params(RngStream(11).child("init"), Dims(2, 3, 4, 1), 6, "epsilon")


@pytest.fixture()
def rng():
    return RngStream(1234)


def assert_close(a, b, tol, msg=""):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    err = np.max(np.abs(a - b)) if a.size else 0.0
    assert err <= tol, f"{msg} max abs err {err:.3e} > {tol:.1e}"
