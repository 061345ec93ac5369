import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "scripts"))

from linalg_module import CorrMatrix, equicorrelated  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def mild3():
    """Weakly correlated 3 x 3 matrix; series tables converge quickly"""
    return CorrMatrix([[1.0, 0.3, 0.2],
                       [0.3, 1.0, 0.25],
                       [0.2, 0.25, 1.0]])


@pytest.fixture
def mild4():
    return CorrMatrix([[1.0, 0.3, 0.2, 0.15],
                       [0.3, 1.0, 0.25, 0.2],
                       [0.2, 0.25, 1.0, 0.3],
                       [0.15, 0.2, 0.3, 1.0]])


@pytest.fixture
def one_factorial3():
    """r_ij = 0.5 * 0.5 for all i != j"""
    return equicorrelated(3, 0.25)


@pytest.fixture
def matrix_csv(tmp_path):
    """Writes a matrix to a CSV file under tmp_path and returns its path"""
    def write(entries, name="R.csv"):
        path = tmp_path / name
        path.write_text("\n".join(",".join(repr(float(v)) for v in row) for row in entries) + "\n")
        return str(path)
    return write
