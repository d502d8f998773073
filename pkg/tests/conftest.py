import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, d, shift=1.0):
    A = rng.standard_normal((d, d))
    return A.T @ A + shift * np.eye(d)


@pytest.fixture
def write_config(tmp_path):
    """Write a flat config file and return its path."""

    def make(name="run.cfg", **values):
        path = tmp_path / name
        path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()))
        return str(path)

    return make
