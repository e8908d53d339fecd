import pytest

from cpisim import make_slit_mask, paper_setup


@pytest.fixture
def cfg():
    return paper_setup()


@pytest.fixture
def focused(cfg):
    return cfg.replace(z_b=cfg.z_a)


@pytest.fixture
def triple():
    """Three slits of 99 um at 198 um pitch."""
    return make_slit_mask(3, 99e-6, 198e-6)


@pytest.fixture
def double():
    return make_slit_mask(2, 99e-6, 198e-6)
