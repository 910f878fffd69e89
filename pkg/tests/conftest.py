import pytest

import coreyflow as cf
from coreyflow import cache


@pytest.fixture(scope="session")
def atlas():
    """Locus atlas for the default parameters (disk-cached between runs)."""
    return cache.load_or_build_atlas(cf.DEFAULT_PARAMS)
