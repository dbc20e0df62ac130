import json
import warnings

import pytest

from stsim.tessellation import ScaleParams


@pytest.fixture(autouse=True)
def _quiet_regime_warnings():
    # desk-scale parameter sets trip the small-regime advisories on purpose
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="n = 1 < 2")
        warnings.filterwarnings("ignore", message="w = .* below the confinement floor")
        yield


@pytest.fixture
def p_d1():
    """Smallest regime-conforming 1d parameter set (n = 2)."""
    return ScaleParams(d=1, ell=1.0, eps=0.5, eta=1, m=14, lam=5.0, r=1.0, kappa=4)


@pytest.fixture
def p_d2():
    """Smallest regime-conforming 2d parameter set (n = 2)."""
    return ScaleParams(d=2, ell=1.0, eps=0.5, eta=1, m=28, lam=2.0, r=1.0, kappa=4)


@pytest.fixture
def p_desk():
    """Degenerate-subgrid 1d set small enough to simulate indicator fields."""
    return ScaleParams(d=1, ell=1.0, eps=0.5, eta=1, m=7, lam=50.0, r=1.0,
                       kappa=2, c_mix=0.5)


@pytest.fixture
def write_config(tmp_path):
    def _write(name, payload):
        path = tmp_path / name
        path.write_text(json.dumps(payload))
        return str(path)

    return _write
