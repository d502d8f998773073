import numpy as np
import pytest
from hypothesis import given, strategies as st

from scorebayes.errors import DomainError
from scorebayes.numerics import fd_gradient
from scorebayes.transforms import IDENTITY, LOG, LOG_SD, LOGIT, CoordinateMap, scaled_logit

MAPS = [IDENTITY, LOG, LOG_SD, LOGIT, scaled_logit(-0.25, 1.0)]


@pytest.mark.parametrize("b", MAPS, ids=lambda b: b.name)
@given(u=st.floats(-8, 8))
def test_round_trip_and_jacobian(b, u):
    t = b.to_model(u)
    assert abs(b.from_model(t) - u) < 1e-7 * max(1, abs(u))
    deriv = fd_gradient(lambda v: b.to_model(v[0]), [u])[0]
    assert abs(np.log(abs(deriv)) - b.log_abs_deriv(u)) < 1e-6


def test_scaled_logit_domain():
    link = scaled_logit(-0.5, 1.0)
    with pytest.raises(DomainError):
        link.from_model(1.0)
    with pytest.raises(DomainError):
        link.from_model(-0.5)


def test_logit_jacobian_extreme_is_finite():
    assert np.isfinite(LOGIT.log_abs_deriv(800.0))


def test_coordinate_map():
    cmap = CoordinateMap([IDENTITY, LOG_SD, LOGIT])
    psi = np.array([0.3, -0.2, 1.5])
    theta = cmap.to_model(psi)
    np.testing.assert_allclose(cmap.from_model(theta), psi, rtol=1e-14)
    assert cmap.dim == 3 and not cmap.is_identity
    assert CoordinateMap.identity(2).is_identity
    np.testing.assert_allclose(np.log(cmap.jacobian_diag(psi)).sum(), cmap.log_abs_jacobian(psi))


@pytest.mark.parametrize("b", MAPS, ids=lambda b: b.name)
@given(u=st.floats(-8, 8))
def test_log_jacobian_derivative(b, u):
    deriv = fd_gradient(lambda v: b.log_abs_deriv(v[0]), [u])[0]
    assert abs(b.dlog_abs_deriv(u) - deriv) < 1e-6


def test_second_diag():
    cmap = CoordinateMap([IDENTITY, LOG, LOGIT])
    psi = np.array([0.4, -0.7, 2.0])
    s = 1.0 / (1.0 + np.exp(-2.0))
    np.testing.assert_allclose(cmap.second_diag(psi), [0.0, np.exp(-0.7), s * (1 - s) * (1 - 2 * s)], rtol=1e-12)
    assert cmap.has_second_derivative
    bare = CoordinateMap([LOG, type(LOG)("bare", np.exp, np.log, lambda u: u)])
    assert not bare.has_second_derivative
