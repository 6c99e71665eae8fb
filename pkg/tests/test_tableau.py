import numpy as np
import pytest

from slidingoc.errors import ConfigurationError
from slidingoc.tableau import adjoint_tableau, radau_iia


def test_weights_sum_to_one(tab):
    assert abs(tab.b.sum() - 1.0) < 1e-14


def test_order_conditions_to_five(tab):
    for k in range(1, 6):
        assert abs(tab.b @ tab.c ** (k - 1) - 1.0 / k) < 1e-13


def test_abscissae_are_collocation_roots(tab):
    # independent construction: roots of d^2/dt^2 [t^2 (t-1)^3]
    poly = np.polynomial.Polynomial([0, 0, 1]) * np.polynomial.Polynomial([-1, 1]) ** 3
    roots = np.sort(poly.deriv(2).roots())
    assert np.allclose(np.sort(tab.c), roots, atol=1e-12)
    assert abs(tab.c[-1] - 1.0) < 1e-15


def test_stability_radius_zero(tab):
    assert abs(tab.stability_radius) <= 1e-12


def test_stage_matrix_invertible(tab):
    assert np.abs(tab.A_inv @ tab.A - np.eye(3)).max() < 1e-13


def test_inverse_weights(tab):
    # b^-_i = sum_j b_j a^-_ji, and their sum equals 1 - R(inf) = 1
    expected = tab.A_inv.T @ tab.b
    assert np.allclose(tab.b_minus, expected, atol=1e-14)
    assert abs(tab.b_minus.sum() - 1.0) < 1e-12
    # stiff accuracy concentrates the algebraic update on the last stage
    assert np.allclose(tab.b_minus, [0.0, 0.0, 1.0], atol=1e-13)


def test_adjoint_coefficient_identity(tab):
    lhs = tab.A_bar * tab.b[:, None]
    rhs = tab.A.T * tab.b[None, :]
    assert np.abs(lhs - rhs).max() <= 1e-14


def test_adjoint_reflection(tab):
    assert np.allclose(tab.c_bar, 1.0 - tab.c, atol=1e-15)
    # in ascending order the backward scheme has a node at zero
    assert abs(np.sort(tab.c_bar)[0]) < 1e-15


def test_adjoint_tableau_is_reversed_radau_ia(tab):
    adj = adjoint_tableau(tab)
    P = np.eye(3)[::-1]
    A_ia = P @ adj.A @ P
    c_ia = P @ adj.c
    b_ia = P @ adj.b
    r6 = np.sqrt(6.0)
    A_ref = np.array(
        [
            [1 / 9, (-1 - r6) / 18, (-1 + r6) / 18],
            [1 / 9, (88 + 7 * r6) / 360, (88 - 43 * r6) / 360],
            [1 / 9, (88 + 43 * r6) / 360, (88 - 7 * r6) / 360],
        ]
    )
    assert np.abs(A_ia - A_ref).max() < 1e-14
    assert np.allclose(c_ia, [0.0, (6 - r6) / 10, (6 + r6) / 10], atol=1e-14)
    assert np.allclose(b_ia, [1 / 9, (16 + r6) / 36, (16 - r6) / 36], atol=1e-14)
    assert abs(adj.stability_radius) <= 1e-12


def test_adjoint_transform_is_involution(tab):
    twice = adjoint_tableau(adjoint_tableau(tab))
    assert np.abs(twice.A - tab.A).max() < 1e-13
    assert np.abs(twice.c - tab.c).max() < 1e-14


def test_adjoint_order_conditions(tab):
    adj = adjoint_tableau(tab)
    for k in range(1, 6):
        assert abs(adj.b @ adj.c ** (k - 1) - 1.0 / k) < 1e-13
    for q in (1, 2):
        assert np.abs(adj.A @ adj.c ** (q - 1) - adj.c**q / q).max() < 1e-13


def test_unsupported_stage_count():
    with pytest.raises(ConfigurationError):
        radau_iia(2)
    with pytest.raises(ConfigurationError):
        radau_iia(5)
