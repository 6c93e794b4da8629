import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mesohom import cosserat_fit as C
from mesohom.errors import ContractError, ParameterError

GPA = 1e9


def test_shear_block_without_lame_lambda():
    D = C.build_cosserat_tensor(C.CosseratParams(0.0, 1.0, 1.0, 0.0))
    assert np.array_equal(D[2:4, 2:4], [[2.0, 0.0], [0.0, 2.0]])
    assert np.all(D[4:, 4:] == 0.0)


def test_equal_moduli_decouple_shear():
    D = C.build_cosserat_tensor(C.CosseratParams(2.0, 3.0, 3.0, 0.1))
    assert D[2, 3] == 0.0 and D[3, 2] == 0.0


def test_published_row_reproduces_printed_template():
    # printed template for the beta = 0 row, in GPa
    printed = np.zeros((6, 6))
    printed[:2, :2] = [[31.42, 8.58], [8.58, 31.42]]
    printed[2:4, 2:4] = [[17.42, 5.42], [5.42, 17.42]]
    printed[4, 4] = printed[5, 5] = 0.09
    D = C.build_cosserat_tensor(C.reference_parameters()[0.0]) / GPA
    assert np.allclose(D, printed, atol=0.006)


@settings(max_examples=100, deadline=None)
@given(
    st.floats(-5, 20),
    st.floats(0.5, 20),
    st.floats(0, 10),
    st.floats(0, 1),
)
def test_fit_roundtrip(lam, mu, mu_c, ell):
    p = C.CosseratParams(lam * GPA, mu * GPA, mu_c * GPA, ell)
    q = C.fit_cosserat(C.build_cosserat_tensor(p))
    scale = max(abs(lam), mu, mu_c, 1.0) * GPA
    assert abs(q.lam - p.lam) <= 1e-10 * scale
    assert abs(q.mu - p.mu) <= 1e-10 * scale
    assert abs(q.mu_c - p.mu_c) <= 1e-10 * scale
    assert abs(q.ell - p.ell) <= 1e-10 * max(ell, 1e-3)
    assert C.fit_residual(C.build_cosserat_tensor(p)) <= 1e-12 * np.linalg.norm(C.build_cosserat_tensor(p))


def test_fit_is_least_squares(rng):
    # perturbing the fitted parameters can only increase the misfit
    D = C.rve_tensor("0")
    p = C.fit_cosserat(D)
    base = C.fit_residual(D)
    for _ in range(20):
        dl, dm, dc = rng.normal(size=3) * 1e7
        q = C.CosseratParams(p.lam + dl, p.mu + dm, p.mu_c + dc, p.ell)
        assert np.linalg.norm(D - C.build_cosserat_tensor(q)) >= base


def test_fit_rve_without_bending():
    p = C.fit_cosserat(C.rve_tensor("0"))
    ref = C.reference_parameters()[0.0]
    for name in ("lam", "mu", "mu_c", "ell"):
        assert getattr(p, name) == pytest.approx(getattr(ref, name), rel=0.05), name


def test_fit_rve_with_strong_bending():
    p = C.fit_cosserat(C.rve_tensor("1e5"))
    assert 4 * p.mu * p.ell**2 == pytest.approx(22.33 * GPA, rel=0.05)
    assert p.ell == pytest.approx(0.682, rel=0.05)


def test_negative_couple_modulus_warns():
    D = C.build_cosserat_tensor(C.CosseratParams(1.0, 1.0, 1.0, 0.0))
    D[4, 4] = D[5, 5] = -0.5
    with pytest.warns(RuntimeWarning):
        assert C.fit_cosserat(D).ell == 0.0


def test_fit_rejects_wrong_shape():
    with pytest.raises(ContractError):
        C.fit_cosserat(np.eye(5))


def test_engineering_constants():
    for p in C.reference_parameters().values():
        assert p.E == pytest.approx(p.mu * (3 * p.lam + 2 * p.mu) / (p.lam + p.mu))
        assert p.nu == pytest.approx(p.lam / (2 * (p.lam + p.mu)))
    p = C.reference_parameters()[0.0]
    assert p.E / GPA == pytest.approx(27.74, abs=0.01)
    assert p.nu == pytest.approx(0.214, abs=1e-3)  # printed to three digits


def test_params_validation():
    with pytest.raises(ParameterError):
        C.CosseratParams(1.0, 0.0, 1.0, 0.0)
    with pytest.raises(ParameterError):
        C.CosseratParams(1.0, 1.0, 1.0, -0.1)


def test_unknown_fixture():
    with pytest.raises(ParameterError):
        C.rve_tensor("7")


def test_fixtures_are_symmetric():
    for b in ("0", "1e5"):
        D = C.rve_tensor(b)
        assert np.abs(D - D.T).max() <= 1e-12 * np.abs(D).max()


def test_beam_oracle():
    P, S, D = 1e5, 12.0, 3.0
    assert C.beam_oracle(P, S, D, S)[2] == 0.0
    assert abs(C.beam_oracle(P, S, D, 0.0)[2]) == pytest.approx(P * S)
    N, V, M = C.beam_oracle(P, S, D, np.linspace(0, S, 7))
    assert np.all(N == 0.0) and np.all(V == -P)
    assert np.allclose(M, -P * (S - np.linspace(0, S, 7)))
    with pytest.raises(ParameterError):
        C.beam_oracle(P, S, D, S + 1.0)
