import json

import numpy as np
import pytest

from magwell.miniwell import (
    EffectiveOperatorK,
    Moments1D,
    MiniwellGeometry,
    OracleBox,
    build_A,
    build_Omega,
    build_effective_operator,
    flat_model_geometry,
    moments_1d,
    omega_orthogonal_direction,
    spectrum_K,
    spectrum_K_oracle,
)
from magwell.montgomery import minimizer_state
from magwell.sl_engine import ConvergenceError, SolverError


def make_geometry(dim=2, **overrides):
    base = dict(
        n=dim + 1,
        omega01=np.ones(dim) / np.sqrt(dim),
        domega01=np.zeros((dim, dim)),
        hess_abs2=np.eye(dim) * 2.0,
        omega02=np.zeros(dim),
        gdot00=0.0,
        gdot0j=np.zeros(dim),
        gdotjl=np.zeros((dim, dim)),
        gamma00=0.0,
        gammaj0=np.zeros(dim),
    )
    base.update(overrides)
    return MiniwellGeometry(**base)


def make_kop(c_omega, e_omega, Omega, A=0.0, alpha_min=0.35, k=1):
    e = np.asarray(e_omega, dtype=float)
    return EffectiveOperatorK(c_omega=c_omega, e_omega=e / np.linalg.norm(e),
                              Omega=np.asarray(Omega, dtype=float),
                              A_const=complex(A), alpha_min=alpha_min, k=k)


@pytest.fixture(scope="module")
def state_k1():
    return minimizer_state(1)


@pytest.fixture(scope="module")
def state_k2():
    return minimizer_state(2)


@pytest.fixture(scope="module")
def report_k1(state_k1):
    return state_k1.report


@pytest.fixture(scope="module")
def report_k2(state_k2):
    return state_k2.report


class TestGeometry:
    def test_gradient_condition_enforced(self):
        # domega01^T omega01 != 0 violates the minimum condition
        with pytest.raises(ValueError, match="minimum condition"):
            make_geometry(domega01=np.array([[1.0, 0.0], [0.0, 1.0]]))

    def test_gradient_condition_allows_tangential_rows(self):
        # rows orthogonal to omega01 are fine
        w = np.array([1.0, 0.0])
        D = np.array([[0.0, 0.0], [0.3, 0.5]])   # D^T w = 0
        g = make_geometry(omega01=w, domega01=D)
        assert g.omega_min == pytest.approx(1.0)

    def test_hessian_must_be_spd(self):
        with pytest.raises(ValueError, match="positive definite"):
            make_geometry(hess_abs2=np.diag([1.0, -2.0]))

    def test_zero_field_rejected(self):
        with pytest.raises(ValueError, match="nonzero"):
            make_geometry(omega01=np.zeros(2))

    def test_divergence_defaults_to_trace(self):
        # first row zero keeps D^T omega01 = 0 for omega01 along e_1
        w = np.array([1.0, 0.0])
        D = np.array([[0.0, 0.0], [0.3, 0.4]])
        g = make_geometry(omega01=w, domega01=D)
        assert g.divergence == pytest.approx(0.4)
        g2 = make_geometry(omega01=w, domega01=D, domega_div=1.23)
        assert g2.divergence == 1.23

    def test_json_round_trip(self, tmp_path):
        g = make_geometry(gdot00=0.7)
        path = tmp_path / "geom.json"
        with open(path, "w") as fh:
            json.dump(g.to_json_dict(), fh)
        g2 = MiniwellGeometry.from_json(str(path))
        assert np.array_equal(g2.omega01, g.omega01)
        assert g2.gdot00 == 0.7

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            MiniwellGeometry.from_json({"n": 2, "omega01": [1.0],
                                        "domega01": [[0.0]],
                                        "hess_abs2": [[1.0]], "bogus": 1})


class TestMoments:
    def test_even_k_moments_vanish(self, state_k2):
        m = moments_1d(2, state_k2.report.alpha_min, state_k2.spectrum,
                       state_k2.du0_dalpha)
        assert abs(m.m_tau_upp) < 1e-6
        assert abs(m.m_tau_sq) < 1e-6

    def test_mixed_moment_vs_refined_quadrature(self, state_k1):
        # refinement oracle: same integrand on a doubled grid
        from magwell.sl_engine import Grid1D, assemble, lowest_eigenpairs
        from magwell.montgomery import family_potential

        st = state_k1
        m = moments_1d(1, st.report.alpha_min, st.spectrum, st.du0_dalpha)
        g = st.spectrum.grid
        g2 = Grid1D(g.half_width, 2 * (g.n_points - 1) + 1)
        spec2 = lowest_eigenpairs(
            assemble(family_potential(1, st.report.alpha_min), g2), 1)
        m2 = moments_1d(1, st.report.alpha_min, spec2)
        assert m.m_mixed == pytest.approx(m2.m_mixed, abs=1e-6)


class TestOmega:
    def test_even_k_isotropic_case(self, report_k2):
        g = make_geometry(dim=1, omega01=np.array([1.0]),
                          domega01=np.zeros((1, 1)),
                          hess_abs2=np.array([[2.0]]))
        om = build_Omega(g, 2, report_k2)
        assert om[0, 0] == pytest.approx(report_k2.nu_hat / (2 + 2), rel=1e-12)

    def test_k1_diagonal_hessian(self, report_k1):
        g = make_geometry(dim=2, omega01=np.array([1.0, 0.0]),
                          hess_abs2=np.diag([2.0, 4.0]))
        om = build_Omega(g, 1, report_k1)
        assert np.allclose(np.diag(om), [0.57 / 6 * 2, 0.57 / 6 * 4], atol=0.01)
        assert om[0, 1] == 0.0

    def test_field_scale_prefactor(self, report_k1):
        k = 1
        g1 = make_geometry(dim=2, omega01=np.array([1.0, 0.0]))
        c = 3.7
        g2 = make_geometry(dim=2, omega01=np.array([c, 0.0]))
        om1 = build_Omega(g1, k, report_k1)
        om2 = build_Omega(g2, k, report_k1)
        assert np.allclose(om2, om1 * c ** (-(2 * k + 2) / (k + 2)), rtol=1e-12)


class TestA:
    def test_flat_model_A_is_zero(self, state_k1):
        g = flat_model_geometry(1.0, 0.5)
        m = moments_1d(1, state_k1.report.alpha_min, state_k1.spectrum)
        a = build_A(g, 1, state_k1.report, m)
        assert a == 0j

    def test_even_k_A_is_real(self, state_k2):
        g = make_geometry(dim=2, gdot00=1.3, domega_div=0.8,
                          omega02=np.array([0.2, 0.1]),
                          gdotjl=np.array([[0.5, 0.1], [0.1, 0.3]]))
        m = moments_1d(2, state_k2.report.alpha_min, state_k2.spectrum)
        a = build_A(g, 2, state_k2.report, m)
        # the only imaginary term carries alpha_min, which vanishes for even k
        assert abs(a.imag) < 1e-10

    def test_gdot00_term_wiring(self, state_k1):
        g = make_geometry(dim=2, gdot00=1.0)
        m = moments_1d(1, state_k1.report.alpha_min, state_k1.spectrum)
        a = build_A(g, 1, state_k1.report, m)
        assert a.real == pytest.approx(-m.m_tau_upp, abs=1e-14)

    def test_term_selectivity(self, state_k1):
        # synthetic nonzero moments expose each term separately
        moments = Moments1D(m_tau_upp=0.3, m_mixed=0.7, m_tau_sq=1.1)
        rep = state_k1.report
        base_kwargs = dict(dim=2, omega01=np.array([2.0, 0.0]))
        zero = build_A(make_geometry(**base_kwargs), 1, rep, moments)
        assert zero == pytest.approx(complex(0, 0))

        a1 = build_A(make_geometry(**base_kwargs, gdot00=1.5), 1, rep, moments)
        assert a1.real == pytest.approx(-1.5 * 0.3)
        assert a1.imag == 0.0

        a2 = build_A(make_geometry(**base_kwargs,
                                   omega02=np.array([0.5, 0.0])), 1, rep, moments)
        assert a2.real == pytest.approx(2 * 2.0 ** -2 * (2.0 * 0.5) * 0.7)

        a3 = build_A(make_geometry(**base_kwargs,
                                   gdotjl=np.diag([0.4, 0.9])), 1, rep, moments)
        assert a3.real == pytest.approx(2.0 ** -2 * (0.4 * 4.0) * 1.1)

        a4 = build_A(make_geometry(**base_kwargs, domega_div=0.6), 1, rep, moments)
        assert a4.real == 0.0
        assert a4.imag == pytest.approx(0.6 * rep.alpha_min / 2.0)

        # Christoffel inputs contribute nothing
        a5 = build_A(make_geometry(**base_kwargs, gamma00=2.0,
                                   gammaj0=np.array([1.0, 1.0])), 1, rep, moments)
        assert a5 == zero


class TestSpectrumK:
    def test_isotropic_2d(self):
        kop = make_kop(1.0, [1.0, 0.0], np.eye(2))
        ks = spectrum_K(kop, 6)
        assert np.allclose(ks.levels, [2, 4, 4, 6, 6, 6])

    def test_anisotropic_kinetic_1d(self):
        kop = make_kop(4.0, [1.0], np.array([[1.0]]))
        ks = spectrum_K(kop, 3)
        assert np.allclose(ks.levels, [2, 6, 10])

    def test_shifted_diag(self):
        kop = make_kop(1.0, [1.0, 0.0], np.diag([4.0, 9.0]), A=1.0)
        ks = spectrum_K(kop, 3)
        assert np.allclose(ks.levels, [6, 10, 12])

    def test_negative_c_rejected(self):
        kop = make_kop(-0.5, [1.0], np.array([[1.0]]))
        with pytest.raises(SolverError, match="minimality"):
            spectrum_K(kop, 2)

    def test_omega_must_be_spd(self):
        kop = make_kop(1.0, [1.0, 0.0], np.diag([1.0, -1.0]))
        with pytest.raises(SolverError, match="positive definite"):
            spectrum_K(kop, 2)

    def test_imaginary_A_warns(self):
        kop = make_kop(1.0, [1.0], np.array([[1.0]]), A=1.0 + 1e-5j)
        with pytest.warns(UserWarning, match="complex constant"):
            ks = spectrum_K(kop, 2)
        assert ks.imag_A_warning

    def test_degenerate_branch_half_line(self):
        # c_omega = 0: quadratic along the Omega-conjugate direction, reduced
        # oscillator on the completion
        Om = np.array([[2.0, 0.3], [0.3, 1.0]])
        e = np.array([1.0, 0.0])
        kop = make_kop(0.0, e, Om, A=0.25)
        ks = spectrum_K(kop, 4)
        assert ks.branch == "degenerate"
        assert ks.levels is None
        # reduced oscillator: Omega restricted to span{e_2} = [[1.0]]
        assert ks.bottom == pytest.approx(0.25 + 1.0)
        eprime = omega_orthogonal_direction(kop)
        assert abs(eprime @ Om @ np.array([0.0, 1.0])) < 1e-12

    def test_level_gap_equals_twice_frequency_1d(self):
        kop = make_kop(2.0, [1.0], np.array([[3.0]]))
        ks = spectrum_K(kop, 5)
        gaps = np.diff(ks.levels)
        mu = np.sqrt(2.0 * 3.0)
        assert np.allclose(gaps, 2.0 * mu, atol=1e-10)


class TestOracle:
    def test_oscillator_1d(self):
        kop = make_kop(1.0, [1.0], np.array([[1.0]]))
        lv = spectrum_K_oracle(kop, 3, OracleBox(9.0, 201))
        assert np.allclose(lv, [1, 3, 5], atol=1e-5)

    def test_random_spd_2d(self):
        rng = np.random.default_rng(11)
        B = rng.standard_normal((2, 2))
        Om = B @ B.T + 0.4 * np.eye(2)
        e = rng.standard_normal(2)
        kop = make_kop(2.0, e, Om)
        closed = spectrum_K(kop, 5).levels
        oracle = spectrum_K_oracle(kop, 5)
        assert np.max(np.abs(closed - oracle)) < 1e-4

    def test_degenerate_branch_box_bottom(self):
        # the discretized bottom approaches the half-line edge from above
        # under refinement; box size is immaterial once generous (no kinetic
        # term acts along the degenerate direction, so no L^-2 zero-point)
        Om = np.array([[1.5, 0.2], [0.2, 0.8]])
        e = np.array([0.6, 0.8])
        kop = make_kop(0.0, e, Om)
        bottom = spectrum_K(kop, 1).bottom
        vals = []
        for n in (121, 241):
            lv = spectrum_K_oracle(kop, 1, OracleBox(6.0, n))
            vals.append(lv[0])
        assert vals[1] > bottom - 1e-6
        assert abs(vals[1] - bottom) < abs(vals[0] - bottom)
        assert abs(vals[1] - bottom) < 0.05

    def test_too_coarse_raises(self):
        kop = make_kop(1.0, [1.0, 0.0], np.diag([30.0, 40.0]))
        with pytest.raises(ConvergenceError, match="coarse"):
            spectrum_K_oracle(kop, 6, OracleBox(12.0, 17))

    def test_dim3_refused(self):
        kop = make_kop(1.0, [1.0, 0.0, 0.0], np.eye(3))
        with pytest.raises(ValueError, match="dim <= 2"):
            spectrum_K_oracle(kop, 2, OracleBox(6.0, 33))


class TestFrameInvariance:
    def test_rotated_geometry_same_levels(self):
        st = minimizer_state(1)
        w = np.array([1.3, 0.0])
        D = np.array([[0.0, 0.0], [0.2, 0.6]])
        H = np.array([[2.0, 0.4], [0.4, 3.0]])
        g = make_geometry(dim=2, omega01=w, domega01=D, hess_abs2=H)
        kop = build_effective_operator(g, 1, st)
        # this geometry has nonzero divergence at nonzero alpha_min, so the
        # complex-constant warning must fire (and rotation preserves Im A)
        with pytest.warns(UserWarning, match="complex constant"):
            lv = spectrum_K(kop, 6).levels

        th = 0.7
        R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        g_rot = make_geometry(dim=2, omega01=R @ w, domega01=R @ D @ R.T,
                              hess_abs2=R @ H @ R.T)
        kop_rot = build_effective_operator(g_rot, 1, st)
        assert kop_rot.A_const.imag == pytest.approx(kop.A_const.imag, abs=1e-14)
        with pytest.warns(UserWarning, match="complex constant"):
            lv_rot = spectrum_K(kop_rot, 6).levels
        assert np.max(np.abs(lv - lv_rot)) < 1e-10


class TestBuildEffectiveOperator:
    def test_flat_model_assembly(self):
        st = minimizer_state(1)
        geom = flat_model_geometry(1.0, 0.4)
        kop = build_effective_operator(geom, 1, st)
        assert kop.c_omega == pytest.approx(0.5 * st.report.d2)
        assert kop.A_const == 0j
        assert kop.Omega[0, 0] == pytest.approx(
            st.report.nu_hat / (2 * 3) * 0.4, rel=1e-12)
        M = kop.kinetic_matrix()
        assert M[0, 0] == pytest.approx(kop.c_omega)
