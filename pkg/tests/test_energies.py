import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from qcelast import energies
from qcelast.energies import (
    CATALOG,
    aux_V,
    get_energy,
    sample_matrices,
    stress_remainder_GS,
    taylor_remainder_G,
    verify_growth_bounds,
)

ENERGY_DIMS = [(name, d) for name, W in CATALOG.items() for d in W.dims]


def fd_stress(W, xi, h=1e-5):
    d = xi.shape[-1]
    out = np.zeros_like(xi)
    for j in range(d):
        for b in range(d):
            e = np.zeros((d, d))
            e[j, b] = h
            out[..., j, b] = (W.W(xi + e) - W.W(xi - e)) / (2 * h)
    return out


def fd_tangent(W, xi, h=1e-5):
    d = xi.shape[-1]
    out = np.zeros(xi.shape[:-2] + (d, d, d, d))
    for j in range(d):
        for b in range(d):
            e = np.zeros((d, d))
            e[j, b] = h
            out[..., :, :, j, b] = (W.S(xi + e) - W.S(xi - e)) / (2 * h)
    return out


def rel_err(a, b):
    scale = np.maximum(np.abs(b).reshape(len(b), -1).max(axis=1), 1.0)
    return np.max(np.abs(a - b).reshape(len(b), -1).max(axis=1) / scale)


class TestCatalog:
    def test_required_entries(self):
        assert {"quadratic", "stvk-like", "polyconvex2d", "negquad"} <= set(CATALOG)
        assert get_energy("quadratic").c0_candidate == 0.25
        assert not get_energy("negquad").quasiconvex
        assert all(W.p >= 2 for W in CATALOG.values())

    def test_unknown_name(self):
        with pytest.raises(KeyError, match="unknown energy"):
            get_energy("neo-hookean")

    def test_dimension_check(self):
        with pytest.raises(ValueError):
            get_energy("polyconvex2d", 3)

    def test_invalid_entry(self):
        with pytest.raises(ValueError):
            energies.StoredEnergy("bad", 1.5, None, None, None)

    def test_stvk_expansion(self, rng):
        # |xi^T xi - I|^2/4 + |xi|^2/2 = |xi^T xi|^2/4 + d/4
        W = get_energy("stvk-like")
        for d in (2, 3):
            xi = rng.standard_normal((20, d, d))
            C = np.einsum("nki,nkj->nij", xi, xi)
            assert np.allclose(W.W(xi), 0.25 * np.sum(C * C, axis=(1, 2)) + d / 4)


@pytest.mark.parametrize("name, d", ENERGY_DIMS)
class TestDerivatives:
    def test_stress_matches_fd(self, name, d, rng):
        W = get_energy(name)
        xi = sample_matrices(rng, 120, d, 5.0)
        assert rel_err(W.S(xi), fd_stress(W, xi)) < 1e-6

    def test_tangent_matches_fd(self, name, d, rng):
        W = get_energy(name)
        xi = sample_matrices(rng, 120, d, 5.0)
        assert rel_err(W.DS(xi), fd_tangent(W, xi)) < 1e-6

    def test_G_quadratic_near_zero(self, name, d, rng):
        """G(Fbar, xi) / (DS(Fbar) xi . xi / 2) -> 1 as xi -> 0."""
        W = get_energy(name)
        Fbar = rng.standard_normal((d, d))
        direction = rng.standard_normal((d, d))
        direction /= np.linalg.norm(direction)
        q = 0.5 * np.sum(energies.apply_tangent(W.DS(Fbar), direction) * direction)
        if abs(q) < 1e-3:
            pytest.skip("degenerate quadratic form in the sampled direction")
        errs = [abs(taylor_remainder_G(W, Fbar, s * direction) / (s * s) / q - 1)
                for s in (1e-2, 1e-3, 1e-4)]
        assert errs[-1] < 1e-3
        assert errs[2] <= errs[0] + 1e-6


class TestAuxV:
    def test_values(self):
        assert aux_V(np.zeros((2, 2)), 4) == 0.0
        for p in (2, 3, 4.5):
            assert aux_V(np.array([1.0, 0.0]), p) == pytest.approx(np.sqrt(2))
        assert aux_V(np.array([[2.0, 0.0], [0.0, 0.0]]), 4) == pytest.approx(4.472135955)

    def test_rejects_small_p(self):
        with pytest.raises(ValueError):
            aux_V(np.ones(2), 1.5)

    @settings(max_examples=40, deadline=None)
    @given(r=st.floats(0, 50), p=st.floats(2, 6))
    def test_square_identity(self, r, p):
        assert energies.v_squared(r, p) == pytest.approx(aux_V(np.array([r, 0.0]), p) ** 2, rel=1e-12)

    def test_dv_squared_matches_fd(self, rng):
        for p in (2.0, 4.0):
            xi = rng.standard_normal((2, 2))
            h = 1e-6
            fd = np.zeros((2, 2))
            for j in range(2):
                for b in range(2):
                    e = np.zeros((2, 2))
                    e[j, b] = h
                    fd[j, b] = (energies.v_squared(np.linalg.norm(xi + e), p)
                                - energies.v_squared(np.linalg.norm(xi - e), p)) / (2 * h)
            assert np.allclose(energies.dv_squared(xi, p), fd, rtol=1e-7)


class TestRemainders:
    def test_quadratic_G_exact(self, rng):
        W = get_energy("quadratic")
        Fbar = rng.standard_normal((50, 3, 3))
        xi = rng.standard_normal((50, 3, 3))
        assert np.allclose(taylor_remainder_G(W, Fbar, xi), 0.5 * np.sum(xi**2, axis=(1, 2)), atol=1e-13)
        assert np.max(np.abs(stress_remainder_GS(W, Fbar, xi))) < 1e-13

    @pytest.mark.parametrize("name", list(CATALOG))
    def test_zero_increment(self, name):
        W = get_energy(name)
        Fbar = np.array([[1.0, 0.3], [-0.2, 0.8]])
        assert taylor_remainder_G(W, Fbar, np.zeros((2, 2))) == 0.0
        assert np.max(np.abs(stress_remainder_GS(W, Fbar, np.zeros((2, 2))))) == 0.0

    def test_stvk_G_integral_form(self):
        """G = int_0^1 (1 - s) D^2W(Fbar + s xi) xi . xi ds."""
        W = get_energy("stvk-like")
        Fbar = np.eye(2)
        xi = np.zeros((2, 2))
        xi[0, 0] = 0.1

        def integrand(s):
            return (1 - s) * np.sum(energies.apply_tangent(W.DS(Fbar + s * xi), xi) * xi)

        oracle, _ = quad(integrand, 0.0, 1.0, epsabs=0, epsrel=1e-13)
        assert taylor_remainder_G(W, Fbar, xi) == pytest.approx(oracle, rel=1e-8)

    def test_stvk_GS_quadratic_order(self, rng):
        """|G_S| <= K |xi|^2 with K = |D^2 S(I)| from finite differences of DS."""
        W = get_energy("stvk-like")
        Fbar = np.eye(2)
        h = 1e-4
        K = 0.0
        for j in range(2):
            for b in range(2):
                e = np.zeros((2, 2))
                e[j, b] = h
                d2 = (W.DS(Fbar + e) - W.DS(Fbar - e)) / (2 * h)
                K += np.sum(d2 * d2)
        K = 0.5 * np.sqrt(K)  # Taylor: G_S = D^2S(Fbar)[xi, xi]/2 + O(|xi|^3)
        direction = rng.standard_normal((2, 2))
        direction /= np.linalg.norm(direction)
        for s in (1e-2, 1e-3, 1e-4):
            gs = np.linalg.norm(stress_remainder_GS(W, Fbar, s * direction))
            assert gs <= 1.1 * K * s * s


class TestGrowthBounds:
    def test_quadratic(self):
        rep = verify_growth_bounds(get_energy("quadratic"), 10.0, samples=2000)
        assert rep.constants["W_growth"] <= 0.5
        assert rep.constants["G_growth"] <= 0.25 + 1e-12  # G = |xi|^2/2 = |V|^2/4
        assert rep.ok
        assert rep.label.startswith("no violation found up to radius 10")

    def test_negquad_coercivity_fails(self):
        rep = verify_growth_bounds(get_energy("negquad"), 10.0)
        assert rep.constants["coercivity_min"] < 0

    @pytest.mark.parametrize("d", [2, 3])
    def test_stvk_sweep_stable(self, d):
        reps = [verify_growth_bounds(get_energy("stvk-like"), r, d=d, seed=1) for r in (5.0, 10.0, 20.0)]
        assert all(r.ok for r in reps)
        for key in ("W_growth", "S_growth", "G_growth", "GS_growth", "lipschitz"):
            vals = [r.constants[key] for r in reps]
            assert np.all(np.isfinite(vals))
            assert vals[-1] < 2 * vals[0] + 1.0

    def test_lipschitz_frame_holds(self, rng):
        W = get_energy("stvk-like")
        C = verify_growth_bounds(W, 5.0, samples=5000, seed=3).constants["lipschitz"]
        xi = sample_matrices(rng, 500, 2, 4.0)
        eta = sample_matrices(rng, 500, 2, 4.0)
        lhs = np.abs(W.W(xi) - W.W(eta))
        norm = lambda a: np.sqrt(np.sum(a * a, axis=(1, 2)))
        rhs = (1 + norm(xi) ** 3 + norm(eta) ** 3) * norm(xi - eta)
        # the empirical constant is a sample maximum; allow a small margin
        assert np.all(lhs <= 1.25 * C * rhs)

    def test_json_sorted(self):
        rep = verify_growth_bounds(get_energy("quadratic"), 1.0)
        assert list(rep.to_json()) == sorted(rep.to_json())

    def test_non_finite_counted(self):
        bad = energies.StoredEnergy(
            "bad", 2.0, lambda x: np.sum(x, axis=(-2, -1)) / 0.0, CATALOG["quadratic"].S,
            CATALOG["quadratic"].DS,
        )
        with np.errstate(all="ignore"):
            rep = verify_growth_bounds(bad, 1.0)
        assert rep.h1_failures > 0
        assert not rep.ok

    @pytest.mark.parametrize("kwargs", [{"radius": 0.0}, {"radius": 1.0, "samples": 10}])
    def test_preconditions(self, kwargs):
        with pytest.raises(ValueError):
            verify_growth_bounds(get_energy("quadratic"), **kwargs)
