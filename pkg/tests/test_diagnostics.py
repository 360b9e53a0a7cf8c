import numpy as np
import pytest

from conftest import make_cs, make_space, sine_state
from mflab.coefficients import EmpiricalFieldMeasure
from mflab.controls import ControlMember
from mflab.diagnostics import (
    GeneratorSpec,
    GFunction,
    bump_g,
    builtin_panel,
    clipped_quadratic_g,
    generator_eval,
    martingale_residual,
    martingale_residual_nparticle,
    mckean_panel,
    nparticle_panel_increments,
)
from mflab.mckean import picard_mckean
from mflab.particles import SimConfig, simulate_particles
from mflab.rng import master_key
from mflab.spaces import ConfigurationError, Field


@pytest.fixture
def member():
    return ControlMember(name="up", kind="dirac", action=2)


class TestGFunctions:
    @pytest.mark.parametrize("g", [bump_g(2.0), bump_g(4.0), clipped_quadratic_g(3.0)])
    def test_derivatives_match_finite_differences(self, g):
        xs = np.linspace(-9.0, 9.0, 121)
        eps = 1e-5
        d1 = (g.value(xs + eps) - g.value(xs - eps)) / (2 * eps)
        d2 = (g.value(xs + eps) - 2 * g.value(xs) + g.value(xs - eps)) / eps**2
        scale = max(1.0, np.max(np.abs(g.value(xs))))
        assert np.max(np.abs(d1 - g.d1(xs))) < 1e-6 * scale
        assert np.max(np.abs(d2 - g.d2(xs))) < 5e-4 * scale

    def test_compact_support(self):
        g = bump_g(2.0)
        assert g.value(np.array([2.0, -2.5, 10.0])).tolist() == [0.0, 0.0, 0.0]
        q = clipped_quadratic_g(3.0)
        assert q.value(np.array([6.0, 7.0])).tolist() == [0.0, 0.0]
        assert q.value(np.array([1.5]))[0] == pytest.approx(2.25)

    def test_quadratic_region_derivatives(self):
        q = clipped_quadratic_g(3.0)
        xs = np.array([-2.0, 0.5, 2.9])
        assert np.allclose(q.d1(xs), 2 * xs)
        assert np.allclose(q.d2(xs), 2.0)


class TestGeneratorEval:
    def test_zero_state_hand_expansion(self, space):
        # v = 0, measure = delta_0: b = c(f); the generator reduces to
        # g'(0) <c(f), y> + (1/2) g''(0) sum sigma_j^2 y_j^2
        cs = make_cs(space)
        panel = builtin_panel(space)
        spec = panel[4]  # quad3_e1: g'(0) = 0, g''(0) = 2
        z = Field.zero(space)
        mu = EmpiricalFieldMeasure.dirac(z)
        got = generator_eval(spec, cs, 2, 0.0, z, mu)
        c2 = float(np.sum(cs.sigma_table[2] ** 2 * spec.y.coeffs**2))
        assert got == pytest.approx(c2)  # 0.5 * g''(0) * c2 with g'' = 2

    def test_noise_free_drops_second_term(self, space):
        cs = make_cs(space, sigma0=0.0)
        spec = builtin_panel(space)[0]
        x = sine_state(space, 0.3)
        mu = EmpiricalFieldMeasure.dirac(x)
        got = generator_eval(spec, cs, 0, 0.0, x, mu)
        theta = space.h * float(np.sum(x.values * spec.y.values))
        b = cs.drift_eval(0, 0.0, x, mu)
        pair = space.h * float(np.sum(b.values * spec.y.values))
        assert got == pytest.approx(float(spec.g.d1(theta)) * pair)


def _full_res_ensemble(space, cs, member, n, M, seed, x0=None):
    cfg = SimConfig(n_particles=n, M_steps=M, rng_seed=seed, noise_modes=3, save_every=1)
    x0 = x0 if x0 is not None else sine_state(space, 0.4)
    return simulate_particles(cs, member, cfg, x0, key=master_key(seed, "diag")), cfg


class TestResiduals:
    def test_deterministic_residual_halves_with_dt(self, member):
        space = make_space(q=3.0, J=16)
        cs = make_cs(space, sigma0=0.0)
        spec = builtin_panel(space)[0]
        ests = []
        for M in (512, 1024):
            ens, _ = _full_res_ensemble(space, cs, member, 1, M, 3)
            est, se = martingale_residual(spec, ens, cs, 0, M)
            assert se == 0.0
            ests.append(abs(est))
        assert ests[0] / ests[1] >= 1.8

    def test_residual_invariant_under_constant_shift_of_g(self, member):
        space = make_space(q=3.0, J=16)
        cs = make_cs(space, sigma0=0.2)
        ens, _ = _full_res_ensemble(space, cs, member, 8, 256, 4)
        base = builtin_panel(space)[0]
        shifted = GeneratorSpec(
            "shifted",
            GFunction(
                "bump+5",
                lambda x: base.g.value(x) + 5.0,
                base.g.d1,
                base.g.d2,
            ),
            base.y,
            base.psi_kind,
        )
        e1, _ = martingale_residual(base, ens, cs, 16, 256)
        e2, _ = martingale_residual(shifted, ens, cs, 16, 256)
        assert e1 == pytest.approx(e2, abs=1e-12)

    def test_residual_invariant_under_permutation(self, member):
        space = make_space(q=3.0, J=16)
        cs = make_cs(space, sigma0=0.2)
        ens, _ = _full_res_ensemble(space, cs, member, 8, 256, 5)
        spec = builtin_panel(space)[1]
        perm = np.random.default_rng(3).permutation(8)
        e1, s1 = martingale_residual(spec, ens, cs, 32, 256)
        e2, s2 = martingale_residual(spec, ens.permuted(perm), cs, 32, 256)
        assert e1 == pytest.approx(e2) and s1 == pytest.approx(s2)

    def test_requires_full_resolution(self, member):
        space = make_space(q=3.0, J=16)
        cs = make_cs(space, sigma0=0.2)
        cfg = SimConfig(n_particles=4, M_steps=256, rng_seed=6, noise_modes=3, save_every=64)
        ens = simulate_particles(cs, member, cfg, sine_state(space, 0.4))
        with pytest.raises(ConfigurationError):
            martingale_residual(builtin_panel(space)[0], ens, cs, 0, 4)

    def test_mean_field_panel_within_band(self, member):
        space = make_space(q=3.0, J=16)
        cs = make_cs(space, sigma0=0.2)
        cfg = SimConfig(n_particles=192, M_steps=512, rng_seed=8, noise_modes=3, save_every=1)
        res = picard_mckean(cs, member, cfg, sine_state(space, 0.4), n_cloud=192,
                            max_iter=6, tol=5e-4, key=master_key(8, "pic"))
        specs = builtin_panel(space)
        results = mckean_panel(specs, res.ensemble, cs, 128, 512, flow_means=res.flow.means)
        for spec, (est, se) in zip(specs, results):
            assert abs(est) <= 3.0 * se + 2e-4, spec.name

    def test_nparticle_replicates_within_band(self, member):
        space = make_space(q=3.0, J=16)
        cs = make_cs(space, sigma0=0.2)
        specs = builtin_panel(space)
        ensembles = [
            _full_res_ensemble(space, cs, member, 4, 256, 100 + r)[0] for r in range(32)
        ]
        for j, spec in enumerate(specs):
            est, se = martingale_residual_nparticle(spec, ensembles, cs, 64, 256)
            assert abs(est) <= 3.0 * se + 5e-4, spec.name

    def test_batched_panel_matches_single_spec(self, member):
        space = make_space(q=3.0, J=16)
        cs = make_cs(space, sigma0=0.2)
        ens, _ = _full_res_ensemble(space, cs, member, 6, 128, 9)
        specs = builtin_panel(space)
        batched = mckean_panel(specs, ens, cs, 16, 128)
        for spec, pair in zip(specs, batched):
            single = martingale_residual(spec, ens, cs, 16, 128)
            assert single == pytest.approx(pair)
        batched_np = nparticle_panel_increments(specs, ens, cs, 16, 128)
        for spec, val in zip(specs, batched_np):
            got = nparticle_panel_increments([spec], ens, cs, 16, 128)[0]
            assert got == pytest.approx(val)


class TestPsiDegeneracies:
    def test_zero_weight_gives_exactly_zero_estimate(self, member):
        # Dirac control at the zero-coordinate action makes the
        # coordinate-weighted control mass vanish identically
        space = make_space(q=3.0, J=16)
        cs = make_cs(space, sigma0=0.2)
        null = ControlMember(name="null", kind="dirac", action=1)
        ens, _ = _full_res_ensemble(space, cs, null, 4, 128, 12)
        base = builtin_panel(space)[2]
        spec = GeneratorSpec("mass", base.g, base.y, "control_mass")
        est, se = martingale_residual(spec, ens, cs, 16, 128)
        assert est == 0.0 and se == 0.0
