"""Two-phase distillation: loss identities, gradient structure, loop
mechanics. The heavier statistical checks live in the acceptance suite.
"""

import numpy as np
import pytest

from simdistill.diffusion import DiffusionSpec, TimeDistribution, WeightingFn
from simdistill.distances import DistanceFn, default_pseudo_huber_c
from simdistill.distill import (
    DistillConfig,
    DistillResult,
    DivergenceHalt,
    GeneratorSpec,
    LinearTensorGenerator,
    PreconditionedDenoiser,
    build_generator,
    denoiser_field,
    di_generator_loss,
    dsm_loss,
    run_distillation,
    score_field,
    sid_delta_generator_loss,
    sim_generator_loss,
)
from simdistill.nnkit import MlpNet, backward
from simdistill.oracles import GaussianSpec, gaussian_sample, ring_gmm
from simdistill.rng import make_rng

SPEC = DiffusionSpec()
TDIST = TimeDistribution.log_normal(-1.0, 1.0)
ONE = WeightingFn.one()
ALL_FNS = [
    DistanceFn.l2(),
    DistanceFn.l1(),
    DistanceFn.huber(1.0),
    DistanceFn.pseudo_huber(0.5),
    DistanceFn.power(4),
    DistanceFn.exp_power(2, 0.3),
]


def tilted_linear_gen():
    return LinearTensorGenerator(np.array([[1.0, 0.3], [0.0, 0.8]]), np.array([0.5, -0.2]))


class TestFixedPoint:
    @pytest.mark.parametrize("form", ["denoiser", "score"])
    @pytest.mark.parametrize("d", ALL_FNS, ids=lambda d: d.tag)
    def test_zero_loss_and_gradient_when_online_equals_teacher(self, form, d):
        gmm = ring_gmm()
        fld = denoiser_field(gmm, SPEC) if form == "denoiser" else score_field(gmm, SPEC)
        gen = tilted_linear_gen()
        loss = sim_generator_loss(gen, fld, fld, d, SPEC, TDIST, ONE, 64, make_rng(3), loss_form=form)
        grads = backward(loss, gen.parameters())
        assert loss.item() == 0.0
        assert max(np.abs(g).max() for g in grads) <= 1e-12

    def test_fixed_point_with_detached_first_factor(self):
        gmm = ring_gmm()
        fld = denoiser_field(gmm, SPEC)
        gen = tilted_linear_gen()
        loss = sim_generator_loss(
            gen, fld, fld, DistanceFn.pseudo_huber(0.5), SPEC, TDIST, ONE, 64, make_rng(3),
            first_factor_grad=False,
        )
        grads = backward(loss, gen.parameters())
        assert loss.item() == 0.0
        assert max(np.abs(g).max() for g in grads) <= 1e-12


class TestDeltaLossEquivalence:
    @pytest.mark.parametrize("form", ["denoiser", "score"])
    def test_generic_l2_matches_dedicated_path(self, form):
        gmm = ring_gmm()
        other = GaussianSpec(np.array([0.5, -0.3]), 0.7 * np.eye(2))
        make = denoiser_field if form == "denoiser" else score_field
        teacher, online = make(gmm, SPEC), make(other, SPEC)
        gen = tilted_linear_gen()
        la = sim_generator_loss(
            gen, online, teacher, DistanceFn.l2(), SPEC, TDIST, WeightingFn.edm(), 128,
            make_rng(7), loss_form=form,
        )
        ga = backward(la, gen.parameters())
        lb = sid_delta_generator_loss(
            gen, online, teacher, SPEC, TDIST, WeightingFn.edm(), 128, make_rng(7), loss_form=form
        )
        gb = backward(lb, gen.parameters())
        assert la.item() == pytest.approx(lb.item(), rel=1e-12)
        for a, b in zip(ga, gb):
            assert np.abs(a - b).max() <= 1e-12 * max(np.abs(b).max(), 1e-300)


class TestGradientAgainstFiniteDifferences:
    @pytest.mark.parametrize("form", ["denoiser", "score"])
    def test_linear_generator_crn_fd(self, form):
        # the training-position gradient: the same loss evaluated under
        # common random numbers, finite-differenced over the flat (A, b)
        gmm = ring_gmm()
        other = GaussianSpec(np.array([0.5, -0.3]), 0.7 * np.eye(2))
        make = denoiser_field if form == "denoiser" else score_field
        teacher, online = make(gmm, SPEC), make(other, SPEC)
        tdist = TimeDistribution.fixed_grid((0.5, 1.0, 2.0))

        def loss_at(theta, seed=91):
            gen = LinearTensorGenerator(theta[:4].reshape(2, 2), theta[4:])
            return sim_generator_loss(
                gen, online, teacher, DistanceFn.l2(), SPEC, tdist, ONE, 256,
                make_rng(seed), loss_form=form,
            )

        gen = tilted_linear_gen()
        theta0 = gen.flat_theta()
        loss = sim_generator_loss(
            gen, online, teacher, DistanceFn.l2(), SPEC, tdist, ONE, 256, make_rng(91),
            loss_form=form,
        )
        flat_grad = gen.flat_grads(backward(loss, gen.parameters()))
        h = 1e-5
        for i in range(theta0.size):
            e = np.zeros_like(theta0)
            e[i] = h
            fd = (loss_at(theta0 + e).item() - loss_at(theta0 - e).item()) / (2 * h)
            assert flat_grad[i] == pytest.approx(fd, rel=2e-4, abs=1e-7)


class TestFirstFactorFlag:
    def test_detaching_changes_gradient_not_value(self):
        gmm = ring_gmm()
        other = GaussianSpec(np.array([1.0, 0.0]), np.eye(2))
        teacher, online = denoiser_field(gmm, SPEC), denoiser_field(other, SPEC)
        gen = tilted_linear_gen()
        args = (gen, online, teacher, DistanceFn.pseudo_huber(0.5), SPEC, TDIST, ONE, 128)
        la = sim_generator_loss(*args, make_rng(17), first_factor_grad=True)
        ga = gen.flat_grads(backward(la, gen.parameters()))
        lb = sim_generator_loss(*args, make_rng(17), first_factor_grad=False)
        gb = gen.flat_grads(backward(lb, gen.parameters()))
        assert la.item() == lb.item()  # same draws, same forward value
        assert np.abs(ga - gb).max() > 1e-6  # but a different gradient field


class TestEnvelope:
    def test_pseudo_huber_per_sample_bound_reported(self):
        gmm = ring_gmm()
        other = GaussianSpec(np.array([2.0, 1.0]), 2.0 * np.eye(2))
        teacher, online = denoiser_field(gmm, SPEC), denoiser_field(other, SPEC)
        gen = tilted_linear_gen()
        info = {}
        sim_generator_loss(
            gen, online, teacher, DistanceFn.pseudo_huber(0.2), SPEC, TDIST, ONE, 256,
            make_rng(19), info=info,
        )
        assert info["bounded"] is True
        assert info["per_sample_max"] <= info["envelope_max"] + 1e-9


class TestDiBaseline:
    def test_gradient_pushes_mean_toward_teacher(self):
        # generator sits at +2, teacher at 0; the online field equals the
        # generator's own distribution, so the b-gradient must be positive
        # (gradient descent then moves b down toward the teacher).
        teacher = score_field(GaussianSpec(np.zeros(1), np.eye(1)), SPEC)
        online = score_field(GaussianSpec(np.array([2.0]), np.eye(1)), SPEC)
        gen = LinearTensorGenerator(np.eye(1), np.array([2.0]))
        loss = di_generator_loss(gen, online, teacher, SPEC, TDIST, ONE, 512, make_rng(23))
        _, gb = backward(loss, gen.parameters())
        assert gb[0] > 0


class TestDsmLoss:
    def test_oracle_denoiser_attains_posterior_variance(self):
        # teacher N(0, I): at fixed t the best denoiser has expected squared
        # residual t²/(1+t²) per coordinate
        from simdistill.oracles import gmm_denoiser_graph, GmmSpec

        gauss = GmmSpec(np.array([1.0]), np.zeros((1, 1)), 1.0)
        oracle = lambda x, t: gmm_denoiser_graph(gauss, x, t)
        t = 1.0
        n = 4096
        x0 = gaussian_sample(GaussianSpec(np.zeros(1), np.eye(1)), make_rng(29), n)
        loss = dsm_loss(
            oracle, x0, SPEC, TimeDistribution.fixed_grid((t,)), ONE, make_rng(30)
        )
        want = t * t / (1 + t * t)
        se = np.sqrt(2 * want**2 / n)
        assert abs(loss.item() - want) <= 3 * se

    def test_zero_net_loss_is_weighted_second_moment(self):
        # an all-zero denoiser leaves the clean signal as the residual
        net = MlpNet([1, 8, 1], conditioning="concat-log-t", zero_final=True, seed=0)
        x0 = np.full((256, 1), 2.0)
        t = 3.0
        loss = dsm_loss(net, x0, SPEC, TimeDistribution.fixed_grid((t,)), ONE, make_rng(31))
        assert loss.item() == pytest.approx(4.0, rel=1e-12)

    def test_short_training_reduces_loss(self):
        from simdistill.nnkit import Adam

        net = MlpNet([2, 32, 32, 2], conditioning="concat-log-t", zero_final=True, seed=1)
        opt = Adam(net.named_parameters(), lr=1e-3)
        data = gaussian_sample(GaussianSpec(np.zeros(2), np.eye(2)), make_rng(32), 8192)
        rng = make_rng(33)
        tdist = TimeDistribution.log_normal(-1.2, 1.2)
        losses = []
        for step in range(300):
            x0 = data[rng.integers(0, len(data), 128)]
            loss = dsm_loss(net, x0, SPEC, tdist, WeightingFn.edm(), rng)
            opt.step(backward(loss, net.parameters()))
            losses.append(loss.item())
        assert np.mean(losses[-50:]) < 0.5 * np.mean(losses[:50])

    def test_rejects_unknown_form(self):
        net = MlpNet([1, 4, 1], conditioning="concat-log-t", seed=0)
        with pytest.raises(ValueError, match="form"):
            dsm_loss(net, np.zeros((4, 1)), SPEC, TDIST, ONE, make_rng(0), net_form="energy")


class TestPreconditionedDenoiser:
    def test_reduces_to_identity_at_small_t(self):
        net = MlpNet([2, 16, 2], conditioning="concat-log-t", seed=3)
        head = PreconditionedDenoiser(net, sigma_data=0.5)
        x = make_rng(40).standard_normal((32, 2))
        out = head(x, np.full(32, 1e-8)).data
        assert np.allclose(out, x, atol=1e-6)

    def test_matches_hand_assembled_coefficients(self):
        sd = 0.7
        net = MlpNet([2, 16, 2], conditioning="concat-log-t", seed=4)
        head = PreconditionedDenoiser(net, sigma_data=sd)
        rng = make_rng(41)
        x = rng.standard_normal((64, 2))
        t = rng.uniform(0.05, 3.0, 64)
        var = (sd * sd + t * t)[:, None]
        c_in = 1.0 / np.sqrt(var)
        want = x * (sd * sd / var) + net(x * c_in, t).data * (sd * t[:, None] / np.sqrt(var))
        assert np.array_equal(head(x, t).data, want)

    def test_dsm_gradients_match_finite_differences(self):
        net = MlpNet([1, 4, 1], conditioning="concat-log-t", seed=5)
        head = PreconditionedDenoiser(net)
        x0 = make_rng(42).standard_normal((16, 1))
        tdist = TimeDistribution.fixed_grid((0.5, 2.0))

        def loss_value():
            return dsm_loss(head, x0, SPEC, tdist, WeightingFn.edm(), make_rng(43))

        grads = backward(loss_value(), head.parameters())
        h = 1e-6
        for p, g in zip(head.parameters(), grads):
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + h
                up = loss_value().item()
                flat[i] = keep - h
                down = loss_value().item()
                flat[i] = keep
                fd = (up - down) / (2 * h)
                assert abs(g.reshape(-1)[i] - fd) <= 1e-6 * max(1.0, abs(fd))

    def test_rejects_non_positive_sigma_data(self):
        net = MlpNet([1, 4, 1], conditioning="concat-log-t", seed=0)
        with pytest.raises(ValueError, match="sigma_data"):
            PreconditionedDenoiser(net, sigma_data=0.0)


class TestGeneratorConstruction:
    def test_mlp_widths_default_and_validation(self):
        gen = build_generator(GeneratorSpec(latent_dim=3), data_dim=2, dspec=SPEC, seed=0)
        assert gen.latent_dim == 3 and gen.data_dim == 2
        z = gen.sample_latent(make_rng(1), 16)
        assert z.shape == (16, 3)
        assert gen.forward(z).data.shape == (16, 2)
        with pytest.raises(ValueError, match="widths"):
            build_generator(
                GeneratorSpec(latent_dim=3, widths=(2, 8, 2)), data_dim=2, dspec=SPEC, seed=0
            )

    def test_denoiser_as_generator_latent_scale_and_t_star(self):
        gspec = GeneratorSpec(tag="denoiser-as-generator", t_star=2.5)
        gen = build_generator(gspec, data_dim=2, dspec=SPEC, seed=0)
        z = gen.sample_latent(make_rng(2), 50_000)
        assert z.std() == pytest.approx(2.5, rel=0.02)
        with pytest.raises(ValueError, match="t_star"):
            build_generator(
                GeneratorSpec(tag="denoiser-as-generator", t_star=100.0), 2, SPEC, seed=0
            )

    def test_unknown_tag_rejected(self):
        with pytest.raises(ValueError, match="tag"):
            GeneratorSpec(tag="flow")

    def test_linear_tensor_generator_matches_numpy(self):
        rng = make_rng(4)
        A, b = rng.standard_normal((3, 2)), rng.standard_normal(3)
        gen = LinearTensorGenerator(A, b)
        z = rng.standard_normal((8, 2))
        np.testing.assert_allclose(gen.forward(z).data, z @ A.T + b, rtol=1e-14)
        np.testing.assert_array_equal(gen.flat_theta(), np.concatenate([A.ravel(), b]))


class TestRunDistillation:
    CFG = dict(score_lr=1e-3, gen_lr=1e-3, batch_size=32, eval_interval=5,
               eval_samples=64, final_eval_samples=128)

    def test_zero_steps_leaves_generator_at_init(self):
        gmm = ring_gmm()
        cfg = DistillConfig(gen_steps=0, **self.CFG)
        res = run_distillation(cfg, gmm, gmm, seed=5)
        fresh = run_distillation(cfg, gmm, gmm, seed=5)
        for a, b in zip(res.generator.parameters(), fresh.generator.parameters()):
            assert np.array_equal(a.data, b.data)
        assert isinstance(res, DistillResult)
        assert res.final_samples.shape == (128, 2)

    def test_deterministic_given_seed(self):
        gmm = ring_gmm()
        cfg = DistillConfig(gen_steps=10, **self.CFG)
        a = run_distillation(cfg, gmm, gmm, seed=7)
        b = run_distillation(cfg, gmm, gmm, seed=7)
        for pa, pb in zip(a.generator.parameters(), b.generator.parameters()):
            assert np.array_equal(pa.data, pb.data)
        assert [r.to_csv() for r in a.rows] == [r.to_csv() for r in b.rows]
        assert np.array_equal(a.final_samples, b.final_samples)

    def test_seed_changes_trajectory(self):
        gmm = ring_gmm()
        cfg = DistillConfig(gen_steps=5, **self.CFG)
        a = run_distillation(cfg, gmm, gmm, seed=1)
        b = run_distillation(cfg, gmm, gmm, seed=2)
        assert any(
            not np.array_equal(pa.data, pb.data)
            for pa, pb in zip(a.generator.parameters(), b.generator.parameters())
        )

    def test_eval_cadence_does_not_perturb_training(self):
        gmm = ring_gmm()
        base = dict(self.CFG)
        a = run_distillation(DistillConfig(gen_steps=10, **base), gmm, gmm, seed=9)
        base["eval_interval"] = 2  # more evals, same training stream
        b = run_distillation(DistillConfig(gen_steps=10, **base), gmm, gmm, seed=9)
        for pa, pb in zip(a.generator.parameters(), b.generator.parameters()):
            assert np.array_equal(pa.data, pb.data)

    def test_rows_schedule_and_wall_time_default(self):
        gmm = ring_gmm()
        cfg = DistillConfig(gen_steps=10, **self.CFG)
        res = run_distillation(cfg, gmm, gmm, seed=11)
        assert [r.step for r in res.rows] == [5, 10, 10]  # cadence + final
        assert all(r.seconds == 0.0 for r in res.rows)
        assert all(np.isfinite(r.mmd) for r in res.rows)
        assert all(0.0 <= r.mode_coverage <= 1.0 for r in res.rows)

    def test_divergence_halt_reports_step(self):
        gmm = ring_gmm()
        cfg = DistillConfig(gen_steps=10, divergence_threshold=1e-300, **self.CFG)
        with pytest.raises(DivergenceHalt) as exc:
            run_distillation(cfg, gmm, gmm, seed=13)
        assert exc.value.step == 1
        assert "halted" in str(exc.value)

    def test_warm_start_from_matching_teacher_net(self):
        teacher = MlpNet([2, 64, 64, 2], conditioning="concat-log-t", seed=3)
        cfg = DistillConfig(gen_steps=0, **self.CFG)
        res = run_distillation(cfg, teacher, ring_gmm(), seed=15)
        for (_, a), (_, b) in zip(
            sorted(teacher.state_dict().items()), sorted(res.online_net.state_dict().items())
        ):
            assert np.array_equal(a, b)

    def test_array_reference_for_eval(self):
        gmm = ring_gmm()
        data = ring_gmm().means.repeat(64, axis=0)  # plain ndarray reference
        cfg = DistillConfig(gen_steps=4, **{**self.CFG, "eval_interval": 2})
        res = run_distillation(cfg, gmm, data, seed=17)
        assert all(np.isnan(r.mode_coverage) for r in res.rows)  # no mixture to cover
        assert all(np.isfinite(r.mmd) for r in res.rows)

    def test_di_baseline_runs(self):
        # the baseline's loss value scales like 1/t², so keep the generator
        # phase away from tiny times
        gmm = ring_gmm()
        cfg = DistillConfig(
            gen_steps=5, baseline="di",
            gen_time_dist=TimeDistribution.log_normal(0.0, 0.5), **self.CFG,
        )
        res = run_distillation(cfg, gmm, gmm, seed=19)
        assert len(res.rows) == 2

    def test_step_callback_sees_every_step(self):
        gmm = ring_gmm()
        seen = []
        cfg = DistillConfig(gen_steps=6, **self.CFG)
        run_distillation(cfg, gmm, gmm, seed=21, step_callback=lambda s, a, b: seen.append(s))
        assert seen == [1, 2, 3, 4, 5, 6]


class TestConfigValidation:
    def test_rejects_bad_fields(self):
        with pytest.raises(ValueError, match="ratio"):
            DistillConfig(gen_steps=1, ratio=0)
        with pytest.raises(ValueError, match="positive"):
            DistillConfig(gen_steps=1, gen_lr=0.0)
        with pytest.raises(ValueError, match="loss form"):
            DistillConfig(gen_steps=1, loss_form="hybrid")
        with pytest.raises(ValueError, match="baseline"):
            DistillConfig(gen_steps=1, baseline="gan")
        with pytest.raises(ValueError, match="batch"):
            DistillConfig(gen_steps=1, batch_size=1)
        with pytest.raises(ValueError, match="gen_steps"):
            DistillConfig(gen_steps=-1)

    def test_defaults_follow_reference_recipe(self):
        cfg = DistillConfig(gen_steps=1)
        assert cfg.score_lr == 1e-5 and cfg.gen_lr == 1e-5
        assert cfg.batch_size == 256 and cfg.ratio == 2
        assert cfg.distance.tag == "pseudo_huber"
        assert cfg.distance.c == pytest.approx(default_pseudo_huber_c(2))
        assert cfg.gen_weighting.kind == "one" and cfg.score_weighting.kind == "edm"
        assert cfg.loss_form == "denoiser" and cfg.first_factor_grad
