"""Denoising score-matching machinery tests."""

import math

import numpy as np
import pytest

from oracles import brute_force_align_offset, finite_difference_gradient
from perigen import autodiff as ad
from perigen.autodiff import Tensor
from perigen.backbone import BackboneConfig, init_score_params
from perigen.crystal import Material, material_from_frac
from perigen.diffusion import (
    DenoisingPair,
    EdgeStd,
    NoiseSchedule,
    align,
    assemble_coordinate_scores,
    assemble_coordinate_scores_t,
    coordinate_dsm_loss,
    coordinate_dsm_loss_t,
    denoising_target,
    dsm_loss,
    dsm_loss_t,
    edge_reference_distances,
    estimate_edge_std,
    make_denoising_pair,
    perturb,
    train_score_model,
)
from perigen.graph import build_multigraph, cell_heights
from perigen.verify import random_material


class TestNoiseSchedule:
    def test_geometric_endpoints(self):
        s = NoiseSchedule.geometric(10.0, 0.01, 50)
        assert s.levels == 50
        assert s.sigmas[0] == pytest.approx(10.0)
        assert s.sigmas[-1] == pytest.approx(0.01)
        ratios = s.sigmas[1:] / s.sigmas[:-1]
        assert np.allclose(ratios, ratios[0])

    def test_validation(self):
        with pytest.raises(ValueError):
            NoiseSchedule([1.0, 2.0])
        with pytest.raises(ValueError):
            NoiseSchedule([1.0, -0.5])
        with pytest.raises(ValueError):
            NoiseSchedule([])
        with pytest.raises(ValueError):
            EdgeStd([1.0, 0.0])


class TestPerturb:
    def test_small_sigma_limit(self, rng):
        m = random_material(rng)
        out = perturb(m, 1e-12, rng)
        assert np.max(np.abs(out.coords - m.coords)) < 1e-10
        assert np.array_equal(out.atom_types, m.atom_types)
        assert np.array_equal(out.lattice, m.lattice)

    def test_monte_carlo_std(self):
        m = Material([6], np.zeros((3, 1)), 10.0 * np.eye(3))
        sigma = 0.7
        rng = np.random.default_rng(0)
        draws = np.array(
            [perturb(m, sigma, rng).coords - m.coords for _ in range(40000)]
        )
        measured = float(np.std(draws))
        assert abs(measured - sigma) / sigma < 0.01

    def test_deterministic(self, rng):
        m = random_material(rng)
        a = perturb(m, 0.5, np.random.default_rng(9))
        b = perturb(m, 0.5, np.random.default_rng(9))
        assert np.array_equal(a.coords, b.coords)

    def test_sigma_validation(self, rng):
        m = random_material(rng)
        with pytest.raises(ValueError):
            perturb(m, 0.0, rng)


class TestAlign:
    def test_identity_reference(self, rng):
        m = random_material(rng)
        out = align(m.coords, m.coords, m.lattice)
        assert np.array_equal(out, m.coords)

    def test_cubic_hand_case(self):
        lattice = 2.0 * np.eye(3)
        p = np.zeros((3, 1))
        reference = np.array([[1.9], [0.0], [0.0]])
        out = align(p, reference, lattice)
        assert np.allclose(out[:, 0], [2.0, 0.0, 0.0])

    def test_brute_force_oracle(self, rng):
        for _ in range(100):
            m = random_material(rng, max_atoms=4)
            h_min = float(np.min(cell_heights(m.lattice)))
            reference = m.coords + rng.standard_normal((3, m.n)) * rng.uniform(0.02, 0.8) * h_min
            out = align(m.coords, reference, m.lattice)
            shifts = np.linalg.solve(m.lattice, out - m.coords)
            for col in range(m.n):
                expected, _ = brute_force_align_offset(
                    m.coords[:, col], reference[:, col], m.lattice
                )
                assert np.allclose(shifts[:, col], expected, atol=1e-9)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            align(np.zeros((3, 2)), np.zeros((3, 3)), np.eye(3))


class TestMakeDenoisingPair:
    def test_fields_consistent(self, rng):
        m = random_material(rng)
        schedule = NoiseSchedule.geometric(5.0, 0.1, 4)
        pair = make_denoising_pair(m, schedule, 2, rng)
        assert isinstance(pair, DenoisingPair)
        assert pair.level == 2
        assert np.array_equal(pair.clean.atom_types, pair.noisy.atom_types)
        assert np.array_equal(pair.clean.lattice, pair.aligned.lattice)
        # aligned differs from clean by integer lattice shifts only
        shift = np.linalg.solve(m.lattice, pair.aligned.coords - pair.clean.coords)
        assert np.allclose(shift, np.round(shift), atol=1e-9)

    def test_level_validation(self, rng):
        m = random_material(rng)
        schedule = NoiseSchedule.geometric(5.0, 0.1, 4)
        with pytest.raises(ValueError):
            make_denoising_pair(m, schedule, 0, rng)
        with pytest.raises(ValueError):
            make_denoising_pair(m, schedule, 5, rng)


class TestEdgeReference:
    def test_noiseless_matches_graph_distances(self, rng):
        m = random_material(rng)
        g = build_multigraph(m, 4.5)
        if g.edge_count:
            d_hat = edge_reference_distances(g, m)
            assert np.allclose(d_hat, g.dist, atol=1e-9)


class TestEstimateEdgeStd:
    def test_shapes_and_limits(self):
        from perigen.data_io import synth_perovskite_corpus

        mats = synth_perovskite_corpus(8, seed=0)
        schedule = NoiseSchedule([2.0, 0.5, 1e-6])
        rng = np.random.default_rng(0)
        out = estimate_edge_std(mats, schedule, 4.5, rng)
        assert out.sigma_hats.size == 3
        assert np.all(out.sigma_hats > 0)
        # residuals vanish as sigma -> 0
        assert out.sigma_hats[2] < 1e-4
        assert out.sigma_hats[0] > out.sigma_hats[2]

    def test_single_atom_large_sigma(self):
        m = Material([6], np.zeros((3, 1)), 3.0 * np.eye(3))
        schedule = NoiseSchedule([5.0, 1.0])
        out = estimate_edge_std([m] * 4, schedule, 4.0, np.random.default_rng(1))
        assert np.all(np.isfinite(out.sigma_hats)) and np.all(out.sigma_hats > 0)

    def test_empty_dataset_and_zero_edges(self):
        schedule = NoiseSchedule([1.0, 0.5])
        with pytest.raises(ValueError):
            estimate_edge_std([], schedule, 4.0, np.random.default_rng(0))
        lonely = Material([6], np.zeros((3, 1)), 50.0 * np.eye(3))
        with pytest.raises(ValueError, match="level 1"):
            estimate_edge_std([lonely], schedule, 0.5, np.random.default_rng(0))


class TestDenoisingTarget:
    def test_examples(self):
        assert denoising_target(1.0, 1.0, 0.3) == 0.0
        assert denoising_target(1.5, 1.0, 1.0) == pytest.approx(-0.5)
        with pytest.raises(ValueError):
            denoising_target(1.0, 1.0, 0.0)

    def test_matches_log_density_derivative(self, rng):
        for _ in range(100):
            d_hat = float(rng.uniform(0.5, 4.0))
            sigma = float(rng.uniform(0.05, 1.5))
            d_tilde = d_hat + float(rng.standard_normal()) * sigma
            h = 1e-6

            def logpdf(x):
                return -0.5 * ((x - d_hat) / sigma) ** 2 - math.log(sigma * math.sqrt(2 * math.pi))

            fd = (logpdf(d_tilde + h) - logpdf(d_tilde - h)) / (2 * h)
            got = denoising_target(d_tilde, d_hat, sigma)
            assert abs(got - fd) / max(abs(fd), 1e-9) < 1e-6


class TestAssemble:
    def test_zero_scores(self, rng):
        m = random_material(rng)
        g = build_multigraph(m, 4.5)
        out = assemble_coordinate_scores(g, np.zeros(g.edge_count))
        assert out.shape == (3, m.n)
        assert np.all(out == 0.0)

    def test_isolated_pair_hand_case(self):
        m = material_from_frac(
            [6, 6], np.array([[0.0, 0.0, 0.0], [0.05, 0.0, 0.0]]).T, 20.0 * np.eye(3)
        )
        g = build_multigraph(m, 2.0)
        assert g.edge_count == 2
        scores = np.full(2, 2.0)
        out = assemble_coordinate_scores(g, scores)
        assert np.allclose(out[:, 0], [-2.0, 0.0, 0.0], atol=1e-12)
        assert np.allclose(out[:, 1], [2.0, 0.0, 0.0], atol=1e-12)

    def test_columns_sum_to_zero_for_symmetric_scores(self, rng):
        for _ in range(10):
            m = random_material(rng)
            g = build_multigraph(m, 4.5)
            if g.edge_count == 0:
                continue
            half = rng.standard_normal(g.edge_count)
            symmetric = 0.5 * (half + half[g.reverse_index])
            out = assemble_coordinate_scores(g, symmetric)
            assert np.max(np.abs(out.sum(axis=1))) <= 1e-10

    def test_length_mismatch(self, rng):
        m = random_material(rng)
        g = build_multigraph(m, 4.5)
        with pytest.raises(ValueError):
            assemble_coordinate_scores(g, np.zeros(g.edge_count + 1))

    def test_tape_twin_matches(self, rng):
        m = random_material(rng)
        g = build_multigraph(m, 4.5)
        values = rng.standard_normal(g.edge_count)
        with ad.no_grad():
            tape = assemble_coordinate_scores_t(g, Tensor(values)).value
        assert np.allclose(tape.T, assemble_coordinate_scores(g, values), atol=0)


class TestDsmLoss:
    def _graph(self, rng):
        m = random_material(rng)
        g = build_multigraph(m, 4.5)
        d_tilde = g.dist
        d_hat = g.dist * (1.0 + 0.05 * rng.standard_normal(g.edge_count))
        return g, d_tilde, d_hat

    def test_perfect_prediction_zero(self, rng):
        g, d_tilde, d_hat = self._graph(rng)
        sigma_hat = 0.4
        outputs = -(d_tilde - d_hat) / sigma_hat
        assert dsm_loss(g, outputs, d_tilde, d_hat, sigma_hat) == pytest.approx(0.0, abs=1e-20)

    def test_single_edge_value(self):
        m = material_from_frac(
            [6, 6], np.array([[0.0, 0.0, 0.0], [0.05, 0.0, 0.0]]).T, 20.0 * np.eye(3)
        )
        g = build_multigraph(m, 2.0)
        d_tilde = g.dist
        d_hat = g.dist - 1.0
        value = dsm_loss(g, np.zeros(2), d_tilde, d_hat, 1.0)
        assert value == pytest.approx(0.5)

    def test_non_negative_and_tape_twin(self, rng):
        g, d_tilde, d_hat = self._graph(rng)
        outputs = rng.standard_normal(g.edge_count)
        sigma_hat = 0.7
        numeric = dsm_loss(g, outputs, d_tilde, d_hat, sigma_hat)
        assert numeric >= 0.0
        with ad.no_grad():
            tape = float(dsm_loss_t(Tensor(outputs), d_tilde, d_hat, sigma_hat).value)
        assert tape == pytest.approx(numeric, abs=1e-14)

    def test_mismatched_edges(self, rng):
        g, d_tilde, d_hat = self._graph(rng)
        with pytest.raises(ValueError):
            dsm_loss(g, np.zeros(g.edge_count + 2), d_tilde, d_hat, 1.0)


class TestCoordinateDsmLoss:
    def test_perfect_prediction_zero(self, rng):
        m = random_material(rng)
        g = build_multigraph(m, 4.5)
        if g.edge_count == 0:
            return
        # outputs that assemble to exactly -(P_tilde - P_hat)/sigma: use zero noise
        value = coordinate_dsm_loss(g, np.zeros(g.edge_count), g.coords, g.coords, 0.5)
        assert value == pytest.approx(0.0, abs=1e-20)

    def test_single_atom_residual(self):
        m = Material([6], np.zeros((3, 1)), 3.0 * np.eye(3))
        g = build_multigraph(m, 1.0)
        assert g.edge_count == 0
        noisy = np.array([[1.0], [0.0], [0.0]])
        value = coordinate_dsm_loss(g, np.zeros(0), noisy, np.zeros((3, 1)), 1.0)
        assert value == pytest.approx(0.5)

    def test_tape_twin(self, rng):
        m = random_material(rng)
        g = build_multigraph(m, 4.5)
        outputs = rng.standard_normal(g.edge_count)
        noisy = g.coords + 0.1 * rng.standard_normal(g.coords.shape)
        numeric = coordinate_dsm_loss(g, outputs, noisy, g.coords, 0.8)
        with ad.no_grad():
            tape = float(
                coordinate_dsm_loss_t(g, Tensor(outputs), noisy, g.coords, 0.8).value
            )
        assert tape == pytest.approx(numeric, abs=1e-13)


class TestTrainScoreModel:
    def _setup(self):
        from perigen.data_io import synth_perovskite_corpus

        cfg = BackboneConfig(
            layer_count=1, hidden_size=8, rbf_count=6, cutoff=4.5,
            latent_a_dim=4, latent_l_dim=4, noise_level_count=3, element_count=100,
        )
        mats = synth_perovskite_corpus(10, seed=2)
        schedule = NoiseSchedule.geometric(5.0, 0.05, 3)
        edge_std = estimate_edge_std(mats, schedule, cfg.cutoff, np.random.default_rng(0))
        return cfg, mats, schedule, edge_std

    def test_zero_epochs_returns_initial(self):
        cfg, mats, schedule, edge_std = self._setup()
        initial = init_score_params(cfg, seed=5)
        params, curve = train_score_model(
            mats, cfg, schedule, edge_std, np.random.default_rng(1),
            epochs=0, batch_size=4, params=initial.copy(),
        )
        assert np.array_equal(params.flat, initial.flat)
        assert len(curve) == 1

    def test_deterministic_across_runs(self):
        cfg, mats, schedule, edge_std = self._setup()

        def run():
            return train_score_model(
                mats, cfg, schedule, edge_std, np.random.default_rng(3),
                epochs=4, batch_size=5, lr=3e-3,
            )

        params1, curve1 = run()
        params2, curve2 = run()
        assert np.array_equal(params1.flat, params2.flat)
        assert curve1 == curve2

    def test_optimizer_descends_on_fixed_batch(self):
        """Descent sanity: repeated steps on one fixed denoising batch."""
        from perigen import autodiff as ad
        from perigen.backbone import edge_scores_forward
        from perigen.optim import Adam

        cfg, mats, schedule, edge_std = self._setup()
        rng = np.random.default_rng(1)
        fixed = []
        for i, m in enumerate(mats[:4]):
            level = (i % schedule.levels) + 1
            pair = make_denoising_pair(m, schedule, level, rng)
            g = build_multigraph(pair.noisy, cfg.cutoff)
            fixed.append((g, m.atom_types, level, edge_reference_distances(g, m)))
        params = init_score_params(cfg, seed=5)
        optimizer = Adam(params.size, lr=5e-3)
        losses = []
        for _ in range(150):
            leaves = params.leaf_tensors()
            total = None
            for g, types, level, d_hat in fixed:
                out = edge_scores_forward(g, types, leaves, cfg, level)
                term = dsm_loss_t(out, g.dist, d_hat, float(edge_std.sigma_hats[level - 1]))
                total = term if total is None else ad.add(total, term)
            total = ad.mul(total, 1.0 / len(fixed))
            ad.backward(total)
            params = params.replace_flat(
                optimizer.step(params.flat, params.collect_grad(leaves))
            )
            losses.append(float(total.value))
        assert losses[-1] < 0.85 * losses[0]

    def test_coordinate_mode_runs(self):
        cfg, mats, schedule, edge_std = self._setup()
        params, curve = train_score_model(
            mats, cfg, schedule, edge_std, np.random.default_rng(4),
            epochs=1, batch_size=5, mode="coordinate",
        )
        assert len(curve) == 2
        assert all(math.isfinite(x) for x in curve)

    def test_unknown_mode_rejected(self):
        cfg, mats, schedule, edge_std = self._setup()
        with pytest.raises(ValueError):
            train_score_model(
                mats, cfg, schedule, edge_std, np.random.default_rng(0),
                epochs=1, batch_size=4, mode="nonsense",
            )
