"""Invariant network tests: parameters, invariance, gradients, checkpoints."""

import numpy as np
import pytest

from oracles import finite_difference_gradient
from perigen import autodiff as ad
from perigen.backbone import (
    BackboneConfig,
    EdgeScores,
    Parameters,
    cutoff_envelope,
    edge_scores,
    edge_scores_forward,
    encode,
    gradient,
    init_encoder_params,
    init_score_params,
    load_parameters,
    save_parameters,
)
from perigen.crystal import (
    Material,
    Permutation,
    PeriodicShift,
    apply_periodic,
    apply_permutation,
    apply_rotation_translation,
    material_from_frac,
    random_rotation,
)
from perigen.graph import build_multigraph
from perigen.verify import random_material


def tiny_config(**overrides):
    base = dict(
        layer_count=2,
        hidden_size=16,
        rbf_count=8,
        cutoff=5.0,
        latent_a_dim=8,
        latent_l_dim=6,
        noise_level_count=4,
        element_count=100,
    )
    base.update(overrides)
    return BackboneConfig(**base)


def randomized_head(params: Parameters, seed=0) -> Parameters:
    """Give the zero-initialized output head nonzero weights."""
    flat = params.flat.copy()
    rng = np.random.default_rng(seed)
    for name in ("head/w2", "head/b2"):
        off, shape = params.index[name]
        flat[off : off + int(np.prod(shape))] = rng.uniform(-0.5, 0.5, int(np.prod(shape)))
    return params.replace_flat(flat)


class TestParameters:
    def test_build_and_views(self):
        specs = [("a", (2, 3), "linear"), ("b", (3,), "zeros"), ("c", (4, 2), "embed")]
        params = Parameters.build(specs, seed=0)
        assert params.size == 6 + 3 + 8
        assert params.view("a").shape == (2, 3)
        assert np.all(params.view("b") == 0.0)
        assert np.max(np.abs(params.view("a"))) <= 1.0 / np.sqrt(2)
        assert np.max(np.abs(params.view("c"))) <= 1.0 / np.sqrt(2)

    def test_deterministic_init(self):
        specs = [("a", (5, 5), "linear")]
        p1 = Parameters.build(specs, seed=3)
        p2 = Parameters.build(specs, seed=3)
        assert np.array_equal(p1.flat, p2.flat)

    def test_merge_subset_roundtrip(self):
        a = Parameters.build([("x", (2, 2), "linear")], seed=0)
        b = Parameters.build([("y", (3,), "linear")], seed=1)
        merged = Parameters.merge({"first": a, "second": b})
        assert merged.size == a.size + b.size
        back = merged.subset("first")
        assert np.array_equal(back.flat, a.flat)
        assert back.index.keys() == a.index.keys()
        with pytest.raises(KeyError):
            merged.subset("missing")

    def test_leaf_tensors_and_grad_collection(self):
        params = Parameters.build([("w", (3, 2), "linear"), ("b", (2,), "zeros")], seed=0)
        leaves = params.leaf_tensors()
        out = ad.tensor_sum(ad.matmul(leaves["w"], leaves["b"]))
        ad.backward(out)
        grad = params.collect_grad(leaves)
        assert grad.shape == params.flat.shape
        assert np.any(grad != 0.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            Parameters(np.zeros(5), {"a": (0, (2, 2))})
        with pytest.raises(ValueError):
            Parameters(np.full(4, np.nan), {"a": (0, (2, 2))})


class TestEdgeScores:
    def test_zero_head_gives_zero_scores(self, rng):
        cfg = tiny_config()
        params = init_score_params(cfg, seed=0)
        m = random_material(rng, max_atoms=6)
        g = build_multigraph(m, cfg.cutoff)
        out = edge_scores(g, m.atom_types, params, 1, cfg)
        assert np.all(out.values == 0.0)

    def test_scores_class_validation(self):
        with pytest.raises(ValueError):
            EdgeScores(np.array([[1.0]]))
        with pytest.raises(ValueError):
            EdgeScores(np.array([np.inf]))

    def test_level_range_enforced(self, rng):
        cfg = tiny_config()
        params = init_score_params(cfg, seed=0)
        m = random_material(rng, max_atoms=4)
        g = build_multigraph(m, cfg.cutoff)
        with pytest.raises(ValueError):
            edge_scores(g, m.atom_types, params, 0, cfg)
        with pytest.raises(ValueError):
            edge_scores(g, m.atom_types, params, cfg.noise_level_count + 1, cfg)

    def test_atom_count_mismatch(self, rng):
        cfg = tiny_config()
        params = init_score_params(cfg, seed=0)
        m = random_material(rng, max_atoms=4)
        g = build_multigraph(m, cfg.cutoff)
        with pytest.raises(ValueError):
            edge_scores(g, list(m.atom_types) + [6], params, 1, cfg)

    def test_reversal_symmetry_exact(self, rng):
        cfg = tiny_config()
        params = randomized_head(init_score_params(cfg, seed=1))
        for _ in range(10):
            m = random_material(rng, max_atoms=8)
            g = build_multigraph(m, cfg.cutoff)
            values = edge_scores(g, m.atom_types, params, 2, cfg).values
            assert np.array_equal(values, values[g.reverse_index])

    def test_rigid_motion_and_periodic_invariance(self, rng):
        cfg = tiny_config()
        params = randomized_head(init_score_params(cfg, seed=2))
        for _ in range(20):
            m = random_material(rng, max_atoms=7)
            g = build_multigraph(m, cfg.cutoff)
            base = edge_scores(g, m.atom_types, params, 1, cfg).values
            q = random_rotation(int(rng.integers(2**31 - 1)))
            variants = [
                apply_rotation_translation(m, q, rng.uniform(-4, 4, 3)),
                apply_periodic(m, PeriodicShift(rng.integers(-2, 3, (3, m.n)))),
            ]
            for variant in variants:
                gv = build_multigraph(variant, cfg.cutoff)
                values = edge_scores(gv, variant.atom_types, params, 1, cfg).values
                assert values.size == base.size
                if base.size:
                    assert np.max(np.abs(np.sort(values) - np.sort(base))) <= 1e-10

    def test_permutation_relabeling(self, rng):
        cfg = tiny_config()
        params = randomized_head(init_score_params(cfg, seed=3))
        m = random_material(rng, max_atoms=6)
        g = build_multigraph(m, cfg.cutoff)
        base = edge_scores(g, m.atom_types, params, 1, cfg).values
        lookup = {
            (int(g.src[e]), int(g.dst[e]), *map(int, g.offsets[e])): base[e]
            for e in range(g.edge_count)
        }
        perm = Permutation(rng.permutation(m.n))
        mp = apply_permutation(m, perm)
        gp = build_multigraph(mp, cfg.cutoff)
        values = edge_scores(gp, mp.atom_types, params, 1, cfg).values
        assert values.size == base.size
        for e in range(gp.edge_count):
            key = (
                int(perm.order[gp.src[e]]),
                int(perm.order[gp.dst[e]]),
                *map(int, gp.offsets[e]),
            )
            assert values[e] == pytest.approx(lookup[key], abs=1e-12)

    def test_cutoff_smoothness(self):
        cfg = tiny_config(cutoff=4.0)
        params = randomized_head(init_score_params(cfg, seed=4))
        # isolated pair at distance just below the cutoff in a large cell
        for gap in (1e-6, 1e-4):
            d = cfg.cutoff - gap
            m = material_from_frac(
                [6, 8], np.array([[0.1, 0.1, 0.1], [0.1 + d / 20.0, 0.1, 0.1]]).T, 20.0 * np.eye(3)
            )
            g = build_multigraph(m, cfg.cutoff)
            assert g.edge_count == 2
            values = edge_scores(g, m.atom_types, params, 1, cfg).values
            # envelope is O(gap^3) near the cutoff
            assert np.max(np.abs(values)) < 1e-8
        assert cutoff_envelope(np.array([cfg.cutoff]), cfg.cutoff)[0] == 0.0

    def test_noise_level_changes_scores(self, rng):
        cfg = tiny_config()
        params = randomized_head(init_score_params(cfg, seed=5))
        m = random_material(rng, max_atoms=5)
        g = build_multigraph(m, cfg.cutoff)
        if g.edge_count:
            v1 = edge_scores(g, m.atom_types, params, 1, cfg).values
            v2 = edge_scores(g, m.atom_types, params, cfg.noise_level_count, cfg).values
            assert not np.allclose(v1, v2)


class TestEncode:
    def test_shapes_and_invariance(self, rng):
        cfg = tiny_config()
        params = init_encoder_params(cfg, seed=0)
        m = random_material(rng, max_atoms=6)
        g = build_multigraph(m, cfg.cutoff)
        z_a, z_l = encode(g, m.atom_types, params, cfg)
        assert z_a.shape == (cfg.latent_a_dim,)
        assert z_l.shape == (cfg.latent_l_dim,)
        q = random_rotation(9)
        mv = apply_rotation_translation(m, q, rng.uniform(-3, 3, 3))
        gv = build_multigraph(mv, cfg.cutoff)
        z_a2, z_l2 = encode(gv, mv.atom_types, params, cfg)
        assert np.max(np.abs(z_a - z_a2)) <= 1e-10
        assert np.max(np.abs(z_l - z_l2)) <= 1e-10

    def test_permutation_invariance(self, rng):
        cfg = tiny_config()
        params = init_encoder_params(cfg, seed=1)
        m = random_material(rng, max_atoms=8)
        g = build_multigraph(m, cfg.cutoff)
        base = encode(g, m.atom_types, params, cfg)
        perm = Permutation(rng.permutation(m.n))
        mp = apply_permutation(m, perm)
        gp = build_multigraph(mp, cfg.cutoff)
        other = encode(gp, mp.atom_types, params, cfg)
        assert np.max(np.abs(base[0] - other[0])) <= 1e-10
        assert np.max(np.abs(base[1] - other[1])) <= 1e-10

    def test_atom_types_matter(self):
        cfg = tiny_config()
        params = init_encoder_params(cfg, seed=2)
        sites = np.array([[0.0, 0.0, 0.0], [0.5, 0.5, 0.5]]).T
        lattice = 3.0 * np.eye(3)
        salt = material_from_frac([11, 17], sites, lattice)
        sylvite = material_from_frac([19, 17], sites, lattice)
        za_salt, _ = encode(build_multigraph(salt, cfg.cutoff), salt.atom_types, params, cfg)
        za_syl, _ = encode(build_multigraph(sylvite, cfg.cutoff), sylvite.atom_types, params, cfg)
        assert not np.allclose(za_salt, za_syl)


class TestGradient:
    def test_constant_loss_zero_gradient(self):
        cfg = tiny_config()
        params = init_score_params(cfg, seed=0)
        value, grad = gradient(lambda leaves: ad.Tensor(1.5), params)
        assert value == 1.5
        assert np.all(grad == 0.0)

    def test_quadratic_gradient_equals_theta(self):
        cfg = tiny_config()
        params = init_score_params(cfg, seed=1)

        def loss_fn(leaves):
            total = None
            for leaf in leaves.values():
                term = ad.tensor_sum(ad.power(leaf, 2.0))
                total = term if total is None else ad.add(total, term)
            return ad.mul(total, 0.5)

        _, grad = gradient(loss_fn, params)
        assert np.allclose(grad, params.flat, atol=1e-14)

    def test_edge_score_sum_matches_finite_differences(self):
        cfg = BackboneConfig(
            layer_count=1, hidden_size=5, rbf_count=4, cutoff=4.0,
            latent_a_dim=3, latent_l_dim=3, noise_level_count=2, element_count=6,
        )
        params = randomized_head(init_score_params(cfg, seed=3), seed=4)
        rng = np.random.default_rng(5)
        m = Material(
            rng.integers(1, 6, 3), rng.uniform(0, 3, (3, 3)),
            3.0 * np.eye(3) + rng.uniform(-0.3, 0.3, (3, 3)),
        )
        g = build_multigraph(m, cfg.cutoff)
        assert g.edge_count > 0

        def loss_fn(leaves):
            return ad.tensor_sum(edge_scores_forward(g, m.atom_types, leaves, cfg, 1))

        _, grad = gradient(loss_fn, params)

        def value(flat):
            shifted = params.replace_flat(flat)
            with ad.no_grad():
                out = edge_scores_forward(g, m.atom_types, shifted.leaf_tensors(), cfg, 1)
            return float(out.value.sum())

        fd = finite_difference_gradient(value, params.flat, h=1e-5)
        scale = max(np.max(np.abs(fd)), 1e-12)
        assert np.max(np.abs(grad - fd)) / scale < 1e-5

    def test_encoder_gradient_matches_finite_differences(self):
        cfg = BackboneConfig(
            layer_count=1, hidden_size=4, rbf_count=3, cutoff=4.0,
            latent_a_dim=3, latent_l_dim=2, noise_level_count=2, element_count=6,
        )
        params = init_encoder_params(cfg, seed=6)
        rng = np.random.default_rng(7)
        m = Material(rng.integers(1, 6, 2), rng.uniform(0, 3, (3, 2)), 3.5 * np.eye(3))
        g = build_multigraph(m, cfg.cutoff)

        def loss_fn(leaves):
            from perigen.backbone import encode_forward

            z_a, z_l = encode_forward(g, m.atom_types, leaves, cfg)
            return ad.add(ad.tensor_sum(ad.power(z_a, 2.0)), ad.tensor_sum(z_l))

        _, grad = gradient(loss_fn, params)

        def value(flat):
            from perigen.backbone import encode_forward

            shifted = params.replace_flat(flat)
            with ad.no_grad():
                z_a, z_l = encode_forward(g, m.atom_types, shifted.leaf_tensors(), cfg)
            return float(np.sum(z_a.value**2) + np.sum(z_l.value))

        fd = finite_difference_gradient(value, params.flat, h=1e-5)
        scale = max(np.max(np.abs(fd)), 1e-12)
        assert np.max(np.abs(grad - fd)) / scale < 1e-5


class TestCheckpoints:
    def test_bit_exact_roundtrip(self, tmp_path):
        cfg = tiny_config()
        params = randomized_head(init_score_params(cfg, seed=0))
        meta = {"config": {"cutoff": 5.0}, "sigma_hats": [1.0, 0.5, 0.2, 0.1]}
        path = tmp_path / "model.ckpt"
        save_parameters(path, params, meta)
        loaded, loaded_meta = load_parameters(path)
        assert np.array_equal(loaded.flat, params.flat)
        assert loaded.index == params.index
        assert loaded_meta == meta

    def test_rejects_bad_files(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b'{"format": "something-else"}\n')
        with pytest.raises(ValueError):
            load_parameters(path)
        cfg = tiny_config()
        params = init_score_params(cfg, seed=0)
        good = tmp_path / "good.ckpt"
        save_parameters(good, params)
        truncated = good.read_bytes()[:-16]
        bad2 = tmp_path / "trunc.ckpt"
        bad2.write_bytes(truncated)
        with pytest.raises(ValueError):
            load_parameters(bad2)
