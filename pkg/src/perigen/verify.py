"""Executable invariance, equivariance, and gradient-correctness battery.

Each check returns (name, passed, detail).  ``run_all`` executes the full
battery; the CLI ``verify`` subcommand prints one line per check and exits
nonzero on any failure.  The checks mirror the package's contracts:

- the four symmetry transforms leave periodic distance multisets unchanged;
- lattice parameter round-trips preserve the Gram matrix;
- assembled coordinate scores are permutation-equivariant, rotation-
  equivariant, translation- and periodic-invariant, and sum to zero;
- network outputs are invariant features of the multi-graph;
- tape gradients match central finite differences;
- the Langevin sampler is rotation-equivariant under shared noise and
  reproduces an analytic pair-distance target.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import (
    BackboneConfig,
    Parameters,
    edge_scores,
    edge_scores_forward,
    encode,
    gradient,
    init_encoder_params,
    init_score_params,
)
from .crystal import (
    Material,
    Permutation,
    PeriodicShift,
    apply_periodic,
    apply_permutation,
    apply_rotation_translation,
    lattice_to_params,
    params_to_lattice,
    random_rotation,
)
from .diffusion import (
    NoiseSchedule,
    align,
    assemble_coordinate_scores,
    denoising_target,
)
from .graph import build_multigraph, distance_multiset
from .sampler import SamplerConfig, langevin_generate


def random_material(rng: np.random.Generator, max_atoms: int = 12) -> Material:
    """Random small material with a moderately skewed lattice."""
    n = int(rng.integers(2, max_atoms + 1))
    types = rng.integers(1, 30, n)
    while True:
        basis = rng.standard_normal((3, 3))
        basis /= np.linalg.norm(basis, axis=0)
        if abs(np.linalg.det(basis)) > 0.3:
            break
    lattice = basis * rng.uniform(3.0, 6.0, 3)
    frac = rng.random((3, n))
    return Material(types, lattice @ frac, lattice)


def random_transforms(material: Material, rng: np.random.Generator):
    """One random instance of each of the four symmetry transforms."""
    n = material.n
    perm = Permutation(rng.permutation(n))
    rot = random_rotation(int(rng.integers(2**31 - 1)))
    shift_vec = rng.uniform(-5.0, 5.0, 3)
    k = PeriodicShift(rng.integers(-3, 4, (3, n)))
    return perm, rot, shift_vec, k


def _tiny_backbone(seed: int, randomize_head: bool = True) -> tuple[BackboneConfig, Parameters]:
    cfg = BackboneConfig(
        layer_count=2,
        hidden_size=16,
        rbf_count=8,
        cutoff=5.0,
        latent_a_dim=8,
        latent_l_dim=8,
        noise_level_count=4,
        element_count=100,
    )
    params = init_score_params(cfg, seed)
    if randomize_head:
        rng = np.random.default_rng(seed + 1)
        for name in ("head/w2", "head/b2"):
            view = params.flat[
                params.index[name][0] : params.index[name][0]
                + int(np.prod(params.index[name][1]))
            ]
            view[:] = rng.uniform(-0.5, 0.5, view.size)
    return cfg, params


def check_distance_multiset_invariance(seed: int = 0, trials: int = 25, cutoff: float = 5.0):
    """Distance multisets unchanged (1e-9) under all four transforms."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        material = random_material(rng)
        base = distance_multiset(build_multigraph(material, cutoff))
        perm, rot, shift_vec, k = random_transforms(material, rng)
        variants = [
            apply_permutation(material, perm),
            apply_rotation_translation(material, rot, shift_vec),
            apply_periodic(material, k),
        ]
        for variant in variants:
            other = distance_multiset(build_multigraph(variant, cutoff))
            if other.size != base.size:
                return "distance-multiset invariance", False, "edge count changed"
            if base.size:
                worst = max(worst, float(np.max(np.abs(other - base))))
    return "distance-multiset invariance", worst <= 1e-9, f"max deviation {worst:.3e}"


def check_multigraph_oracle(seed: int = 0, trials: int = 50):
    """Edge multiset agrees exactly with brute-force enumeration over k in [-5, 5]^3."""
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        material = random_material(rng, max_atoms=6)
        heights = np.sort(lattice_heights(material.lattice))
        cutoff = float(min(rng.uniform(1.0, 4.0), 3.5 * heights[0]))
        g = build_multigraph(material, cutoff)
        got = {
            (int(g.src[e]), int(g.dst[e]), *map(int, g.offsets[e]))
            for e in range(g.edge_count)
        }
        expected = brute_force_edges(material, cutoff)
        if got != {key for key, _ in expected.items()}:
            return "multigraph brute-force oracle", False, "edge sets differ"
    return "multigraph brute-force oracle", True, f"{trials} random cells exact"


def lattice_heights(lattice: np.ndarray) -> np.ndarray:
    from .graph import cell_heights

    return cell_heights(lattice)


def brute_force_edges(material: Material, cutoff: float, span: int = 5) -> dict:
    """Reference edge enumeration over a fixed integer-offset cube."""
    from .crystal import wrap_to_cell

    wrapped = wrap_to_cell(material)
    coords, lattice, n = wrapped.coords, wrapped.lattice, wrapped.n
    edges = {}
    for i in range(n):
        for j in range(n):
            for k in itertools.product(range(-span, span + 1), repeat=3):
                vec = coords[:, i] + lattice @ np.asarray(k, dtype=float) - coords[:, j]
                d = float(np.linalg.norm(vec))
                if 0.0 < d <= cutoff:
                    edges[(i, j, *k)] = d
    return edges


def check_lattice_roundtrip(seed: int = 0, trials: int = 1000):
    """params_to_lattice after lattice_to_params preserves the Gram matrix to 1e-9."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_rot = 0.0
    for _ in range(trials):
        while True:
            basis = rng.standard_normal((3, 3))
            basis /= np.linalg.norm(basis, axis=0)
            if abs(np.linalg.det(basis)) > 0.1:
                break
        lattice = basis * rng.uniform(1.0, 6.0, 3)
        rebuilt = params_to_lattice(lattice_to_params(lattice))
        gram_err = np.max(np.abs(rebuilt.T @ rebuilt - lattice.T @ lattice))
        worst = max(worst, float(gram_err))
        rot = random_rotation(int(rng.integers(2**31 - 1)))
        p0 = lattice_to_params(lattice)
        p1 = lattice_to_params(rot.q @ lattice)
        rot_err = max(
            float(np.max(np.abs(p0.lengths - p1.lengths))),
            float(np.max(np.abs(p0.angles - p1.angles))),
        )
        worst_rot = max(worst_rot, rot_err)
    ok = worst <= 1e-9 and worst_rot <= 1e-10
    return "lattice parameter round-trip", ok, f"gram {worst:.3e}, rotation {worst_rot:.3e}"


def check_alignment_oracle(seed: int = 0, trials: int = 100):
    """align matches brute-force argmin over v in [-3, 3]^3 (exact integers).

    Reference displacements are kept below the smallest cell height so the
    true minimizer provably lies inside the brute-force cube.
    """
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        material = random_material(rng, max_atoms=5)
        lattice = material.lattice
        n = material.n
        h_min = float(np.min(lattice_heights(lattice)))
        reference = material.coords + rng.standard_normal((3, n)) * rng.uniform(
            0.02, 0.8
        ) * h_min
        aligned = align(material.coords, reference, lattice)
        shift = np.linalg.solve(lattice, aligned - material.coords)
        for col in range(n):
            best, best_d = None, np.inf
            for v in itertools.product(range(-3, 4), repeat=3):
                d = float(
                    np.linalg.norm(
                        material.coords[:, col]
                        + lattice @ np.asarray(v, dtype=float)
                        - reference[:, col]
                    )
                )
                if d < best_d:
                    best, best_d = v, d
            if max(abs(b) for b in best) >= 3:
                return "alignment brute-force oracle", False, "oracle offset hit the cube boundary"
            if not np.allclose(shift[:, col], best, atol=1e-9):
                return "alignment brute-force oracle", False, f"offset mismatch {shift[:, col]} vs {best}"
    return "alignment brute-force oracle", True, f"{trials} random cells exact"


def check_assembled_score_properties(seed: int = 0, trials: int = 100):
    """Assembled scores: permutation/rotation equivariant, translation/periodic invariant."""
    rng = np.random.default_rng(seed)
    cfg, params = _tiny_backbone(seed=11)
    worst = 0.0
    for _ in range(trials):
        material = random_material(rng, max_atoms=8)
        g = build_multigraph(material, cfg.cutoff)
        if g.edge_count == 0:
            continue
        scores = edge_scores(g, material.atom_types, params, 1, cfg)
        assembled = assemble_coordinate_scores(g, scores)

        perm, rot, shift_vec, k = random_transforms(material, rng)

        mp = apply_permutation(material, perm)
        gp = build_multigraph(mp, cfg.cutoff)
        ap = assemble_coordinate_scores(gp, edge_scores(gp, mp.atom_types, params, 1, cfg))
        worst = max(worst, float(np.max(np.abs(ap - assembled[:, perm.order]))))

        mr = apply_rotation_translation(material, rot, shift_vec)
        gr = build_multigraph(mr, cfg.cutoff)
        ar = assemble_coordinate_scores(gr, edge_scores(gr, mr.atom_types, params, 1, cfg))
        worst = max(worst, float(np.max(np.abs(ar - rot.q @ assembled))))

        mk = apply_periodic(material, k)
        gk = build_multigraph(mk, cfg.cutoff)
        ak = assemble_coordinate_scores(gk, edge_scores(gk, mk.atom_types, params, 1, cfg))
        worst = max(worst, float(np.max(np.abs(ak - assembled))))
    return "assembled-score transform properties", worst <= 1e-8, f"max deviation {worst:.3e}"


def check_zero_sum(seed: int = 0, trials: int = 50):
    """Assembled score columns sum to zero for direction-symmetric edge scores."""
    rng = np.random.default_rng(seed)
    cfg, params = _tiny_backbone(seed=13)
    worst = 0.0
    for _ in range(trials):
        material = random_material(rng, max_atoms=8)
        g = build_multigraph(material, cfg.cutoff)
        if g.edge_count == 0:
            continue
        scores = edge_scores(g, material.atom_types, params, 2, cfg)
        assembled = assemble_coordinate_scores(g, scores)
        worst = max(worst, float(np.max(np.abs(assembled.sum(axis=1)))))
    return "zero-sum of assembled scores", worst <= 1e-10, f"max column-sum {worst:.3e}"


def check_edge_score_symmetry(seed: int = 0, trials: int = 25):
    """o(i, j, k) equals o(j, i, -k) exactly."""
    rng = np.random.default_rng(seed)
    cfg, params = _tiny_backbone(seed=17)
    for _ in range(trials):
        material = random_material(rng, max_atoms=8)
        g = build_multigraph(material, cfg.cutoff)
        if g.edge_count == 0:
            continue
        values = edge_scores(g, material.atom_types, params, 1, cfg).values
        if not np.array_equal(values, values[g.reverse_index]):
            return "edge-score reversal symmetry", False, "directed scores differ"
    return "edge-score reversal symmetry", True, "bitwise equal on all trials"


def check_network_invariance(seed: int = 0, trials: int = 100):
    """edge_scores and encode unchanged under the four transforms (<= 1e-10)."""
    rng = np.random.default_rng(seed)
    cfg, params = _tiny_backbone(seed=19)
    enc_params = init_encoder_params(cfg, 23)
    worst = 0.0
    for _ in range(trials):
        material = random_material(rng, max_atoms=8)
        g = build_multigraph(material, cfg.cutoff)
        base_scores = edge_scores(g, material.atom_types, params, 1, cfg).values
        base_z = encode(g, material.atom_types, enc_params, cfg)

        perm, rot, shift_vec, k = random_transforms(material, rng)
        variants = [
            apply_rotation_translation(material, rot, shift_vec),
            apply_periodic(material, k),
        ]
        for variant in variants:
            gv = build_multigraph(variant, cfg.cutoff)
            scores = edge_scores(gv, variant.atom_types, params, 1, cfg).values
            if scores.size != base_scores.size:
                return "network transform invariance", False, "edge count changed"
            if scores.size:
                worst = max(worst, float(np.max(np.abs(np.sort(scores) - np.sort(base_scores)))))
            zv = encode(gv, variant.atom_types, enc_params, cfg)
            worst = max(worst, float(np.max(np.abs(zv[0] - base_z[0]))))
            worst = max(worst, float(np.max(np.abs(zv[1] - base_z[1]))))
        mp = apply_permutation(material, perm)
        gp = build_multigraph(mp, cfg.cutoff)
        zp = encode(gp, mp.atom_types, enc_params, cfg)
        worst = max(worst, float(np.max(np.abs(zp[0] - base_z[0]))))
        worst = max(worst, float(np.max(np.abs(zp[1] - base_z[1]))))
    return "network transform invariance", worst <= 1e-10, f"max deviation {worst:.3e}"


def check_unit_vector_gradient(seed: int = 0, trials: int = 20):
    """Edge unit vectors equal the finite-difference gradient of the distance."""
    rng = np.random.default_rng(seed)
    h = 1e-6
    worst = 0.0
    for _ in range(trials):
        material = random_material(rng, max_atoms=5)
        g = build_multigraph(material, 5.0)
        if g.edge_count == 0:
            continue
        e = int(rng.integers(g.edge_count))
        i, j = int(g.src[e]), int(g.dst[e])
        if i == j:
            continue
        k = g.offsets[e].astype(float)
        fd = np.empty(3)
        for axis in range(3):
            samples = []
            for sign in (1.0, -1.0):
                coords = g.coords.copy()
                coords[axis, i] += sign * h
                samples.append(np.linalg.norm(coords[:, i] + g.lattice @ k - coords[:, j]))
            fd[axis] = (samples[0] - samples[1]) / (2 * h)
        rel = np.linalg.norm(fd - g.unit[e]) / np.linalg.norm(g.unit[e])
        worst = max(worst, float(rel))
    return "distance-gradient unit vectors", worst <= 1e-6, f"max rel err {worst:.3e}"


def check_parameter_gradients(seed: int = 0):
    """Tape gradients vs central differences (h = 1e-5), rel err < 1e-5."""
    rng = np.random.default_rng(seed)
    cfg = BackboneConfig(
        layer_count=1, hidden_size=5, rbf_count=4, cutoff=4.0,
        latent_a_dim=3, latent_l_dim=3, noise_level_count=2, element_count=6,
    )
    params = init_score_params(cfg, 3)
    # randomize the zero-initialized head so the test is not trivially zero
    head_rng = np.random.default_rng(4)
    for name in ("head/w2", "head/b2"):
        off, shape = params.index[name]
        params.flat[off : off + int(np.prod(shape))] = head_rng.uniform(-0.5, 0.5, int(np.prod(shape)))
    material = Material(
        rng.integers(1, 6, 3),
        rng.uniform(0, 3, (3, 3)),
        3.0 * np.eye(3) + rng.uniform(-0.3, 0.3, (3, 3)),
    )
    g = build_multigraph(material, cfg.cutoff)

    def loss_fn(leaves):
        out = edge_scores_forward(g, material.atom_types, leaves, cfg, 1)
        return ad.tensor_sum(out)

    _, grad = gradient(loss_fn, params)

    h = 1e-5
    fd = np.zeros_like(grad)
    for idx in range(params.size):
        for sign in (1.0, -1.0):
            flat = params.flat.copy()
            flat[idx] += sign * h
            shifted = params.replace_flat(flat)
            with ad.no_grad():
                value = float(
                    edge_scores_forward(g, material.atom_types, shifted.leaf_tensors(), cfg, 1).value.sum()
                )
            if sign > 0:
                plus = value
            else:
                minus = value
        fd[idx] = (plus - minus) / (2 * h)
    scale = max(float(np.max(np.abs(fd))), 1e-12)
    rel = float(np.max(np.abs(grad - fd))) / scale
    return "backbone parameter gradients", rel < 1e-5, f"max rel err {rel:.3e}"


def check_denoising_target(seed: int = 0, trials: int = 200):
    """Score target matches the finite-difference Gaussian log-density derivative."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        d_hat = float(rng.uniform(0.5, 5.0))
        sigma_hat = float(rng.uniform(0.05, 2.0))
        d_tilde = d_hat + float(rng.standard_normal()) * sigma_hat
        h = 1e-6 * max(1.0, abs(d_tilde))

        def logpdf(x):
            return -0.5 * ((x - d_hat) / sigma_hat) ** 2 - math.log(
                sigma_hat * math.sqrt(2 * math.pi)
            )

        fd = (logpdf(d_tilde + h) - logpdf(d_tilde - h)) / (2 * h)
        target = denoising_target(d_tilde, d_hat, sigma_hat)
        rel = abs(target - fd) / max(abs(fd), 1e-9)
        worst = max(worst, rel)
    return "denoising score target", worst < 1e-6, f"max rel err {worst:.3e}"


def check_sampler_equivariance(seed: int = 0):
    """Shared-noise Langevin chains on (L, QL) stay related by Q (<= 1e-8)."""
    cfg, params = _tiny_backbone(seed=29)
    schedule = NoiseSchedule.geometric(2.0, 0.05, 4)
    scfg = SamplerConfig(epsilon=1e-4, q=8, schedule=schedule, cutoff=cfg.cutoff,
                         wrap_every_level=False)
    from .diffusion import EdgeStd
    from .sampler import model_edge_score_fn

    edge_std = EdgeStd(np.geomspace(1.0, 0.05, 4))
    score_fn = model_edge_score_fn(params, cfg, edge_std)
    types = np.array([6, 8, 14])
    lattice = np.array([[4.0, 0.4, 0.0], [0.0, 3.8, 0.2], [0.0, 0.0, 4.2]])
    rot = random_rotation(77)

    class SharedRng:
        """Replays one base stream, optionally rotating normal draws."""

        def __init__(self, seed, q=None):
            self.rng = np.random.default_rng(seed)
            self.q = q

        def random(self, shape):
            return self.rng.random(shape)

        def standard_normal(self, shape):
            z = self.rng.standard_normal(shape)
            return self.q @ z if self.q is not None else z

    p_base = langevin_generate(types, lattice, scfg, score_fn, SharedRng(5))
    p_rot = langevin_generate(types, rot.q @ lattice, scfg, score_fn, SharedRng(5, rot.q))
    err = float(np.max(np.abs(p_rot - rot.q @ p_base)))
    return "sampler rotation equivariance", err <= 1e-8, f"max deviation {err:.3e}"


def check_step_sizes():
    """alpha_t positive, non-increasing, and alpha_T = epsilon exactly."""
    from .sampler import step_sizes

    scfg = SamplerConfig(epsilon=1e-4, q=10, schedule=NoiseSchedule.geometric(10, 0.01, 50), cutoff=5.0)
    alphas = step_sizes(scfg)
    ok = bool(np.all(alphas > 0) and np.all(np.diff(alphas) <= 0) and alphas[-1] == scfg.epsilon)
    return "langevin step sizes", ok, f"alpha_T = {alphas[-1]:.3e}"


def analytic_pair_sampler(
    chains: int = 500,
    target_distance: float = 1.5,
    tau: float = 0.1,
    seed: int = 0,
    q: int = 60,
    levels: int = 12,
) -> np.ndarray:
    """Final pair distances of Langevin chains driven by an analytic score.

    Two atoms in a large cubic cell; the network is replaced by the
    closed-form score of a Gaussian over the pair distance,
    s(d) = -(d - target) / tau^2.  The schedule is chosen so the late-level
    step sizes satisfy the stability bound alpha_t < tau^2.
    """
    lattice = 7.0 * np.eye(3)
    types = np.array([6, 6])
    schedule = NoiseSchedule.geometric(1.0, 0.1, levels)
    scfg = SamplerConfig(epsilon=1e-4, q=q, schedule=schedule, cutoff=3.4)

    def score_fn(graph, atom_types, level):
        return -(graph.dist - target_distance) / (tau * tau)

    finals = np.empty(chains)
    for c in range(chains):
        rng = np.random.default_rng(seed + c)
        coords = langevin_generate(types, lattice, scfg, score_fn, rng)
        delta = coords[:, 0] - coords[:, 1]
        frac = np.linalg.solve(lattice, delta.reshape(3, 1)).ravel()
        frac -= np.round(frac)
        finals[c] = float(np.linalg.norm(lattice @ frac))
    return finals


def check_analytic_sampler(chains: int = 150, seed: int = 0):
    """Histogram mode of final pair distances within 5% of the analytic target."""
    finals = analytic_pair_sampler(chains=chains, seed=seed)
    hist, edges = np.histogram(finals, bins=40, range=(0.5, 2.5))
    mode = 0.5 * (edges[np.argmax(hist)] + edges[np.argmax(hist) + 1])
    ok = abs(mode - 1.5) <= 0.075
    return "analytic-score sampler stationary mode", ok, f"mode {mode:.3f} A"


def run_all(seed: int = 0, include_sampler_toy: bool = True) -> list[tuple[str, bool, str]]:
    checks = [
        check_distance_multiset_invariance(seed),
        check_multigraph_oracle(seed),
        check_lattice_roundtrip(seed, trials=300),
        check_alignment_oracle(seed),
        check_assembled_score_properties(seed),
        check_zero_sum(seed),
        check_edge_score_symmetry(seed),
        check_network_invariance(seed),
        check_unit_vector_gradient(seed),
        check_parameter_gradients(seed),
        check_denoising_target(seed),
        check_sampler_equivariance(seed),
        check_step_sizes(),
    ]
    if include_sampler_toy:
        checks.append(check_analytic_sampler())
    return checks
