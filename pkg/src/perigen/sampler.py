"""Annealed Langevin dynamics for coordinate generation.

Starting from uniform fractional coordinates, the chain runs ``q`` inner
steps at each noise level t with step size alpha_t = eps * sigma_t^2 /
sigma_T^2, updating P <- P + alpha_t * S + sqrt(2 alpha_t) * Z.  S is the
per-atom score assembled from per-edge scores of the current state's
multi-graph; the network output is divided by the level's empirical edge
deviation so the sampler consumes an actual distance score.

Full-material generation follows the factorization: draw latents, decode an
atom type set and lattice parameters, then generate coordinates conditioned
on them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import vae as vae_mod
from .backbone import BackboneConfig, Parameters, edge_scores
from .crystal import Material, UnrealizableCellError, params_to_lattice, wrap_frac, wrap_to_cell
from .diffusion import EdgeStd, NoiseSchedule, assemble_coordinate_scores
from .graph import MultiGraph, build_multigraph


@dataclass(frozen=True)
class SamplerConfig:
    """Langevin sampling knobs; the schedule must be strictly decreasing."""

    epsilon: float = 1e-4
    q: int = 100
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule.geometric)
    cutoff: float = 6.0
    rebuild_graph_every_step: bool = True
    wrap_every_level: bool = True

    def __post_init__(self):
        if self.epsilon <= 0 or self.q <= 0 or self.cutoff <= 0:
            raise ValueError("epsilon, q, and cutoff must be positive")


def step_sizes(cfg: SamplerConfig) -> np.ndarray:
    """alpha_t = epsilon * sigma_t^2 / sigma_T^2 for t = 1..T (alpha_T = epsilon)."""
    sigmas = cfg.schedule.sigmas
    return cfg.epsilon * (sigmas / sigmas[-1]) ** 2


def model_edge_score_fn(
    params: Parameters, backbone_cfg: BackboneConfig, edge_std: EdgeStd
) -> Callable[[MultiGraph, np.ndarray, int], np.ndarray]:
    """Per-edge score source backed by the trained network: o / sigma_hat_t."""

    def fn(graph: MultiGraph, atom_types: np.ndarray, level: int) -> np.ndarray:
        out = edge_scores(graph, atom_types, params, level, backbone_cfg)
        return out.values / float(edge_std.sigma_hats[level - 1])

    return fn


def langevin_generate(
    atom_types,
    lattice: np.ndarray,
    cfg: SamplerConfig,
    score_fn: Callable[[MultiGraph, np.ndarray, int], np.ndarray],
    rng,
    stats: dict | None = None,
    trajectory: list | None = None,
) -> np.ndarray:
    """Generate a 3 x n coordinate matrix for fixed atom types and lattice.

    ``score_fn(graph, atom_types, level)`` must return one score per edge of
    ``graph`` (use :func:`model_edge_score_fn` for the trained network).
    ``rng`` needs ``random(shape)`` and ``standard_normal(shape)`` methods.
    An empty multi-graph at some step contributes zero score; the occurrence
    count is recorded under ``stats['empty_graph_steps']``.  When
    ``trajectory`` is a list, the coordinates after each level are appended.
    """
    atom_types = np.asarray(atom_types, dtype=np.int64)
    n = atom_types.size
    if n < 1:
        raise ValueError("need at least one atom")
    lattice = np.asarray(lattice, dtype=np.float64)
    alphas = step_sizes(cfg)
    if stats is not None:
        stats.setdefault("empty_graph_steps", 0)

    frac0 = rng.random((3, n))
    coords = lattice @ frac0
    graph: MultiGraph | None = None
    for t in range(1, cfg.schedule.levels + 1):
        alpha = float(alphas[t - 1])
        noise_scale = np.sqrt(2.0 * alpha)
        for step in range(cfg.q):
            if cfg.rebuild_graph_every_step or graph is None or step == 0:
                graph = build_multigraph(
                    Material(atom_types, coords, lattice), cfg.cutoff
                )
            if graph.edge_count == 0:
                score = np.zeros((3, n))
                if stats is not None:
                    stats["empty_graph_steps"] += 1
            else:
                score = assemble_coordinate_scores(graph, score_fn(graph, atom_types, t))
            z = rng.standard_normal((3, n))
            coords = coords + alpha * score + noise_scale * z
        if cfg.wrap_every_level:
            coords = lattice @ wrap_frac(np.linalg.solve(lattice, coords))
        if trajectory is not None:
            trajectory.append(coords.copy())
    return coords


def generate_material(
    vae_params: Parameters,
    score_params: Parameters,
    vae_cfg,
    sampler_cfg: SamplerConfig,
    edge_std: EdgeStd,
    rng: np.random.Generator,
    max_lattice_retries: int = 10,
    stats: dict | None = None,
) -> Material:
    """Draw latents from N(0, I), decode types and lattice, then run the sampler.

    ``vae_cfg`` is the decoder configuration (a :class:`perigen.vae.VaeConfig`).
    Unrealizable decoded lattices trigger a fresh z_L draw, up to
    ``max_lattice_retries`` before raising UnrealizableCellError.
    """
    backbone_cfg = vae_cfg.backbone
    z_a = rng.standard_normal(backbone_cfg.latent_a_dim)
    type_set = vae_mod.decode_type_set(z_a, vae_params, vae_cfg)
    atom_types = vae_mod.type_set_to_vector(type_set)

    lattice = None
    for _ in range(max_lattice_retries):
        z_l = rng.standard_normal(backbone_cfg.latent_l_dim)
        try:
            lattice = params_to_lattice(vae_mod.decode_lattice(z_l, vae_params, vae_cfg))
            break
        except UnrealizableCellError:
            continue
    if lattice is None:
        raise UnrealizableCellError(
            f"decoder produced no realizable lattice in {max_lattice_retries} draws"
        )

    score_fn = model_edge_score_fn(score_params, backbone_cfg, edge_std)
    coords = langevin_generate(atom_types, lattice, sampler_cfg, score_fn, rng, stats=stats)
    return wrap_to_cell(Material(atom_types, coords, lattice))
