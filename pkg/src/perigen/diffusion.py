"""Denoising score matching over periodic edge distances.

Training perturbs coordinates with Gaussian noise at a decreasing schedule,
builds the multi-graph on the *noisy* material, and regresses the per-edge
network output toward the score of the edge-distance noising kernel.  The
reference distance for each noisy edge comes from the clean coordinates
aligned per-atom to the noisy ones (nearest periodic image), evaluated on
the same (i, j, k) triples, so every noisy edge has a well-defined target
even when the clean and noisy edge sets differ.

Per-atom coordinate scores are assembled from per-edge scores via the chain
rule: column i sums score * unit-vector over the edges leaving node i.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import BackboneConfig, EdgeScores, Parameters, edge_scores_forward, init_score_params
from .crystal import Material
from .graph import MultiGraph, build_multigraph
from .optim import Adam


@dataclass(frozen=True)
class NoiseSchedule:
    """Strictly decreasing positive coordinate-noise levels sigma_1 > ... > sigma_T."""

    sigmas: np.ndarray

    def __post_init__(self):
        sigmas = np.array(self.sigmas, dtype=np.float64, copy=True)
        if sigmas.ndim != 1 or sigmas.size < 1:
            raise ValueError("schedule must be a non-empty 1D list")
        if np.any(sigmas <= 0) or np.any(np.diff(sigmas) >= 0):
            raise ValueError("noise levels must be positive and strictly decreasing")
        sigmas.setflags(write=False)
        object.__setattr__(self, "sigmas", sigmas)

    @property
    def levels(self) -> int:
        return self.sigmas.size

    @classmethod
    def geometric(cls, sigma_max: float = 10.0, sigma_min: float = 0.01, count: int = 50) -> "NoiseSchedule":
        """Geometric series from sigma_max down to sigma_min with ``count`` levels."""
        if count < 2:
            raise ValueError("geometric schedule needs at least 2 levels")
        return cls(np.geomspace(sigma_max, sigma_min, count))


@dataclass(frozen=True)
class EdgeStd:
    """Empirical per-level standard deviations of noisy-edge distance residuals."""

    sigma_hats: np.ndarray

    def __post_init__(self):
        vals = np.array(self.sigma_hats, dtype=np.float64, copy=True)
        if vals.ndim != 1 or vals.size < 1 or np.any(vals <= 0):
            raise ValueError("sigma_hats must be a non-empty positive 1D list")
        vals.setflags(write=False)
        object.__setattr__(self, "sigma_hats", vals)


@dataclass(frozen=True)
class DenoisingPair:
    """A clean material, its noisy version at one level, and the aligned clean coords."""

    clean: Material
    noisy: Material
    level: int
    aligned: Material


def perturb(material: Material, sigma: float, rng: np.random.Generator) -> Material:
    """Add i.i.d. Gaussian noise of scale ``sigma`` to every coordinate."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    noise = rng.standard_normal((3, material.n)) * sigma
    return material.with_coords(material.coords + noise)


def align(coords: np.ndarray, reference: np.ndarray, lattice: np.ndarray) -> np.ndarray:
    """Shift each column of ``coords`` by the lattice image nearest to ``reference``.

    Column i of the result is p_i + L u with u the integer minimizer of
    ||p_i + L v - ref_i||.  The minimizer is found by rounding the fractional
    difference and searching the surrounding 3^3 neighborhood, which is exact
    for cells whose skew keeps the minimizer within one shell (asserted
    against brute force in the test suite).
    """
    coords = np.asarray(coords, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if coords.shape != reference.shape or coords.ndim != 2 or coords.shape[0] != 3:
        raise ValueError("coords and reference must both be 3 x n")
    base = np.round(np.linalg.solve(lattice, reference - coords))
    best_d = np.full(coords.shape[1], np.inf)
    best_shift = np.zeros_like(coords)
    for delta in itertools.product((-1.0, 0.0, 1.0), repeat=3):
        shift = lattice @ (base + np.asarray(delta)[:, None])
        d = np.linalg.norm(coords + shift - reference, axis=0)
        better = d < best_d
        best_d[better] = d[better]
        best_shift[:, better] = shift[:, better]
    return coords + best_shift


def make_denoising_pair(
    material: Material, schedule: NoiseSchedule, level: int, rng: np.random.Generator
) -> DenoisingPair:
    """Perturb at the given level (1-based) and align the clean coordinates."""
    if not 1 <= level <= schedule.levels:
        raise ValueError(f"level {level} outside 1..{schedule.levels}")
    noisy = perturb(material, float(schedule.sigmas[level - 1]), rng)
    aligned = material.with_coords(align(material.coords, noisy.coords, material.lattice))
    return DenoisingPair(material, noisy, level, aligned)


def edge_reference_distances(noisy_graph: MultiGraph, clean: Material) -> np.ndarray:
    """Clean-side distance for every edge of the noisy graph.

    The clean coordinates are aligned to the (wrapped) noisy coordinates the
    graph was built from, then measured over the graph's own (i, j, k)
    triples.
    """
    aligned = align(clean.coords, noisy_graph.coords, noisy_graph.lattice)
    shifts = noisy_graph.lattice @ noisy_graph.offsets.T.astype(np.float64)
    vec = aligned[:, noisy_graph.src] + shifts - aligned[:, noisy_graph.dst]
    return np.linalg.norm(vec, axis=0)


def estimate_edge_std(
    dataset: list[Material],
    schedule: NoiseSchedule,
    cutoff: float,
    rng: np.random.Generator,
) -> EdgeStd:
    """Empirical std of (noisy - clean) edge distances, pooled over the dataset.

    Perturbs every material once per level, builds the noisy multi-graphs,
    and pools the residuals d_tilde - d_hat across the whole dataset.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    sigma_hats = np.empty(schedule.levels)
    for level in range(1, schedule.levels + 1):
        residuals = []
        for material in dataset:
            pair = make_denoising_pair(material, schedule, level, rng)
            g = build_multigraph(pair.noisy, cutoff)
            if g.edge_count == 0:
                continue
            residuals.append(g.dist - edge_reference_distances(g, material))
        if not residuals:
            raise ValueError(f"no edges found at noise level {level}; cutoff too small")
        pooled = np.concatenate(residuals)
        std = float(np.std(pooled))
        if std <= 0.0:
            std = max(float(schedule.sigmas[level - 1]) * 1e-6, 1e-12)
        sigma_hats[level - 1] = std
    return EdgeStd(sigma_hats)


def denoising_target(d_tilde: float, d_hat: float, sigma_hat: float) -> float:
    """Score of N(d_hat, sigma_hat^2) evaluated at d_tilde: -(d_tilde - d_hat) / sigma_hat^2."""
    if sigma_hat <= 0:
        raise ValueError(f"sigma_hat must be positive, got {sigma_hat}")
    return -(d_tilde - d_hat) / (sigma_hat * sigma_hat)


def assemble_coordinate_scores(graph: MultiGraph, per_edge) -> np.ndarray:
    """Per-atom score matrix (3 x n): column i sums score * unit over edges leaving i."""
    values = per_edge.values if isinstance(per_edge, EdgeScores) else np.asarray(per_edge, dtype=np.float64)
    if values.shape != (graph.edge_count,):
        raise ValueError(f"need one score per edge ({graph.edge_count}), got shape {values.shape}")
    out = np.zeros((graph.n, 3))
    np.add.at(out, graph.src, values[:, None] * graph.unit)
    return out.T


def assemble_coordinate_scores_t(graph: MultiGraph, per_edge: Tensor) -> Tensor:
    """Tape twin of :func:`assemble_coordinate_scores`; returns an (n, 3) Tensor."""
    weighted = ad.mul(ad.reshape(per_edge, (graph.edge_count, 1)), Tensor(graph.unit))
    return ad.segment_sum(weighted, graph.src, graph.n)


def dsm_loss(
    noisy_graph: MultiGraph,
    outputs,
    d_tilde: np.ndarray,
    d_hat: np.ndarray,
    sigma_hat: float,
) -> float:
    """Single-level distance score-matching loss.

    (sigma_hat^2 / 2) * mean over edges of (o / sigma_hat + (d_tilde - d_hat)
    / sigma_hat^2)^2; zero exactly when o = -(d_tilde - d_hat) / sigma_hat on
    every edge.  Averaging the per-level values uniformly over sampled levels
    reproduces the 1/(2T) convention of the full objective.
    """
    values = outputs.values if isinstance(outputs, EdgeScores) else np.asarray(outputs, dtype=np.float64)
    d_tilde = np.asarray(d_tilde, dtype=np.float64)
    d_hat = np.asarray(d_hat, dtype=np.float64)
    if not (values.shape == d_tilde.shape == d_hat.shape == (noisy_graph.edge_count,)):
        raise ValueError("edge scores and distance targets must align with the graph edges")
    residual = values / sigma_hat + (d_tilde - d_hat) / (sigma_hat * sigma_hat)
    return float(0.5 * sigma_hat * sigma_hat * np.mean(residual**2))


def dsm_loss_t(
    outputs: Tensor, d_tilde: np.ndarray, d_hat: np.ndarray, sigma_hat: float
) -> Tensor:
    """Tape twin of :func:`dsm_loss` for training."""
    target = (np.asarray(d_tilde) - np.asarray(d_hat)) / (sigma_hat * sigma_hat)
    residual = ad.add(ad.mul(outputs, 1.0 / sigma_hat), Tensor(target))
    return ad.mul(ad.tensor_mean(ad.power(residual, 2.0)), 0.5 * sigma_hat * sigma_hat)


def coordinate_dsm_loss(
    noisy_graph: MultiGraph,
    outputs,
    noisy_coords: np.ndarray,
    aligned_coords: np.ndarray,
    sigma: float,
) -> float:
    """Ablation-mode loss: score matching applied directly to coordinates.

    Per-edge outputs are first assembled to per-atom vectors, then regressed
    toward the coordinate noising-kernel score with the standard
    sigma^2-weighted form: (sigma^2 / 2) * mean over atoms of
    ||S_i / sigma + (p_tilde_i - p_hat_i) / sigma^2||^2.
    """
    assembled = assemble_coordinate_scores(noisy_graph, outputs)
    residual = assembled / sigma + (np.asarray(noisy_coords) - np.asarray(aligned_coords)) / (sigma * sigma)
    return float(0.5 * sigma * sigma * np.mean(np.sum(residual**2, axis=0)))


def coordinate_dsm_loss_t(
    noisy_graph: MultiGraph,
    outputs: Tensor,
    noisy_coords: np.ndarray,
    aligned_coords: np.ndarray,
    sigma: float,
) -> Tensor:
    """Tape twin of :func:`coordinate_dsm_loss`."""
    assembled = assemble_coordinate_scores_t(noisy_graph, outputs)  # (n, 3)
    target = (np.asarray(noisy_coords) - np.asarray(aligned_coords)).T / (sigma * sigma)
    residual = ad.add(ad.mul(assembled, 1.0 / sigma), Tensor(target))
    per_atom = ad.tensor_sum(ad.power(residual, 2.0), axis=1)
    return ad.mul(ad.tensor_mean(per_atom), 0.5 * sigma * sigma)


def score_matching_example_loss(
    material: Material,
    level: int,
    params_leaves: dict[str, Tensor],
    cfg: BackboneConfig,
    schedule: NoiseSchedule,
    edge_std: EdgeStd,
    rng: np.random.Generator,
    mode: str = "distance",
) -> Tensor | None:
    """Tape loss for one (material, level) draw; None when the noisy graph is empty."""
    pair = make_denoising_pair(material, schedule, level, rng)
    g = build_multigraph(pair.noisy, cfg.cutoff)
    if g.edge_count == 0:
        return None
    outputs = edge_scores_forward(g, material.atom_types, params_leaves, cfg, level)
    if mode == "distance":
        d_hat = edge_reference_distances(g, material)
        return dsm_loss_t(outputs, g.dist, d_hat, float(edge_std.sigma_hats[level - 1]))
    if mode == "coordinate":
        aligned = align(material.coords, g.coords, material.lattice)
        return coordinate_dsm_loss_t(g, outputs, g.coords, aligned, float(schedule.sigmas[level - 1]))
    raise ValueError(f"unknown score_matching_mode {mode!r}")


def train_score_model(
    dataset: list[Material],
    cfg: BackboneConfig,
    schedule: NoiseSchedule,
    edge_std: EdgeStd,
    rng: np.random.Generator,
    epochs: int = 10,
    batch_size: int = 128,
    lr: float = 1e-3,
    clip_norm: float = 10.0,
    mode: str = "distance",
    params: Parameters | None = None,
) -> tuple[Parameters, list[float]]:
    """Minibatch Adam on the denoising loss with per-example random levels.

    Returns the final parameters and the per-epoch mean loss curve.  The
    first curve entry is the pre-training loss (no updates), so curves always
    start from the initial model.  Raises FloatingPointError on divergence.
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    if schedule.levels != cfg.noise_level_count or schedule.levels != edge_std.sigma_hats.size:
        raise ValueError("schedule, edge_std, and config noise-level counts must agree")
    if params is None:
        params = init_score_params(cfg, int(rng.integers(2**31 - 1)))
    optimizer = Adam(params.size, lr=lr, clip_norm=clip_norm)
    curve: list[float] = []

    def batch_loss(batch, leaves, batch_rng):
        terms = []
        for material in batch:
            level = int(batch_rng.integers(1, schedule.levels + 1))
            term = score_matching_example_loss(
                material, level, leaves, cfg, schedule, edge_std, batch_rng, mode
            )
            if term is not None:
                terms.append(term)
        if not terms:
            return None
        total = terms[0]
        for term in terms[1:]:
            total = ad.add(total, term)
        return ad.mul(total, 1.0 / len(terms))

    # pre-training loss over one pass, for a comparable curve origin
    with ad.no_grad():
        leaves = params.leaf_tensors()
        eval_rng = np.random.default_rng(rng.integers(2**31 - 1))
        initial = batch_loss(dataset[: min(len(dataset), batch_size)], leaves, eval_rng)
        curve.append(float(initial.value) if initial is not None else 0.0)

    for _ in range(epochs):
        order = rng.permutation(len(dataset))
        epoch_losses = []
        for start in range(0, len(dataset), batch_size):
            batch = [dataset[i] for i in order[start : start + batch_size]]
            leaves = params.leaf_tensors()
            loss = batch_loss(batch, leaves, rng)
            if loss is None:
                continue
            ad.backward(loss)
            if not math.isfinite(float(loss.value)):
                raise FloatingPointError(
                    f"training diverged: loss={float(loss.value)} at step {optimizer.step_count}"
                )
            grad = params.collect_grad(leaves)
            params = params.replace_flat(optimizer.step(params.flat, grad))
            epoch_losses.append(float(loss.value))
        curve.append(float(np.mean(epoch_losses)) if epoch_losses else curve[-1])
    return params, curve
