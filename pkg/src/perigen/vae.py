"""VAE over symmetry-invariant targets: atom type sets and lattice parameters.

The encoder is the invariant graph network; sum-pooled features feed linear
heads for the mean/log-variance of two latents (one for composition, one for
the cell).  Four decoder MLPs (two linear layers with a ReLU between them)
predict: per-element existence probabilities, the set size k, the per-element
atom count, and the six lattice items [lengths, angles].  A regression head
on the concatenated latents predicts material density, the desk-scale
property used for latent-space optimization.

Generation-time decoding is deterministic: argmax for k and counts, top-k
(ties to the lower atomic number) for elements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import (
    BackboneConfig,
    Parameters,
    encode_forward,
    encoder_param_specs,
)
from .crystal import LatticeParams, Material, lattice_to_params
from .diffusion import EdgeStd, NoiseSchedule, score_matching_example_loss
from .evaluation import density
from .graph import build_multigraph
from .optim import Adam


@dataclass(frozen=True)
class AtomTypeSet:
    """Unordered composition: ((element, count), ...) sorted by atomic number."""

    entries: tuple[tuple[int, int], ...]

    def __post_init__(self):
        entries = tuple((int(e), int(c)) for e, c in self.entries)
        if not entries:
            raise ValueError("atom type set must have at least one entry")
        elements = [e for e, _ in entries]
        if len(set(elements)) != len(elements):
            raise ValueError(f"elements must be pairwise distinct, got {elements}")
        if any(e < 1 for e in elements) or any(c < 1 for _, c in entries):
            raise ValueError("elements and counts must be positive")
        entries = tuple(sorted(entries))
        object.__setattr__(self, "entries", entries)

    @property
    def k(self) -> int:
        return len(self.entries)

    @property
    def total_atoms(self) -> int:
        return sum(c for _, c in self.entries)


@dataclass(frozen=True)
class LatentState:
    """Gaussian posterior parameters for the two latents."""

    mu_a: np.ndarray
    logvar_a: np.ndarray
    mu_l: np.ndarray
    logvar_l: np.ndarray

    def __post_init__(self):
        for name in ("mu_a", "logvar_a", "mu_l", "logvar_l"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, arr)


@dataclass(frozen=True)
class LossWeights:
    """Weights of the joint objective terms."""

    set_size: float = 1.0
    existence: float = 30.0
    counts: float = 1.0
    lattice: float = 10.0
    kl: float = 0.01
    dsm: float = 10.0
    prop: float = 1.0


@dataclass(frozen=True)
class VaeConfig:
    """Decoder sizes on top of a backbone encoder."""

    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    max_atom_count: int = 20
    mlp_hidden: int = 256
    elem_embed_dim: int = 16

    def __post_init__(self):
        if self.max_atom_count <= 0 or self.mlp_hidden <= 0 or self.elem_embed_dim <= 0:
            raise ValueError("max_atom_count, mlp_hidden, elem_embed_dim must be positive")


def type_set_to_vector(type_set: AtomTypeSet) -> np.ndarray:
    """Canonical atom type vector: elements ascending, each repeated its count."""
    out: list[int] = []
    for element, count in type_set.entries:
        out.extend([element] * count)
    return np.asarray(out, dtype=np.int64)


def vector_to_type_set(atom_types) -> AtomTypeSet:
    """Composition of an atom type vector (order-insensitive)."""
    atom_types = np.asarray(atom_types, dtype=np.int64)
    elements, counts = np.unique(atom_types, return_counts=True)
    return AtomTypeSet(tuple(zip(elements.tolist(), counts.tolist())))


# -- parameters ------------------------------------------------------------


def vae_param_specs(cfg: VaeConfig) -> list[tuple[str, tuple[int, ...], str]]:
    b = cfg.backbone
    da, dl = b.latent_a_dim, b.latent_l_dim
    m = cfg.mlp_hidden
    n_cat = cfg.max_atom_count
    specs = encoder_param_specs(b)
    specs += [
        ("vmu_a/w", (da, da), "linear"),
        ("vmu_a/b", (da,), "zeros"),
        ("vlv_a/w", (da, da), "linear"),
        ("vlv_a/b", (da,), "zeros"),
        ("vmu_l/w", (dl, dl), "linear"),
        ("vmu_l/b", (dl,), "zeros"),
        ("vlv_l/w", (dl, dl), "linear"),
        ("vlv_l/b", (dl,), "zeros"),
        ("head_e/w1", (da, m), "linear"),
        ("head_e/b1", (m,), "zeros"),
        ("head_e/w2", (m, b.element_count), "linear"),
        ("head_e/b2", (b.element_count,), "zeros"),
        ("head_k/w1", (da, m), "linear"),
        ("head_k/b1", (m,), "zeros"),
        ("head_k/w2", (m, n_cat), "linear"),
        ("head_k/b2", (n_cat,), "zeros"),
        ("elem_embed", (b.element_count, cfg.elem_embed_dim), "embed"),
        ("head_n/w1", (cfg.elem_embed_dim + da, m), "linear"),
        ("head_n/b1", (m,), "zeros"),
        ("head_n/w2", (m, n_cat), "linear"),
        ("head_n/b2", (n_cat,), "zeros"),
        ("head_L/w1", (dl, m), "linear"),
        ("head_L/b1", (m,), "zeros"),
        ("head_L/w2", (m, 6), "linear"),
        ("head_L/b2", (6,), "zeros"),
        ("prop/w1", (da + dl, m), "linear"),
        ("prop/b1", (m,), "zeros"),
        ("prop/w2", (m, 1), "linear"),
        ("prop/b2", (1,), "zeros"),
    ]
    return specs


def init_vae_params(cfg: VaeConfig, seed: int) -> Parameters:
    return Parameters.build(vae_param_specs(cfg), seed)


def _mlp2(x: Tensor, p: dict[str, Tensor], name: str) -> Tensor:
    """Two linear layers with a ReLU between them."""
    hidden = ad.relu(ad.add(ad.matmul(x, p[f"{name}/w1"]), p[f"{name}/b1"]))
    return ad.add(ad.matmul(hidden, p[f"{name}/w2"]), p[f"{name}/b2"])


def _linear(x: Tensor, p: dict[str, Tensor], name: str) -> Tensor:
    return ad.add(ad.matmul(x, p[f"{name}/w"]), p[f"{name}/b"])


# -- encoding ----------------------------------------------------------------


def _latent_state_t(
    material: Material, p: dict[str, Tensor], cfg: VaeConfig
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    graph = build_multigraph(material, cfg.backbone.cutoff)
    feat_a, feat_l = encode_forward(graph, material.atom_types, p, cfg.backbone)
    return (
        _linear(feat_a, p, "vmu_a"),
        _linear(feat_a, p, "vlv_a"),
        _linear(feat_l, p, "vmu_l"),
        _linear(feat_l, p, "vlv_l"),
    )


def encode_vae(
    material: Material,
    params: Parameters,
    cfg: VaeConfig,
    rng: np.random.Generator,
) -> tuple[LatentState, np.ndarray, np.ndarray]:
    """Posterior parameters plus one reparameterized sample per latent."""
    with ad.no_grad():
        mu_a, lv_a, mu_l, lv_l = _latent_state_t(material, params.leaf_tensors(), cfg)
    state = LatentState(mu_a.value, lv_a.value, mu_l.value, lv_l.value)
    z_a = state.mu_a + np.exp(state.logvar_a / 2.0) * rng.standard_normal(state.mu_a.size)
    z_l = state.mu_l + np.exp(state.logvar_l / 2.0) * rng.standard_normal(state.mu_l.size)
    return state, z_a, z_l


def encode_mean(
    material: Material, params: Parameters, cfg: VaeConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic latents (posterior means), used for reconstruction."""
    state, _, _ = encode_vae(material, params, cfg, np.random.default_rng(0))
    return state.mu_a, state.mu_l


# -- decoding ----------------------------------------------------------------


def decode_head_outputs(
    z_a: np.ndarray, z_l: np.ndarray, params: Parameters, cfg: VaeConfig
) -> dict[str, np.ndarray]:
    """Raw decoder outputs for given latents: existence/k logits and lattice items."""
    with ad.no_grad():
        p = params.leaf_tensors()
        e_logits = _mlp2(Tensor(z_a), p, "head_e")
        k_logits = _mlp2(Tensor(z_a), p, "head_k")
        raw_l = _mlp2(Tensor(z_l), p, "head_L")
        lengths = ad.softplus(ad.take(raw_l, [0, 1, 2]))
        angles = ad.mul(ad.sigmoid(ad.take(raw_l, [3, 4, 5])), math.pi)
    return {
        "e_logits": e_logits.value.copy(),
        "k_logits": k_logits.value.copy(),
        "lattice_items": np.concatenate([lengths.value, angles.value]),
    }


def count_logits(
    element: int, z_a: np.ndarray, params: Parameters, cfg: VaeConfig
) -> np.ndarray:
    """Count-head logits for one chosen element."""
    with ad.no_grad():
        p = params.leaf_tensors()
        embed = ad.take(p["elem_embed"], [element - 1])
        x = ad.concat([ad.reshape(embed, (cfg.elem_embed_dim,)), Tensor(z_a)])
        out = _mlp2(x, p, "head_n")
    return out.value.copy()


def decode_type_set(z_a: np.ndarray, params: Parameters, cfg: VaeConfig) -> AtomTypeSet:
    """Deterministic composition decode.

    k is the argmax of the size head (1-based); the k elements with the
    highest existence probabilities are chosen, ties broken toward the lower
    atomic number; each count is the argmax of the count head (1-based).
    If the total would exceed the atom budget N, the largest count is
    decremented (ties toward the higher atomic number) until it fits.
    """
    out = decode_head_outputs(z_a, np.zeros(cfg.backbone.latent_l_dim), params, cfg)
    k = int(np.argmax(out["k_logits"])) + 1
    p_e = 1.0 / (1.0 + np.exp(-out["e_logits"]))
    order = np.lexsort((np.arange(p_e.size), -p_e))
    chosen = sorted(int(idx) + 1 for idx in order[:k])
    counts = {
        element: int(np.argmax(count_logits(element, z_a, params, cfg))) + 1
        for element in chosen
    }
    budget = cfg.max_atom_count
    while sum(counts.values()) > budget:
        top = max(counts.items(), key=lambda item: (item[1], item[0]))
        if top[1] <= 1:
            break
        counts[top[0]] -= 1
    return AtomTypeSet(tuple(counts.items()))


def decode_lattice(z_l: np.ndarray, params: Parameters, cfg: VaeConfig) -> LatticeParams:
    """Lattice items from the cell latent: softplus lengths, (0, pi) angles.

    Raises UnrealizableCellError when the decoded angles cannot form a cell;
    callers may resample the latent.
    """
    out = decode_head_outputs(np.zeros(cfg.backbone.latent_a_dim), z_l, params, cfg)
    items = out["lattice_items"]
    return LatticeParams(items[:3], items[3:])


def property_predict(
    z_a: np.ndarray, z_l: np.ndarray, params: Parameters, cfg: VaeConfig
) -> float:
    """Density predicted by the property head from the concatenated latents."""
    with ad.no_grad():
        p = params.leaf_tensors()
        out = _mlp2(Tensor(np.concatenate([z_a, z_l])), p, "prop")
    return float(out.value[0])


# -- losses ------------------------------------------------------------------


def _softmax_ce(logits: np.ndarray, target: int) -> float:
    m = float(np.max(logits))
    return float(np.log(np.sum(np.exp(logits - m))) + m - logits[target])


def vae_loss(
    material: Material,
    head_outputs: dict[str, np.ndarray],
    latent: LatentState,
    weights: LossWeights = LossWeights(),
    max_atom_count: int | None = None,
) -> float:
    """Weighted reconstruction + KL objective for one material.

    ``head_outputs`` carries raw logits: ``k_logits`` (N,), ``e_logits``
    (E,), ``n_logits`` (k, N) rows aligned with the material's type-set
    entries, and post-activation ``lattice_items`` (6,).
    """
    type_set = vector_to_type_set(material.atom_types)
    k_logits = np.asarray(head_outputs["k_logits"], dtype=np.float64)
    e_logits = np.asarray(head_outputs["e_logits"], dtype=np.float64)
    n_logits = np.asarray(head_outputs["n_logits"], dtype=np.float64)
    lattice_items = np.asarray(head_outputs["lattice_items"], dtype=np.float64)
    n_cat = k_logits.size
    budget = n_cat if max_atom_count is None else max_atom_count
    if type_set.k > budget or any(c > budget for _, c in type_set.entries):
        raise ValueError("material exceeds the configured atom budget")

    loss = weights.set_size * _softmax_ce(k_logits, type_set.k - 1)

    targets_e = np.zeros(e_logits.size)
    for element, _ in type_set.entries:
        targets_e[element - 1] = 1.0
    bce = np.maximum(e_logits, 0.0) + np.log1p(np.exp(-np.abs(e_logits))) - e_logits * targets_e
    loss += weights.existence * float(np.mean(bce))

    count_terms = [
        _softmax_ce(n_logits[i], count - 1)
        for i, (_, count) in enumerate(type_set.entries)
    ]
    loss += weights.counts * float(np.mean(count_terms))

    params_true = lattice_to_params(material.lattice)
    target_items = np.concatenate([params_true.lengths, params_true.angles])
    loss += weights.lattice * float(np.mean((lattice_items - target_items) ** 2))

    kl = 0.5 * float(
        np.sum(latent.mu_a**2 + np.exp(latent.logvar_a) - 1.0 - latent.logvar_a)
        + np.sum(latent.mu_l**2 + np.exp(latent.logvar_l) - 1.0 - latent.logvar_l)
    )
    loss += weights.kl * kl
    return float(loss)


def _vae_example_loss_t(
    material: Material,
    p: dict[str, Tensor],
    cfg: VaeConfig,
    weights: LossWeights,
    rng: np.random.Generator,
) -> tuple[Tensor, dict[str, float]]:
    """Tape VAE loss (reconstruction + KL + property) for one material."""
    type_set = vector_to_type_set(material.atom_types)
    n_cat = cfg.max_atom_count
    if type_set.k > n_cat or any(c > n_cat for _, c in type_set.entries):
        raise ValueError("material exceeds the configured atom budget")

    mu_a, lv_a, mu_l, lv_l = _latent_state_t(material, p, cfg)
    eps_a = rng.standard_normal(cfg.backbone.latent_a_dim)
    eps_l = rng.standard_normal(cfg.backbone.latent_l_dim)
    z_a = ad.add(mu_a, ad.mul(ad.exp(ad.mul(lv_a, 0.5)), Tensor(eps_a)))
    z_l = ad.add(mu_l, ad.mul(ad.exp(ad.mul(lv_l, 0.5)), Tensor(eps_l)))

    k_term = ad.cross_entropy(_mlp2(z_a, p, "head_k"), type_set.k - 1)

    targets_e = np.zeros(cfg.backbone.element_count)
    for element, _ in type_set.entries:
        targets_e[element - 1] = 1.0
    e_term = ad.binary_cross_entropy_with_logits(_mlp2(z_a, p, "head_e"), targets_e)

    count_terms = []
    for element, count in type_set.entries:
        embed = ad.reshape(ad.take(p["elem_embed"], [element - 1]), (cfg.elem_embed_dim,))
        logits = _mlp2(ad.concat([embed, z_a]), p, "head_n")
        count_terms.append(ad.cross_entropy(logits, count - 1))
    n_term = count_terms[0]
    for term in count_terms[1:]:
        n_term = ad.add(n_term, term)
    n_term = ad.mul(n_term, 1.0 / len(count_terms))

    raw_l = _mlp2(z_l, p, "head_L")
    items = ad.concat(
        [ad.softplus(ad.take(raw_l, [0, 1, 2])), ad.mul(ad.sigmoid(ad.take(raw_l, [3, 4, 5])), math.pi)]
    )
    params_true = lattice_to_params(material.lattice)
    target_items = np.concatenate([params_true.lengths, params_true.angles])
    l_term = ad.tensor_mean(ad.power(ad.sub(items, Tensor(target_items)), 2.0))

    kl_term = ad.add(ad.gaussian_kl(mu_a, lv_a), ad.gaussian_kl(mu_l, lv_l))

    prop_pred = _mlp2(ad.concat([z_a, z_l]), p, "prop")
    prop_term = ad.power(ad.sub(ad.reshape(prop_pred, ()), density(material)), 2.0)

    total = ad.add(
        ad.add(
            ad.add(ad.mul(k_term, weights.set_size), ad.mul(e_term, weights.existence)),
            ad.add(ad.mul(n_term, weights.counts), ad.mul(l_term, weights.lattice)),
        ),
        ad.add(ad.mul(kl_term, weights.kl), ad.mul(prop_term, weights.prop)),
    )
    terms = {
        "set_size": float(k_term.value),
        "existence": float(e_term.value),
        "counts": float(n_term.value),
        "lattice": float(l_term.value),
        "kl": float(kl_term.value),
        "prop": float(prop_term.value),
    }
    return ad.reshape(total, ()), terms


def train_joint(
    dataset: list[Material],
    cfg: VaeConfig,
    schedule: NoiseSchedule,
    edge_std: EdgeStd,
    rng: np.random.Generator,
    weights: LossWeights = LossWeights(),
    epochs: int = 10,
    batch_size: int = 128,
    lr: float = 1e-3,
    clip_norm: float = 10.0,
    mode: str = "distance",
    params: Parameters | None = None,
) -> tuple[Parameters, dict[str, list[float]]]:
    """Single optimizer over the VAE objective plus the weighted denoising loss.

    ``params`` (when given) must be a merged set with ``vae/`` and ``score/``
    namespaces, as produced by :func:`init_joint_params`.  Returns the final
    merged parameters and per-term epoch-mean loss curves (index 0 is the
    pre-training loss).
    """
    if not dataset:
        raise ValueError("dataset must be non-empty")
    if params is None:
        params = init_joint_params(cfg, int(rng.integers(2**31 - 1)))
    optimizer = Adam(params.size, lr=lr, clip_norm=clip_norm)
    curves: dict[str, list[float]] = {key: [] for key in (
        "total", "set_size", "existence", "counts", "lattice", "kl", "prop", "dsm")}

    def batch_loss(batch, leaves_vae, leaves_score, batch_rng):
        totals, sums = [], {key: 0.0 for key in curves if key != "total"}
        for material in batch:
            vae_term, term_values = _vae_example_loss_t(material, leaves_vae, cfg, weights, batch_rng)
            level = int(batch_rng.integers(1, schedule.levels + 1))
            dsm_term = score_matching_example_loss(
                material, level, leaves_score, cfg.backbone, schedule, edge_std, batch_rng, mode
            )
            if dsm_term is not None:
                example = ad.add(vae_term, ad.mul(dsm_term, weights.dsm))
                sums["dsm"] += float(dsm_term.value)
            else:
                example = vae_term
            totals.append(example)
            for key, value in term_values.items():
                sums[key] += value
        total = totals[0]
        for term in totals[1:]:
            total = ad.add(total, term)
        total = ad.mul(total, 1.0 / len(totals))
        means = {key: value / len(batch) for key, value in sums.items()}
        return total, means

    def record(total_value, means):
        curves["total"].append(total_value)
        for key, value in means.items():
            curves[key].append(value)

    with ad.no_grad():
        eval_rng = np.random.default_rng(rng.integers(2**31 - 1))
        first = dataset[: min(len(dataset), batch_size)]
        total, means = batch_loss(first, params.leaf_tensors("vae/"), params.leaf_tensors("score/"), eval_rng)
        record(float(total.value), means)

    for _ in range(epochs):
        order = rng.permutation(len(dataset))
        epoch_totals, epoch_means = [], []
        for start in range(0, len(dataset), batch_size):
            batch = [dataset[i] for i in order[start : start + batch_size]]
            leaves_vae = params.leaf_tensors("vae/")
            leaves_score = params.leaf_tensors("score/")
            loss, means = batch_loss(batch, leaves_vae, leaves_score, rng)
            if not math.isfinite(float(loss.value)):
                raise FloatingPointError(
                    f"training diverged: loss={float(loss.value)} at step {optimizer.step_count}"
                )
            ad.backward(loss)
            grad = params.collect_grad(leaves_vae, "vae/") + params.collect_grad(leaves_score, "score/")
            params = params.replace_flat(optimizer.step(params.flat, grad))
            epoch_totals.append(float(loss.value))
            epoch_means.append(means)
        if epoch_totals:
            record(
                float(np.mean(epoch_totals)),
                {key: float(np.mean([m[key] for m in epoch_means])) for key in epoch_means[0]},
            )
    return params, curves


def init_joint_params(cfg: VaeConfig, seed: int) -> Parameters:
    """Independent VAE and score parameter sets merged under name prefixes."""
    from .backbone import init_score_params

    return Parameters.merge(
        {
            "vae": init_vae_params(cfg, seed),
            "score": init_score_params(cfg.backbone, seed + 1),
        }
    )


# -- latent-space property optimization --------------------------------------


def gradient_optimize(
    z0: np.ndarray,
    value_and_grad,
    steps: int,
    step_size: float,
    maximize: bool = False,
) -> np.ndarray:
    """Plain gradient descent (or ascent) on a latent vector."""
    z = np.asarray(z0, dtype=np.float64).copy()
    sign = 1.0 if maximize else -1.0
    for _ in range(steps):
        _, grad = value_and_grad(z)
        z = z + sign * step_size * grad
    return z


def optimize_property(
    z_a: np.ndarray,
    z_l: np.ndarray,
    params: Parameters,
    cfg: VaeConfig,
    steps: int,
    step_size: float,
    maximize: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient steps on the predicted property w.r.t. the latents."""
    da = cfg.backbone.latent_a_dim

    def value_and_grad(z: np.ndarray):
        leaf = Tensor(z)
        p = params.leaf_tensors()
        out = ad.reshape(_mlp2(leaf, p, "prop"), ())
        ad.backward(out)
        return float(out.value), np.asarray(leaf.grad)

    z = gradient_optimize(np.concatenate([z_a, z_l]), value_and_grad, steps, step_size, maximize)
    return z[:da], z[da:]
