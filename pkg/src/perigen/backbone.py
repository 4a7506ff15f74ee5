"""Invariant graph network over periodic multi-graphs.

The network consumes only atom types, edge distances (through a smooth
radial-basis expansion with a polynomial cutoff envelope), graph
connectivity, and a learned noise-level embedding — never raw coordinates —
so its outputs are invariant to rigid motions and periodic shifts by
construction, and permutation-covariant through the edge/node indexing.

Two roles share the same trunk:

- ``edge_scores``: one scalar per directed edge, exactly symmetric under
  edge reversal (the two directed-edge features are averaged before the
  output head).  The scalar approximates the sigma-hat-scaled denoising
  distance score; the sampler divides by sigma-hat to obtain a score.
- ``encode``: sum-pooled node embeddings mapped through two-layer heads,
  producing the latent features used by the VAE.

Parameters live in a single flat float64 vector with a named-segment index,
so checkpointing and finite-difference checks are straightforward.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import MultiGraph

CHECKPOINT_FORMAT = "perigen-params"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class BackboneConfig:
    """Sizes of the invariant network; all fields must be positive."""

    layer_count: int = 4
    hidden_size: int = 128
    rbf_count: int = 32
    cutoff: float = 6.0
    latent_a_dim: int = 128
    latent_l_dim: int = 128
    noise_level_count: int = 50
    element_count: int = 100

    def __post_init__(self):
        for name in (
            "layer_count",
            "hidden_size",
            "rbf_count",
            "cutoff",
            "latent_a_dim",
            "latent_l_dim",
            "noise_level_count",
            "element_count",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class EdgeScores:
    """Per-edge scalars aligned index-for-index with MultiGraph edges."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("edge scores must be a 1D vector")
        if not np.all(np.isfinite(values)):
            raise ValueError("edge scores must be finite")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


class Parameters:
    """Flat float64 parameter vector with a named-segment index."""

    def __init__(self, flat: np.ndarray, index: dict[str, tuple[int, tuple[int, ...]]]):
        flat = np.asarray(flat, dtype=np.float64)
        total = sum(int(np.prod(shape)) for _, shape in index.values())
        if flat.size != total:
            raise ValueError(f"flat vector has {flat.size} entries, index covers {total}")
        if not np.all(np.isfinite(flat)):
            raise ValueError("parameters must be finite")
        self.flat = flat.copy()
        self.index = dict(index)

    @property
    def size(self) -> int:
        return self.flat.size

    def view(self, name: str) -> np.ndarray:
        offset, shape = self.index[name]
        return self.flat[offset : offset + int(np.prod(shape))].reshape(shape)

    def copy(self) -> "Parameters":
        return Parameters(self.flat, self.index)

    def replace_flat(self, flat: np.ndarray) -> "Parameters":
        return Parameters(flat, self.index)

    def leaf_tensors(self, prefix: str = "") -> dict[str, Tensor]:
        """Fresh leaf Tensors per segment, names stripped of ``prefix``."""
        out = {}
        for name in self.index:
            if name.startswith(prefix):
                out[name[len(prefix) :]] = Tensor(self.view(name).copy())
        return out

    def collect_grad(self, leaves: dict[str, Tensor], prefix: str = "") -> np.ndarray:
        """Assemble leaf gradients back into a flat vector (zeros where unused)."""
        grad = np.zeros_like(self.flat)
        for name, (offset, shape) in self.index.items():
            if not name.startswith(prefix):
                continue
            leaf = leaves.get(name[len(prefix) :])
            if leaf is None or leaf.grad is None:
                continue
            grad[offset : offset + int(np.prod(shape))] = np.asarray(leaf.grad).ravel()
        return grad

    @classmethod
    def build(cls, specs: list[tuple[str, tuple[int, ...], str]], seed: int) -> "Parameters":
        """Initialize from (name, shape, scheme) specs.

        Schemes: ``linear`` is uniform(-1, 1) / sqrt(fan_in) with fan_in the
        first dimension; ``embed`` scales by the embedding width instead;
        ``zeros`` for biases and output heads.
        """
        rng = np.random.default_rng(seed)
        chunks, index, offset = [], {}, 0
        for name, shape, scheme in specs:
            count = int(np.prod(shape))
            if scheme == "zeros":
                data = np.zeros(count)
            elif scheme == "linear":
                data = rng.uniform(-1.0, 1.0, count) / np.sqrt(shape[0])
            elif scheme == "embed":
                data = rng.uniform(-1.0, 1.0, count) / np.sqrt(shape[-1])
            else:
                raise ValueError(f"unknown init scheme {scheme!r}")
            chunks.append(data)
            index[name] = (offset, tuple(shape))
            offset += count
        return cls(np.concatenate(chunks), index)

    @staticmethod
    def merge(parts: dict[str, "Parameters"]) -> "Parameters":
        """Concatenate parameter sets under name prefixes like ``score/``."""
        chunks, index, offset = [], {}, 0
        for prefix, params in parts.items():
            for name, (off, shape) in params.index.items():
                count = int(np.prod(shape))
                index[f"{prefix}/{name}"] = (offset, shape)
                chunks.append(params.flat[off : off + count])
                offset += count
        return Parameters(np.concatenate(chunks), index)

    def subset(self, prefix: str) -> "Parameters":
        """Extract the segments under ``prefix/`` as a standalone set."""
        chunks, index, offset = [], {}, 0
        token = prefix.rstrip("/") + "/"
        for name, (off, shape) in self.index.items():
            if name.startswith(token):
                count = int(np.prod(shape))
                index[name[len(token) :]] = (offset, shape)
                chunks.append(self.flat[off : off + count])
                offset += count
        if not index:
            raise KeyError(f"no segments under prefix {prefix!r}")
        return Parameters(np.concatenate(chunks), index)


# -- parameter layouts ---------------------------------------------------


def _trunk_specs(cfg: BackboneConfig) -> list[tuple[str, tuple[int, ...], str]]:
    h = cfg.hidden_size
    specs: list[tuple[str, tuple[int, ...], str]] = [
        ("atom_embed", (cfg.element_count, h), "embed"),
        ("rbf_w", (cfg.rbf_count, h), "linear"),
        ("rbf_b", (h,), "zeros"),
    ]
    for layer in range(cfg.layer_count):
        for w in ("w_src", "w_dst", "w_edge", "w_self", "w_agg"):
            specs.append((f"layer{layer}/{w}", (h, h), "linear"))
        specs.append((f"layer{layer}/b_msg", (h,), "zeros"))
        specs.append((f"layer{layer}/b_upd", (h,), "zeros"))
    return specs


def score_param_specs(cfg: BackboneConfig) -> list[tuple[str, tuple[int, ...], str]]:
    h = cfg.hidden_size
    return _trunk_specs(cfg) + [
        ("level_embed", (cfg.noise_level_count, h), "embed"),
        ("out/w_src", (h, h), "linear"),
        ("out/w_dst", (h, h), "linear"),
        ("out/w_edge", (h, h), "linear"),
        ("out/b", (h,), "zeros"),
        ("head/w1", (h, h), "linear"),
        ("head/b1", (h,), "zeros"),
        ("head/w2", (h, 1), "zeros"),
        ("head/b2", (1,), "zeros"),
    ]


def encoder_param_specs(cfg: BackboneConfig) -> list[tuple[str, tuple[int, ...], str]]:
    h = cfg.hidden_size
    return _trunk_specs(cfg) + [
        ("enc_a/w1", (h, h), "linear"),
        ("enc_a/b1", (h,), "zeros"),
        ("enc_a/w2", (h, cfg.latent_a_dim), "linear"),
        ("enc_a/b2", (cfg.latent_a_dim,), "zeros"),
        ("enc_l/w1", (h, h), "linear"),
        ("enc_l/b1", (h,), "zeros"),
        ("enc_l/w2", (h, cfg.latent_l_dim), "linear"),
        ("enc_l/b2", (cfg.latent_l_dim,), "zeros"),
    ]


def init_score_params(cfg: BackboneConfig, seed: int) -> Parameters:
    return Parameters.build(score_param_specs(cfg), seed)


def init_encoder_params(cfg: BackboneConfig, seed: int) -> Parameters:
    return Parameters.build(encoder_param_specs(cfg), seed)


# -- radial features -----------------------------------------------------


def cutoff_envelope(d: np.ndarray, cutoff: float) -> np.ndarray:
    """Polynomial envelope: 1 at d=0, value/1st/2nd derivative all 0 at d=cutoff."""
    x = np.asarray(d, dtype=np.float64) / cutoff
    env = 1.0 - 10.0 * x**3 + 15.0 * x**4 - 6.0 * x**5
    return np.where(x < 1.0, env, 0.0)


def radial_basis(d: np.ndarray, cfg: BackboneConfig) -> np.ndarray:
    """Gaussian radial basis on [0, cutoff], multiplied by the envelope."""
    d = np.asarray(d, dtype=np.float64)
    centers = np.linspace(0.0, cfg.cutoff, cfg.rbf_count)
    width = cfg.cutoff / max(cfg.rbf_count - 1, 1)
    feats = np.exp(-(((d[:, None] - centers[None, :]) / width) ** 2))
    return feats * cutoff_envelope(d, cfg.cutoff)[:, None]


# -- forward passes (tape) -----------------------------------------------


def _check_graph_inputs(graph: MultiGraph, atom_types: np.ndarray, cfg: BackboneConfig):
    atom_types = np.asarray(atom_types, dtype=np.int64)
    if atom_types.size != graph.n:
        raise ValueError(f"atom list has {atom_types.size} entries, graph has {graph.n} nodes")
    if np.any(atom_types < 1) or np.any(atom_types > cfg.element_count):
        raise ValueError(f"atom types must lie in 1..{cfg.element_count}")
    return atom_types


def trunk_forward(
    graph: MultiGraph,
    atom_types: np.ndarray,
    p: dict[str, Tensor],
    cfg: BackboneConfig,
    level: int | None,
) -> tuple[Tensor, Tensor, np.ndarray]:
    """Shared message-passing trunk.

    Returns (node embeddings (n, H), edge features (E, H), envelope (E,)).
    ``level`` indexes the noise-level embedding (1-based) and must be None
    for parameter sets without one.
    """
    atom_types = _check_graph_inputs(graph, atom_types, cfg)
    env = cutoff_envelope(graph.dist, cfg.cutoff)
    rbf = Tensor(radial_basis(graph.dist, cfg))
    env_col = Tensor(env[:, None])

    e = ad.silu(ad.add(ad.matmul(rbf, p["rbf_w"]), p["rbf_b"]))
    if level is not None:
        if not 1 <= level <= cfg.noise_level_count:
            raise ValueError(f"noise level {level} outside 1..{cfg.noise_level_count}")
        e = ad.add(e, ad.take(p["level_embed"], [level - 1]))
    h = ad.take(p["atom_embed"], atom_types - 1)

    for layer in range(cfg.layer_count):
        pre = ad.add(
            ad.add(
                ad.matmul(ad.take(h, graph.src), p[f"layer{layer}/w_src"]),
                ad.matmul(ad.take(h, graph.dst), p[f"layer{layer}/w_dst"]),
            ),
            ad.add(ad.matmul(e, p[f"layer{layer}/w_edge"]), p[f"layer{layer}/b_msg"]),
        )
        msg = ad.mul(ad.silu(pre), env_col)
        agg = ad.segment_sum(msg, graph.src, graph.n)
        h = ad.silu(
            ad.add(
                ad.add(
                    ad.matmul(h, p[f"layer{layer}/w_self"]),
                    ad.matmul(agg, p[f"layer{layer}/w_agg"]),
                ),
                p[f"layer{layer}/b_upd"],
            )
        )
    return h, e, env


def edge_scores_forward(
    graph: MultiGraph,
    atom_types: np.ndarray,
    p: dict[str, Tensor],
    cfg: BackboneConfig,
    level: int,
) -> Tensor:
    """Per-edge scalar outputs as a Tensor of shape (E,)."""
    h, e, env = trunk_forward(graph, atom_types, p, cfg, level)
    f = ad.silu(
        ad.add(
            ad.add(
                ad.matmul(ad.take(h, graph.src), p["out/w_src"]),
                ad.matmul(ad.take(h, graph.dst), p["out/w_dst"]),
            ),
            ad.add(ad.matmul(e, p["out/w_edge"]), p["out/b"]),
        )
    )
    # exact reversal symmetry: average each directed edge with its partner,
    # then copy every edge's output from the lower-indexed edge of its pair
    # (identical feature rows can still round differently by row position)
    f_sym = ad.mul(ad.add(f, ad.take(f, graph.reverse_index)), 0.5)
    hid = ad.silu(ad.add(ad.matmul(f_sym, p["head/w1"]), p["head/b1"]))
    raw = ad.add(ad.matmul(hid, p["head/w2"]), p["head/b2"])
    out = ad.mul(ad.reshape(raw, (graph.edge_count,)), Tensor(env))
    return ad.take(out, graph.canon_index)


def encode_forward(
    graph: MultiGraph,
    atom_types: np.ndarray,
    p: dict[str, Tensor],
    cfg: BackboneConfig,
) -> tuple[Tensor, Tensor]:
    """Pooled invariant features (z_a, z_l) as Tensors."""
    h, _, _ = trunk_forward(graph, atom_types, p, cfg, None)
    pooled = ad.tensor_sum(h, axis=0)
    z_a = ad.add(
        ad.matmul(
            ad.silu(ad.add(ad.matmul(pooled, p["enc_a/w1"]), p["enc_a/b1"])),
            p["enc_a/w2"],
        ),
        p["enc_a/b2"],
    )
    z_l = ad.add(
        ad.matmul(
            ad.silu(ad.add(ad.matmul(pooled, p["enc_l/w1"]), p["enc_l/b1"])),
            p["enc_l/w2"],
        ),
        p["enc_l/b2"],
    )
    return z_a, z_l


# -- public numeric API ---------------------------------------------------


def edge_scores(
    graph: MultiGraph,
    atom_types: np.ndarray,
    params: Parameters,
    level: int,
    cfg: BackboneConfig,
) -> EdgeScores:
    """Evaluate the score network; one scalar per edge of ``graph``."""
    with ad.no_grad():
        out = edge_scores_forward(graph, atom_types, params.leaf_tensors(), cfg, level)
    return EdgeScores(out.value)


def encode(
    graph: MultiGraph,
    atom_types: np.ndarray,
    params: Parameters,
    cfg: BackboneConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Invariant latent features (z_a, z_l) of a material's multi-graph."""
    with ad.no_grad():
        z_a, z_l = encode_forward(graph, atom_types, params.leaf_tensors(), cfg)
    return z_a.value.copy(), z_l.value.copy()


def gradient(
    loss_fn: Callable[[dict[str, Tensor]], Tensor],
    params: Parameters,
    prefix: str = "",
) -> tuple[float, np.ndarray]:
    """Exact reverse-mode gradient of ``loss_fn(leaves)`` w.r.t. the flat vector.

    ``loss_fn`` receives fresh leaf Tensors (one per parameter segment) and
    must return a scalar Tensor.  Returns (loss value, flat gradient).
    """
    leaves = params.leaf_tensors(prefix)
    loss = loss_fn(leaves)
    ad.backward(loss)
    return float(loss.value), params.collect_grad(leaves, prefix)


# -- checkpoints -----------------------------------------------------------


def save_parameters(path, params: Parameters, meta: dict | None = None) -> None:
    """Write a checkpoint: one JSON header line, then raw little-endian float64.

    The header carries the format tag, version, dtype, entry count, segment
    table (name/offset/shape), and a caller-supplied ``meta`` dict (config
    echo, noise schedule, ...).  Round-trips bit-exactly.
    """
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "dtype": "<f8",
        "count": int(params.size),
        "segments": [
            {"name": name, "offset": int(off), "shape": list(shape)}
            for name, (off, shape) in params.index.items()
        ],
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(params.flat, dtype="<f8").tobytes())


def load_parameters(path) -> tuple[Parameters, dict]:
    """Read a checkpoint written by :func:`save_parameters`."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    header = json.loads(header_line.decode("utf-8"))
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} checkpoint: {path}")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    flat = np.frombuffer(blob, dtype="<f8")
    if flat.size != header["count"]:
        raise ValueError(f"checkpoint payload has {flat.size} entries, header says {header['count']}")
    index = {
        seg["name"]: (int(seg["offset"]), tuple(int(x) for x in seg["shape"]))
        for seg in header["segments"]
    }
    return Parameters(flat, index), header.get("meta", {})
