"""Run configuration: every tunable of the pipeline in one flat record.

Configs serialize as flat ``key = value`` text files.  Loading validates
types and ranges and rejects unknown keys; every pipeline run echoes its
fully resolved config next to the outputs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace, fields

from .backbone import BackboneConfig
from .diffusion import NoiseSchedule
from .sampler import SamplerConfig
from .vae import LossWeights, VaeConfig


@dataclass(frozen=True)
class RunConfig:
    """Pipeline tunables with their default values.

    Training defaults (learning rate, batch size, epochs, noise schedule,
    sampler step size/count, loss weights, coverage thresholds) follow the
    published settings this pipeline reproduces at desk scale; artifact-only
    knobs (cutoff radius, atom budget, element vocabulary, seeds, network
    sizes) have package defaults and are flagged as tunables.
    """

    seed: int = 0
    # network
    layer_count: int = 4
    hidden_size: int = 128
    rbf_count: int = 32
    latent_a_dim: int = 128
    latent_l_dim: int = 128
    mlp_hidden: int = 256
    elem_embed_dim: int = 16
    # graph / vocabulary
    cutoff: float = 6.0
    element_count: int = 100
    max_atom_count: int = 20
    # noise schedule
    sigma_max: float = 10.0
    sigma_min: float = 0.01
    noise_level_count: int = 50
    # training
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 1000
    grad_clip_norm: float = 10.0
    score_matching_mode: str = "distance"
    # loss weights
    weight_set_size: float = 1.0
    weight_existence: float = 30.0
    weight_counts: float = 1.0
    weight_lattice: float = 10.0
    weight_kl: float = 0.01
    weight_dsm: float = 10.0
    weight_property: float = 1.0
    # sampler
    epsilon: float = 1e-4
    langevin_steps: int = 100
    rebuild_graph_every_step: bool = True
    wrap_every_level: bool = True
    # property optimization
    property_opt_steps: int = 5000
    property_opt_step_size: float = 0.01
    property_maximize: bool = True
    # evaluation (coverage thresholds; defaults are the perovskite-set values)
    delta_c: float = 6.0
    delta_s: float = 0.8

    def __post_init__(self):
        positive = (
            "layer_count", "hidden_size", "rbf_count", "latent_a_dim", "latent_l_dim",
            "mlp_hidden", "elem_embed_dim", "cutoff", "element_count", "max_atom_count",
            "sigma_max", "sigma_min", "noise_level_count", "learning_rate", "batch_size",
            "epsilon", "langevin_steps", "delta_c", "delta_s",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"config field {name} must be positive")
        if self.sigma_min >= self.sigma_max:
            raise ValueError("sigma_min must be smaller than sigma_max")
        if self.epochs < 0 or self.property_opt_steps < 0:
            raise ValueError("epochs and property_opt_steps must be non-negative")
        if self.score_matching_mode not in ("distance", "coordinate"):
            raise ValueError(
                f"score_matching_mode must be 'distance' or 'coordinate', got {self.score_matching_mode!r}"
            )

    # -- derived sub-configs ------------------------------------------------

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(
            layer_count=self.layer_count,
            hidden_size=self.hidden_size,
            rbf_count=self.rbf_count,
            cutoff=self.cutoff,
            latent_a_dim=self.latent_a_dim,
            latent_l_dim=self.latent_l_dim,
            noise_level_count=self.noise_level_count,
            element_count=self.element_count,
        )

    def vae_config(self) -> VaeConfig:
        return VaeConfig(
            backbone=self.backbone_config(),
            max_atom_count=self.max_atom_count,
            mlp_hidden=self.mlp_hidden,
            elem_embed_dim=self.elem_embed_dim,
        )

    def noise_schedule(self) -> NoiseSchedule:
        return NoiseSchedule.geometric(self.sigma_max, self.sigma_min, self.noise_level_count)

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(
            epsilon=self.epsilon,
            q=self.langevin_steps,
            schedule=self.noise_schedule(),
            cutoff=self.cutoff,
            rebuild_graph_every_step=self.rebuild_graph_every_step,
            wrap_every_level=self.wrap_every_level,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            set_size=self.weight_set_size,
            existence=self.weight_existence,
            counts=self.weight_counts,
            lattice=self.weight_lattice,
            kl=self.weight_kl,
            dsm=self.weight_dsm,
            prop=self.weight_property,
        )

    def replace(self, **kwargs) -> "RunConfig":
        return replace(self, **kwargs)

    # -- flat key = value serialization --------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        known = {f.name: f.type for f in fields(cls)}
        defaults = cls()
        values: dict = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
            key, _, value = (part.strip() for part in line.partition("="))
            if key not in known:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            current = getattr(defaults, key)
            if isinstance(current, bool):
                if value.lower() not in ("true", "false"):
                    raise ValueError(f"config line {lineno}: {key} must be true/false")
                values[key] = value.lower() == "true"
            elif isinstance(current, int):
                values[key] = int(value)
            elif isinstance(current, float):
                values[key] = float(value)
            else:
                values[key] = value
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def as_dict(self) -> dict:
        return asdict(self)
