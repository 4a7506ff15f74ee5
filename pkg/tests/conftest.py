"""Shared fixtures; the trained desk-scale model is built once per session."""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from perigen.backbone import Parameters
from perigen.config import RunConfig
from perigen.crystal import Material
from perigen.data_io import split_dataset, synth_perovskite_corpus
from perigen.diffusion import EdgeStd, NoiseSchedule, estimate_edge_std
from perigen.vae import train_joint


def desk_config(**overrides) -> RunConfig:
    """Shrunk configuration for the desk-scale end-to-end run.

    Network and schedule sizes are artifact choices tuned for CPU runtime;
    the loss weights and optimizer settings keep their defaults.
    """
    base = dict(
        seed=0,
        layer_count=2,
        hidden_size=32,
        rbf_count=16,
        latent_a_dim=16,
        latent_l_dim=16,
        mlp_hidden=48,
        elem_embed_dim=8,
        cutoff=4.5,
        sigma_max=10.0,
        sigma_min=0.01,
        noise_level_count=12,
        learning_rate=3e-3,
        batch_size=32,
        epochs=30,
        epsilon=1e-4,
        langevin_steps=30,
    )
    base.update(overrides)
    return RunConfig(**base)


@dataclass
class TrainedBundle:
    config: RunConfig
    schedule: NoiseSchedule
    edge_std: EdgeStd
    params: Parameters
    curves: dict
    train: list[Material]
    val: list[Material]
    test: list[Material]
    train_seconds: float


def build_trained_bundle(mode: str = "distance", epochs: int | None = None) -> TrainedBundle:
    cfg = desk_config(score_matching_mode=mode)
    if epochs is not None:
        cfg = cfg.replace(epochs=epochs)
    corpus = synth_perovskite_corpus(500, 0.02, seed=7)
    train, val, test = split_dataset(corpus, seed=1)
    schedule = cfg.noise_schedule()
    rng = np.random.default_rng(cfg.seed)
    t0 = time.time()
    edge_std = estimate_edge_std(train, schedule, cfg.cutoff, rng)
    params, curves = train_joint(
        train,
        cfg.vae_config(),
        schedule,
        edge_std,
        rng,
        weights=cfg.loss_weights(),
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        lr=cfg.learning_rate,
        clip_norm=cfg.grad_clip_norm,
        mode=cfg.score_matching_mode,
    )
    return TrainedBundle(
        config=cfg,
        schedule=schedule,
        edge_std=edge_std,
        params=params,
        curves=curves,
        train=train,
        val=val,
        test=test,
        train_seconds=time.time() - t0,
    )


@pytest.fixture(scope="session")
def trained_bundle() -> TrainedBundle:
    """Desk-scale jointly trained model (distance score matching)."""
    return build_trained_bundle()


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(0)
