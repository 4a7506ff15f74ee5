"""Scratch: tune the desk-scale end-to-end run for the acceptance thresholds."""
import sys
import time

import numpy as np

from perigen.config import RunConfig
from perigen.data_io import split_dataset, synth_perovskite_corpus
from perigen.diffusion import estimate_edge_std
from perigen.evaluation import structure_validity
from perigen.sampler import generate_material
from perigen.vae import (
    decode_lattice,
    decode_type_set,
    encode_mean,
    train_joint,
    type_set_to_vector,
)

t_start = time.time()
epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 12
cfg = RunConfig(
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
    epochs=epochs,
    epsilon=1e-4,
    langevin_steps=30,
)

corpus = synth_perovskite_corpus(500, 0.02, seed=7)
train, val, test = split_dataset(corpus, seed=1)
print(f"split {len(train)}/{len(val)}/{len(test)}")

schedule = cfg.noise_schedule()
rng = np.random.default_rng(cfg.seed)
t0 = time.time()
edge_std = estimate_edge_std(train, schedule, cfg.cutoff, rng)
print(f"sigma_hats {np.round(edge_std.sigma_hats, 4)} ({time.time()-t0:.1f}s)")

t0 = time.time()
params, curves = train_joint(
    train, cfg.vae_config(), schedule, edge_std, rng,
    weights=cfg.loss_weights(), epochs=cfg.epochs, batch_size=cfg.batch_size,
    lr=cfg.learning_rate, clip_norm=cfg.grad_clip_norm,
)
train_time = time.time() - t0
print(f"train {train_time:.1f}s; total {curves['total'][0]:.2f} -> {curves['total'][-1]:.2f} "
      f"(drop {(1 - curves['total'][-1]/curves['total'][0])*100:.1f}%)")
for key in ("set_size", "existence", "counts", "lattice", "kl", "prop", "dsm"):
    print(f"  {key:10s} {curves[key][0]:9.4f} -> {curves[key][-1]:9.4f}")

vae_params = params.subset("vae")
score_params = params.subset("score")

# reconstruction metrics (types + lattice only)
t0 = time.time()
matches = 0
sq_len = []
for m in test:
    mu_a, mu_l = encode_mean(m, vae_params, cfg.vae_config())
    ts = decode_type_set(mu_a, vae_params, cfg.vae_config())
    recon_types = type_set_to_vector(ts)
    if recon_types.size == m.n and np.array_equal(np.sort(m.atom_types), recon_types):
        matches += 1
    lp = decode_lattice(mu_l, vae_params, cfg.vae_config())
    from perigen.crystal import lattice_to_params
    true_lp = lattice_to_params(m.lattice)
    sq_len.extend(((lp.lengths - true_lp.lengths) ** 2).tolist())
match_rate = matches / len(test)
len_rmse = float(np.sqrt(np.mean(sq_len)))
print(f"recon ({time.time()-t0:.1f}s): type match {match_rate*100:.0f}%, length RMSE {len_rmse:.4f} A")

# generation
t0 = time.time()
gen_rng = np.random.default_rng(123)
stats = {}
gen = []
for i in range(100):
    gen.append(generate_material(vae_params, score_params, cfg.vae_config(),
                                 cfg.sampler_config(), edge_std, gen_rng, stats=stats))
validity = np.mean([structure_validity(m) for m in gen])
sizes = [m.n for m in gen]
print(f"generate ({time.time()-t0:.1f}s): validity {validity*100:.0f}%, "
      f"n range {min(sizes)}-{max(sizes)}, empty-graph steps {stats.get('empty_graph_steps',0)}")
print(f"TOTAL {time.time()-t_start:.1f}s")
