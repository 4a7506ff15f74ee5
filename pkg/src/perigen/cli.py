"""Command-line pipeline: data synthesis, training, sampling, evaluation.

Every subcommand that takes ``--seed`` is bit-reproducible in single-threaded
mode, and every run that resolves a configuration echoes it to
``<output>.config.txt`` next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data_io, evaluation, vae as vae_mod
from .backbone import Parameters, load_parameters, save_parameters
from .config import RunConfig
from .crystal import Material, params_to_lattice, wrap_to_cell
from .diffusion import EdgeStd, estimate_edge_std
from .sampler import generate_material, langevin_generate, model_edge_score_fn
from .vae import train_joint


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        key = key.strip()
        parsed = RunConfig.from_text(f"{key} = {value.strip()}")
        cfg = cfg.replace(**{key: getattr(parsed, key)})
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _echo_config(cfg: RunConfig, out_path) -> None:
    path = Path(str(out_path) + ".config.txt")
    cfg.save(path)


def cmd_synth_data(args) -> int:
    materials = data_io.synth_perovskite_corpus(args.count, args.noise_scale, args.seed)
    ids = [f"synth-{i:05d}" for i in range(len(materials))]
    props = [evaluation.density(m) for m in materials]
    data_io.save_dataset(args.out, materials, ids=ids, props=props)
    print(f"wrote {len(materials)} materials to {args.out}")
    return 0


def cmd_split(args) -> int:
    materials = data_io.load_dataset(args.data)
    train, val, test = data_io.split_dataset(materials, args.seed)
    stem = args.out_prefix
    for name, part in (("train", train), ("val", val), ("test", test)):
        path = f"{stem}.{name}.jsonl"
        data_io.save_dataset(path, part)
        print(f"wrote {len(part)} materials to {path}")
    return 0


def cmd_estimate_noise(args) -> int:
    cfg = _load_config(args)
    materials = data_io.load_dataset(args.data)
    schedule = cfg.noise_schedule()
    edge_std = estimate_edge_std(
        materials, schedule, cfg.cutoff, np.random.default_rng(cfg.seed)
    )
    payload = {
        "sigmas": schedule.sigmas.tolist(),
        "sigma_hats": edge_std.sigma_hats.tolist(),
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
    _echo_config(cfg, args.out)
    print(f"estimated {schedule.levels} edge deviations -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    materials = data_io.load_dataset(args.data)
    schedule = cfg.noise_schedule()
    rng = np.random.default_rng(cfg.seed)
    edge_std = estimate_edge_std(materials, schedule, cfg.cutoff, rng)
    params, curves = train_joint(
        materials,
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
    meta = {
        "config": cfg.as_dict(),
        "sigma_hats": edge_std.sigma_hats.tolist(),
        "trained_epochs": cfg.epochs,
    }
    save_parameters(args.out, params, meta)
    curve_path = str(args.out) + ".losses.csv"
    keys = list(curves.keys())
    rows = [[i] + [curves[k][i] for k in keys] for i in range(len(curves["total"]))]
    data_io.write_csv(curve_path, ["epoch"] + keys, rows)
    _echo_config(cfg, args.out)
    drop = (
        (curves["total"][0] - curves["total"][-1]) / curves["total"][0]
        if curves["total"][0] > 0
        else 0.0
    )
    print(
        f"trained {cfg.epochs} epochs (mode={cfg.score_matching_mode}); "
        f"loss {curves['total'][0]:.4f} -> {curves['total'][-1]:.4f} ({100 * drop:.1f}% drop)"
    )
    print(f"checkpoint -> {args.out}; curves -> {curve_path}")
    return 0


def _load_model(path) -> tuple[Parameters, RunConfig, EdgeStd]:
    params, meta = load_parameters(path)
    cfg = RunConfig(**meta["config"])
    edge_std = EdgeStd(np.asarray(meta["sigma_hats"], dtype=np.float64))
    return params, cfg, edge_std


def cmd_sample(args) -> int:
    params, cfg, edge_std = _load_model(args.model)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    rng = np.random.default_rng(cfg.seed)
    vae_params = params.subset("vae")
    score_params = params.subset("score")
    stats: dict = {}
    materials = []
    for i in range(args.count):
        material = generate_material(
            vae_params,
            score_params,
            cfg.vae_config(),
            cfg.sampler_config(),
            edge_std,
            rng,
            stats=stats,
        )
        materials.append(material)
    data_io.save_dataset(args.out, materials, ids=[f"gen-{i:05d}" for i in range(len(materials))])
    _echo_config(cfg, args.out)
    if args.dump_trajectory:
        _dump_trajectory(args.dump_trajectory, vae_params, score_params, cfg, edge_std)
    empty = stats.get("empty_graph_steps", 0)
    note = f" ({empty} empty-graph steps fell back to zero score)" if empty else ""
    print(f"sampled {len(materials)} materials -> {args.out}{note}")
    return 0


def _dump_trajectory(path, vae_params, score_params, cfg: RunConfig, edge_std: EdgeStd) -> None:
    """Record per-level coordinates of one extra chain as JSON lines."""
    rng = np.random.default_rng(cfg.seed + 1)
    vcfg = cfg.vae_config()
    z_a = rng.standard_normal(vcfg.backbone.latent_a_dim)
    type_set = vae_mod.decode_type_set(z_a, vae_params, vcfg)
    atom_types = vae_mod.type_set_to_vector(type_set)
    z_l = rng.standard_normal(vcfg.backbone.latent_l_dim)
    lattice = params_to_lattice(vae_mod.decode_lattice(z_l, vae_params, vcfg))
    frames: list = []
    langevin_generate(
        atom_types,
        lattice,
        cfg.sampler_config(),
        model_edge_score_fn(score_params, vcfg.backbone, edge_std),
        rng,
        trajectory=frames,
    )
    with open(path, "w", encoding="utf-8") as fh:
        for level, coords in enumerate(frames, start=1):
            fh.write(
                json.dumps({"level": level, "coords": coords.T.tolist()}) + "\n"
            )


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    gen = data_io.load_dataset(args.gen)
    ref = data_io.load_dataset(args.ref)
    report = evaluation.metrics_report(gen, ref, cfg.delta_c, cfg.delta_s, cfg.cutoff)
    mapping = report.as_dict()
    data_io.write_key_values(args.out, mapping)
    data_io.write_csv(
        str(args.out) + ".csv", list(mapping.keys()), [list(mapping.values())]
    )
    _echo_config(cfg, args.out)
    for key, value in mapping.items():
        print(f"{key} = {value:.6g}")
    print("note: coverage uses simplified fingerprints (package-internal scale)")
    return 0


def cmd_reconstruct(args) -> int:
    params, cfg, edge_std = _load_model(args.model)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    materials = data_io.load_dataset(args.data)
    vcfg = cfg.vae_config()
    vae_params = params.subset("vae")
    score_params = params.subset("score")
    rng = np.random.default_rng(cfg.seed)
    pairs = []
    reconstructed = []
    for material in materials:
        mu_a, mu_l = vae_mod.encode_mean(material, vae_params, vcfg)
        type_set = vae_mod.decode_type_set(mu_a, vae_params, vcfg)
        atom_types = vae_mod.type_set_to_vector(type_set)
        lattice = params_to_lattice(vae_mod.decode_lattice(mu_l, vae_params, vcfg))
        if args.coords:
            coords = langevin_generate(
                atom_types,
                lattice,
                cfg.sampler_config(),
                model_edge_score_fn(score_params, vcfg.backbone, edge_std),
                rng,
            )
            recon = wrap_to_cell(Material(atom_types, coords, lattice))
        else:
            n = atom_types.size
            recon = Material(atom_types, lattice @ np.full((3, n), 0.5), lattice)
        reconstructed.append(recon)
        pairs.append((material, recon))
    match_rate, lattice_rmse, distance_rmse = evaluation.reconstruction_metrics(
        pairs, cutoff=cfg.cutoff
    )
    data_io.save_dataset(args.out, reconstructed)
    mapping = {
        "atom_type_match_rate": match_rate,
        "lattice_rmse": lattice_rmse,
        "distance_rmse": distance_rmse if args.coords else "n/a (run with --coords)",
    }
    data_io.write_key_values(str(args.out) + ".report.txt", mapping)
    _echo_config(cfg, args.out)
    for key, value in mapping.items():
        print(f"{key} = {value}")
    return 0


def cmd_optimize(args) -> int:
    params, cfg, edge_std = _load_model(args.model)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    materials = data_io.load_dataset(args.data)
    vcfg = cfg.vae_config()
    vae_params = params.subset("vae")
    score_params = params.subset("score")
    rng = np.random.default_rng(cfg.seed)
    before, after = [], []
    optimized_materials = []
    for material in materials:
        mu_a, mu_l = vae_mod.encode_mean(material, vae_params, vcfg)
        before.append(vae_mod.property_predict(mu_a, mu_l, vae_params, vcfg))
        z_a, z_l = vae_mod.optimize_property(
            mu_a,
            mu_l,
            vae_params,
            vcfg,
            steps=cfg.property_opt_steps,
            step_size=cfg.property_opt_step_size,
            maximize=cfg.property_maximize,
        )
        after.append(vae_mod.property_predict(z_a, z_l, vae_params, vcfg))
        type_set = vae_mod.decode_type_set(z_a, vae_params, vcfg)
        atom_types = vae_mod.type_set_to_vector(type_set)
        try:
            lattice = params_to_lattice(vae_mod.decode_lattice(z_l, vae_params, vcfg))
        except Exception:
            continue
        if args.coords:
            coords = langevin_generate(
                atom_types,
                lattice,
                cfg.sampler_config(),
                model_edge_score_fn(score_params, vcfg.backbone, edge_std),
                rng,
            )
            optimized_materials.append(wrap_to_cell(Material(atom_types, coords, lattice)))
    if optimized_materials:
        data_io.save_dataset(args.out, optimized_materials)
    direction = "maximize" if cfg.property_maximize else "minimize"
    mapping = {
        "direction": direction,
        "mean_predicted_before": float(np.mean(before)),
        "mean_predicted_after": float(np.mean(after)),
        "optimized_materials_written": len(optimized_materials),
    }
    data_io.write_key_values(str(args.out) + ".report.txt", mapping)
    _echo_config(cfg, args.out)
    for key, value in mapping.items():
        print(f"{key} = {value}")
    return 0


def cmd_verify(args) -> int:
    from . import verify as verify_mod

    results = verify_mod.run_all(seed=args.seed, include_sampler_toy=not args.skip_sampler_toy)
    width = max(len(name) for name, _, _ in results)
    failures = 0
    for name, ok, detail in results:
        status = "PASS" if ok else "FAIL"
        failures += not ok
        print(f"{status}  {name:<{width}}  {detail}")
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 1 if failures else 0


def cmd_export_cif(args) -> int:
    materials = data_io.load_dataset(args.data)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, material in enumerate(materials):
        data_io.export_cif(material, out_dir / f"material-{i:05d}.cif")
    print(f"wrote {len(materials)} CIF files to {out_dir}")
    return 0


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one config field (repeatable)",
    )
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perigen",
        description="Symmetry-exact generative pipeline for periodic crystals",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic perovskite corpus")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--noise-scale", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("split", help="deterministic 3:1:1 train/val/test split")
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("estimate-noise", help="estimate per-level edge-distance deviations")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_estimate_noise)

    p = sub.add_parser("train", help="joint VAE + denoising score training")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate materials from a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("-n", "--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-trajectory", help="write per-level coordinates of one chain")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="metric battery: generated vs reference corpus")
    p.add_argument("--gen", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reconstruct", help="encode and decode a dataset through the VAE")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--coords", action=argparse.BooleanOptionalAction, default=True,
                   help="also regenerate coordinates (slower)")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("optimize", help="latent-space property optimization")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--coords", action=argparse.BooleanOptionalAction, default=False,
                   help="decode optimized latents all the way to coordinates")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("verify", help="run the invariance/gradient check battery")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip-sampler-toy", action="store_true",
                   help="skip the slow analytic-sampler stationarity check")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("export-cif", help="write minimal P1 CIF files for a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_export_cif)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
