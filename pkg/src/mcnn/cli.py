"""Command-line workflow driver.

Subcommands: synth, fit-mapping, train, validate, eval, ablate.  Every
command is deterministic for a fixed seed and inputs; lines starting with
"#" in report files are non-normative (timing and environment notes) and
are the only lines allowed to differ between identical runs.  Outputs are
written to a temporary file and renamed into place on success.

Exit codes: 0 success, 2 argument error, 3 data/format error, 4 numeric
non-convergence.
"""

from __future__ import annotations

import argparse
import colorsys
import json
import os
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import data as data_mod
from . import mapping as mapping_mod
from . import metrics as metrics_mod
from . import model as model_mod
from .data import TEST, TRAIN, HsiCube, LabeledPatchSet
from .linalg import ConvergenceError
from .model import McnnConfig

SPLIT_FRACTIONS = (0.2, 0.1, 0.7)
_SALT_SPLIT = 101
_SALT_FIT = 102
PRESETS = ("indian_pines", "pavia_university", "salinas")


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def _atomic_write_text(path: Path, text: str) -> None:
    _atomic_write_bytes(path, text.encode())


def _child_seed(seed: int, salt: int) -> int:
    return int(np.random.SeedSequence((int(seed), salt)).generate_state(1)[0])


def _parse_ints(text: str, n: Optional[int] = None) -> tuple[int, ...]:
    parts = tuple(int(p) for p in text.split(","))
    if n is not None and len(parts) != n:
        raise ValueError(f"expected {n} comma-separated integers, got {text!r}")
    return parts


def _load_descriptor(path: str) -> tuple[HsiCube, Optional[list[str]], dict]:
    """Dataset descriptor: JSON naming the cube path, class names, and
    optional config overrides.  A bare .hst path is accepted directly."""
    p = Path(path)
    if not p.exists():
        raise data_mod.DataError(f"dataset file not found: {path}")
    if p.suffix == ".hst":
        cube = data_mod.load_cube(p)
        return cube, cube.class_names, {}
    doc = json.loads(p.read_text())
    cube_path = Path(doc["cube"])
    if not cube_path.is_absolute():
        cube_path = p.parent / cube_path
    if not cube_path.exists():
        raise data_mod.DataError(f"cube file not found: {cube_path}")
    cube = data_mod.load_cube(cube_path)
    names = doc.get("class_names")
    if names is not None:
        cube.class_names = list(names)
    return cube, cube.class_names, doc.get("config", {})


def load_preset(name: str) -> dict:
    """Shipped per-dataset default config (JSON) by preset name."""
    ref = resources.files("mcnn").joinpath("configs", f"{name}.json")
    return json.loads(ref.read_text())


def default_config(
    patch_size: int, bands: int, class_count: int, ranks, channels: int = 64
) -> McnnConfig:
    """Shape-consistent two-conv/two-pool chain for arbitrary input dims.

    Spatial convolutions use "same" padding so the chain closes for any
    spatial rank >= 3; the spectral axis is consumed by valid convolution
    and pooling sized from the spectral rank.
    """
    r1, r2, r3 = (int(r) for r in ranks)
    ks = 5 if min(r1, r2) >= 5 else 3
    if r3 >= 25:
        kz1, sz1 = 10, 5
    elif r3 >= 10:
        kz1, sz1 = 5, 2
    else:
        kz1 = min(3, r3)
        sz1 = 2 if r3 - kz1 >= 2 else 1
    z1 = (r3 - kz1) // sz1 + 1
    w1z = min(5, z1)
    p1sz = 2 if z1 >= 2 else 1
    z2 = (z1 - w1z) // p1sz + 1
    ws2 = min(3, min(r1, r2))
    return McnnConfig(
        patch_size=patch_size,
        bands=bands,
        ranks=(r1, r2, r3),
        class_count=class_count,
        conv_specs=[
            model_mod.ConvSpec(kernel=(ks, ks, kz1), stride=(1, 1, sz1), channels=channels),
            model_mod.ConvSpec(kernel=(ks, ks, z2), stride=(1, 1, 1), channels=channels),
        ],
        pool_specs=[
            model_mod.PoolSpec(window=(3, 3, w1z), stride=(1, 1, p1sz), padding="same"),
            model_mod.PoolSpec(window=(ws2, ws2, 1), stride=(1, 1, 1), padding="valid"),
        ],
        dense_widths=[128],
    )


def _resolve_config(args, cube: HsiCube, overrides: dict) -> McnnConfig:
    """Merge config sources: preset/--config file, descriptor overrides,
    then explicit CLI flags (strongest)."""
    base: dict = {}
    config_arg = getattr(args, "config", None)
    if config_arg:
        if config_arg in PRESETS:
            base = load_preset(config_arg)
        else:
            base = json.loads(Path(config_arg).read_text())
    base.update(overrides)

    cli_patch = getattr(args, "patch_size", None)
    patch_size = int(cli_patch if cli_patch is not None else base.get("patch_size", 7))
    ranks = base.get("ranks")
    if getattr(args, "ranks", None) is not None:
        ranks = _parse_ints(args.ranks, 3)
    if ranks is None:
        ranks = (
            min(7, patch_size),
            min(7, patch_size),
            min(40, cube.bands),
        )
    class_count = cube.class_count
    if cube.class_names:
        class_count = max(class_count, len(cube.class_names))
    if class_count < 2:
        raise data_mod.DataError("cube has fewer than 2 labeled classes")

    if "conv_specs" in base:
        base = dict(base)
        base["patch_size"] = patch_size
        base["bands"] = cube.bands
        base["ranks"] = list(ranks)
        base["class_count"] = class_count
        config = model_mod.config_from_dict(base)
    else:
        config = default_config(
            patch_size, cube.bands, class_count, ranks,
            channels=int(base.get("channels", 64)),
        )
        config.batch_size = int(base.get("batch_size", config.batch_size))
        config.learning_rate = float(base.get("learning_rate", config.learning_rate))
        config.epochs = int(base.get("epochs", config.epochs))

    if getattr(args, "batch", None) is not None:
        config.batch_size = args.batch
    if getattr(args, "lr", None) is not None:
        config.learning_rate = args.lr
    if getattr(args, "epochs", None) is not None:
        config.epochs = args.epochs
    config.seed = int(getattr(args, "seed", 0) or 0)
    # Round-trip re-validates everything (shapes and scalar ranges) after
    # the flag overrides, before any compute.
    return model_mod.config_from_dict(model_mod.config_to_dict(config))


def _prepare_patches(
    cube: HsiCube, config: McnnConfig, seed: int, norm_mode: str = "minmax"
) -> tuple[LabeledPatchSet, data_mod.NormStats]:
    """Split on pixel coordinates, normalize on training pixels only,
    then extract the tagged patch set from the normalized cube.

    Global min-max is the default: it preserves the spectral structure of
    the averaged training patch that the mapping fit relies on, while
    per-band standardization is available for experiments.
    """
    base = data_mod.extract_patches(cube, config.patch_size, mirror_border=True)
    tags, notes = data_mod.split_labels(
        base.labels, SPLIT_FRACTIONS, _child_seed(seed, _SALT_SPLIT), stratified=True
    )
    mask = np.zeros((cube.height, cube.width), dtype=bool)
    train_centers = base.centers[tags == TRAIN]
    mask[train_centers[:, 0], train_centers[:, 1]] = True
    normed, stats = data_mod.normalize(cube, norm_mode, pixel_mask=mask)
    out = data_mod.extract_patches(normed, config.patch_size, mirror_border=True)
    out.split = tags
    out.seed = int(seed)
    out.split_warnings = notes
    return out, stats


def _fit_mapping(patch_set: LabeledPatchSet, config: McnnConfig, seed: int):
    train_patches = patch_set.subset_patches(TRAIN)
    return mapping_mod.fit(
        list(train_patches), config.ranks, seed=_child_seed(seed, _SALT_FIT)
    )


# --- subcommand implementations -----------------------------------------


def cmd_synth(args) -> int:
    size = _parse_ints(args.size, 2)
    spec = data_mod.SynthSpec(
        classes=args.classes,
        height=size[0],
        width=size[1],
        bands=args.bands,
        blob_size=args.blob_size,
        signature_distance=args.signature_distance,
        signature_alignment=args.alignment,
        baseline_scale=args.baseline,
        noise_sigma=args.noise,
    )
    cube = data_mod.synth_cube(spec, seed=args.seed)
    out = Path(args.out)
    tmp = out.with_name(out.name + ".tmp")
    data_mod.save_cube(cube, tmp)
    os.replace(tmp, out)
    print(f"wrote {out} ({cube.height}x{cube.width}x{cube.bands}, "
          f"{spec.classes} classes)")
    return 0


def cmd_fit_mapping(args) -> int:
    cube, _, overrides = _load_descriptor(args.dataset)
    config = _resolve_config(args, cube, overrides)
    patch_set = data_mod.extract_patches(cube, config.patch_size, mirror_border=True)
    data_mod.split(
        patch_set, SPLIT_FRACTIONS, _child_seed(args.seed, _SALT_SPLIT), stratified=True
    )
    stack = mapping_mod.fit(
        list(patch_set.subset_patches(TRAIN)),
        config.ranks,
        seed=_child_seed(args.seed, _SALT_FIT),
    )
    if not stack.converged:
        raise ConvergenceError(
            f"mapping fit did not converge in {stack.iterations_used} iterations "
            f"(final core delta {stack.final_core_delta:.6g})",
            stack.iterations_used,
        )
    out = Path(args.out)
    _atomic_write_bytes(out, data_mod.mapping_to_bytes(stack))
    xbar = mapping_mod.average_patch(list(patch_set.subset_patches(TRAIN)))
    energy = mapping_mod.energy_retained(stack, xbar)
    print(f"iterations_used: {stack.iterations_used}")
    print(f"final_core_delta: {stack.final_core_delta:.8f}")
    print(f"energy_retained: {energy:.8f}")
    print(f"wrote {out}")
    return 0


def _train_once(
    cube: HsiCube,
    config: McnnConfig,
    seed: int,
    norm_mode: str = "minmax",
    eval_every: int = 1,
):
    config.seed = int(seed)
    patch_set, stats = _prepare_patches(cube, config, seed, norm_mode)
    stack = _fit_mapping(patch_set, config, seed)
    if not stack.converged:
        raise ConvergenceError(
            f"mapping fit did not converge ({stack.iterations_used} iterations)",
            stack.iterations_used,
        )
    net = model_mod.build(config, stack, seed=seed)
    log = model_mod.train_epochs(
        net, patch_set, model_mod.TrainSettings(eval_every=eval_every)
    )
    return net, log, patch_set, stats


def cmd_train(args) -> int:
    cube, class_names, overrides = _load_descriptor(args.dataset)
    config = _resolve_config(args, cube, overrides)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    repeats = args.repeats
    final_oas = []
    for i in range(repeats):
        seed = args.seed + i
        net, log, patch_set, stats = _train_once(cube, config, seed, args.norm)
        extra = {
            "split_seed": _child_seed(seed, _SALT_SPLIT),
            "split_fractions": list(SPLIT_FRACTIONS),
            "stratified": True,
            "mirror_border": True,
            "norm_stats": stats.to_dict(),
            "class_names": class_names,
            "run_seed": seed,
        }
        suffix = f"_r{i}" if repeats > 1 else ""
        ckpt = out_dir / f"checkpoint{suffix}.mcnn"
        tmp = ckpt.with_name(ckpt.name + ".tmp")
        model_mod.save_checkpoint(net, tmp, extra=extra)
        os.replace(tmp, ckpt)
        _atomic_write_text(out_dir / f"train_log{suffix}.txt", log.to_text())
        final_oas.append(log.epochs[-1].val_oa)
        print(f"run {i}: final val OA {final_oas[-1]:.4f} -> {ckpt}")
    if repeats > 1:
        mean = float(np.mean(final_oas))
        std = float(np.std(final_oas))
        summary = (
            "runs\tmean_val_oa\tstd_val_oa\n"
            f"{repeats}\t{mean:.6f}\t{std:.6f}\n"
        )
        _atomic_write_text(out_dir / "summary.txt", summary)
        print(f"summary: val OA {100 * mean:.2f} +/- {100 * std:.2f} (%)")
    return 0


def _best_epoch(log: model_mod.TrainingLog, step: int = 10):
    """Best validation OA among the epochs where validation ran."""
    candidates = [e for e in log.epochs if not np.isnan(e.val_oa)]
    if not candidates:
        raise ValueError("log has no validation entries")
    best = max(candidates, key=lambda e: e.val_oa)
    return best.epoch, best.val_oa


def cmd_validate(args) -> int:
    cube, _, overrides = _load_descriptor(args.dataset)
    config = _resolve_config(args, cube, overrides)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    if args.grid == "hyper":
        batches = _parse_ints(args.batches)
        lrs = tuple(float(x) for x in args.lrs.split(","))
        cells = [(b, lr) for b in batches for lr in lrs]
        header = "batch\tlr\tbest_epoch\tbest_val_oa"
        for b, lr in cells:
            cell_cfg = model_mod.config_from_dict(model_mod.config_to_dict(config))
            cell_cfg.batch_size = int(b)
            cell_cfg.learning_rate = float(lr)
            cell_cfg = model_mod.config_from_dict(model_mod.config_to_dict(cell_cfg))
            net, log, _, _ = _train_once(
                cube, cell_cfg, args.seed, args.norm, eval_every=10
            )
            epoch, score = _best_epoch(log)
            rows.append(((b, lr), f"{b}\t{lr}\t{epoch}\t{score:.6f}", score))
    else:
        rank_cells = [
            _parse_ints(chunk, 3) for chunk in args.ranks_grid.split(";") if chunk
        ]
        header = "ranks\tbest_epoch\tbest_val_oa"
        for ranks in rank_cells:
            cell_cfg = default_config(
                config.patch_size, cube.bands, config.class_count, ranks,
                channels=config.conv_specs[0].channels,
            )
            cell_cfg.batch_size = config.batch_size
            cell_cfg.learning_rate = config.learning_rate
            cell_cfg.epochs = config.epochs
            net, log, _, _ = _train_once(
                cube, cell_cfg, args.seed, args.norm, eval_every=10
            )
            epoch, score = _best_epoch(log)
            rows.append(
                (ranks, f"{ranks[0]},{ranks[1]},{ranks[2]}\t{epoch}\t{score:.6f}", score)
            )
    best_cell = max(rows, key=lambda r: r[2])
    lines = [header]
    for cell, text, score in rows:
        marker = "\t*best*" if cell == best_cell[0] else ""
        lines.append(text + marker)
    report = "\n".join(lines) + "\n"
    _atomic_write_text(out_dir / "grid_report.txt", report)
    print(report, end="")
    return 0


def _palette(class_count: int) -> list[int]:
    # Index 0 (unlabeled) is black; classes get evenly spaced hues.
    flat = [0, 0, 0]
    for i in range(class_count):
        r, g, b = colorsys.hsv_to_rgb(i / max(class_count, 1), 0.85, 0.95)
        flat += [int(255 * r), int(255 * g), int(255 * b)]
    return flat


def _write_label_map(path: Path, cube: HsiCube, centers, preds, class_count: int):
    from PIL import Image

    grid = np.zeros((cube.height, cube.width), dtype=np.uint8)
    grid[centers[:, 0], centers[:, 1]] = preds + 1
    img = Image.fromarray(grid, mode="P")
    img.putpalette(_palette(class_count))
    tmp = path.with_name(path.name + ".tmp")
    img.save(tmp, format="PNG")
    os.replace(tmp, path)


def cmd_eval(args) -> int:
    net, extra = model_mod.load_checkpoint(args.checkpoint)
    cube, class_names, _ = _load_descriptor(args.dataset)
    if cube.bands != net.config.bands:
        raise data_mod.DataError(
            f"cube has {cube.bands} bands but checkpoint expects {net.config.bands}"
        )
    stats = data_mod.NormStats.from_dict(extra["norm_stats"])
    normed = data_mod.apply_norm(cube, stats)
    patch_set = data_mod.extract_patches(
        normed, net.config.patch_size, mirror_border=extra.get("mirror_border", True)
    )
    tags, _ = data_mod.split_labels(
        patch_set.labels,
        tuple(extra["split_fractions"]),
        extra["split_seed"],
        stratified=extra.get("stratified", True),
    )
    patch_set.split = tags
    names = extra.get("class_names") or class_names
    test_idx = patch_set.indices(TEST)
    preds = model_mod.predict(net, patch_set.patches[test_idx])
    cm = metrics_mod.confusion(
        patch_set.labels[test_idx], preds, net.config.class_count
    )
    report = metrics_mod.format_report(cm, names)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(out_dir / "report.txt", report)
    print(report, end="")
    if args.map:
        all_preds = model_mod.predict(net, patch_set.patches)
        _write_label_map(
            Path(args.map), cube, patch_set.centers, all_preds, net.config.class_count
        )
        print(f"wrote label map {args.map}")
    return 0


def _per_patch_cores(patch_set: LabeledPatchSet, ranks, seed: int):
    """Decompose every patch independently; returns (cores, non_converged)."""
    n = patch_set.patches.shape[0]
    cores = np.empty((n,) + tuple(ranks))
    misses = 0
    for i in range(n):
        stack = mapping_mod.fit([patch_set.patches[i]], ranks, seed=seed)
        if not stack.converged:
            misses += 1
        cores[i] = mapping_mod.project(stack, patch_set.patches[i])
    return cores, misses


def cmd_ablate(args) -> int:
    cube, class_names, overrides = _load_descriptor(args.dataset)
    config = _resolve_config(args, cube, overrides)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed
    t0 = time.perf_counter()
    patch_set, _ = _prepare_patches(cube, config, seed, args.norm)
    notes = []

    pre_start = time.perf_counter()
    if args.arm == "mapping":
        stack = _fit_mapping(patch_set, config, seed)
        net_config = config
        net_set = patch_set
    elif args.arm == "raw":
        dims = (config.patch_size, config.patch_size, cube.bands)
        stack = mapping_mod.identity_stack(dims)
        net_config = model_mod.config_from_dict(model_mod.config_to_dict(config))
        net_config.ranks = dims
        net_config.seed = config.seed
        net_set = patch_set
    elif args.arm == "per-patch-td":
        cores, misses = _per_patch_cores(
            patch_set, config.ranks, _child_seed(seed, _SALT_FIT)
        )
        if misses:
            notes.append(f"{misses} patch decompositions hit the iteration cap")
        stack = mapping_mod.identity_stack(tuple(config.ranks))
        net_config = model_mod.config_from_dict(model_mod.config_to_dict(config))
        net_config.patch_size = int(config.ranks[0])
        net_config.bands = int(config.ranks[2])
        net_config.seed = config.seed
        net_set = LabeledPatchSet(
            patches=cores,
            labels=patch_set.labels,
            split=patch_set.split,
            patch_size=int(config.ranks[0]),
            seed=patch_set.seed,
            centers=patch_set.centers,
        )
    else:
        raise ValueError(f"unknown ablation arm {args.arm!r}")
    preprocessing_s = time.perf_counter() - pre_start

    net = model_mod.build(net_config, stack, seed=seed)
    log = model_mod.train_epochs(net, net_set)
    test_idx = net_set.indices(TEST)
    preds = model_mod.predict(net, net_set.patches[test_idx])
    cm = metrics_mod.confusion(net_set.labels[test_idx], preds, net_config.class_count)
    total_s = time.perf_counter() - t0

    lines = [f"arm: {args.arm}", metrics_mod.format_report(cm, class_names).rstrip("\n")]
    lines.append("# timing below is hardware-bound and non-normative")
    lines.append(f"# preprocessing_time_s: {preprocessing_s:.3f}")
    lines.append(f"# total_time_s: {total_s:.3f}")
    for note in notes:
        lines.append(f"# note: {note}")
    report = "\n".join(lines) + "\n"
    _atomic_write_text(out_dir / f"ablate_{args.arm}.txt", report)
    print(report, end="")
    return 0


# --- argument parsing -----------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcnn",
        description="Mapping-layer 3-D CNN for hyperspectral patch classification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled cube (HST file)")
    p.add_argument("--out", required=True, help="output .hst path")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--classes", type=int, default=4, help="number of classes")
    p.add_argument("--size", default="40,40", help="height,width")
    p.add_argument("--bands", type=int, default=32, help="spectral bands")
    p.add_argument("--blob-size", type=int, default=10, help="class tile edge in pixels")
    p.add_argument(
        "--signature-distance",
        type=float,
        default=3.0,
        help="minimum pairwise distance between class spectra",
    )
    p.add_argument("--noise", type=float, default=1.0, help="per-band noise sigma")
    p.add_argument(
        "--alignment",
        type=float,
        default=0.9,
        help="fraction of class structure along the shared spectral profile",
    )
    p.add_argument(
        "--baseline",
        type=float,
        default=6.0,
        help="common spectral offset magnitude",
    )
    p.set_defaults(func=cmd_synth)

    def common(p):
        p.add_argument("--dataset", required=True, help=".hst cube or JSON descriptor")
        p.add_argument("--config", help="preset name or config JSON path")
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--ranks", help="R1,R2,R3 mapping ranks")
        p.add_argument("--patch-size", type=int, help="odd spatial patch size")
        p.add_argument(
            "--norm",
            choices=("minmax", "standardize"),
            default="minmax",
            help="cube normalization mode",
        )

    p = sub.add_parser("fit-mapping", help="fit the mapping stack on training patches")
    common(p)
    p.add_argument("--out", required=True, help="output .map path")
    p.set_defaults(func=cmd_fit_mapping)

    p = sub.add_parser("train", help="full pipeline: normalize, split, fit, train")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--repeats", type=int, default=1, help="independent runs (seed+i)")
    p.add_argument("--batch", type=int, help="batch size override")
    p.add_argument("--lr", type=float, help="learning rate override")
    p.add_argument("--epochs", type=int, help="epoch count override")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("validate", help="grid search over hyperparameters or ranks")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--grid", choices=("hyper", "ranks"), default="hyper")
    p.add_argument("--batches", default="20,30,40", help="batch sizes (hyper grid)")
    p.add_argument(
        "--lrs", default="0.01,0.003,0.001,0.0003,0.0001", help="learning rates"
    )
    p.add_argument(
        "--ranks-grid", default="", help='rank triples, e.g. "3,3,4;5,5,8"'
    )
    p.add_argument("--epochs", type=int, help="epoch count override")
    p.add_argument("--batch", type=int, help="batch size override")
    p.add_argument("--lr", type=float, help="learning rate override")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("eval", help="score a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True, help=".mcnn checkpoint path")
    p.add_argument("--dataset", required=True, help=".hst cube or JSON descriptor")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--map", help="optional PNG label map path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run one preprocessing arm and score it")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument(
        "--arm",
        required=True,
        choices=("mapping", "raw", "per-patch-td"),
        help="mapping = fitted stack; raw = identity; per-patch-td = "
        "independent decomposition per patch",
    )
    p.add_argument("--batch", type=int, help="batch size override")
    p.add_argument("--lr", type=float, help="learning rate override")
    p.add_argument("--epochs", type=int, help="epoch count override")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (data_mod.FormatError, data_mod.DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
