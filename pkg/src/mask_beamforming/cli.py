"""
Command line entry point: ``mask-beamforming <command> [options]``.

Every command reads an optional JSON config and works inside the run
directory ``<out>/<name>/``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from mask_beamforming.config import (
    BEAMFORMERS,
    LOSSES,
    METHODS,
    ExperimentSettings,
    SceneSetConfig,
    normalize_choice,
)
from mask_beamforming.errors import MaskBeamformingError
from mask_beamforming.estimator import (
    MaskEstimator,
    prepare_training_scene,
    train,
)
from mask_beamforming.losses import LossInputs, grad_check
from mask_beamforming.masks import MaskTensor, oracle_psm
from mask_beamforming.pipeline import BeamformingPipeline, run_pipeline
from mask_beamforming.ports.artifacts import (
    RunDirectory,
    load_checkpoint,
    read_mask,
    read_scene,
    save_checkpoint,
    write_bank,
    write_loss_curve,
    write_mask,
    write_metrics,
    write_scene,
)
from mask_beamforming.ports.audio import (
    Waveform,
    read_wav,
    require_sample_rate,
    write_wav,
)
from mask_beamforming.ports.report import build_report
from mask_beamforming.scenes import MAX_PEAK, generate_scenes
from mask_beamforming.transform import stft, stft_sources

logger = logging.getLogger(__name__)


def _dashed(choices: Sequence[str]) -> list[str]:
    return [c.replace("_", "-") for c in choices]


def _settings(args: argparse.Namespace) -> ExperimentSettings:
    settings = (
        ExperimentSettings.from_json(args.config)
        if args.config
        else ExperimentSettings()
    )
    if args.seed is not None:
        settings = settings.replace(
            seed=args.seed, train=replace(settings.train, seed=args.seed)
        )
    return settings


def _run(
    args: argparse.Namespace, settings: ExperimentSettings
) -> RunDirectory:
    return RunDirectory(args.out, settings.name).create()


def _load_scenes(run: RunDirectory):
    ids = run.scene_ids()
    if not ids:
        raise MaskBeamformingError(
            f"no scenes in {run.scenes}; run 'mix' first"
        )
    return ids, [read_scene(run.scenes / i) for i in ids]


def _model_name(method: str, seed: int) -> str:
    if method == "oracle_psm":
        return method
    return f"{method}_seed{seed}"


def _model_for(
    run: RunDirectory, method: str, seed: int
) -> Optional[MaskEstimator]:
    if method == "oracle_psm":
        return None
    path = run.models / f"{_model_name(method, seed)}.mbfe"
    if not path.exists():
        raise MaskBeamformingError(
            f"no model {path}; run 'train --loss {method} --seed {seed}'"
            " first"
        )
    return load_checkpoint(path)


def _storable(estimate: Waveform, scene_id: str) -> Waveform:
    peak = float(np.max(np.abs(estimate.samples)))
    if peak <= MAX_PEAK:
        return estimate
    logger.warning(
        "scene %s: estimate peak %.3f scaled to %.2f for storage",
        scene_id,
        peak,
        MAX_PEAK,
    )
    return Waveform(estimate.samples * (MAX_PEAK / peak), estimate.sample_rate)


def _read_wav_dir(directory: Optional[str], sample_rate: int):
    if directory is None:
        return None
    paths = sorted(Path(directory).glob("*.wav"))
    if not paths:
        raise MaskBeamformingError(f"no .wav files in {directory}")
    return [require_sample_rate(read_wav(p), sample_rate) for p in paths]


def cmd_mix(args: argparse.Namespace) -> int:
    """Generate the scene set and store it under ``scenes/``."""
    settings = _settings(args)
    run = _run(args, settings)
    rate = settings.scenes.scene.sample_rate
    sources = _read_wav_dir(args.sources, rate)
    responses = _read_wav_dir(args.rir, rate)
    scenes = generate_scenes(
        settings.scenes,
        settings.seed,
        sources,
        None if responses is None else [w.samples for w in responses],
    )
    for index, scene in enumerate(scenes):
        write_scene(run.scenes / f"{index:04d}", scene)
    print(f"wrote {len(scenes)} scenes to {run.scenes}")
    return 0


def cmd_oracle_masks(args: argparse.Namespace) -> int:
    """Write oracle phase-sensitive masks of every stored scene."""
    settings = _settings(args)
    run = _run(args, settings)
    ids, scenes = _load_scenes(run)
    for scene_id, scene in zip(ids, scenes):
        x = stft(scene.mixture, settings.stft)
        c = stft_sources(scene.images, settings.stft)
        mask = oracle_psm(x, c, settings.evaluation.reference_mic)
        write_mask(run.masks / "oracle_psm" / f"{scene_id}.mask", mask)
    print(f"wrote {len(ids)} masks to {run.masks / 'oracle_psm'}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    """
    Train the estimator with one loss on freshly generated scenes.

    The checkpoint and loss curve are named ``<loss>_seed<seed>``.
    """
    settings = _settings(args)
    if args.loss:
        settings = settings.replace(
            train=replace(settings.train, loss=normalize_choice(args.loss))
        )
    run = _run(args, settings)
    cfg = settings.train
    scene_set = SceneSetConfig(
        count=cfg.n_scenes, condition="train", scene=settings.scenes.scene
    )
    dataset = [
        prepare_training_scene(
            scene, settings.stft, settings.evaluation.reference_mic
        )
        for scene in generate_scenes(scene_set, cfg.seed)
    ]
    model = MaskEstimator(
        settings.stft.n_freq,
        settings.scenes.scene.n_sources,
        settings.model,
        with_activation=cfg.loss == "l1",
        seed=cfg.seed,
    )
    model, curve = train(
        model, dataset, cfg, settings.evaluation.loading
    )
    name = _model_name(cfg.loss, cfg.seed)
    save_checkpoint(run.models / f"{name}.mbfe", model)
    write_loss_curve(run.models / f"{name}_curve.csv", curve)
    if curve:
        print(f"loss {name}: {curve[0]:.6f} -> {curve[-1]:.6f}")
    return 0


def _stored_masks(
    run: RunDirectory, name: str, ids: Sequence[str]
) -> list[MaskTensor]:
    masks = []
    for scene_id in ids:
        path = run.masks / name / f"{scene_id}.mask"
        if not path.exists():
            raise MaskBeamformingError(
                f"no mask {path}; run 'oracle-masks' or 'beamform' first"
            )
        masks.append(read_mask(path))
    logger.info("using %d stored masks from %s", len(masks), run.masks / name)
    return masks


def cmd_beamform(args: argparse.Namespace) -> int:
    """Write separated signals, masks and filters of every scene."""
    settings = _settings(args)
    run = _run(args, settings)
    method = normalize_choice(args.method)
    name = _model_name(method, settings.train.seed)
    ids, scenes = _load_scenes(run)
    masks: list[Optional[MaskTensor]] = (
        list(_stored_masks(run, name, ids))
        if args.stored_masks
        else [None] * len(ids)
    )
    pipeline = BeamformingPipeline(
        method,
        args.beamformer,
        _model_for(run, method, settings.train.seed),
        settings.stft,
        settings.evaluation,
    )
    tag = f"{name}_{pipeline.beamformer}"
    for scene_id, scene, mask in zip(ids, scenes, masks):
        separation = pipeline.separate(scene, mask)
        write_wav(
            run.separated / tag / f"{scene_id}.wav",
            _storable(separation.estimate, scene_id),
        )
        if mask is None:
            write_mask(
                run.masks / name / f"{scene_id}.mask", separation.mask
            )
        if pipeline.beamformer != "mwf_tv":
            write_bank(
                run.separated / tag / f"{scene_id}.bank", separation.filters
            )
    print(f"wrote {len(ids)} separations to {run.separated / tag}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    """Score one (method, beamformer) pair on the stored scenes."""
    settings = _settings(args)
    run = _run(args, settings)
    method = normalize_choice(args.method)
    name = _model_name(method, settings.train.seed)
    ids, scenes = _load_scenes(run)
    table = run_pipeline(
        scenes,
        method,
        args.beamformer,
        _model_for(run, method, settings.train.seed),
        settings.stft,
        settings.evaluation,
        ids,
        _stored_masks(run, name, ids) if args.stored_masks else None,
    )
    path = write_metrics(
        run.metrics, f"{name}_{normalize_choice(args.beamformer)}", table
    )
    print(f"wrote {len(table)} rows to {path}")
    return 0


def cmd_grad_check(args: argparse.Namespace) -> int:
    """Finite-difference check of a loss on random small instances."""
    loss = normalize_choice(args.loss)
    seed = 0 if args.seed is None else args.seed
    failed = 0
    for offset in range(args.count):
        report = grad_check(
            loss, LossInputs.random(seed + offset), rel_tol=args.rel_tol
        )
        print(report.to_text())
        failed += not report.passed
    return 1 if failed else 0


def cmd_report(args: argparse.Namespace) -> int:
    """Aggregate metric tables into the results table."""
    root = Path(args.out)
    if args.config:
        root = root / _settings(args).name
    _, text = build_report(root)
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    """
    Argument parser with one sub-command per stage.

    :return: The parser.
    :rtype: argparse.ArgumentParser
    """
    parser = argparse.ArgumentParser(
        prog="mask-beamforming",
        description="Mask-based beamforming experiments.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument(
        "--seed", type=int, help="override the master and training seeds"
    )
    common.add_argument(
        "--out", default="runs", help="directory holding run directories"
    )
    methods = argparse.ArgumentParser(add_help=False)
    methods.add_argument(
        "--method",
        type=normalize_choice,
        choices=list(METHODS),
        default="oracle_psm",
        help="{" + ",".join(_dashed(METHODS)) + "}",
    )
    methods.add_argument(
        "--beamformer",
        type=normalize_choice,
        choices=list(BEAMFORMERS),
        default="mvdr",
        help="{" + ",".join(_dashed(BEAMFORMERS)) + "}",
    )
    methods.add_argument(
        "--stored-masks",
        action="store_true",
        help="read stored masks instead of recomputing them",
    )
    loss_help = "{" + ",".join(LOSSES) + "}"
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mix", parents=[common])
    p.add_argument("--sources", help="directory of mono source WAVs")
    p.add_argument(
        "--rir", help="directory of per-source multichannel RIR WAVs"
    )
    p.set_defaults(func=cmd_mix)
    sub.add_parser("oracle-masks", parents=[common]).set_defaults(
        func=cmd_oracle_masks
    )
    p = sub.add_parser("train", parents=[common])
    p.add_argument(
        "--loss", type=normalize_choice, choices=list(LOSSES), help=loss_help
    )
    p.set_defaults(func=cmd_train)
    sub.add_parser("beamform", parents=[common, methods]).set_defaults(
        func=cmd_beamform
    )
    sub.add_parser("evaluate", parents=[common, methods]).set_defaults(
        func=cmd_evaluate
    )
    p = sub.add_parser("grad-check", parents=[common])
    p.add_argument(
        "--loss",
        type=normalize_choice,
        choices=list(LOSSES) + ["quadratic"],
        default="l2",
    )
    p.add_argument("--count", type=int, default=1, help="random instances")
    p.add_argument("--rel-tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)
    sub.add_parser("report", parents=[common]).set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run the command line interface.

    :param argv: Arguments without the program name.
    :type argv: Sequence[str] | None
    :return: Process exit code.
    :rtype: int
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (MaskBeamformingError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
