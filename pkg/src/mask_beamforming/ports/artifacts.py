"""
Artifact port: run directories and the binary / tabular files in them.

Binary layouts (all little-endian):

- mask: int32 T, F, N then float32 values in row-major (T, F, N) order.
- bank: int32 F, N, M then complex64 values in row-major (F, N, M) order.
- checkpoint: ``b"MBFE"``, uint32 version, int32 n_freq, n_sources,
  context, activation flag, number of hidden layers, the hidden widths,
  int64 weight count, then float32 weights in parameter order.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Iterable

import numpy as np
import pandas as pd
import torch

from mask_beamforming.beamformers import BeamformerBank
from mask_beamforming.config import EstimatorConfig, SceneConfig
from mask_beamforming.errors import AudioFormatError, ShapeMismatchError
from mask_beamforming.estimator import MaskEstimator
from mask_beamforming.masks import MaskTensor
from mask_beamforming.ports.audio import read_wav, write_wav
from mask_beamforming.scenes import Scene

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MBFE"
CHECKPOINT_VERSION = 1
RUN_SUBDIRS = ("scenes", "masks", "models", "metrics", "separated")


class RunDirectory:
    """
    Layout ``<root>/<name>/{scenes,masks,models,metrics,separated}``.

    :ivar path: Directory of the run.
    """

    def __init__(self, root: str | Path, name: str):
        self.path = Path(root) / name

    def create(self) -> "RunDirectory":
        """Create the run directory and its sub-directories."""
        for sub in RUN_SUBDIRS:
            (self.path / sub).mkdir(parents=True, exist_ok=True)
        return self

    def __getattr__(self, name: str) -> Path:
        if name in RUN_SUBDIRS:
            return self.path / name
        raise AttributeError(name)

    def scene_ids(self) -> list[str]:
        """
        Stored scenes in name order.

        :return: Directory names under ``scenes/``.
        :rtype: list[str]
        """
        root = self.path / "scenes"
        if not root.is_dir():
            return []
        return sorted(p.name for p in root.iterdir() if p.is_dir())


def _read_header(path: Path, data: bytes, count: int) -> tuple[int, ...]:
    if len(data) < 4 * count:
        raise ShapeMismatchError(f"{path}: truncated header")
    dims = tuple(int(d) for d in np.frombuffer(data[: 4 * count], "<i4"))
    if any(d < 0 for d in dims):
        raise ShapeMismatchError(f"{path}: negative dimension in {dims}")
    return dims


def write_mask(path: str | Path, mask: MaskTensor) -> None:
    """
    Store a mask as int32 dims followed by float32 values.

    :param path: Destination file.
    :type path: str | Path
    :param mask: Mask (T, F, N).
    :type mask: MaskTensor
    """
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    header = np.asarray(mask.values.shape, dtype="<i4").tobytes()
    p.write_bytes(header + mask.values.astype("<f4").tobytes())


def read_mask(path: str | Path) -> MaskTensor:
    """
    Read a mask written by :func:`write_mask`.

    :param path: Source file.
    :type path: str | Path
    :return: The mask.
    :rtype: MaskTensor
    :raises ShapeMismatchError: If the payload size disagrees with the
        header.
    :raises ValueError: If values fall outside [0, 1].
    """
    p = Path(path)
    data = p.read_bytes()
    dims = _read_header(p, data, 3)
    payload = data[12:]
    if len(payload) != 4 * int(np.prod(dims)):
        raise ShapeMismatchError(
            f"{p}: header {dims} expects {4 * int(np.prod(dims))} bytes, "
            f"found {len(payload)}"
        )
    values = np.frombuffer(payload, "<f4").reshape(dims)
    return MaskTensor(values.astype(np.float64))


def write_bank(path: str | Path, bank: BeamformerBank) -> None:
    """
    Store filters as int32 dims followed by complex64 values.

    :param path: Destination file.
    :type path: str | Path
    :param bank: Filters (F, N, M).
    :type bank: BeamformerBank
    """
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    header = np.asarray(bank.filters.shape, dtype="<i4").tobytes()
    p.write_bytes(header + bank.filters.astype("<c8").tobytes())


def save_checkpoint(path: str | Path, model: MaskEstimator) -> None:
    """
    Write a versioned checkpoint of the estimator.

    :param path: Destination file.
    :type path: str | Path
    :param model: Estimator to store.
    :type model: MaskEstimator
    """
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    hidden = model.config.hidden
    dims = [
        model.n_freq,
        model.n_sources,
        model.config.context,
        int(model.has_activation_head),
        len(hidden),
        *hidden,
    ]
    weights = model.parameter_vector().numpy().astype("<f4")
    p.write_bytes(
        CHECKPOINT_MAGIC
        + np.asarray([CHECKPOINT_VERSION], "<u4").tobytes()
        + np.asarray(dims, "<i4").tobytes()
        + np.asarray([weights.size], "<i8").tobytes()
        + weights.tobytes()
    )
    logger.info("saved checkpoint %s (%d weights)", p, weights.size)


def load_checkpoint(path: str | Path) -> MaskEstimator:
    """
    Rebuild an estimator from :func:`save_checkpoint` output.

    :param path: Source file.
    :type path: str | Path
    :return: The estimator with the stored weights.
    :rtype: MaskEstimator
    :raises ValueError: On a wrong magic, version or weight count.
    """
    p = Path(path)
    data = p.read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{p}: not a mask estimator checkpoint")
    version = int(np.frombuffer(data[4:8], "<u4")[0])
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{p}: unsupported checkpoint version {version}")
    offset = 8
    fixed = np.frombuffer(data[offset : offset + 20], "<i4")
    n_freq, n_sources, context, with_activation, n_hidden = map(int, fixed)
    offset += 20
    hidden = tuple(
        int(h)
        for h in np.frombuffer(data[offset : offset + 4 * n_hidden], "<i4")
    )
    offset += 4 * n_hidden
    count = int(np.frombuffer(data[offset : offset + 8], "<i8")[0])
    offset += 8
    weights = np.frombuffer(data[offset:], "<f4")
    model = MaskEstimator(
        n_freq,
        n_sources,
        EstimatorConfig(context=context, hidden=hidden),
        with_activation=bool(with_activation),
    )
    if weights.size != count or count != model.parameter_vector().numel():
        raise ValueError(
            f"{p}: expected {model.parameter_vector().numel()} weights, "
            f"found {weights.size}"
        )
    model.load_parameter_vector(torch.as_tensor(weights.astype(np.float64)))
    return model


def write_loss_curve(path: str | Path, curve: Iterable[float]) -> None:
    """
    Write a ``step,loss`` CSV.

    :param path: Destination file.
    :type path: str | Path
    :param curve: Loss per step.
    :type curve: Iterable[float]
    """
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    losses = list(curve)
    frame = pd.DataFrame({"step": range(len(losses)), "loss": losses})
    frame.to_csv(p, index=False, float_format="%.10g")


def read_loss_curve(path: str | Path) -> list[float]:
    """Losses stored by :func:`write_loss_curve`, in step order."""
    frame = pd.read_csv(path)
    return frame.sort_values("step")["loss"].astype(float).tolist()


def write_scene(directory: str | Path, scene: Scene) -> Path:
    """
    Store a scene as ``mixture.wav``, ``image_<n>.wav`` and ``scene.json``.

    :param directory: Scene directory (created).
    :type directory: str | Path
    :param scene: Scene to store.
    :type scene: Scene
    :return: The directory.
    :rtype: Path
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_wav(d / "mixture.wav", scene.mixture)
    for n, image in enumerate(scene.images):
        write_wav(d / f"image_{n}.wav", image)
    (d / "scene.json").write_text(
        json.dumps(scene.metadata(), indent=2), encoding="utf-8"
    )
    return d


def read_scene(directory: str | Path) -> Scene:
    """
    Load a scene stored by :func:`write_scene`.

    :param directory: Scene directory.
    :type directory: str | Path
    :return: The scene.
    :rtype: Scene
    :raises AudioFormatError: If image files are missing.
    """
    d = Path(directory)
    meta = json.loads((d / "scene.json").read_text(encoding="utf-8"))
    cfg = SceneConfig.from_dict(meta["config"])
    images = []
    for n in range(cfg.n_sources):
        path = d / f"image_{n}.wav"
        if not path.exists():
            raise AudioFormatError(f"{d}: missing {path.name}")
        images.append(read_wav(path))
    return Scene(
        mixture=read_wav(d / "mixture.wav"),
        images=tuple(images),
        config=cfg,
        mic_indices=tuple(meta.get("mic_indices", ())),
        azimuths_deg=tuple(meta.get("azimuths_deg", ())),
    )


def write_metrics(
    directory: str | Path, name: str, table: pd.DataFrame
) -> Path:
    """
    Write a metric table as ``<name>.csv`` and per-scene JSON records.

    :param directory: The run's ``metrics`` directory.
    :type directory: str | Path
    :param name: Base name, e.g. ``oracle_psm_mvdr``.
    :type name: str
    :param table: One row per (scene, source).
    :type table: pd.DataFrame
    :return: Path of the CSV.
    :rtype: Path
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    csv_path = d / f"{name}.csv"
    table.to_csv(csv_path, index=False, float_format="%.6f")
    records: dict[str, list[dict[str, Any]]] = {}
    for row in table.to_dict(orient="records"):
        records.setdefault(str(row["scene"]), []).append(row)
    json_dir = d / name
    json_dir.mkdir(exist_ok=True)
    for scene_id, rows in records.items():
        (json_dir / f"{scene_id}.json").write_text(
            json.dumps(rows, indent=2, default=float), encoding="utf-8"
        )
    return csv_path
