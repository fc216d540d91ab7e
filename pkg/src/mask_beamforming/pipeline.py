"""
Mask-based beamforming pipeline façade.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from mask_beamforming.beamformers import (
    BeamformerBank,
    TimeVaryingFilter,
    apply_bank,
    apply_time_varying,
    build_bank,
    mwf_time_varying,
)
from mask_beamforming.config import (
    BEAMFORMERS,
    METHODS,
    EvaluationSettings,
    StftConfig,
    normalize_choice,
)
from mask_beamforming.errors import (
    IncompatibleMethodError,
    ShapeMismatchError,
)
from mask_beamforming.estimator import MaskEstimator, check_loss_heads
from mask_beamforming.evaluation import MetricReport, evaluate_separation
from mask_beamforming.masks import (
    ActivationTensor,
    MaskTensor,
    estimate_covariance,
    input_feature,
    observation_covariance,
    oracle_activation,
    oracle_psm,
)
from mask_beamforming.ports.audio import Waveform, require_sample_rate
from mask_beamforming.scenes import Scene
from mask_beamforming.transform import (
    ComplexSpectrogram,
    istft,
    stft,
    stft_sources,
)

logger = logging.getLogger(__name__)

# Sampling rate of the experiment protocol.
PROTOCOL_RATE = 8000


def check_combination(
    method: str, beamformer: str, model: Optional[MaskEstimator] = None
) -> tuple[str, str]:
    """
    Normalize and validate a (method, beamformer) pair.

    :param method: ``psa``, ``l1``, ``l2`` or ``oracle_psm``.
    :type method: str
    :param beamformer: ``mvdr``, ``gev``, ``mwf_ti`` or ``mwf_tv``.
    :type beamformer: str
    :param model: Estimator for learned methods.
    :type model: MaskEstimator | None
    :return: Normalized identifiers.
    :rtype: tuple[str, str]
    :raises IncompatibleMethodError: If the pair cannot run.
    """
    method = normalize_choice(method)
    beamformer = normalize_choice(beamformer)
    if method not in METHODS:
        raise IncompatibleMethodError(
            f"unknown method {method!r}; expected one of {METHODS}"
        )
    if beamformer not in BEAMFORMERS:
        raise IncompatibleMethodError(
            f"unknown beamformer {beamformer!r}; expected one of "
            f"{BEAMFORMERS}"
        )
    if beamformer == "mwf_tv" and method not in ("l1", "oracle_psm"):
        raise IncompatibleMethodError(
            f"mwf_tv needs activations; method {method} does not "
            "provide them (use l1 or oracle_psm)"
        )
    if method != "oracle_psm":
        if model is None:
            raise IncompatibleMethodError(
                f"method {method} needs a trained model"
            )
        check_loss_heads(model, method)
    return method, beamformer


@dataclass(frozen=True, eq=False)
class Separation:
    """
    Output of one pipeline run on a scene.

    :ivar estimate: One channel per source at the reference microphone.
    :ivar mask: Masks used for the covariances.
    :ivar filters: Filter bank or time-varying filter.
    """

    estimate: Waveform
    mask: MaskTensor
    filters: Union[BeamformerBank, TimeVaryingFilter]


class BeamformingPipeline:
    """
    Masks, spatial covariances, beamformer, synthesis and metrics.

    :ivar method: Mask source.
    :ivar beamformer: Beamformer kind.
    """

    # Justification: Every stage of the pipeline is configurable
    # pylint: disable=too-many-arguments,too-many-positional-arguments
    def __init__(
        self,
        method: str = "oracle_psm",
        beamformer: str = "mvdr",
        model: Optional[MaskEstimator] = None,
        stft_config: Optional[StftConfig] = None,
        settings: Optional[EvaluationSettings] = None,
        sample_rate: Optional[int] = PROTOCOL_RATE,
    ) -> None:
        """
        :param method: ``psa``, ``l1``, ``l2`` or ``oracle_psm``.
        :type method: str
        :param beamformer: ``mvdr``, ``gev``, ``mwf_ti`` or ``mwf_tv``.
        :type beamformer: str
        :param model: Trained estimator (required unless oracle).
        :type model: MaskEstimator | None
        :param stft_config: Analysis settings.
        :type stft_config: StftConfig | None
        :param settings: Beamforming and metric settings.
        :type settings: EvaluationSettings | None
        :param sample_rate: Required input rate, or None to accept any.
        :type sample_rate: int | None
        """
        self.method, self.beamformer = check_combination(
            method, beamformer, model
        )
        self._model = model
        self._stft = stft_config or StftConfig()
        self._settings = settings or EvaluationSettings()
        self._rate = sample_rate
        logger.debug(
            "pipeline method=%s beamformer=%s", self.method, self.beamformer
        )

    def _masks(
        self, x: ComplexSpectrogram, c: np.ndarray
    ) -> tuple[MaskTensor, Optional[ActivationTensor]]:
        ref = self._settings.reference_mic
        if self.method == "oracle_psm":
            return oracle_psm(x, c, ref), oracle_activation(c)
        assert self._model is not None
        return self._model.estimate(input_feature(x))

    def separate(
        self, scene: Scene, mask: Optional[MaskTensor] = None
    ) -> Separation:
        """
        Beamform every source of a scene.

        :param scene: Scene with mixture and (for oracle masks) images.
        :type scene: Scene
        :param mask: Stored masks replacing the method's own; activations
            still come from the method.
        :type mask: MaskTensor | None
        :return: Estimates, masks and filters.
        :rtype: Separation
        :raises ShapeMismatchError: If a stored mask does not match the
            mixture.
        """
        if self._rate is not None:
            require_sample_rate(scene.mixture, self._rate)
        ref = self._settings.reference_mic
        loading = self._settings.loading
        x = stft(scene.mixture, self._stft)
        c = stft_sources(scene.images, self._stft)
        estimated, activation = self._masks(x, c)
        if mask is None:
            mask = estimated
        elif mask.values.shape != estimated.values.shape:
            raise ShapeMismatchError(
                f"stored mask {mask.values.shape} does not match "
                f"{estimated.values.shape}"
            )
        covs = estimate_covariance(mask, x)
        filters: Union[BeamformerBank, TimeVaryingFilter]
        if self.beamformer == "mwf_tv":
            assert activation is not None
            filters = mwf_time_varying(covs, activation, loading)
            outputs = apply_time_varying(filters, x, ref)
        else:
            filters = build_bank(
                self.beamformer,
                covs,
                observation_covariance(x),
                loading,
                ref,
            )
            outputs = apply_bank(filters, x)
        estimate = istft(
            ComplexSpectrogram(
                outputs, self._stft, scene.mixture.length, x.sample_rate
            )
        )
        return Separation(estimate=estimate, mask=mask, filters=filters)

    def evaluate(
        self,
        scene: Scene,
        scene_id: str | int = 0,
        mask: Optional[MaskTensor] = None,
    ) -> list[dict]:
        """
        Separate a scene and score it against its reference images.

        :param scene: Scene to process.
        :type scene: Scene
        :param scene_id: Identifier written to the rows.
        :type scene_id: str | int
        :param mask: Stored masks, see :meth:`separate`.
        :type mask: MaskTensor | None
        :return: One row per source, including mixture baseline columns.
        :rtype: list[dict]
        """
        ref = self._settings.reference_mic
        separation = self.separate(scene, mask)
        references = Waveform(
            np.stack([image.samples[ref] for image in scene.images]),
            scene.mixture.sample_rate,
        )
        report, mixed = evaluate_separation(
            separation.estimate,
            references,
            scene.mixture.channel(ref),
            self._stft,
            self._settings,
        )
        return _rows(scene_id, self.method, self.beamformer, report, mixed)


def _rows(
    scene_id: str | int,
    method: str,
    beamformer: str,
    report: MetricReport,
    mixed: MetricReport,
) -> list[dict]:
    rows = []
    for row, base in zip(report.rows(), mixed.rows()):
        rows.append(
            {
                "scene": str(scene_id),
                "method": method,
                "beamformer": beamformer,
                **row,
                "mixed_sdr": base["sdr"],
                "mixed_sir": base["sir"],
                "mixed_cd": base["cd"],
            }
        )
    return rows


# Justification: Mirrors the BeamformingPipeline arguments
# pylint: disable=too-many-arguments,too-many-positional-arguments
def run_pipeline(
    scenes: Sequence[Scene],
    method: str,
    beamformer: str,
    model: Optional[MaskEstimator] = None,
    stft_config: Optional[StftConfig] = None,
    settings: Optional[EvaluationSettings] = None,
    scene_ids: Optional[Sequence[str]] = None,
    masks: Optional[Sequence[MaskTensor]] = None,
) -> pd.DataFrame:
    """
    Evaluate one (method, beamformer) pair on a scene set, sequentially.

    :param scenes: Scenes to process.
    :type scenes: Sequence[Scene]
    :param method: ``psa``, ``l1``, ``l2`` or ``oracle_psm``.
    :type method: str
    :param beamformer: ``mvdr``, ``gev``, ``mwf_ti`` or ``mwf_tv``.
    :type beamformer: str
    :param model: Trained estimator for learned methods.
    :type model: MaskEstimator | None
    :param stft_config: Analysis settings.
    :type stft_config: StftConfig | None
    :param settings: Beamforming and metric settings.
    :type settings: EvaluationSettings | None
    :param scene_ids: Names of the scenes; defaults to their index.
    :type scene_ids: Sequence[str] | None
    :param masks: Stored masks per scene instead of the method's own.
    :type masks: Sequence[MaskTensor] | None
    :return: One row per (scene, source).
    :rtype: pd.DataFrame
    """
    pipeline = BeamformingPipeline(
        method, beamformer, model, stft_config, settings
    )
    ids = list(scene_ids) if scene_ids is not None else [
        f"{i:04d}" for i in range(len(scenes))
    ]
    stored: list[Optional[MaskTensor]] = (
        list(masks) if masks is not None else [None] * len(scenes)
    )
    rows: list[dict] = []
    for scene_id, scene, mask in zip(ids, scenes, stored):
        rows.extend(pipeline.evaluate(scene, scene_id, mask))
        logger.info(
            "%s/%s scene %s done",
            pipeline.method,
            pipeline.beamformer,
            scene_id,
        )
    return pd.DataFrame(rows)
