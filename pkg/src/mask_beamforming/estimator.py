"""
Small feedforward mask (and activation) estimator and its training loop.

The network sees a +-C frame context of the normalized log-magnitude
feature, runs two tanh layers and emits a sigmoid mask head and, for the
posterior loss, a softplus activation head. Training runs Adam on one
chunk of frames per step with permutation invariant loss evaluation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from mask_beamforming.config import EstimatorConfig, StftConfig, TrainConfig
from mask_beamforming.errors import (
    IncompatibleMethodError,
    ShapeMismatchError,
    TrainingDivergedError,
)
from mask_beamforming.hermitian import DEFAULT_LOADING
from mask_beamforming.losses import pit_totals, relative_error
from mask_beamforming.masks import (
    ActivationTensor,
    FeatureTensor,
    MaskTensor,
    input_feature,
    oracle_activation,
)
from mask_beamforming.scenes import Scene
from mask_beamforming.transform import stft, stft_sources

logger = logging.getLogger(__name__)


class MaskEstimator(nn.Module):
    """
    Context-window MLP producing per-source masks and activations.

    :ivar n_freq: Number of frequency bins F.
    :ivar n_sources: Number of output streams N.
    :ivar config: Context size and hidden widths.
    :ivar activation_head: Softplus head, or None when absent.
    """

    def __init__(
        self,
        n_freq: int,
        n_sources: int,
        config: EstimatorConfig | None = None,
        with_activation: bool = False,
        seed: int = 0,
    ) -> None:
        """
        Build the network and draw its weights.

        :param n_freq: Number of frequency bins F.
        :type n_freq: int
        :param n_sources: Number of output streams N.
        :type n_sources: int
        :param config: Context size and hidden widths.
        :type config: EstimatorConfig | None
        :param with_activation: Add the activation head (posterior loss).
        :type with_activation: bool
        :param seed: Seed of the uniform initialization.
        :type seed: int
        """
        super().__init__()
        self.n_freq = int(n_freq)
        self.n_sources = int(n_sources)
        self.config = config or EstimatorConfig()
        width = self.n_freq * (2 * self.config.context + 1)
        layers: list[nn.Module] = []
        for hidden in self.config.hidden:
            layers += [nn.Linear(width, hidden), nn.Tanh()]
            width = hidden
        self.trunk = nn.Sequential(*layers)
        outputs = self.n_freq * self.n_sources
        self.mask_head = nn.Linear(width, outputs)
        self.activation_head: Optional[nn.Linear] = (
            nn.Linear(width, outputs) if with_activation else None
        )
        self.double()
        self.reset_parameters(seed)
        logger.debug(
            "MaskEstimator F=%d N=%d context=%d hidden=%s activation=%s",
            self.n_freq,
            self.n_sources,
            self.config.context,
            self.config.hidden,
            with_activation,
        )

    @property
    def has_activation_head(self) -> bool:
        """True when the softplus activation head exists."""
        return self.activation_head is not None

    def reset_parameters(self, seed: int = 0) -> None:
        """
        Draw every weight and bias uniformly in +-1/sqrt(fan_in).

        :param seed: Generator seed.
        :type seed: int
        """
        generator = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for module in self.modules():
                if not isinstance(module, nn.Linear):
                    continue
                bound = 1.0 / math.sqrt(module.in_features)
                for param in (module.weight, module.bias):
                    draw = torch.rand(
                        param.shape, generator=generator, dtype=param.dtype
                    )
                    param.copy_((2.0 * draw - 1.0) * bound)

    def context_window(self, feature: torch.Tensor) -> torch.Tensor:
        """
        Stack +-C neighbouring frames, zero padded at the edges.

        :param feature: Tensor (T, F).
        :type feature: torch.Tensor
        :return: Tensor (T, (2C+1)*F), oldest frame first.
        :rtype: torch.Tensor
        """
        context = self.config.context
        padded = nn.functional.pad(feature, (0, 0, context, context))
        windows = padded.unfold(0, 2 * context + 1, 1)
        return windows.transpose(1, 2).reshape(feature.shape[0], -1)

    def forward(
        self, feature: torch.Tensor
    ) -> tuple[torch.Tensor, Optional[torch.Tensor]]:
        """
        Per-frame masks and activations.

        :param feature: Normalized feature (T, F).
        :type feature: torch.Tensor
        :return: Masks (T, F, N) in (0, 1) and activations (T, F, N) or
            None.
        :rtype: tuple[torch.Tensor, torch.Tensor | None]
        :raises ValueError: If a weight is NaN or Inf.
        :raises ShapeMismatchError: If F differs from the model's.
        """
        if feature.ndim != 2 or feature.shape[1] != self.n_freq:
            raise ShapeMismatchError(
                f"feature must be (T, {self.n_freq}), got "
                f"{tuple(feature.shape)}"
            )
        for name, param in self.named_parameters():
            if not bool(torch.isfinite(param).all()):
                raise ValueError(f"parameter {name} is not finite")
        hidden = self.trunk(self.context_window(feature))
        shape = (feature.shape[0], self.n_freq, self.n_sources)
        mask = torch.sigmoid(self.mask_head(hidden)).reshape(shape)
        activation = None
        if self.activation_head is not None:
            activation = nn.functional.softplus(
                self.activation_head(hidden)
            ).reshape(shape)
        return mask, activation

    def estimate(
        self, feature: FeatureTensor
    ) -> tuple[MaskTensor, Optional[ActivationTensor]]:
        """
        Inference on a whole utterance.

        :param feature: Normalized feature (T, F).
        :type feature: FeatureTensor
        :return: Mask tensor and optional activation tensor.
        :rtype: tuple[MaskTensor, ActivationTensor | None]
        """
        with torch.no_grad():
            mask, activation = self(
                torch.as_tensor(feature.values, dtype=torch.float64)
            )
        if activation is None:
            return MaskTensor(mask.numpy()), None
        return MaskTensor(mask.numpy()), ActivationTensor(activation.numpy())

    def parameter_vector(self) -> torch.Tensor:
        """All parameters flattened in registration order."""
        return nn.utils.parameters_to_vector(self.parameters()).detach()

    def load_parameter_vector(self, vector: torch.Tensor) -> None:
        """
        Overwrite all parameters from a flat vector.

        :param vector: Tensor of ``parameter_vector().numel()`` values.
        :type vector: torch.Tensor
        """
        with torch.no_grad():
            nn.utils.vector_to_parameters(
                torch.as_tensor(vector, dtype=torch.float64),
                self.parameters(),
            )


@dataclass(frozen=True, eq=False)
class TrainingScene:
    """
    Precomputed STFT-domain data of one scene.

    :ivar x: Observation (T, F, M).
    :ivar c: Source images (T, F, N, M).
    :ivar feature: Normalized feature (T, F).
    :ivar act_star: Oracle activations (T, F, N).
    :ivar ref_channel: Reference microphone.
    """

    x: np.ndarray
    c: np.ndarray
    feature: np.ndarray
    act_star: np.ndarray
    ref_channel: int = 0

    @property
    def n_frames(self) -> int:
        """Number of frames T."""
        return int(self.x.shape[0])

    def references(self, loss: str) -> np.ndarray:
        """
        Targets PIT matches the output streams against.

        :param loss: ``"psa"``, ``"l1"`` or ``"l2"``.
        :type loss: str
        :return: c_ref, c or act_star.
        :rtype: np.ndarray
        """
        if loss == "psa":
            return self.c[..., self.ref_channel]
        if loss == "l1":
            return self.c
        return self.act_star


def prepare_training_scene(
    scene: Scene, stft_config: StftConfig, ref_channel: int = 0
) -> TrainingScene:
    """
    STFT a scene and derive the feature and oracle activations.

    :param scene: Mixture and images.
    :type scene: Scene
    :param stft_config: Analysis settings.
    :type stft_config: StftConfig
    :param ref_channel: Reference microphone.
    :type ref_channel: int
    :return: Training data for the scene.
    :rtype: TrainingScene
    """
    x = stft(scene.mixture, stft_config)
    c = stft_sources(scene.images, stft_config)
    return TrainingScene(
        x=x.values,
        c=c,
        feature=input_feature(x).values,
        act_star=oracle_activation(c).values,
        ref_channel=ref_channel,
    )


def check_loss_heads(model: MaskEstimator, loss: str) -> None:
    """
    The posterior loss needs the activation head; the others must run
    without it.

    :raises IncompatibleMethodError: On a mismatch.
    """
    if loss == "l1" and not model.has_activation_head:
        raise IncompatibleMethodError(
            "loss l1 trains the activation head; build the model with "
            "with_activation=True"
        )
    if loss != "l1" and model.has_activation_head:
        raise IncompatibleMethodError(
            f"loss {loss} does not train activations; build the model "
            "without the activation head"
        )


def chunk_objective(
    model: MaskEstimator,
    scene: TrainingScene,
    loss: str,
    start: int,
    stop: int,
    loading: float = DEFAULT_LOADING,
) -> torch.Tensor:
    """
    Normalized PIT loss of one chunk, differentiable w.r.t. the model.

    L1 and L2 totals are divided by ``T*F`` of the chunk; PSA is already
    normalized.

    :param model: The estimator.
    :type model: MaskEstimator
    :param scene: Training data.
    :type scene: TrainingScene
    :param loss: ``"psa"``, ``"l1"`` or ``"l2"``.
    :type loss: str
    :param start: First frame of the chunk.
    :type start: int
    :param stop: One past the last frame.
    :type stop: int
    :param loading: Relative diagonal loading.
    :type loading: float
    :return: Scalar tensor.
    :rtype: torch.Tensor
    """
    mask, activation = model(
        torch.as_tensor(scene.feature, dtype=torch.float64)
    )
    window = slice(start, stop)
    totals, _ = pit_totals(
        loss,
        mask[window],
        scene.x[window],
        scene.references(loss)[window],
        None if activation is None else activation[window],
        scene.ref_channel,
        loading,
    )
    best = totals.min()
    if loss == "psa":
        return best
    return best / ((stop - start) * model.n_freq)


def train(
    model: MaskEstimator,
    dataset: Sequence[TrainingScene],
    cfg: TrainConfig,
    loading: float = DEFAULT_LOADING,
) -> tuple[MaskEstimator, list[float]]:
    """
    Adam on one randomly drawn chunk per step.

    :param model: The estimator, updated in place.
    :type model: MaskEstimator
    :param dataset: Prepared scenes.
    :type dataset: Sequence[TrainingScene]
    :param cfg: Optimizer and schedule.
    :type cfg: TrainConfig
    :param loading: Relative diagonal loading inside the losses.
    :type loading: float
    :return: The model and the loss of every step.
    :rtype: tuple[MaskEstimator, list[float]]
    :raises TrainingDivergedError: If a step loss is NaN or Inf.
    """
    if not dataset:
        raise ValueError("training needs at least one scene")
    check_loss_heads(model, cfg.loss)
    rng = np.random.default_rng(cfg.seed)
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=cfg.learning_rate,
        betas=(0.9, 0.999),
        eps=1e-8,
    )
    curve: list[float] = []
    for step in range(cfg.steps):
        scene = dataset[int(rng.integers(len(dataset)))]
        length = min(cfg.chunk, scene.n_frames)
        start = int(rng.integers(scene.n_frames - length + 1))
        optimizer.zero_grad()
        objective = chunk_objective(
            model, scene, cfg.loss, start, start + length, loading
        )
        value = float(objective.detach())
        if not math.isfinite(value):
            raise TrainingDivergedError(step, curve[-1] if curve else None)
        objective.backward()
        optimizer.step()
        curve.append(value)
        if cfg.log_every and (step + 1) % cfg.log_every == 0:
            logger.info(
                "step %d/%d loss=%s %.6f", step + 1, cfg.steps, cfg.loss, value
            )
    return model, curve


def parameter_grad_check(
    model: MaskEstimator,
    scene: TrainingScene,
    loss: str,
    n_checked: int = 10,
    seed: int = 0,
    step: float = 1e-6,
    loading: float = DEFAULT_LOADING,
) -> float:
    """
    Autograd vs central differences on randomly chosen parameters.

    :param model: The estimator (left unchanged).
    :type model: MaskEstimator
    :param scene: Training data; the first chunk of up to 100 frames is
        used.
    :type scene: TrainingScene
    :param loss: ``"psa"``, ``"l1"`` or ``"l2"``.
    :type loss: str
    :param n_checked: Number of parameters checked.
    :type n_checked: int
    :param seed: Seed choosing the checked parameters.
    :type seed: int
    :param step: Finite-difference step.
    :type step: float
    :param loading: Relative diagonal loading.
    :type loading: float
    :return: Maximum relative error over the checked parameters.
    :rtype: float
    """
    check_loss_heads(model, loss)
    stop = min(100, scene.n_frames)
    model.zero_grad()
    chunk_objective(model, scene, loss, 0, stop, loading).backward()
    analytic = nn.utils.parameters_to_vector(
        [p.grad for p in model.parameters()]
    ).detach()
    base = model.parameter_vector()
    rng = np.random.default_rng(seed)
    count = min(n_checked, base.numel())
    index = rng.choice(base.numel(), size=count, replace=False)
    numeric = np.empty(len(index))
    try:
        with torch.no_grad():
            for k, i in enumerate(index):
                values = []
                for sign in (1.0, -1.0):
                    shifted = base.clone()
                    shifted[i] += sign * step
                    model.load_parameter_vector(shifted)
                    objective = chunk_objective(
                        model, scene, loss, 0, stop, loading
                    )
                    values.append(float(objective))
                numeric[k] = (values[0] - values[1]) / (2 * step)
    finally:
        model.load_parameter_vector(base)
    return relative_error(analytic.numpy()[index], numeric)
