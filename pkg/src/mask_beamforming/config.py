"""
Configuration for the mask-beamforming package.

Every settings object is a frozen dataclass that round-trips through
``to_dict`` / ``from_dict``. ``ExperimentSettings.from_json`` additionally
reports schema violations with the line of the offending key.
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Optional

from mask_beamforming.errors import ConfigError

LOSSES = ("psa", "l1", "l2")
METHODS = ("psa", "l1", "l2", "oracle_psm")
BEAMFORMERS = ("mvdr", "gev", "mwf_ti", "mwf_tv")
WINDOWS = ("hann", "rect")

# Microphone arrangements (adjacent spacings in cm) and RT60 per condition.
CONDITIONS: dict[str, dict[str, Any]] = {
    "train": {
        "arrangements": ((3, 3, 3, 8, 3, 3, 3), (8, 8, 8, 8, 8, 8, 8)),
        "rt60": 0.16,
    },
    "condition1": {
        "arrangements": ((3, 3, 3, 8, 3, 3, 3), (8, 8, 8, 8, 8, 8, 8)),
        "rt60": 0.16,
    },
    "condition2": {
        "arrangements": ((4, 4, 4, 8, 4, 4, 4),),
        "rt60": 0.16,
    },
    "condition3": {
        "arrangements": ((4, 4, 4, 8, 4, 4, 4),),
        "rt60": 0.36,
    },
}


def normalize_choice(value: str) -> str:
    """
    Map CLI spellings (``mwf-ti``, ``oracle-psm``) to internal identifiers.

    :param value: User supplied identifier.
    :type value: str
    :return: Identifier with dashes replaced by underscores, lowercased.
    :rtype: str
    """
    return str(value).strip().lower().replace("-", "_")


@dataclass(frozen=True)
class StftConfig:
    """
    Short-time Fourier transform settings.

    :ivar window_length: Analysis window length in samples.
    :ivar hop: Frame shift in samples.
    :ivar fft_size: DFT size in samples (>= window_length).
    :ivar window: Taper identifier, ``"hann"`` or ``"rect"``.
    """

    window_length: int = 256
    hop: int = 64
    fft_size: int = 256
    window: str = "hann"

    def __post_init__(self) -> None:
        if self.window_length < 2 or self.hop < 1:
            raise ValueError(
                f"window_length ({self.window_length}) must be >= 2 and "
                f"hop ({self.hop}) >= 1"
            )
        if self.fft_size < self.window_length:
            raise ValueError(
                f"fft_size ({self.fft_size}) must be >= window_length "
                f"({self.window_length})"
            )
        if self.window not in WINDOWS:
            raise ValueError(
                f"window must be one of {WINDOWS}, got {self.window!r}"
            )

    @property
    def n_freq(self) -> int:
        """Number of one-sided frequency bins."""
        return self.fft_size // 2 + 1

    @classmethod
    def for_sample_rate(
        cls,
        sample_rate: int,
        window_ms: float = 32.0,
        shift_ms: float = 8.0,
        window: str = "hann",
    ) -> "StftConfig":
        """
        Build a config from durations; 8 kHz gives 256/64 samples.

        :param sample_rate: Sampling rate in Hz.
        :type sample_rate: int
        :param window_ms: Window duration in milliseconds.
        :type window_ms: float
        :param shift_ms: Frame shift in milliseconds.
        :type shift_ms: float
        :param window: Taper identifier.
        :type window: str
        :return: The matching configuration.
        :rtype: StftConfig
        """
        length = int(round(sample_rate * window_ms / 1000.0))
        hop = int(round(sample_rate * shift_ms / 1000.0))
        return cls(
            window_length=length, hop=hop, fft_size=length, window=window
        )

    def to_dict(self) -> dict:
        """
        Convert the StftConfig to a dictionary.

        :return: Dictionary representation of the settings.
        :rtype: dict
        """
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "StftConfig":
        """
        Create a StftConfig from a dictionary.

        :param data: Dictionary containing the settings.
        :type data: dict
        :return: StftConfig instance.
        :rtype: StftConfig
        """
        return cls(**data)


@dataclass(frozen=True)
class SceneConfig:
    """
    Geometry and acoustics of one synthetic scene.

    :ivar n_sources: Number of talkers.
    :ivar n_mics: Number of microphones drawn from the arrangement.
    :ivar sample_rate: Sampling rate in Hz.
    :ivar rt60: Reverberation time in seconds (0 for anechoic).
    :ivar mic_spacing_cm: Adjacent spacings of the linear arrangement.
    :ivar azimuths_deg: Fixed source azimuths, or None to draw them.
    :ivar distance: Source-to-array-centre distance in metres.
    :ivar duration: Source duration in seconds (synthetic sources).
    :ivar drr_db: Direct-to-reverberant energy ratio of synthetic RIRs.
    :ivar min_separation_deg: Minimum azimuth gap between drawn sources.
    :ivar random_mic_pair: Draw ``n_mics`` microphones at random.
    :ivar seed: Seed for every random draw of the scene.
    """

    n_sources: int = 2
    n_mics: int = 2
    sample_rate: int = 8000
    rt60: float = 0.16
    mic_spacing_cm: tuple[float, ...] = (3, 3, 3, 8, 3, 3, 3)
    azimuths_deg: Optional[tuple[float, ...]] = None
    distance: float = 1.0
    duration: float = 3.0
    drr_db: float = 3.0
    min_separation_deg: float = 20.0
    random_mic_pair: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_sources < 1:
            raise ValueError(f"n_sources must be >= 1, got {self.n_sources}")
        if self.n_mics < 1:
            raise ValueError(f"n_mics must be >= 1, got {self.n_mics}")
        if self.n_mics > len(self.mic_spacing_cm) + 1:
            raise ValueError(
                f"n_mics ({self.n_mics}) exceeds the "
                f"{len(self.mic_spacing_cm) + 1} microphones of the "
                "arrangement"
            )
        if self.sample_rate <= 0:
            raise ValueError(
                f"sample_rate must be > 0, got {self.sample_rate}"
            )
        if self.rt60 < 0:
            raise ValueError(f"rt60 must be >= 0, got {self.rt60}")
        if self.distance <= 0 or self.duration <= 0:
            raise ValueError("distance and duration must be > 0")
        if (
            self.azimuths_deg is not None
            and len(self.azimuths_deg) != self.n_sources
        ):
            raise ValueError(
                f"azimuths_deg has {len(self.azimuths_deg)} entries for "
                f"{self.n_sources} sources"
            )

    def to_dict(self) -> dict:
        """
        Convert the SceneConfig to a dictionary.

        :return: Dictionary representation of the settings.
        :rtype: dict
        """
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SceneConfig":
        """
        Create a SceneConfig from a dictionary.

        :param data: Dictionary containing the settings.
        :type data: dict
        :return: SceneConfig instance.
        :rtype: SceneConfig
        """
        data = dict(data)
        if "mic_spacing_cm" in data:
            data["mic_spacing_cm"] = tuple(data["mic_spacing_cm"])
        if data.get("azimuths_deg") is not None:
            data["azimuths_deg"] = tuple(data["azimuths_deg"])
        return cls(**data)


@dataclass(frozen=True)
class SceneSetConfig:
    """
    A deterministic set of scenes.

    :ivar count: Number of scenes.
    :ivar condition: Optional preset name from ``CONDITIONS``; overrides
        the arrangement and RT60 of ``scene``.
    :ivar scene: Template scene configuration.
    """

    count: int = 10
    condition: Optional[str] = None
    scene: SceneConfig = field(default_factory=SceneConfig)

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if self.condition is not None and self.condition not in CONDITIONS:
            raise ValueError(
                f"unknown condition {self.condition!r}; expected one of "
                f"{tuple(CONDITIONS)}"
            )

    def to_dict(self) -> dict:
        """
        Convert the SceneSetConfig to a dictionary.

        :return: Dictionary representation of the settings.
        :rtype: dict
        """
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSetConfig":
        """
        Create a SceneSetConfig from a dictionary.

        :param data: Dictionary containing the settings.
        :type data: dict
        :return: SceneSetConfig instance.
        :rtype: SceneSetConfig
        """
        data = dict(data)
        scene = SceneConfig.from_dict(data.pop("scene", {}))
        return cls(scene=scene, **data)


@dataclass(frozen=True)
class EstimatorConfig:
    """
    Shape of the feedforward mask estimator.

    :ivar context: Frames of context on each side of the current frame.
    :ivar hidden: Widths of the hidden layers.
    """

    context: int = 3
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self) -> None:
        if self.context < 0:
            raise ValueError(f"context must be >= 0, got {self.context}")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError(f"hidden widths must be >= 1, got {self.hidden}")

    def to_dict(self) -> dict:
        """
        Convert the EstimatorConfig to a dictionary.

        :return: Dictionary representation of the settings.
        :rtype: dict
        """
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EstimatorConfig":
        """
        Create an EstimatorConfig from a dictionary.

        :param data: Dictionary containing the settings.
        :type data: dict
        :return: EstimatorConfig instance.
        :rtype: EstimatorConfig
        """
        data = dict(data)
        if "hidden" in data:
            data["hidden"] = tuple(data["hidden"])
        return cls(**data)


@dataclass(frozen=True)
class TrainConfig:
    """
    Optimizer and schedule for the mask estimator.

    :ivar learning_rate: Adam step size.
    :ivar steps: Number of parameter updates.
    :ivar chunk: Frames per training chunk.
    :ivar seed: Seed for initialization and chunk sampling.
    :ivar loss: ``"psa"``, ``"l1"`` or ``"l2"``.
    :ivar n_scenes: Number of training scenes generated by the CLI.
    :ivar log_every: Steps between progress log lines.
    """

    learning_rate: float = 1e-3
    steps: int = 2000
    chunk: int = 100
    seed: int = 0
    loss: str = "l2"
    n_scenes: int = 20
    log_every: int = 100

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(
                f"learning_rate must be > 0, got {self.learning_rate}"
            )
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.chunk < 2:
            raise ValueError(f"chunk must be >= 2, got {self.chunk}")
        if normalize_choice(self.loss) not in LOSSES:
            raise ValueError(
                f"loss must be one of {LOSSES}, got {self.loss!r}"
            )
        object.__setattr__(self, "loss", normalize_choice(self.loss))

    def to_dict(self) -> dict:
        """
        Convert the TrainConfig to a dictionary.

        :return: Dictionary representation of the settings.
        :rtype: dict
        """
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        """
        Create a TrainConfig from a dictionary.

        :param data: Dictionary containing the settings.
        :type data: dict
        :return: TrainConfig instance.
        :rtype: TrainConfig
        """
        return cls(**data)


@dataclass(frozen=True)
class EvaluationSettings:
    """
    Beamforming and metric settings.

    :ivar filter_len: BSS-eval distortion filter length in taps.
    :ivar reference_mic: Reference microphone for masks and outputs.
    :ivar loading: Relative diagonal loading on inverted covariances.
    :ivar cd_order: Highest cepstral coefficient used by CD.
    :ivar cd_gate_db: Frames quieter than the loudest by more than this
        are excluded from CD.
    :ivar trim_edges: Drop one window of samples at both ends first.
    """

    filter_len: int = 512
    reference_mic: int = 0
    loading: float = 1e-6
    cd_order: int = 12
    cd_gate_db: float = 40.0
    trim_edges: bool = True

    def __post_init__(self) -> None:
        if self.filter_len < 1:
            raise ValueError(f"filter_len must be >= 1, got {self.filter_len}")
        if self.reference_mic < 0:
            raise ValueError("reference_mic must be >= 0")
        if self.loading < 0:
            raise ValueError(f"loading must be >= 0, got {self.loading}")
        if self.cd_order < 1:
            raise ValueError(f"cd_order must be >= 1, got {self.cd_order}")

    def to_dict(self) -> dict:
        """
        Convert the EvaluationSettings to a dictionary.

        :return: Dictionary representation of the settings.
        :rtype: dict
        """
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EvaluationSettings":
        """
        Create EvaluationSettings from a dictionary.

        :param data: Dictionary containing the settings.
        :type data: dict
        :return: EvaluationSettings instance.
        :rtype: EvaluationSettings
        """
        return cls(**data)


# Expected JSON value kinds per section, checked before construction.
_INT = "int"
_FLOAT = "float"
_STR = "str"
_BOOL = "bool"
_NUMBERS = "numbers"
_OPT_STR = "str?"
_OPT_NUMBERS = "numbers?"
_SECTION = "section"

_SCHEMA: dict[str, dict[str, str]] = {
    "": {
        "name": _STR,
        "seed": _INT,
        "stft": _SECTION,
        "scenes": _SECTION,
        "model": _SECTION,
        "train": _SECTION,
        "evaluation": _SECTION,
    },
    "stft": {
        "window_length": _INT,
        "hop": _INT,
        "fft_size": _INT,
        "window": _STR,
    },
    "scenes": {"count": _INT, "condition": _OPT_STR, "scene": _SECTION},
    "scenes.scene": {
        "n_sources": _INT,
        "n_mics": _INT,
        "sample_rate": _INT,
        "rt60": _FLOAT,
        "mic_spacing_cm": _NUMBERS,
        "azimuths_deg": _OPT_NUMBERS,
        "distance": _FLOAT,
        "duration": _FLOAT,
        "drr_db": _FLOAT,
        "min_separation_deg": _FLOAT,
        "random_mic_pair": _BOOL,
        "seed": _INT,
    },
    "model": {"context": _INT, "hidden": _NUMBERS},
    "train": {
        "learning_rate": _FLOAT,
        "steps": _INT,
        "chunk": _INT,
        "seed": _INT,
        "loss": _STR,
        "n_scenes": _INT,
        "log_every": _INT,
    },
    "evaluation": {
        "filter_len": _INT,
        "reference_mic": _INT,
        "loading": _FLOAT,
        "cd_order": _INT,
        "cd_gate_db": _FLOAT,
        "trim_edges": _BOOL,
    },
}


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


_CHECKS: dict[str, Callable[[Any], bool]] = {
    _INT: lambda v: isinstance(v, int) and not isinstance(v, bool),
    _FLOAT: _is_number,
    _STR: lambda v: isinstance(v, str),
    _BOOL: lambda v: isinstance(v, bool),
    _NUMBERS: lambda v: isinstance(v, list) and all(map(_is_number, v)),
    _OPT_STR: lambda v: v is None or isinstance(v, str),
    _OPT_NUMBERS: lambda v: v is None
    or (isinstance(v, list) and all(map(_is_number, v))),
    _SECTION: lambda v: isinstance(v, dict),
}


class _KeyLocator:
    """Find the line of a (nested) key inside raw JSON text."""

    def __init__(self, text: str | None):
        self._text = text

    def line_of(self, path: tuple[str, ...]) -> int | None:
        """
        Return the 1-based line of the last key of ``path``.

        :param path: Keys from the document root.
        :type path: tuple[str, ...]
        :return: Line number, or None without source text.
        :rtype: int | None
        """
        if self._text is None or not path:
            return None
        offset = 0
        for key in path:
            match = re.compile(rf'"{re.escape(key)}"\s*:').search(
                self._text, offset
            )
            if match is None:
                return None
            offset = match.start()
        return self._text.count("\n", 0, offset) + 1


def _validate(
    data: Any, section: str, locator: _KeyLocator, source: str
) -> None:
    path = tuple(section.split(".")) if section else ()
    if not isinstance(data, dict):
        raise ConfigError(
            f"section {section or '<root>'!r} must be an object",
            source,
            locator.line_of(path),
        )
    schema = _SCHEMA[section]
    for key, value in data.items():
        key_path = path + (key,)
        if key not in schema:
            raise ConfigError(
                f"unknown key {key!r} in section {section or '<root>'!r}",
                source,
                locator.line_of(key_path),
            )
        kind = schema[key]
        if not _CHECKS[kind](value):
            raise ConfigError(
                f"key {'.'.join(key_path)!r} expects {kind}, "
                f"got {type(value).__name__}",
                source,
                locator.line_of(key_path),
            )
        if kind == _SECTION:
            _validate(value, ".".join(key_path), locator, source)


@dataclass(frozen=True)
class ExperimentSettings:
    """
    Complete experiment configuration read by the CLI.

    :ivar name: Run name (directory under ``runs/``).
    :ivar seed: Master seed.
    :ivar stft: STFT settings.
    :ivar scenes: Scene set settings.
    :ivar model: Mask estimator shape.
    :ivar train: Training settings.
    :ivar evaluation: Beamforming and metric settings.
    """

    name: str = "default"
    seed: int = 0
    stft: StftConfig = field(default_factory=StftConfig)
    scenes: SceneSetConfig = field(default_factory=SceneSetConfig)
    model: EstimatorConfig = field(default_factory=EstimatorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)

    def to_dict(self) -> dict:
        """
        Convert the ExperimentSettings to a dictionary.

        :return: Dictionary representation of the settings.
        :rtype: dict
        """
        return asdict(self)

    def replace(self, **changes: Any) -> "ExperimentSettings":
        """
        Return a copy with top-level fields replaced.

        :return: Updated settings.
        :rtype: ExperimentSettings
        """
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ExperimentSettings(**values)

    @classmethod
    def from_dict(
        cls,
        data: dict,
        source: str = "<dict>",
        text: str | None = None,
    ) -> "ExperimentSettings":
        """
        Create ExperimentSettings from a dictionary, validating the schema.

        :param data: Dictionary containing the settings.
        :type data: dict
        :param source: Name used in diagnostics.
        :type source: str
        :param text: Raw JSON text, used to locate offending keys.
        :type text: str | None
        :return: ExperimentSettings instance.
        :rtype: ExperimentSettings
        :raises ConfigError: On unknown keys, wrong types or bad values.
        """
        locator = _KeyLocator(text)
        _validate(data, "", locator, source)
        builders: dict[str, Callable[[dict], Any]] = {
            "stft": StftConfig.from_dict,
            "scenes": SceneSetConfig.from_dict,
            "model": EstimatorConfig.from_dict,
            "train": TrainConfig.from_dict,
            "evaluation": EvaluationSettings.from_dict,
        }
        values: dict[str, Any] = {}
        for key, value in data.items():
            if key not in builders:
                values[key] = value
                continue
            try:
                values[key] = builders[key](value)
            except ValueError as exc:
                raise ConfigError(
                    f"invalid section {key!r}: {exc}",
                    source,
                    locator.line_of((key,)),
                ) from exc
        return cls(**values)

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentSettings":
        """
        Read and validate a JSON configuration file.

        :param path: Path to the JSON file.
        :type path: str | Path
        :return: ExperimentSettings instance.
        :rtype: ExperimentSettings
        :raises ConfigError: On syntax or schema errors.
        """
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}", str(p)) from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(exc.msg, str(p), exc.lineno) from exc
        return cls.from_dict(data, source=str(p), text=text)
