"""Pydantic schemas for profiles, commands, scenarios and run configuration."""

from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class LightingSettings(BaseModel):
    """Colour and brightness a lamp is set to."""

    model_config = ConfigDict(frozen=True)

    red: int = Field(..., ge=0, le=255, description="Red channel")
    green: int = Field(..., ge=0, le=255, description="Green channel")
    blue: int = Field(..., ge=0, le=255, description="Blue channel")
    intensity: int = Field(..., ge=0, le=100, description="Intensity in percent")


class ResidentProfile(BaseModel):
    """A resident's identity and preferred lighting."""

    model_config = ConfigDict(frozen=True)

    person_id: str = Field(..., min_length=1, description="Unique person id", examples=["A"])
    display_name: str = Field(..., description="Human readable name")
    identity_token: str = Field(
        ...,
        description="Stand-in for the enrolled face embeddings"
    )
    lighting: LightingSettings = Field(..., description="Preferred lighting")

    @field_validator("person_id")
    @classmethod
    def validate_person_id(cls, v: str) -> str:
        """Person ids end up in log records, so they must be one token."""
        if not v.strip() or any(ch.isspace() or ch == "," for ch in v):
            raise ValueError("person_id must be a non-empty token without spaces or commas")
        return v


class SetCommand(BaseModel):
    """Set a zone's lamp to a colour and intensity."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["set"] = "set"
    zone: str
    red: int = Field(..., ge=0, le=255)
    green: int = Field(..., ge=0, le=255)
    blue: int = Field(..., ge=0, le=255)
    intensity: int = Field(..., ge=0, le=100)

    @classmethod
    def from_settings(cls, zone: str, lighting: LightingSettings) -> "SetCommand":
        return cls(zone=zone, **lighting.model_dump())


class OffCommand(BaseModel):
    """Switch a zone's lamp off."""

    model_config = ConfigDict(frozen=True)

    kind: Literal["off"] = "off"
    zone: str


LightingCommand = Union[SetCommand, OffCommand]


class OracleConfig(BaseModel):
    """Noise and latency of the simulated detector and recognizer.

    Probabilities and stage latencies default to the figures reported for the
    physical system (detector 45 ms, recognizer 58 ms at 95.12 % accuracy,
    tracker 17 ms, forecaster 79 ms).
    """

    p_detect: float = Field(0.95, ge=0.0, le=1.0)
    sigma: float = Field(0.5, ge=0.0, description="Localization noise in cells")
    p_correct_id: float = Field(0.9512, ge=0.0, le=1.0)
    detect_latency: int = Field(45, ge=0)
    recognize_latency: int = Field(58, ge=0)
    track_latency: int = Field(17, ge=0)
    forecast_latency: int = Field(79, ge=0)


class PipelineConfig(BaseModel):
    """Cadence and thresholds of the lighting state machine (ticks are ms)."""

    frame_interval: int = Field(42, gt=0)
    forecast_stride: int = Field(12, ge=1, description="Frames between forecasts")
    forecast_k: int = Field(5, ge=1, description="Paths per forecast; the heaviest one drives pre-lighting")
    preempt_threshold: float = Field(0.6, ge=0.0, le=1.0)
    empty_timeout: int = Field(1000, ge=0)
    history_window: int = Field(16, ge=1, description="Cells of history given to the forecaster")
    default_lighting: LightingSettings = LightingSettings(red=255, green=255, blue=255, intensity=60)


class ResidentScript(BaseModel):
    """Scripted ground-truth movement of one person through the house."""

    person: Optional[str] = Field(None, description="Profile id, or null for a stranger")
    enter_tick: int = Field(..., ge=0)
    waypoints: list[tuple[int, int]] = Field(..., min_length=1)
    exit_tick: Optional[int] = Field(None, ge=0)
    move_interval: Optional[int] = Field(None, gt=0, description="Ticks per cell moved")

    @model_validator(mode="after")
    def validate_exit(self) -> "ResidentScript":
        if self.exit_tick is not None and self.exit_tick <= self.enter_tick:
            raise ValueError("exit_tick must come after enter_tick")
        return self


class Scenario(BaseModel):
    """A scripted replay: who walks where, and how the oracles behave."""

    name: str = "scenario"
    frame_interval: int = Field(42, gt=0)
    move_interval: int = Field(504, gt=0)
    end_tick: int = Field(..., gt=0)
    seed: int = 7
    residents: list[ResidentScript] = Field(default_factory=list)
    oracles: OracleConfig = Field(default_factory=OracleConfig)
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)

    def pipeline_config(self) -> PipelineConfig:
        return self.pipeline.model_copy(update={"frame_interval": self.frame_interval})


class TrainConfig(BaseModel):
    """Plain SGD settings for maximizing the demonstration log-likelihood."""

    learning_rate: float = Field(0.05, gt=0.0)
    epochs: int = Field(30, ge=1)
    batch: int = Field(32, ge=1, description="Demonstrations per gradient step")
    seed: int = 7
    horizon: int = Field(64, ge=1)
    kind: Literal["linear", "mlp"] = "linear"
    hidden: int = Field(16, ge=1)
    init_scale: float = Field(0.1, ge=0.0, description="Std of the MLP's initial weights")


class ForecastConfig(BaseModel):
    """Sampling and clustering settings of the forecaster."""

    samples: int = Field(200, ge=1, description="Paths sampled per forecast (M)")
    points: int = Field(20, ge=2, description="Points per resampled path (L)")
    k_values: list[int] = Field(default_factory=lambda: [20, 5])
    seed: int = 7
    horizon: int = Field(64, ge=1)
    history_steps: int = Field(4, ge=0, description="Observed moves in each evaluation history")

    @field_validator("k_values")
    @classmethod
    def validate_k_values(cls, v: list[int]) -> list[int]:
        if not v or any(k < 1 for k in v):
            raise ValueError("k_values must be a non-empty list of positive integers")
        return v


class RunConfig(BaseModel):
    """Resolved settings of one command-line invocation."""

    subcommand: str
    map_path: Optional[str] = None
    seed: int = 7
    horizon: int = Field(64, ge=1)
    out_dir: str = "out"
    options: dict[str, Any] = Field(default_factory=dict, description="Subcommand-specific flags")


class EpisodeRecord(BaseModel):
    """Time from a zone's PIR trigger to its first Profile command."""

    person: str
    zone: str
    pir_tick: int
    command_tick: int
    latency: int


class LatencyReport(BaseModel):
    """Episode latencies of one scenario replay, in simulated ms."""

    scenario: str
    episodes: list[EpisodeRecord] = Field(default_factory=list)
    mean_ms: Optional[float] = None
    max_ms: Optional[int] = None
    stage_latencies_ms: dict[str, int] = Field(default_factory=dict)
    reference_episode_ms: int = Field(1400, description="Episode duration measured on the physical system")
