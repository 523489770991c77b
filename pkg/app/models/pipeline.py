"""State and events of the presence-to-lighting state machine."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union


class TrackStatus(str, Enum):
    SENSING = "Sensing"
    DETECTING = "Detecting"
    IDENTIFYING = "Identifying"
    TRACKING = "Tracking"
    LOST = "Lost"


# Edges of the detect -> recognize -> track flow; anything else is a bug.
TRACK_TRANSITIONS: dict[TrackStatus, frozenset[TrackStatus]] = {
    TrackStatus.SENSING: frozenset({TrackStatus.DETECTING}),
    TrackStatus.DETECTING: frozenset({TrackStatus.IDENTIFYING}),
    TrackStatus.IDENTIFYING: frozenset({TrackStatus.TRACKING}),
    TrackStatus.TRACKING: frozenset({TrackStatus.LOST}),
    TrackStatus.LOST: frozenset({TrackStatus.DETECTING}),
}


class LightingMode(str, Enum):
    OFF = "Off"
    DEFAULT = "Default"
    PROFILE = "Profile"
    PREEMPTIVE = "Preemptive"


@dataclass
class ZoneLighting:
    """Lighting mode of one zone and who it belongs to.

    `pir_tick` is a PIR trigger still waiting for the next frame to stamp
    the occupants who set it off;
    `occupied_at` and `owner_seen_at` drive the empty-zone and owner-release
    timeouts.
    """

    mode: LightingMode = LightingMode.OFF
    owner: Optional[str] = None
    active: bool = False
    pir_tick: Optional[int] = None
    occupied_at: Optional[int] = None
    owner_seen_at: Optional[int] = None


@dataclass(frozen=True)
class TrackUpdate:
    """A position fix taken on a frame, applied once the track stage completes."""

    tick: int
    cell: tuple[int, int]
    estimate: tuple[int, int]


@dataclass
class TrackState:
    """One occupant followed through the detect/recognize/track stages.

    `cell` is the occupant's true cell; `history_cells` holds the noisy
    estimates as StateIds, consecutive entries adjacent. `pir` is the
    (zone, tick) of the PIR trigger this occupant set off, cleared once it
    has been matched by a Profile command. `zone` is the zone of the last
    applied position fix.
    """

    occupant: int
    cell: tuple[int, int]
    status: TrackStatus = TrackStatus.SENSING
    person: Optional[str] = None
    true_person: Optional[str] = None  # ground truth, read only by the recognizer oracle
    history_cells: list[int] = field(default_factory=list)
    history_ticks: list[int] = field(default_factory=list)
    busy_until: Optional[int] = None
    stage: Optional[str] = None
    stage_outcome: Optional[str] = None
    recognized_at: Optional[int] = None
    frames_tracked: int = 0
    pending_update: Optional[TrackUpdate] = None
    pir: Optional[tuple[int, int]] = None
    zone: Optional[int] = None


@dataclass(frozen=True)
class Occupant:
    """Ground truth for one person in a frame; only the oracles read `person`."""

    key: int
    person: Optional[str]
    cell: tuple[int, int]


@dataclass(frozen=True)
class PirTriggered:
    zone: int
    tick: int


@dataclass(frozen=True)
class Frame:
    tick: int
    occupants: tuple[Occupant, ...] = ()


@dataclass(frozen=True)
class Tick:
    tick: int


Event = Union[PirTriggered, Frame, Tick]

# Same-tick ordering of a replay: the frame captured at t is processed before
# the PIR trigger at t, and wake-ups come last.
EVENT_ORDER = {Frame: 0, PirTriggered: 1, Tick: 2}


@dataclass(frozen=True)
class LogEntry:
    """One `tick,kind,zone,person,detail` record of the event log."""

    tick: int
    kind: str
    zone: str = "-"
    person: str = "-"
    detail: str = ""

    def to_line(self) -> str:
        return f"{self.tick},{self.kind},{self.zone},{self.person},{self.detail}"


@dataclass(frozen=True)
class PendingForecast:
    """A forecast result that reaches the lighting controller at `due`."""

    due: int
    person: str
    source: int
    target: int
    weight: float


@dataclass
class PipelineState:
    """Everything the state machine carries between events.

    `journal` only holds the entries produced by the most recent event;
    `forecasts` holds forecasts still in flight, in issue order.
    """

    tick: int = 0
    zones: dict[int, ZoneLighting] = field(default_factory=dict)
    tracks: dict[int, TrackState] = field(default_factory=dict)
    wakeups: list[int] = field(default_factory=list)
    forecasts: list[PendingForecast] = field(default_factory=list)
    journal: list[LogEntry] = field(default_factory=list)
