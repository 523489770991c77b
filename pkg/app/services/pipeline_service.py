"""Presence-to-lighting state machine and scenario replay.

A PIR trigger switches a dark zone to the default light. Camera frames then
drive each occupant through detection and recognition; a recognised resident
gets their profile lighting in the zone unless somebody already owns it.
Tracked residents are forecast every few frames and the zone they are
heading for may be lit ahead of time. Zones nobody has been seen in for the
timeout are switched off.

Detector and recognizer are oracles over the ground truth carried in the
frames, with configurable hit rates, noise and stage latencies. Time is an
integer tick of one simulated millisecond. Each position fix of a tracked
resident lands one track latency after its frame, and each forecast reaches
the lights one forecast latency after it was started. An episode runs from
the PIR trigger a resident set off to their first profile command in that
zone.
"""

import copy
import heapq
import logging
import re
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from app.core.exceptions import ScenarioReferencesUnknownProfile, StaleEvent, UnknownZone
from app.models.forecast import ForecastSet, GoalPosterior, ObservedHistory
from app.models.grid import GridMap, Mdp
from app.models.pipeline import (
    EVENT_ORDER,
    TRACK_TRANSITIONS,
    Event,
    Frame,
    LightingMode,
    LogEntry,
    Occupant,
    PendingForecast,
    PipelineState,
    PirTriggered,
    Tick,
    TrackState,
    TrackStatus,
    TrackUpdate,
    ZoneLighting,
)
from app.models.schemas import (
    EpisodeRecord,
    LatencyReport,
    LightingCommand,
    OffCommand,
    OracleConfig,
    PipelineConfig,
    ResidentProfile,
    Scenario,
    SetCommand,
)
from app.services.mdp_service import cell_of, shortest_path, state_of
from app.utils.lamp_protocol import encode

logger = logging.getLogger(__name__)

LOG_HEADER = "tick,kind,zone,person,detail"

_UNOWNED = (LightingMode.OFF, LightingMode.DEFAULT)
_CLAIMABLE = (LightingMode.OFF, LightingMode.DEFAULT, LightingMode.PREEMPTIVE)
_EPISODE_DETAIL = re.compile(r"^pir=(\d+) latency=(\d+)$")


class PathForecaster(Protocol):
    def forecast(self, history: ObservedHistory, k: int, samples: Optional[int] = None,
                 seed: Optional[int] = None) -> tuple[ForecastSet, GoalPosterior]:
        ...


@dataclass
class PipelineContext:
    """Everything process_event reads but does not own."""

    grid: GridMap
    mdp: Mdp
    profiles: dict[str, ResidentProfile]
    oracles: OracleConfig = field(default_factory=OracleConfig)
    config: PipelineConfig = field(default_factory=PipelineConfig)
    forecaster: Optional[PathForecaster] = None
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(7))


def initial_state(grid: GridMap) -> PipelineState:
    return PipelineState(zones={zone.id: ZoneLighting() for zone in grid.zones})


def process_event(state: PipelineState, event: Event,
                  context: PipelineContext) -> tuple[PipelineState, list[LightingCommand]]:
    """
    Advance the state machine by one event.

    The input state is left untouched; the returned state's journal holds the
    log entries of this event only.

    Raises:
        StaleEvent: The event is older than the state
        UnknownZone: The event names a zone or cell outside every zone
    """
    if event.tick < state.tick:
        raise StaleEvent(event.tick, state.tick)
    state = copy.deepcopy(state)
    state.tick = event.tick
    state.journal = []
    step = _Step(state, context)
    if isinstance(event, PirTriggered):
        step.pir(event)
    elif isinstance(event, Frame):
        step.frame(event)
    else:
        step.wake()
    return state, step.commands


class _Step:
    """Mutates one copied state in response to one event."""

    def __init__(self, state: PipelineState, context: PipelineContext):
        self.state = state
        self.ctx = context
        self.commands: list[LightingCommand] = []

    @property
    def tick(self) -> int:
        return self.state.tick

    # --- bookkeeping -------------------------------------------------------------

    def zone_of(self, cell: tuple[int, int]) -> int:
        grid = self.ctx.grid
        r, c = cell
        if not (0 <= r < grid.height and 0 <= c < grid.width) or grid.zone_of[r, c] < 0:
            raise UnknownZone(cell)
        return int(grid.zone_of[r, c])

    def zone_name(self, zone_id: int) -> str:
        return self.ctx.grid.zones[zone_id].name

    def log(self, kind: str, zone_id: Optional[int] = None, person: Optional[str] = None, detail: str = "") -> None:
        zone = self.zone_name(zone_id) if zone_id is not None else "-"
        self.state.journal.append(LogEntry(self.tick, kind, zone, person or "-", detail))

    def emit(self, zone_id: int, command: LightingCommand, person: Optional[str] = None) -> None:
        self.commands.append(command)
        self.log("cmd", zone_id, person, encode(command).rstrip("\n"))

    def set_status(self, key: int, track: TrackState, status: TrackStatus) -> None:
        if status not in TRACK_TRANSITIONS[track.status]:
            raise RuntimeError(f"Illegal track transition {track.status.value} -> {status.value}")
        previous, track.status = track.status, status
        self.log("status", self.zone_of(track.cell), track.person, f"occ{key}:{previous.value}->{status.value}")

    def members(self) -> dict[int, list[TrackState]]:
        occupied: dict[int, list[TrackState]] = {}
        for key in sorted(self.state.tracks):
            track = self.state.tracks[key]
            occupied.setdefault(self.zone_of(track.cell), []).append(track)
        return occupied

    # --- lighting ----------------------------------------------------------------

    def set_default(self, zone_id: int) -> None:
        zone = self.state.zones[zone_id]
        zone.mode, zone.owner, zone.owner_seen_at = LightingMode.DEFAULT, None, None
        self.emit(zone_id, SetCommand.from_settings(self.zone_name(zone_id), self.ctx.config.default_lighting))

    def set_profile(self, zone_id: int, person: str, mode: LightingMode = LightingMode.PROFILE,
                    track: Optional[TrackState] = None) -> None:
        zone = self.state.zones[zone_id]
        zone.mode, zone.owner, zone.owner_seen_at, zone.active = mode, person, self.tick, True
        lighting = self.ctx.profiles[person].lighting
        self.emit(zone_id, SetCommand.from_settings(self.zone_name(zone_id), lighting), person)
        if mode == LightingMode.PROFILE and track is not None and track.pir is not None and track.pir[0] == zone_id:
            pir_tick = track.pir[1]
            self.log("episode", zone_id, person, f"pir={pir_tick} latency={self.tick - pir_tick}")
            track.pir = None

    def set_off(self, zone_id: int) -> None:
        self.state.zones[zone_id] = ZoneLighting()
        self.emit(zone_id, OffCommand(zone=self.zone_name(zone_id)))

    def claim(self, track: TrackState, zone_id: int) -> None:
        """A recognised or arriving resident asks for their lighting."""
        person = track.person
        if person is None:
            return  # unknown: lighting stays as it is
        zone = self.state.zones[zone_id]
        if zone.owner == person and zone.mode == LightingMode.PROFILE:
            zone.owner_seen_at = self.tick
        elif zone.mode in _CLAIMABLE:
            self.set_profile(zone_id, person, track=track)

    # --- events ------------------------------------------------------------------

    def pir(self, event: PirTriggered) -> None:
        if event.zone not in self.state.zones:
            raise UnknownZone(event.zone)
        zone = self.state.zones[event.zone]
        self.log("pir", event.zone)
        zone.active = True
        zone.occupied_at = self.tick
        zone.pir_tick = self.tick
        if zone.mode == LightingMode.OFF:
            self.set_default(event.zone)
        for key in sorted(self.state.tracks):
            track = self.state.tracks[key]
            if self.zone_of(track.cell) != event.zone:
                continue
            track.pir = (event.zone, self.tick)
            if track.status == TrackStatus.SENSING:
                self.set_status(key, track, TrackStatus.DETECTING)

    def frame(self, event: Frame) -> None:
        present = {o.key: o for o in event.occupants}
        for occupant in event.occupants:
            self.zone_of(occupant.cell)
        for key in sorted(self.state.tracks):
            if key not in present:
                track = self.state.tracks.pop(key)
                self.log("exit", self.zone_of(track.cell), track.person, f"occ{key}")
        self.complete_stages()

        for key in sorted(present):
            occupant = present[key]
            track = self.state.tracks.get(key)
            arrived = track is None
            if track is None:
                track = TrackState(occupant=key, cell=occupant.cell, true_person=occupant.person)
                self.state.tracks[key] = track
                self.log("status", self.zone_of(occupant.cell), None, f"occ{key}:{TrackStatus.SENSING.value}")
            zone_id = self.zone_of(occupant.cell)
            arrived = arrived or self.zone_of(track.cell) != zone_id
            track.cell = occupant.cell
            pir_tick = self.state.zones[zone_id].pir_tick
            if arrived and pir_tick is not None:
                track.pir = (zone_id, pir_tick)
            self.observe(key, track)

        for zone in self.state.zones.values():
            zone.pir_tick = None
        self.check_zones(observed=True)

    def wake(self) -> None:
        self.complete_stages()
        self.check_zones(observed=False)

    # --- track lifecycle -----------------------------------------------------------

    def observe(self, key: int, track: TrackState) -> None:
        if track.busy_until is not None:
            return  # a stage is in flight; this frame is dropped for the track
        if track.status == TrackStatus.SENSING:
            if not self.state.zones[self.zone_of(track.cell)].active:
                return
            self.set_status(key, track, TrackStatus.DETECTING)
        if track.status == TrackStatus.LOST:
            self.set_status(key, track, TrackStatus.DETECTING)
        if track.status == TrackStatus.DETECTING:
            hit = self.ctx.rng.random() < self.ctx.oracles.p_detect
            self.begin_stage(key, track, "detect", "hit" if hit else "miss", self.ctx.oracles.detect_latency)
        elif track.status == TrackStatus.TRACKING:
            self.follow(key, track)

    def begin_stage(self, key: int, track: TrackState, stage: str, outcome: Optional[str], latency: int) -> None:
        track.stage, track.stage_outcome = stage, outcome
        if latency == 0:
            self.finish_stage(key, track)
            return
        track.busy_until = self.tick + latency
        self.state.wakeups.append(track.busy_until)

    def complete_stages(self) -> None:
        for key in sorted(self.state.tracks):
            track = self.state.tracks[key]
            if track.busy_until is not None and track.busy_until <= self.tick:
                self.finish_stage(key, track)
        arrived = [f for f in self.state.forecasts if f.due <= self.tick]
        self.state.forecasts = [f for f in self.state.forecasts if f.due > self.tick]
        for pending in arrived:
            self.deliver(pending)
        self.state.wakeups = sorted(w for w in set(self.state.wakeups) if w > self.tick)

    def finish_stage(self, key: int, track: TrackState) -> None:
        stage, outcome = track.stage, track.stage_outcome
        track.busy_until = track.stage = track.stage_outcome = None
        if stage == "detect":
            if outcome == "hit":
                self.set_status(key, track, TrackStatus.IDENTIFYING)
                self.begin_stage(key, track, "recognize", None, self.ctx.oracles.recognize_latency)
        elif stage == "recognize":
            track.person = self.recognize(track)
            track.recognized_at = self.tick
            track.frames_tracked = 0
            track.history_cells = [state_of(self.ctx.mdp, track.cell)]
            track.history_ticks = [self.tick]
            track.zone = self.zone_of(track.cell)
            self.set_status(key, track, TrackStatus.TRACKING)
            self.claim(track, track.zone)
        elif stage == "track":
            self.apply_update(track)

    def recognize(self, track: TrackState) -> Optional[str]:
        """Recognizer oracle: the true id, a wrong enrolled id, or Unknown (None)."""
        truth = track.true_person
        if truth is None:
            return None
        if self.ctx.rng.random() < self.ctx.oracles.p_correct_id:
            return truth
        others = sorted(p for p in self.ctx.profiles if p != truth)
        if not others:
            return None
        return others[int(self.ctx.rng.integers(len(others)))]

    def follow(self, key: int, track: TrackState) -> None:
        if not self.ctx.rng.random() < self.ctx.oracles.p_detect:
            self.set_status(key, track, TrackStatus.LOST)
            return
        track.pending_update = TrackUpdate(self.tick, track.cell, self.localize(track.cell))
        self.begin_stage(key, track, "track", None, self.ctx.oracles.track_latency)

    def apply_update(self, track: TrackState) -> None:
        """The track stage is done: extend the history, claim a new zone, maybe forecast."""
        update, track.pending_update = track.pending_update, None
        self.extend_history(track, update.estimate, update.tick)
        track.frames_tracked += 1

        zone_id = self.zone_of(update.cell)
        if zone_id != track.zone:
            track.zone = zone_id
            self.claim(track, zone_id)
        stride = self.ctx.config.forecast_stride
        if self.ctx.forecaster is not None and track.person is not None and track.frames_tracked % stride == 0:
            self.preempt(track)

    def localize(self, cell: tuple[int, int]) -> tuple[int, int]:
        """Detector oracle position: the true cell plus Gaussian noise, kept inside its zone."""
        sigma = self.ctx.oracles.sigma
        if sigma == 0.0:
            return cell
        dr, dc = self.ctx.rng.normal(0.0, sigma, size=2)
        estimate = (int(np.rint(cell[0] + dr)), int(np.rint(cell[1] + dc)))
        grid = self.ctx.grid
        if not grid.is_passable(*estimate) or grid.zone_of[estimate] != grid.zone_of[cell]:
            return cell
        return estimate

    def extend_history(self, track: TrackState, cell: tuple[int, int], tick: int) -> None:
        mdp = self.ctx.mdp
        s = state_of(mdp, cell)
        last = track.history_cells[-1]
        if s == last:
            return
        path = shortest_path(mdp, last, s)[1:]
        window = self.ctx.config.history_window
        track.history_cells = (track.history_cells + path)[-window:]
        track.history_ticks = (track.history_ticks + [tick] * len(path))[-window:]

    def preempt(self, track: TrackState) -> None:
        history = ObservedHistory(tuple(track.history_cells), tuple(track.history_ticks), track.person)
        seed = int(self.ctx.rng.integers(2**31))
        forecast, posterior = self.ctx.forecaster.forecast(history, k=self.ctx.config.forecast_k, seed=seed)
        r, c = (int(v) for v in np.rint(forecast.top[-1]))
        target = int(self.ctx.grid.zone_of[r, c])
        if target < 0:
            return
        pending = PendingForecast(
            due=self.tick + self.ctx.oracles.forecast_latency,
            person=track.person,
            source=track.zone,
            target=target,
            weight=posterior.weight_of(target),
        )
        if pending.due == self.tick:
            self.deliver(pending)
        else:
            self.state.forecasts.append(pending)
            self.state.wakeups.append(pending.due)

    def deliver(self, pending: PendingForecast) -> None:
        """A forecast reaches the controller; a confident one pre-lights its target."""
        target = pending.target
        self.log("forecast", pending.source, pending.person, f"{self.zone_name(target)}:{pending.weight:.3f}")
        if target == pending.source or pending.weight < self.ctx.config.preempt_threshold:
            return
        zone = self.state.zones[target]
        if zone.mode in _UNOWNED:
            zone.occupied_at = self.tick
            self.set_profile(target, pending.person, mode=LightingMode.PREEMPTIVE)

    # --- zone timeouts ----------------------------------------------------------------

    def check_zones(self, observed: bool) -> None:
        """Time out empty zones and absent owners; only frames count as sightings."""
        occupied = self.members()
        if observed:
            for zone_id, members in occupied.items():
                zone = self.state.zones[zone_id]
                zone.occupied_at = self.tick
                if zone.owner is not None and any(t.person == zone.owner for t in members):
                    zone.owner_seen_at = self.tick

        timeout = self.ctx.config.empty_timeout
        for zone_id in sorted(self.state.zones):
            zone = self.state.zones[zone_id]
            if zone.mode == LightingMode.OFF:
                continue
            if zone_id not in occupied:
                since = zone.occupied_at if zone.occupied_at is not None else self.tick
                if self.tick - since >= timeout:
                    self.set_off(zone_id)
            elif zone.owner is not None and self.tick - (zone.owner_seen_at or 0) >= timeout:
                self.release(zone_id, occupied[zone_id])

    def release(self, zone_id: int, members: list[TrackState]) -> None:
        """Hand an abandoned zone to the earliest recognised resident still in it."""
        owner = self.state.zones[zone_id].owner
        heirs = sorted(
            (t for t in members if t.status == TrackStatus.TRACKING and t.person not in (None, owner)),
            key=lambda t: (t.recognized_at, t.occupant),
        )
        if heirs:
            self.set_profile(zone_id, heirs[0].person, track=heirs[0])
        else:
            self.set_default(zone_id)


# --- scenario replay -------------------------------------------------------------------

def _route(resident_waypoints: Sequence[tuple[int, int]], mdp: Mdp) -> list[tuple[int, int]]:
    cells = [tuple(resident_waypoints[0])]
    state_of(mdp, cells[0])
    for a, b in zip(resident_waypoints, resident_waypoints[1:]):
        path = shortest_path(mdp, state_of(mdp, tuple(a)), state_of(mdp, tuple(b)))
        cells += [cell_of(mdp, s) for s in path[1:]]
    return cells


def expand_scenario(scenario: Scenario, grid: GridMap, mdp: Mdp,
                    profiles: dict[str, ResidentProfile]) -> list[Event]:
    """
    Turn scripted movements into an ordered event stream.

    Residents walk shortest paths between their waypoints, one cell per move
    interval, then stay put until they exit. Frames sample everyone present
    every frame interval; a PIR fires whenever a zone goes from empty to
    occupied.

    Raises:
        ScenarioReferencesUnknownProfile: A resident names a missing profile
        InvalidState: A waypoint is not a free cell
    """
    routes = []
    for resident in scenario.residents:
        if resident.person is not None and resident.person not in profiles:
            raise ScenarioReferencesUnknownProfile(resident.person)
        routes.append(_route(resident.waypoints, mdp))

    def position(i: int, tick: int) -> Optional[tuple[int, int]]:
        resident = scenario.residents[i]
        if tick < resident.enter_tick or (resident.exit_tick is not None and tick >= resident.exit_tick):
            return None
        interval = resident.move_interval or scenario.move_interval
        return routes[i][min((tick - resident.enter_tick) // interval, len(routes[i]) - 1)]

    events: list[Event] = []
    for tick in range(0, scenario.end_tick + 1, scenario.frame_interval):
        occupants = tuple(
            Occupant(key=i, person=r.person, cell=cell)
            for i, r in enumerate(scenario.residents)
            if (cell := position(i, tick)) is not None
        )
        events.append(Frame(tick=tick, occupants=occupants))

    changes: set[int] = set()
    for i, resident in enumerate(scenario.residents):
        interval = resident.move_interval or scenario.move_interval
        changes.update(resident.enter_tick + j * interval for j in range(len(routes[i])))
        if resident.exit_tick is not None:
            changes.add(resident.exit_tick)
    occupied: set[int] = set()
    for tick in sorted(t for t in changes if t <= scenario.end_tick):
        now = {int(grid.zone_of[cell]) for i in range(len(routes)) if (cell := position(i, tick)) is not None}
        events.extend(PirTriggered(zone=z, tick=tick) for z in sorted(now - occupied))
        occupied = now

    events.sort(key=lambda e: (e.tick, EVENT_ORDER[type(e)]))
    return events


@dataclass
class ScenarioRun:
    entries: list[LogEntry]
    commands: list[tuple[int, LightingCommand]]
    report: LatencyReport

    @property
    def log_text(self) -> str:
        return format_event_log(self.entries)


def format_event_log(entries: Sequence[LogEntry]) -> str:
    return "\n".join([LOG_HEADER] + [entry.to_line() for entry in entries]) + "\n"


def latency_report(scenario: Scenario, entries: Sequence[LogEntry]) -> LatencyReport:
    """Episode latencies read back from the event log."""
    episodes = []
    for entry in entries:
        if entry.kind != "episode":
            continue
        match = _EPISODE_DETAIL.match(entry.detail)
        pir_tick, latency = int(match.group(1)), int(match.group(2))
        episodes.append(EpisodeRecord(person=entry.person, zone=entry.zone, pir_tick=pir_tick,
                                      command_tick=entry.tick, latency=latency))
    latencies = [e.latency for e in episodes]
    oracles = scenario.oracles
    return LatencyReport(
        scenario=scenario.name,
        episodes=episodes,
        mean_ms=float(np.mean(latencies)) if latencies else None,
        max_ms=max(latencies) if latencies else None,
        stage_latencies_ms={
            "detect": oracles.detect_latency,
            "recognize": oracles.recognize_latency,
            "track": oracles.track_latency,
            "forecast": oracles.forecast_latency,
        },
    )


def run_scenario(scenario: Scenario, grid: GridMap, mdp: Mdp, profiles: Sequence[ResidentProfile],
                 forecaster: Optional[PathForecaster] = None) -> ScenarioRun:
    """
    Replay a scenario through the state machine.

    Stage wake-ups requested by the state machine are merged into the event
    stream as Tick events. The replay is deterministic given the scenario seed.
    """
    by_id = {p.person_id: p for p in profiles}
    events = expand_scenario(scenario, grid, mdp, by_id)
    context = PipelineContext(
        grid=grid,
        mdp=mdp,
        profiles=by_id,
        oracles=scenario.oracles,
        config=scenario.pipeline_config(),
        forecaster=forecaster,
        rng=np.random.default_rng(scenario.seed),
    )

    queue: list[tuple[int, int, int, Event]] = []
    for seq, event in enumerate(events):
        heapq.heappush(queue, (event.tick, EVENT_ORDER[type(event)], seq, event))
    seq = len(events)
    scheduled: set[int] = set()

    state = initial_state(grid)
    entries: list[LogEntry] = []
    commands: list[tuple[int, LightingCommand]] = []
    while queue:
        _, _, _, event = heapq.heappop(queue)
        state, emitted = process_event(state, event, context)
        entries.extend(state.journal)
        commands.extend((event.tick, command) for command in emitted)
        for wakeup in state.wakeups:
            if wakeup not in scheduled:
                scheduled.add(wakeup)
                heapq.heappush(queue, (wakeup, EVENT_ORDER[Tick], seq, Tick(tick=wakeup)))
                seq += 1

    report = latency_report(scenario, entries)
    logger.info(
        "Replayed scenario",
        extra={"scenario": scenario.name, "events": len(events), "commands": len(commands), "mean_ms": report.mean_ms},
    )
    return ScenarioRun(entries=entries, commands=commands, report=report)
