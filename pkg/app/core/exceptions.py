"""Custom exceptions for the application."""

from typing import Optional


class AppException(Exception):
    """Base exception for application-specific errors.

    `exit_code` is what the command line returns when the error reaches it;
    `code` is the short token the lamp protocol puts after `ERR`.
    """

    def __init__(self, message: str, exit_code: int = 1, code: str = "error"):
        self.message = message
        self.exit_code = exit_code
        self.code = code
        super().__init__(self.message)


class ConfigurationError(AppException):
    """Exception raised when configuration is invalid."""

    def __init__(self, message: str = "Configuration error"):
        super().__init__(message, exit_code=78)


# --- house maps -------------------------------------------------------------

class MapError(AppException):
    """Base for map file problems; carries the offending row/column."""

    def __init__(self, message: str, row: Optional[int] = None, col: Optional[int] = None):
        self.row = row
        self.col = col
        where = ""
        if row is not None:
            where = f" at row {row}" + (f", column {col}" if col is not None else "")
        super().__init__(message + where, exit_code=65)


class MalformedMap(MapError):
    """Ragged rows, unknown glyph, open border or bad legend line."""


class DisconnectedMap(MapError):
    """Some free cell cannot be reached from the others."""


class MissingAnchor(MapError):
    """A zone has no legend entry or its anchor is not one of its free cells."""


class InvalidState(AppException):
    """State id out of range, or a cell that is not a free cell."""

    def __init__(self, message: str = "Invalid state"):
        super().__init__(message, exit_code=65)


# --- learning -----------------------------------------------------------------

class DimensionMismatch(AppException):
    """Feature dimension does not match the reward model."""

    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"Feature dimension {got} does not match model dimension {expected}", exit_code=65)


class NonpositiveRewardViolated(AppException):
    """A reward entry is positive or not finite."""

    def __init__(self, state: int, value: float):
        self.state = state
        self.value = value
        super().__init__(f"Reward for state {state} is {value!r}; rewards must be finite and <= 0", exit_code=65)


class HorizonMismatch(AppException):
    """Policy horizon differs from the requested horizon."""

    def __init__(self, policy_horizon: int, requested: int):
        super().__init__(f"Policy horizon {policy_horizon} != requested horizon {requested}", exit_code=65)


class UnreachableStart(AppException):
    """The start state cannot reach the goal within the horizon."""

    def __init__(self, state: int, goal: int, horizon: int):
        self.state = state
        super().__init__(f"State {state} cannot reach goal {goal} within {horizon} steps", exit_code=65)


class InconsistentTrajectory(AppException):
    """Consecutive trajectory states disagree with the transition table."""

    def __init__(self, message: str = "Trajectory is inconsistent with the MDP", step: Optional[int] = None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message, exit_code=65)


class ZeroProbabilityStep(AppException):
    """A demonstration takes an action the policy gives zero probability."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"Demonstration step {step} has zero probability under the policy", exit_code=65)


class NonFiniteLoss(AppException):
    """Training produced a NaN or infinite log-likelihood."""

    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"Non-finite log-likelihood at epoch {epoch}", exit_code=70)


class InstanceTooLarge(AppException):
    """Exhaustive path enumeration was asked for too many action sequences."""

    def __init__(self, sequences: int, limit: int):
        super().__init__(f"{sequences} action sequences exceed the enumeration limit {limit}", exit_code=65)


class MalformedRewardSpec(AppException):
    """A ground-truth reward expression could not be parsed."""

    def __init__(self, message: str = "Malformed reward spec"):
        super().__init__(message, exit_code=65)


class MalformedCheckpoint(AppException):
    """A model checkpoint file could not be parsed."""

    def __init__(self, message: str = "Malformed checkpoint"):
        super().__init__(message, exit_code=65)


class MalformedTrajectoryFile(AppException):
    """A trajectory file line could not be parsed."""

    def __init__(self, message: str = "Malformed trajectory file", line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message, exit_code=65)


class GenerationStalled(AppException):
    """Demonstration sampling rejected too many candidates."""

    def __init__(self, accepted: int, attempts: int):
        super().__init__(f"Only {accepted} demonstrations accepted after {attempts} attempts", exit_code=70)


# --- forecasting ----------------------------------------------------------------

class NoGoals(AppException):
    """The map defines no zones to forecast towards."""

    def __init__(self, message: str = "Map has no goal zones"):
        super().__init__(message, exit_code=65)


class TooFewSamples(AppException):
    """Fewer samples than clusters."""

    def __init__(self, samples: int, k: int):
        super().__init__(f"{samples} samples cannot form {k} clusters", exit_code=65)


class LengthMismatch(AppException):
    """Forecast and ground truth have different point counts."""

    def __init__(self, forecast_len: int, truth_len: int):
        super().__init__(f"Forecast length {forecast_len} != truth length {truth_len}", exit_code=65)


# --- pipeline ---------------------------------------------------------------------

class StaleEvent(AppException):
    """An event tick is earlier than the pipeline's current tick."""

    def __init__(self, tick: int, current: int):
        self.tick = tick
        super().__init__(f"Event tick {tick} precedes current tick {current}", exit_code=65)


class UnknownZone(AppException):
    """An event names a zone the map does not define."""

    def __init__(self, zone: object):
        self.zone = zone
        super().__init__(f"Unknown zone {zone!r}", exit_code=65)


class ScenarioReferencesUnknownProfile(AppException):
    """A scenario resident names a profile that is not in the store."""

    def __init__(self, person_id: str):
        self.person_id = person_id
        super().__init__(f"Scenario references unknown profile {person_id!r}", exit_code=65)


class MalformedProfileFile(AppException):
    """The profile store file could not be parsed."""

    def __init__(self, message: str = "Malformed profile file"):
        super().__init__(message, exit_code=65)


class DuplicateId(AppException):
    """Two profiles share a person id."""

    def __init__(self, person_id: str):
        self.person_id = person_id
        super().__init__(f"Duplicate person id {person_id!r}", exit_code=65)


# --- lamp protocol --------------------------------------------------------------------

class InvalidZoneName(AppException):
    """A zone name cannot be written as a single protocol token."""

    def __init__(self, zone: str):
        self.zone = zone
        super().__init__(f"Zone name {zone!r} is not a protocol token", exit_code=65, code="zone")


class ParseError(AppException):
    """A protocol line does not follow the grammar."""

    def __init__(self, position: int, field: str, message: Optional[str] = None):
        self.position = position
        self.field = field
        super().__init__(message or f"Cannot parse {field} at token {position}", exit_code=65, code="parse")


class RangeError(AppException):
    """A protocol value is outside its channel range."""

    def __init__(self, field: str, value: int):
        self.field = field
        self.value = value
        super().__init__(f"{field} value {value} out of range", exit_code=65, code="range")


class BindFailure(AppException):
    """The lamp simulator could not bind its address."""

    def __init__(self, address: str, reason: str):
        super().__init__(f"Cannot bind lamp simulator to {address}: {reason}", exit_code=69)


class LampCommandRejected(AppException):
    """The lamp simulator answered a command with an error line."""

    def __init__(self, reply: str):
        self.reply = reply
        super().__init__(f"Lamp simulator rejected command: {reply}", exit_code=69)
