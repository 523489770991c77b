"""Line protocol between the lighting pipeline and the lamp controller.

Requests (ASCII, single spaces, `\\n` terminated):

    SET <zone> <R> <G> <B> <I>
    OFF <zone>
    GET <zone>

Replies: `OK`, `ERR <parse|range|zone>`, `STATE <zone> <R> <G> <B> <I>` or
`STATE <zone> OFF`. Numbers are plain decimals without sign or leading zeros.
"""

import re
from dataclasses import dataclass
from typing import Optional, Union

from app.core.exceptions import InvalidZoneName, ParseError, RangeError
from app.models.schemas import LightingCommand, OffCommand, SetCommand

OK = "OK\n"

_ZONE_TOKEN = re.compile(r"^[!-~]+$")
_DECIMAL = re.compile(r"^(0|[1-9][0-9]*)$")

_SET_FIELDS = ("red", "green", "blue", "intensity")
_LIMITS = {"red": 255, "green": 255, "blue": 255, "intensity": 100}


@dataclass(frozen=True)
class GetRequest:
    zone: str


Request = Union[SetCommand, OffCommand, GetRequest]


def _check_zone(zone: str) -> None:
    if not _ZONE_TOKEN.match(zone):
        raise InvalidZoneName(zone)


def encode(cmd: LightingCommand) -> str:
    """
    Wire line of a lighting command.

    Raises:
        InvalidZoneName: Zone is empty or holds whitespace or non-ASCII
    """
    _check_zone(cmd.zone)
    if isinstance(cmd, OffCommand):
        return f"OFF {cmd.zone}\n"
    return f"SET {cmd.zone} {cmd.red} {cmd.green} {cmd.blue} {cmd.intensity}\n"


def encode_get(zone: str) -> str:
    _check_zone(zone)
    return f"GET {zone}\n"


def encode_state(zone: str, applied: Optional[LightingCommand]) -> str:
    """STATE reply for a zone's last applied command (None or Off reads OFF)."""
    if applied is None or isinstance(applied, OffCommand):
        return f"STATE {zone} OFF\n"
    return f"STATE {zone} {applied.red} {applied.green} {applied.blue} {applied.intensity}\n"


def encode_error(code: str) -> str:
    return f"ERR {code}\n"


def _tokens(line: str) -> list[str]:
    if line.endswith("\n"):
        line = line[:-1]
    tokens = line.split(" ")
    for position, token in enumerate(tokens):
        if not token:
            raise ParseError(position, "verb" if position == 0 else "separator")
    return tokens


def _expect(tokens: list[str], fields: tuple[str, ...]) -> None:
    if len(tokens) < len(fields):
        raise ParseError(len(tokens), fields[len(tokens)], f"Missing {fields[len(tokens)]}")
    if len(tokens) > len(fields):
        raise ParseError(len(fields), "end", "Unexpected trailing tokens")


def _zone(tokens: list[str]) -> str:
    _check_zone(tokens[1])
    return tokens[1]


def decode_request(line: str) -> Request:
    """
    Parse any request line, GET included.

    Raises:
        ParseError: Unknown verb, wrong token count or malformed number, with
            the token position (the verb is position 0)
        RangeError: A channel value outside its range
        InvalidZoneName: Zone token with control or non-ASCII characters
    """
    tokens = _tokens(line)
    verb = tokens[0]
    if verb == "SET":
        _expect(tokens, ("verb", "zone") + _SET_FIELDS)
        zone = _zone(tokens)
        values = {}
        for offset, name in enumerate(_SET_FIELDS):
            text = tokens[2 + offset]
            if not _DECIMAL.match(text):
                raise ParseError(2 + offset, name)
            value = int(text)
            if value > _LIMITS[name]:
                raise RangeError(name, value)
            values[name] = value
        return SetCommand(zone=zone, **values)
    if verb in ("OFF", "GET"):
        _expect(tokens, ("verb", "zone"))
        zone = _zone(tokens)
        return OffCommand(zone=zone) if verb == "OFF" else GetRequest(zone=zone)
    raise ParseError(0, "verb", f"Unknown verb {verb!r}")


def decode(line: str) -> LightingCommand:
    """Inverse of encode; a GET line is a ParseError here."""
    request = decode_request(line)
    if isinstance(request, GetRequest):
        raise ParseError(0, "verb", "GET is a query, not a lighting command")
    return request
