"""Simulated lamp controller and the client that drives it."""

import asyncio
import logging
from typing import Optional

from tenacity import AsyncRetrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from app.core.config import Settings
from app.core.exceptions import AppException, BindFailure, ConfigurationError, LampCommandRejected, ParseError
from app.models.schemas import LightingCommand
from app.utils.lamp_protocol import OK, GetRequest, decode_request, encode, encode_error, encode_get, encode_state

logger = logging.getLogger(__name__)


def parse_address(address: str) -> tuple[str, int]:
    """Split `host:port`."""
    host, sep, port = address.rpartition(":")
    if not sep or not host or not port.isdigit() or int(port) > 65535:
        raise ConfigurationError(f"Lamp address must be host:port, got {address!r}")
    return host, int(port)


async def read_request(reader: asyncio.StreamReader) -> Optional[bytes]:
    """
    Read one request line, newline included; None at end of stream.

    Raises:
        ParseError: The line outgrew the reader limit. It has been drained
            through its newline, so the next read starts on a fresh line.
    """
    oversized = False
    while True:
        try:
            raw = await reader.readuntil(b"\n")
        except asyncio.IncompleteReadError as e:
            if oversized or not e.partial:
                return None
            return e.partial
        except asyncio.LimitOverrunError as e:
            await reader.read(max(e.consumed, 1))
            oversized = True
            continue
        if oversized:
            raise ParseError(0, "line", "Request line too long")
        return raw


class LampServer:
    """
    Lamp controller simulator speaking the line protocol over TCP.

    Applied commands are serialized through one lock, so lines from
    concurrent connections interleave whole. `applied` keeps every
    acknowledged lighting command in order.
    """

    def __init__(self, address: str):
        self.host, self.port = parse_address(address)
        self.state: dict[str, LightingCommand] = {}
        self.applied: list[LightingCommand] = []
        self._lock = asyncio.Lock()
        self._server: Optional[asyncio.AbstractServer] = None

    @property
    def address(self) -> str:
        """Bound address; resolves port 0 to the port actually taken."""
        if self._server is not None and self._server.sockets:
            host, port = self._server.sockets[0].getsockname()[:2]
            return f"{host}:{port}"
        return f"{self.host}:{self.port}"

    async def start(self) -> None:
        try:
            self._server = await asyncio.start_server(self._handle, self.host, self.port)
        except OSError as e:
            raise BindFailure(f"{self.host}:{self.port}", str(e))
        logger.info("Lamp simulator listening", extra={"address": self.address})

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        async with self._server:
            await self._server.serve_forever()

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None

    async def handle_line(self, line: str) -> str:
        """Reply to one request line."""
        try:
            request = decode_request(line)
        except AppException as e:
            logger.debug("Rejected lamp request", extra={"line": line.rstrip("\n"), "code": e.code})
            return encode_error(e.code)
        async with self._lock:
            if isinstance(request, GetRequest):
                return encode_state(request.zone, self.state.get(request.zone))
            self.state[request.zone] = request
            self.applied.append(request)
        return OK

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info("peername")
        logger.debug("Lamp client connected", extra={"peer": str(peer)})
        try:
            while True:
                try:
                    raw = await read_request(reader)
                except ParseError as e:
                    logger.debug("Rejected oversized lamp request", extra={"peer": str(peer)})
                    reply = encode_error(e.code)
                else:
                    if raw is None:
                        break
                    reply = await self.handle_line(raw.decode("ascii", errors="replace"))
                writer.write(reply.encode("ascii"))
                await writer.drain()
        except ConnectionError:
            logger.warning("Lamp client dropped", extra={"peer": str(peer)})
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except ConnectionError:
                pass


class LampClient:
    """Sends lighting commands to a lamp controller, one reply per line."""

    def __init__(self, address: str, timeout: float = 5.0, attempts: int = 3):
        self.host, self.port = parse_address(address)
        self.timeout = timeout
        self.attempts = attempts
        self._reader: Optional[asyncio.StreamReader] = None
        self._writer: Optional[asyncio.StreamWriter] = None

    async def connect(self) -> None:
        """Open the connection, retrying with exponential backoff."""
        async for attempt in AsyncRetrying(
            stop=stop_after_attempt(self.attempts),
            wait=wait_exponential(multiplier=0.1, min=0.1, max=2),
            retry=retry_if_exception_type((OSError, asyncio.TimeoutError)),
            reraise=True,
        ):
            with attempt:
                self._reader, self._writer = await asyncio.wait_for(
                    asyncio.open_connection(self.host, self.port), timeout=self.timeout
                )
        logger.debug("Connected to lamp controller", extra={"host": self.host, "port": self.port})

    async def request(self, line: str) -> str:
        if self._writer is None:
            await self.connect()
        self._writer.write(line.encode("ascii"))
        await self._writer.drain()
        reply = await asyncio.wait_for(self._reader.readline(), timeout=self.timeout)
        return reply.decode("ascii")

    async def send(self, cmd: LightingCommand) -> None:
        """
        Apply one command.

        Raises:
            LampCommandRejected: The controller answered with an error line
        """
        reply = await self.request(encode(cmd))
        if reply != OK:
            raise LampCommandRejected(reply.rstrip("\n"))

    async def get(self, zone: str) -> str:
        return await self.request(encode_get(zone))

    async def close(self) -> None:
        if self._writer is not None:
            self._writer.close()
            try:
                await self._writer.wait_closed()
            except ConnectionError:
                pass
            self._reader = self._writer = None

    async def __aenter__(self) -> "LampClient":
        await self.connect()
        return self

    async def __aexit__(self, *exc_info) -> None:
        await self.close()


def get_lamp_client(settings: Settings, address: Optional[str] = None) -> LampClient:
    """
    Factory function to create a lamp client.

    Args:
        settings: Application settings
        address: Overrides `settings.lamp_addr`

    Returns:
        LampClient with the configured timeout and retry attempts
    """
    return LampClient(address or settings.lamp_addr, settings.lamp_connect_timeout, settings.lamp_retry_attempts)


def get_lamp_server(settings: Settings, address: Optional[str] = None) -> LampServer:
    """Factory function to create the lamp simulator on `settings.lamp_addr` unless overridden."""
    return LampServer(address or settings.lamp_addr)
