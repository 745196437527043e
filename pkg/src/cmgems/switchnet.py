"""Line protocol for meter reads and switch operation, with simulated endpoints.

Wire format, one UTF-8 line per message::

    READ <IED/LN.DO.DA>        ->  VAL <float> | ERR <code>
    OPER <switch_id> <ON|OFF>  ->  OK | ERR <code>

Codes: 400 malformed request, 404 unknown object. Meter power is in kW,
cumulative meter energy in kWh, switch position reads 1.0 (closed) or 0.0.
"""
from __future__ import annotations

import csv
import re
import socket
import socketserver
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

DEFAULT_PORT = 102
ERR_MALFORMED = 400
ERR_NOT_FOUND = 404

POWER_PATH = ("MMXU", "Watt", "mag.f")
ENERGY_PATH = ("MMTR", "TotWh", "actVal")
POSITION_PATH = ("XCBR", "Pos", "stVal")
METER_ALIAS = "SMARTMTR"
SWITCH_ALIAS = "SWITCH"

_NAME = re.compile(r"^[A-Za-z0-9]+$")


class SwitchnetError(Exception):
    def __init__(self, code: int, message: str = ""):
        self.code = code
        super().__init__(f"ERR {code}" + (f": {message}" if message else ""))


class SwitchnetTimeout(TimeoutError):
    def __init__(self, endpoint_id: str, detail: str = ""):
        self.endpoint_id = endpoint_id
        super().__init__(f"timeout talking to {endpoint_id}" + (f" ({detail})" if detail else ""))


@dataclass(frozen=True)
class ObjectPath:
    ied: str
    logical_node: str
    data_object: str
    attribute: str

    def __post_init__(self):
        for part in (self.ied, self.logical_node, self.data_object, *self.attribute.split(".")):
            if not _NAME.match(part):
                raise ValueError(f"object path component {part!r} must be nonempty ASCII alphanumeric")

    def render(self) -> str:
        return f"{self.ied}/{self.logical_node}.{self.data_object}.{self.attribute}"

    __str__ = render

    @classmethod
    def parse(cls, text: str) -> "ObjectPath":
        ied, sep, rest = text.partition("/")
        parts = rest.split(".", 2)
        if not sep or len(parts) != 3:
            raise ValueError(f"malformed object path {text!r}")
        return cls(ied, *parts)

    @property
    def suffix(self) -> tuple[str, str, str]:
        return (self.logical_node, self.data_object, self.attribute)


def power_path(meter_id: str) -> ObjectPath:
    return ObjectPath(meter_id, *POWER_PATH)


def energy_path(meter_id: str) -> ObjectPath:
    return ObjectPath(meter_id, *ENERGY_PATH)


def position_path(switch_id: str) -> ObjectPath:
    return ObjectPath(switch_id, *POSITION_PATH)


# -- framing -------------------------------------------------------------------


@dataclass(frozen=True)
class Request:
    verb: str  # READ or OPER
    path: ObjectPath | None = None
    switch_id: str | None = None
    closed: bool | None = None

    def render(self) -> str:
        if self.verb == "READ":
            return f"READ {self.path.render()}\n"
        return f"OPER {self.switch_id} {'ON' if self.closed else 'OFF'}\n"


def parse_request(line: str) -> Request:
    parts = line.rstrip("\r\n").split(" ")
    if len(parts) == 2 and parts[0] == "READ":
        return Request("READ", path=ObjectPath.parse(parts[1]))
    if len(parts) == 3 and parts[0] == "OPER" and parts[2] in ("ON", "OFF") and _NAME.match(parts[1]):
        return Request("OPER", switch_id=parts[1], closed=parts[2] == "ON")
    raise ValueError(f"malformed request {line!r}")


def format_value(value: float) -> str:
    return f"VAL {float(value)!r}\n"


def format_error(code: int) -> str:
    return f"ERR {code}\n"


def parse_response(line: str) -> float | None:
    """Return the VAL payload, None for OK; raise SwitchnetError for ERR lines."""
    text = line.rstrip("\r\n")
    if text == "OK":
        return None
    verb, _, rest = text.partition(" ")
    if verb == "VAL":
        return float(rest)
    if verb == "ERR" and rest.isdigit():
        raise SwitchnetError(int(rest))
    raise SwitchnetError(ERR_MALFORMED, f"unparseable response {text!r}")


# -- endpoint model ----------------------------------------------------------


class Endpoint:
    """Meters and switches hosted at one address; requests serialize on one lock."""

    def __init__(self, meters: Iterable[str] = (), switches: Iterable[str] = ()):
        self._lock = threading.Lock()
        self.meters: dict[str, list[float]] = {m: [0.0, 0.0] for m in meters}  # power kW, energy kWh
        self.switches: dict[str, bool] = {s: False for s in switches}
        self.oper_count = 0

    def _resolve(self, name: str, table: Mapping, alias: str) -> str | None:
        if name in table:
            return name
        if name == alias and len(table) == 1:
            return next(iter(table))
        return None

    def set_meter(self, meter_id: str, power_kw: float, energy_kwh: float | None = None) -> None:
        with self._lock:
            state = self.meters[meter_id]
            state[0] = float(power_kw)
            if energy_kwh is not None:
                state[1] = float(energy_kwh)

    def handle_line(self, line: str) -> str:
        try:
            req = parse_request(line)
        except ValueError:
            return format_error(ERR_MALFORMED)
        with self._lock:
            if req.verb == "OPER":
                sid = self._resolve(req.switch_id, self.switches, SWITCH_ALIAS)
                if sid is None:
                    return format_error(ERR_NOT_FOUND)
                self.switches[sid] = req.closed
                self.oper_count += 1
                return "OK\n"
            path = req.path
            if path.suffix == POSITION_PATH:
                sid = self._resolve(path.ied, self.switches, SWITCH_ALIAS)
                if sid is None:
                    return format_error(ERR_NOT_FOUND)
                return format_value(1.0 if self.switches[sid] else 0.0)
            if path.suffix in (POWER_PATH, ENERGY_PATH):
                mid = self._resolve(path.ied, self.meters, METER_ALIAS)
                if mid is None:
                    return format_error(ERR_NOT_FOUND)
                return format_value(self.meters[mid][0 if path.suffix == POWER_PATH else 1])
            return format_error(ERR_NOT_FOUND)


# -- server ------------------------------------------------------------------


class _Handler(socketserver.StreamRequestHandler):
    disable_nagle_algorithm = True  # pipelined replies must not wait for delayed ACKs

    def handle(self):
        endpoint: Endpoint = self.server.endpoint
        for raw in self.rfile:
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError:
                reply = format_error(ERR_MALFORMED)
            else:
                reply = endpoint.handle_line(line)
            self.wfile.write(reply.encode("utf-8"))
            self.wfile.flush()


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class ServerHandle:
    def __init__(self, server: _Server, thread: threading.Thread):
        self._server = server
        self._thread = thread

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    @property
    def endpoint(self) -> Endpoint:
        return self._server.endpoint

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve(endpoint: Endpoint, bind: tuple[str, int] = ("127.0.0.1", DEFAULT_PORT)) -> ServerHandle:
    server = _Server(bind, _Handler)
    server.endpoint = endpoint
    thread = threading.Thread(target=server.serve_forever, name=f"switchnet-{bind[1]}", daemon=True)
    thread.start()
    return ServerHandle(server, thread)


# -- registry ------------------------------------------------------------------


@dataclass(frozen=True)
class EndpointEntry:
    host: str
    port: int = DEFAULT_PORT
    kind: str = "meter"


@dataclass
class EndpointRegistry:
    entries: dict[str, EndpointEntry] = field(default_factory=dict)

    def add(self, object_id: str, host: str, port: int = DEFAULT_PORT, kind: str = "meter") -> None:
        if object_id in self.entries:
            raise ValueError(f"duplicate registry id {object_id!r}")
        self.entries[object_id] = EndpointEntry(host, int(port), kind)

    def lookup(self, object_id: str) -> EndpointEntry:
        try:
            return self.entries[object_id]
        except KeyError:
            raise SwitchnetError(ERR_NOT_FOUND, f"{object_id} not registered") from None

    def dump(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("id", "host", "port", "kind"))
            for oid, e in sorted(self.entries.items()):
                writer.writerow((oid, e.host, e.port, e.kind))

    @classmethod
    def load(cls, path: str | Path) -> "EndpointRegistry":
        reg = cls()
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["id", "host", "port", "kind"]:
                raise ValueError(f"registry header must be id,host,port,kind, got {reader.fieldnames}")
            for row in reader:
                reg.add(row["id"], row["host"], int(row["port"]), row["kind"])
        return reg


# -- client ------------------------------------------------------------------


class SwitchnetClient:
    """Blocking client keeping one persistent connection per endpoint address."""

    def __init__(self, registry: EndpointRegistry, timeout_ms: int = 2000):
        self.registry = registry
        self.timeout_ms = timeout_ms
        self._conns: dict[tuple[str, int], tuple[socket.socket, object]] = {}

    def close(self) -> None:
        for sock, fh in self._conns.values():
            fh.close()
            sock.close()
        self._conns.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _connection(self, addr: tuple[str, int]):
        conn = self._conns.get(addr)
        if conn is None:
            sock = socket.create_connection(addr, timeout=self.timeout_ms / 1000.0)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn = (sock, sock.makefile("rb"))
            self._conns[addr] = conn
        return conn

    def _drop(self, addr) -> None:
        conn = self._conns.pop(addr, None)
        if conn:
            conn[1].close()
            conn[0].close()

    def exchange(self, object_id: str, lines: list[str]) -> list[str]:
        """Send pipelined request lines to ``object_id``'s endpoint; one retry on timeout."""
        entry = self.registry.lookup(object_id)
        addr = (entry.host, entry.port)
        payload = "".join(lines).encode("utf-8")
        last_error = ""
        for _ in range(2):
            try:
                sock, fh = self._connection(addr)
                sock.sendall(payload)
                replies = []
                for _ in lines:
                    raw = fh.readline()
                    if not raw:
                        raise ConnectionError("connection closed")
                    replies.append(raw.decode("utf-8"))
                return replies
            except (OSError, ConnectionError) as exc:
                last_error = str(exc) or type(exc).__name__
                self._drop(addr)
        raise SwitchnetTimeout(object_id, last_error)

    def read(self, object_id: str, path: ObjectPath) -> float:
        return parse_response(self.exchange(object_id, [Request("READ", path=path).render()])[0])

    def read_many(self, object_id: str, paths: list[ObjectPath]) -> list[float]:
        replies = self.exchange(object_id, [Request("READ", path=p).render() for p in paths])
        return [parse_response(r) for r in replies]

    def operate(self, switch_id: str, closed: bool) -> None:
        parse_response(self.exchange(switch_id, [Request("OPER", switch_id=switch_id, closed=closed).render()])[0])


class LoopbackClient:
    """Same interface as SwitchnetClient, dispatching to in-process endpoints."""

    def __init__(self, endpoints: Mapping[str, Endpoint]):
        self.endpoints = dict(endpoints)

    def _endpoint(self, object_id: str) -> Endpoint:
        try:
            return self.endpoints[object_id]
        except KeyError:
            raise SwitchnetError(ERR_NOT_FOUND, f"{object_id} not registered") from None

    def read(self, object_id: str, path: ObjectPath) -> float:
        return parse_response(self._endpoint(object_id).handle_line(Request("READ", path=path).render()))

    def read_many(self, object_id: str, paths: list[ObjectPath]) -> list[float]:
        ep = self._endpoint(object_id)
        return [parse_response(ep.handle_line(Request("READ", path=p).render())) for p in paths]

    def operate(self, switch_id: str, closed: bool) -> None:
        parse_response(self._endpoint(switch_id).handle_line(
            Request("OPER", switch_id=switch_id, closed=closed).render()))

    def close(self) -> None:
        pass


def read_value(registry: EndpointRegistry, object_id: str, path: ObjectPath, timeout_ms: int = 2000) -> float:
    with SwitchnetClient(registry, timeout_ms) as client:
        return client.read(object_id, path)


def operate_switch(registry: EndpointRegistry, switch_id: str, closed: bool, timeout_ms: int = 2000) -> None:
    with SwitchnetClient(registry, timeout_ms) as client:
        client.operate(switch_id, closed)
