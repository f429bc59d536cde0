"""Topology files: a small line-based format describing the device fabric.

Grammar (one statement per line, ``#`` or ``;`` starts a comment):

    host_device_bandwidth = 6.54e9        # bytes/second, optional
    peer_bandwidth        = 7.8e9         # bytes/second, optional

    [device 0]
    kind           = accelerator          # or host_compute
    speed          = 1e12                 # flops/second
    arena_capacity = 268435456            # bytes (accelerators only)
    peer_group     = hub0                 # optional; absent = standalone

    [device 1]
    kind  = host_compute
    speed = 5e10

Keys may appear in any order inside their section.  Every error is
reported with the offending line number.
"""

from __future__ import annotations

from .devices import (
    ACCELERATOR, DEFAULT_HOST_BANDWIDTH, DEFAULT_PEER_BANDWIDTH,
    HOST_COMPUTE, DeviceDesc, Topology,
)
from .errors import ConfigError

__all__ = ["load_topology", "parse_topology", "default_topology"]

_GLOBAL_KEYS = ("host_device_bandwidth", "peer_bandwidth")
_DEVICE_KEYS = ("kind", "speed", "arena_capacity", "peer_group")


def default_topology() -> Topology:
    """Built-in fabric: two equal accelerators on one peer hub."""
    return Topology(
        devices=[
            DeviceDesc(0, ACCELERATOR, peer_group="hub0"),
            DeviceDesc(1, ACCELERATOR, peer_group="hub0"),
        ],
    )


def _fail(lineno: int, msg: str) -> None:
    raise ConfigError(f"line {lineno}: {msg}")


def _number(lineno: int, key: str, text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        _fail(lineno, f"{key}: {text!r} is not a number")
    if value < 0:
        _fail(lineno, f"{key} must not be negative (got {text})")
    return value


def parse_topology(text: str, source: str = "<string>") -> Topology:
    globals_seen: dict[str, float] = {}
    sections: list[dict] = []
    current: dict | None = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                _fail(lineno, f"unterminated section header {line!r}")
            head = line[1:-1].strip().split()
            if len(head) != 2 or head[0] != "device":
                _fail(lineno, f"expected [device <id>], got {line!r}")
            try:
                device_id = int(head[1])
            except ValueError:
                _fail(lineno, f"device id {head[1]!r} is not an integer")
            current = {"device_id": device_id, "lineno": lineno,
                       "fields": {}}
            sections.append(current)
            continue
        if "=" not in line:
            _fail(lineno, f"expected key = value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not value:
            _fail(lineno, f"{key}: missing value")
        if current is None:
            if key not in _GLOBAL_KEYS:
                _fail(lineno, f"unknown top-level key {key!r}")
            bandwidth = _number(lineno, key, value)
            if bandwidth == 0:
                _fail(lineno, f"{key} must be > 0")
            globals_seen[key] = bandwidth
        else:
            if key not in _DEVICE_KEYS:
                _fail(lineno, f"unknown device key {key!r}")
            if key in current["fields"]:
                _fail(lineno, f"duplicate key {key!r} in device section")
            current["fields"][key] = (lineno, value)

    if not sections:
        raise ConfigError(f"{source}: no [device ...] sections found")

    seen_ids = set()
    devices = []
    for section in sections:
        device_id = section["device_id"]
        if device_id in seen_ids:
            _fail(section["lineno"], f"duplicate device id {device_id}")
        seen_ids.add(device_id)
        fields = section["fields"]
        kind_line, kind = fields.get("kind", (section["lineno"],
                                              ACCELERATOR))
        if kind not in (ACCELERATOR, HOST_COMPUTE):
            _fail(kind_line, f"unknown kind {kind!r}")
        if kind == HOST_COMPUTE:
            for banned in ("arena_capacity", "peer_group"):
                if banned in fields:
                    _fail(fields[banned][0],
                          f"{banned} does not apply to host_compute devices")
        kwargs = {"device_id": device_id, "kind": kind}
        if "speed" in fields:
            lineno, value = fields["speed"]
            kwargs["speed"] = _number(lineno, "speed", value)
        if "arena_capacity" in fields:
            lineno, value = fields["arena_capacity"]
            capacity = _number(lineno, "arena_capacity", value)
            if capacity != int(capacity):
                _fail(lineno, "arena_capacity must be a whole number "
                              "of bytes")
            kwargs["arena_capacity"] = int(capacity)
        if "peer_group" in fields:
            kwargs["peer_group"] = fields["peer_group"][1]
        devices.append(DeviceDesc(**kwargs))

    return Topology(
        devices=devices,
        host_device_bandwidth=globals_seen.get(
            "host_device_bandwidth", DEFAULT_HOST_BANDWIDTH),
        peer_bandwidth=globals_seen.get(
            "peer_bandwidth", DEFAULT_PEER_BANDWIDTH),
    )


def load_topology(path: str) -> Topology:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(f"cannot read topology file {path}: {exc}") from exc
    return parse_topology(text, source=path)
