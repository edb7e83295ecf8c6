"""Readers and writers for the TNTP ``*_net.tntp`` / ``*_trips.tntp`` text formats."""

from __future__ import annotations

import io
import logging
import math
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import TextIO

from .network import DemandTable, Link, Network, VehicleClass, validate_network

log = logging.getLogger(__name__)

MIN_FREE_FLOW_TIME = 0.01  # minutes, substituted for zero free-flow times
NET_COLUMNS = ("init_node", "term_node", "capacity", "length", "free_flow_time",
               "b", "power", "speed", "toll", "link_type")


class ParseError(ValueError):
    def __init__(self, message: str, lineno: int | None = None, source: str = ""):
        self.lineno = lineno
        self.source = source
        where = f"{source}:" if source else ""
        where += f"line {lineno}: " if lineno is not None else ""
        super().__init__(where + message)


class ZoneCountMismatch(ValueError):
    pass


class TntpWarning(UserWarning):
    pass


@dataclass(frozen=True)
class UnitsConfig:
    """Scale factors taking a file's length and time units to miles and minutes."""

    length_to_miles: float = 1.0
    time_to_minutes: float = 1.0
    ignore_toll: bool = True

    def __post_init__(self) -> None:
        if not (self.length_to_miles > 0 and self.time_to_minutes > 0):
            raise ValueError("unit scale factors must be positive")


def parse_units(text: str | TextIO) -> UnitsConfig:
    """Read ``key=value`` lines; ``#`` starts a comment."""
    values: dict = {}
    for lineno, raw in enumerate(_lines(text), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {raw.strip()!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in ("length_to_miles", "time_to_minutes"):
                values[key] = float(value)
            elif key in ("ignore_toll", "toll_ignored"):
                values["ignore_toll"] = value.lower() in ("1", "true", "yes")
            else:
                raise ParseError(f"unknown units key {key!r}", lineno)
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"bad value for {key}: {value!r}", lineno) from None
    try:
        return UnitsConfig(**values)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def _lines(text: str | TextIO) -> list[str]:
    if isinstance(text, str):
        return text.splitlines()
    return text.read().splitlines()


_META = re.compile(r"^\s*<([^>]+)>\s*(.*?)\s*$")


def _read_metadata(lines: list[str], source: str) -> tuple[dict[str, str], int]:
    """Return (metadata, index of the first line after <END OF METADATA>)."""
    meta: dict[str, str] = {}
    for i, raw in enumerate(lines):
        line = raw.strip()
        if not line or line.startswith("~"):
            continue
        m = _META.match(line)
        if not m:
            raise ParseError(f"expected a <TAG> metadata line, got {line!r}", i + 1, source)
        key = m.group(1).strip().upper()
        if key == "END OF METADATA":
            return meta, i + 1
        meta[key] = m.group(2)
    raise ParseError("missing <END OF METADATA>", len(lines), source)


def _meta_int(meta: dict[str, str], key: str, source: str, default: int | None = None) -> int:
    if key not in meta:
        if default is not None:
            return default
        raise ParseError(f"missing <{key}> metadata", None, source)
    try:
        return int(float(meta[key]))
    except ValueError:
        raise ParseError(f"<{key}> is not a number: {meta[key]!r}", None, source) from None


def parse_network(text: str | TextIO, units: UnitsConfig | None = None, name: str = "",
                  source: str = "") -> Network:
    """Parse a TNTP network file.

    Link ids are the 1-based record positions. Zero free-flow times are
    replaced by :data:`MIN_FREE_FLOW_TIME` and flagged in the link's metadata.
    """
    units = units or UnitsConfig()
    lines = _lines(text)
    meta, start = _read_metadata(lines, source)
    n_zones = _meta_int(meta, "NUMBER OF ZONES", source)
    n_nodes = _meta_int(meta, "NUMBER OF NODES", source)
    n_links = _meta_int(meta, "NUMBER OF LINKS", source)
    ftn = _meta_int(meta, "FIRST THRU NODE", source, default=1)

    links: list[Link] = []
    for i in range(start, len(lines)):
        line = lines[i].strip()
        if not line or line.startswith("~"):
            continue
        lineno = i + 1
        if not line.endswith(";"):
            raise ParseError("link record not terminated by ';'", lineno, source)
        fields = line[:-1].split()
        if len(fields) != len(NET_COLUMNS):
            raise ParseError(f"expected {len(NET_COLUMNS)} fields, got {len(fields)}", lineno, source)
        try:
            tail, head = int(fields[0]), int(fields[1])
            cap, length, fft, b, power, spd, toll = (float(v) for v in fields[2:9])
        except ValueError:
            raise ParseError(f"non-numeric field in {line!r}", lineno, source) from None
        link_type = fields[9]
        fft_min = fft * units.time_to_minutes
        clamped = fft_min <= 0.0
        if clamped:
            fft_min = MIN_FREE_FLOW_TIME
        link_meta = (("speed", spd), ("toll", toll), ("link_type", link_type), ("fft_clamped", clamped))
        links.append(Link(len(links) + 1, tail, head, cap, length * units.length_to_miles,
                          fft_min, b, power, link_meta))
    if len(links) != n_links:
        raise ParseError(f"<NUMBER OF LINKS> is {n_links} but {len(links)} records were read",
                         None, source)
    return Network(
        nodes=tuple(range(1, n_nodes + 1)),
        links=tuple(links),
        zones=tuple(range(1, n_zones + 1)),
        first_through_node=ftn,
        name=name,
    )


def network_diagnostics(net: Network) -> list[str]:
    """Invariant violations plus the links whose zero free-flow time was replaced."""
    out = validate_network(net)
    for lk in net.links:
        if dict(lk.meta).get("fft_clamped"):
            out.append(f"link {lk.id} ({lk.tail}->{lk.head}): zero free-flow time set to "
                       f"{MIN_FREE_FLOW_TIME} min")
    return out


_PAIR = re.compile(r"(\d+)\s*:\s*([-+0-9.eE]+)\s*;?")


def parse_trips(text: str | TextIO, expected_zones: int | None = None, source: str = "") -> DemandTable:
    """Parse a TNTP trips file into a time-routing demand table.

    A parsed total differing from <TOTAL OD FLOW> by more than 1e-4 (relative)
    only triggers a :class:`TntpWarning`.
    """
    lines = _lines(text)
    meta, start = _read_metadata(lines, source)
    n_zones = _meta_int(meta, "NUMBER OF ZONES", source)
    if expected_zones is not None and n_zones != expected_zones:
        raise ZoneCountMismatch(
            f"trips file declares {n_zones} zones but the network has {expected_zones}")
    entries: list[tuple[tuple[int, int, VehicleClass], float]] = []
    origin: int | None = None
    for i in range(start, len(lines)):
        line = lines[i].strip()
        lineno = i + 1
        if not line or line.startswith("~"):
            continue
        if line.lower().startswith("origin"):
            parts = line.split()
            if len(parts) != 2 or not parts[1].isdigit():
                raise ParseError(f"malformed origin line {line!r}", lineno, source)
            origin = int(parts[1])
            continue
        if origin is None:
            raise ParseError("destination pairs before any 'Origin' line", lineno, source)
        pos = 0
        for m in _PAIR.finditer(line):
            if line[pos:m.start()].strip():
                raise ParseError(f"malformed pair near {line[pos:m.start()].strip()!r}", lineno, source)
            try:
                rate = float(m.group(2))
            except ValueError:
                raise ParseError(f"bad flow value {m.group(2)!r}", lineno, source) from None
            entries.append(((origin, int(m.group(1)), VehicleClass.TIME), rate))
            pos = m.end()
        if line[pos:].strip():
            raise ParseError(f"malformed pair near {line[pos:].strip()!r}", lineno, source)
    raw_total = math.fsum(r for _, r in entries)
    declared = meta.get("TOTAL OD FLOW")
    if declared is not None:
        try:
            declared_total = float(declared)
        except ValueError:
            raise ParseError(f"<TOTAL OD FLOW> is not a number: {declared!r}", None, source) from None
        if abs(raw_total - declared_total) > 1e-4 * max(abs(declared_total), 1e-12):
            warnings.warn(f"{source or 'trips'}: parsed total {raw_total} differs from "
                          f"<TOTAL OD FLOW> {declared_total}", TntpWarning, stacklevel=2)
    return DemandTable.from_entries(entries)


def serialize_network(net: Network) -> str:
    """Write a network as TNTP text in miles and minutes (re-read with default units)."""
    buf = io.StringIO()
    buf.write(f"<NUMBER OF ZONES> {len(net.zones)}\n")
    buf.write(f"<NUMBER OF NODES> {len(net.nodes)}\n")
    buf.write(f"<FIRST THRU NODE> {net.first_through_node}\n")
    buf.write(f"<NUMBER OF LINKS> {net.n_links}\n")
    buf.write("<END OF METADATA>\n\n\n")
    buf.write("~\t" + "\t".join(NET_COLUMNS) + "\t;\n")
    for lk in net.links:
        m = dict(lk.meta)
        fft = 0.0 if m.get("fft_clamped") else lk.free_flow_time
        row = [lk.tail, lk.head, repr(float(lk.capacity)), repr(float(lk.length)), repr(float(fft)),
               repr(float(lk.alpha)), repr(float(lk.beta)), repr(float(m.get("speed", 0.0))),
               repr(float(m.get("toll", 0.0))), m.get("link_type", 1)]
        buf.write("\t" + "\t".join(str(v) for v in row) + "\t;\n")
    return buf.getvalue()


def serialize_trips(demand: DemandTable, n_zones: int) -> str:
    """Write the time-routing part of a demand table as TNTP trips text."""
    by_origin: dict[int, list[tuple[int, float]]] = {}
    for (o, d), rate in demand.for_class(VehicleClass.TIME).items():
        by_origin.setdefault(o, []).append((d, rate))
    buf = io.StringIO()
    buf.write(f"<NUMBER OF ZONES> {n_zones}\n")
    buf.write(f"<TOTAL OD FLOW> {demand.total(VehicleClass.TIME)!r}\n")
    buf.write("<END OF METADATA>\n\n")
    for o in sorted(by_origin):
        buf.write(f"\nOrigin \t{o}\n")
        pairs = sorted(by_origin[o])
        for j in range(0, len(pairs), 5):
            buf.write("".join(f"{d:5d} : {r!r};    " for d, r in pairs[j:j + 5]).rstrip() + "\n")
    return buf.getvalue()


def read_units(path: str | Path | None) -> UnitsConfig:
    if path is None:
        return UnitsConfig()
    return parse_units(Path(path).read_text())


def read_network(path: str | Path, units: UnitsConfig | None = None) -> Network:
    path = Path(path)
    name = path.name.replace("_net.tntp", "")
    return parse_network(path.read_text(), units, name=name, source=str(path))


def read_trips(path: str | Path, expected_zones: int | None = None) -> DemandTable:
    path = Path(path)
    return parse_trips(path.read_text(), expected_zones, source=str(path))
