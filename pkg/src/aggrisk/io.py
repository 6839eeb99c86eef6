"""File formats: binary YET, ELT/YLT CSV, JSON portfolio config.

YET binary layout (little-endian, version 1)::

    header   magic  8s   b"AGRKYET1"
             version u32
             num_trials u64
             catalog_size u32
             events_total u64            -> 32 bytes, no padding
    trial    trial_id u64, event_count u32
             event_count x (event_id u32, timestamp f32)

See docs/FORMATS.md for the CSV and config schemas.
"""

from __future__ import annotations

import csv
import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator, TextIO

import numpy as np

from .model import (
    INF,
    MAX_ELTS_PER_LAYER,
    MAX_PROGRAMS,
    AggregateTerms,
    EltTerms,
    EventLossTable,
    Layer,
    OccurrenceTerms,
    Portfolio,
    Program,
    YearEventTable,
    YearLossTable,
    check_trial,
    validate_yet,
)

YET_MAGIC = b"AGRKYET1"
YET_VERSION = 1
HEADER = struct.Struct("<8sIQIQ")
TRIAL_HEADER = struct.Struct("<QI")
EVENT_DTYPE = np.dtype([("event_id", "<u4"), ("timestamp", "<f4")])

_READ_BUFFER = 1 << 20


class FormatError(ValueError):
    pass


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedFileError(FormatError):
    def __init__(self, offset: int, needed: int, got: int):
        super().__init__(f"truncated YET at byte offset {offset}: needed {needed} bytes, got {got}")
        self.offset = offset


class CountMismatchError(FormatError):
    pass


class YetValidationError(FormatError):
    def __init__(self, violations):
        shown = "; ".join(str(v) for v in violations[:5])
        more = f" (+{len(violations) - 5} more)" if len(violations) > 5 else ""
        super().__init__(f"YET failed validation: {shown}{more}")
        self.violations = violations


class CsvFormatError(FormatError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class ConfigError(FormatError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class YetFileHeader:
    num_trials: int
    catalog_size: int
    events_total: int
    magic: bytes = YET_MAGIC
    version: int = YET_VERSION

    def pack(self) -> bytes:
        return HEADER.pack(self.magic, self.version, self.num_trials, self.catalog_size, self.events_total)


def _open(target, mode):
    if isinstance(target, (str, os.PathLike)):
        if "b" in mode:
            return open(target, mode, buffering=_READ_BUFFER), True
        return open(target, mode, newline="", encoding="utf-8"), True
    return target, False


def write_yet(yet: YearEventTable, sink: BinaryIO | str | os.PathLike) -> int:
    """Write ``yet``; returns the byte count."""
    if yet.num_trials < 1:
        raise ValueError("a YET file needs at least one trial")
    violations = validate_yet(yet)
    if violations:
        raise YetValidationError(violations)
    f, owned = _open(sink, "wb")
    try:
        written = f.write(YetFileHeader(yet.num_trials, yet.catalog_size, yet.num_events).pack())
        records = np.empty(yet.num_events, dtype=EVENT_DTYPE)
        records["event_id"] = yet.event_ids
        records["timestamp"] = yet.timestamps
        offsets = yet.offsets
        buf = bytearray()
        for i in range(yet.num_trials):
            lo, hi = int(offsets[i]), int(offsets[i + 1])
            buf += TRIAL_HEADER.pack(int(yet.trial_ids[i]), hi - lo)
            buf += records[lo:hi].tobytes()
            if len(buf) >= _READ_BUFFER:
                written += f.write(buf)
                buf.clear()
        written += f.write(buf)
        return written
    finally:
        if owned:
            f.close()


class _Reader:
    def __init__(self, f: BinaryIO):
        self.f = f
        self.offset = 0

    def read(self, n: int) -> bytes:
        data = self.f.read(n)
        if len(data) != n:
            raise TruncatedFileError(self.offset, n, len(data))
        self.offset += n
        return data


def read_yet_header(source: BinaryIO) -> YetFileHeader:
    raw = source.read(HEADER.size)
    if len(raw) >= 8 and raw[:8] != YET_MAGIC:
        raise BadMagicError(f"bad magic {raw[:8]!r}, expected {YET_MAGIC!r}")
    if len(raw) != HEADER.size:
        raise TruncatedFileError(0, HEADER.size, len(raw))
    magic, version, num_trials, catalog_size, events_total = HEADER.unpack(raw)
    if version != YET_VERSION:
        raise VersionMismatchError(f"unsupported YET version {version}, expected {YET_VERSION}")
    return YetFileHeader(num_trials, catalog_size, events_total, magic, version)


def iter_yet(source: BinaryIO) -> Iterator[tuple[YetFileHeader, int, np.ndarray]]:
    """Stream ``(header, trial_id, records)`` one trial at a time.

    ``records`` is a structured array with fields ``event_id`` and ``timestamp``.
    """
    header = read_yet_header(source)
    reader = _Reader(source)
    reader.offset = HEADER.size
    seen = 0
    for _ in range(header.num_trials):
        trial_id, count = TRIAL_HEADER.unpack(reader.read(TRIAL_HEADER.size))
        seen += count
        if seen > header.events_total:
            raise CountMismatchError(f"trials hold more than the declared {header.events_total} events")
        records = np.frombuffer(reader.read(count * EVENT_DTYPE.itemsize), dtype=EVENT_DTYPE)
        yield header, trial_id, records
    if seen != header.events_total:
        raise CountMismatchError(f"header declares {header.events_total} events, trials hold {seen}")
    if source.read(1):
        raise CountMismatchError(f"trailing bytes after {header.num_trials} declared trials")


def read_yet(source: BinaryIO | str | os.PathLike, validate: bool = True) -> YearEventTable:
    """Read a YET file into memory, one trial at a time into preallocated arrays.

    With ``validate`` each trial is checked as it streams past, so the only
    allocations beyond the output arrays are one trial's records and the read
    buffer. Raises :class:`YetValidationError` listing every violation.
    """
    f, owned = _open(source, "rb")
    violations = []
    try:
        header = None
        trial_ids = offsets = event_ids = timestamps = None
        pos = 0
        for i, (hdr, trial_id, records) in enumerate(iter_yet(f)):
            if header is None:
                header = hdr
                trial_ids = np.empty(hdr.num_trials, dtype=np.int64)
                offsets = np.zeros(hdr.num_trials + 1, dtype=np.int64)
                event_ids = np.empty(hdr.events_total, dtype=np.uint32)
                timestamps = np.empty(hdr.events_total, dtype=np.float32)
            n = records.shape[0]
            if validate:
                violations += check_trial(i, trial_id, records["event_id"], records["timestamp"],
                                          hdr.catalog_size)
            trial_ids[i] = trial_id
            event_ids[pos:pos + n] = records["event_id"]
            timestamps[pos:pos + n] = records["timestamp"]
            pos += n
            offsets[i + 1] = pos
        if header is None:
            raise CountMismatchError("YET file declares zero trials")
    finally:
        if owned:
            f.close()
    if violations:
        raise YetValidationError(violations)
    return YearEventTable(trial_ids, offsets, event_ids, timestamps, header.catalog_size)


def format_loss(value) -> str:
    """Shortest string that round-trips ``value`` at its own precision; ``140.0`` -> ``"140"``."""
    return np.format_float_positional(value, unique=True, trim="-")


def write_elt_csv(elt: EventLossTable, sink: TextIO | str | os.PathLike) -> None:
    f, owned = _open(sink, "w")
    try:
        f.write("event_id,loss\n")
        for event in sorted(elt.entries):
            f.write(f"{event},{elt.entries[event]!r}\n")
    finally:
        if owned:
            f.close()


def _parse_rows(f: TextIO, header: str):
    reader = csv.reader(f)
    first = next(reader, None)
    if first is None or ",".join(c.strip() for c in first) != header:
        raise CsvFormatError(f"expected header {header!r}", 1)
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise CsvFormatError(f"expected 2 fields, got {len(row)}", reader.line_num)
        try:
            key = int(row[0])
            value = float(row[1])
        except ValueError as exc:
            raise CsvFormatError(str(exc), reader.line_num) from None
        yield reader.line_num, key, value


def read_elt_csv(source: TextIO | str | os.PathLike, elt_id: int = 1,
                 terms: EltTerms | None = None) -> EventLossTable:
    """Parse ``event_id,loss`` rows; terms come from the portfolio config."""
    f, owned = _open(source, "r")
    try:
        entries: dict[int, float] = {}
        for line, event, loss in _parse_rows(f, "event_id,loss"):
            if event < 1:
                raise CsvFormatError(f"event id {event} must be >= 1", line)
            if event in entries:
                raise CsvFormatError(f"duplicate event id {event}", line)
            if not loss > 0 or math.isinf(loss):
                raise CsvFormatError(f"loss {loss!r} must be finite and > 0", line)
            entries[event] = loss
    finally:
        if owned:
            f.close()
    return EventLossTable(elt_id, entries, terms or EltTerms())


def write_ylt_csv(ylt: YearLossTable, sink: TextIO | str | os.PathLike) -> None:
    if len(ylt) == 0:
        raise ValueError("refusing to write an empty YLT")
    f, owned = _open(sink, "w")
    try:
        f.write("trial_id,loss\n")
        f.writelines(f"{tid},{format_loss(loss)}\n" for tid, loss in zip(ylt.trial_ids.tolist(), ylt.losses))
    finally:
        if owned:
            f.close()


def read_ylt_csv(source: TextIO | str | os.PathLike, scope: str = "portfolio-total",
                 dtype=np.float64) -> YearLossTable:
    f, owned = _open(source, "r")
    try:
        ids, losses = [], []
        for line, tid, loss in _parse_rows(f, "trial_id,loss"):
            if not (math.isfinite(loss) and loss >= 0):
                raise CsvFormatError(f"loss {loss!r} must be finite and >= 0", line)
            ids.append(tid)
            losses.append(loss)
    finally:
        if owned:
            f.close()
    return YearLossTable(np.array(ids, dtype=np.int64), np.array(losses, dtype=dtype), scope)


# -- portfolio config -------------------------------------------------------

@dataclass(frozen=True)
class EltSource:
    elt_id: int
    path: Path
    terms: EltTerms


@dataclass(frozen=True)
class WorkloadConfig:
    portfolio: Portfolio
    elt_sources: dict[int, EltSource]


def _number(value, path: str, allow_inf: bool = False) -> float:
    if allow_inf and isinstance(value, str) and value.strip().lower() in ("inf", "+inf", "infinity"):
        return INF
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        expected = 'a number or "inf"' if allow_inf else "a number"
        raise ConfigError(path, f"expected {expected}, got {value!r}")
    return float(value)


def _require(obj: dict, key: str, path: str):
    if not isinstance(obj, dict):
        raise ConfigError(path, f"expected an object, got {type(obj).__name__}")
    if key not in obj:
        raise ConfigError(f"{path}.{key}", "missing key")
    return obj[key]


def _terms(obj, path: str, cls):
    if obj is None:
        return cls()
    retention = _number(obj.get("retention", 0.0), f"{path}.retention")
    limit = _number(obj.get("limit", "inf"), f"{path}.limit", allow_inf=True)
    try:
        return cls(retention, limit)
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


def _list(value, path: str, lo: int, hi: int | None) -> list:
    if not isinstance(value, list):
        raise ConfigError(path, "expected a list")
    if len(value) < lo or (hi is not None and len(value) > hi):
        bound = f"{lo}..{hi}" if hi is not None else f">= {lo}"
        raise ConfigError(path, f"needs {bound} entries, got {len(value)}")
    return value


def parse_portfolio_config(data: dict, base_dir: str | os.PathLike = ".") -> WorkloadConfig:
    """Validate a decoded config document; see docs/FORMATS.md for the schema."""
    base = Path(base_dir)
    pf = _require(data, "portfolio", "$")
    pf_id = int(_number(pf.get("id", 1) if isinstance(pf, dict) else pf, "$.portfolio.id"))
    programs_raw = _list(_require(data, "programs", "$"), "$.programs", 1, MAX_PROGRAMS)
    sources: dict[int, EltSource] = {}
    programs = []
    for pi, prog in enumerate(programs_raw):
        ppath = f"$.programs[{pi}]"
        layers = []
        layers_raw = _list(_require(prog, "layers", ppath), f"{ppath}.layers", 1, None)
        for li, lay in enumerate(layers_raw):
            lpath = f"{ppath}.layers[{li}]"
            files = _list(_require(lay, "elt_files", lpath), f"{lpath}.elt_files", 1, MAX_ELTS_PER_LAYER)
            refs = []
            for fi, entry in enumerate(files):
                fpath = f"{lpath}.elt_files[{fi}]"
                if isinstance(entry, str):
                    entry = {"path": entry}
                rel = _require(entry, "path", fpath)
                elt_id = int(_number(_require(entry, "id", fpath), f"{fpath}.id"))
                src = EltSource(elt_id, base / rel, _terms(entry.get("terms"), f"{fpath}.terms", EltTerms))
                if elt_id in sources and sources[elt_id] != src:
                    raise ConfigError(f"{fpath}.id", f"ELT id {elt_id} declared twice with different data")
                sources[elt_id] = src
                refs.append(elt_id)
            try:
                layers.append(Layer(
                    layer_id=int(_number(lay.get("id", li + 1), f"{lpath}.id")),
                    elt_refs=tuple(refs),
                    occurrence=_terms(_require(lay, "occurrence", lpath), f"{lpath}.occurrence", OccurrenceTerms),
                    aggregate=_terms(_require(lay, "aggregate", lpath), f"{lpath}.aggregate", AggregateTerms),
                ))
            except ValueError as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(lpath, str(exc)) from None
        try:
            programs.append(Program(int(_number(prog.get("id", pi + 1), f"{ppath}.id")), tuple(layers)))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(ppath, str(exc)) from None
    try:
        portfolio = Portfolio(pf_id, tuple(programs))
    except ValueError as exc:
        raise ConfigError("$.programs", str(exc)) from None
    return WorkloadConfig(portfolio, sources)


def _load_json(source) -> tuple[dict, Path]:
    if isinstance(source, (str, os.PathLike)):
        path = Path(source)
        with open(path, encoding="utf-8") as f:
            text = f.read()
        base = path.parent
    else:
        text, base = source.read(), Path(".")
    try:
        return json.loads(text), base
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON: {exc}") from None


def read_portfolio_config(source: TextIO | str | os.PathLike) -> Portfolio:
    data, base = _load_json(source)
    return parse_portfolio_config(data, base).portfolio


def load_workload(config_path: str | os.PathLike) -> tuple[Portfolio, dict[int, EventLossTable]]:
    """Read a portfolio config and every ELT CSV it references (paths relative to the config)."""
    data, base = _load_json(config_path)
    cfg = parse_portfolio_config(data, base)
    elts = {}
    for elt_id, src in cfg.elt_sources.items():
        try:
            elts[elt_id] = read_elt_csv(src.path, elt_id, src.terms)
        except CsvFormatError as exc:
            raise CsvFormatError(f"{src.path}: {exc}") from None
    return cfg.portfolio, elts


def _terms_json(terms) -> dict:
    return {"retention": terms.retention, "limit": "inf" if math.isinf(terms.limit) else terms.limit}


def portfolio_config_dict(portfolio: Portfolio, elt_paths: dict[int, str],
                          elt_terms: dict[int, EltTerms]) -> dict:
    return {
        "portfolio": {"id": portfolio.portfolio_id},
        "programs": [
            {
                "id": program.program_id,
                "layers": [
                    {
                        "id": layer.layer_id,
                        "elt_files": [{"id": ref, "path": elt_paths[ref], "terms": _terms_json(elt_terms[ref])}
                                      for ref in layer.elt_refs],
                        "occurrence": _terms_json(layer.occurrence),
                        "aggregate": _terms_json(layer.aggregate),
                    }
                    for layer in program.layers
                ],
            }
            for program in portfolio.programs
        ],
    }


def write_workload(portfolio: Portfolio, elts: dict[int, EventLossTable],
                   out_dir: str | os.PathLike, config_name: str = "portfolio.json") -> Path:
    """Write ``elt_<id>.csv`` for every referenced ELT plus the portfolio config; returns the config path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for elt_id in portfolio.elt_ids:
        name = f"elt_{elt_id}.csv"
        write_elt_csv(elts[elt_id], out / name)
        paths[elt_id] = name
    cfg = portfolio_config_dict(portfolio, paths, {i: elts[i].terms for i in paths})
    config_path = out / config_name
    with open(config_path, "w", encoding="utf-8") as f:
        json.dump(cfg, f, indent=2)
        f.write("\n")
    return config_path
