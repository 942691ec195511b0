"""Splittable, schema-tagged, block-compressed record containers (.ctr).

File layout (all integers little-endian):

    "VLC1"
    u32 header_len, header JSON {"schema": ..., "codec": "none"|"lz-block"}
    sync marker (16 random bytes, fixed per file)
    repeated blocks:
        u32 record_count
        u32 uncompressed_len
        u32 payload_len
        u32 crc32 of the stored payload
        payload (codec-applied concatenation of row-encoded records)
        sync marker

Row encoding: a presence bitmap covering the schema's optional fields,
then each present field in schema order; int64/float64/bool are
fixed-width, text/bytes are varint-length-prefixed. Every block is
followed by the sync marker, so a reader can start at any sync position
and consume exactly the remaining blocks; split_points() exposes the
per-block byte ranges that make parallel scans possible.

The "lz-block" codec is stdlib zlib at a fast level (an LZ77-class
byte-oriented block compressor); codecs are pluggable via
register_codec() and the id travels in the header.

CSV note for the format benchmark: CSV has no null, so an absent optional
is encoded as the empty cell and decoded back to None; the benchmark
corpus never carries empty text values, keeping readback equality exact.
"""

from __future__ import annotations

import base64
import csv
import json
import os
import statistics
import struct
import time
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator

MAGIC = b"VLC1"
SYNC_LEN = 16
_LEN = struct.Struct("<I")
_BLK = struct.Struct("<IIII")  # record_count, uncompressed_len, payload_len, crc
_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")

DEFAULT_BLOCK_RECORDS = 5000

FIELD_TYPES = ("int64", "float64", "text", "bool", "bytes")


class ArchiveError(Exception):
    pass


class SchemaError(ArchiveError):
    def __init__(self, message: str, record_index: int | None = None,
                 field: str | None = None):
        if record_index is not None:
            message = f"record {record_index}, field {field!r}: {message}"
        super().__init__(message)
        self.record_index = record_index
        self.field = field


class NotAContainerError(ArchiveError):
    pass


class ContainerCorruptError(ArchiveError):
    def __init__(self, path: str, block_index: int, message: str):
        super().__init__(f"{path} block {block_index}: {message}")
        self.block_index = block_index


class ContainerTruncatedError(ArchiveError):
    def __init__(self, path: str, last_good_block: int):
        super().__init__(
            f"{path}: truncated after block {last_good_block}" if last_good_block >= 0
            else f"{path}: truncated before any complete block")
        self.last_good_block = last_good_block


class QueryError(ArchiveError):
    pass


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SchemaField:
    name: str
    type: str
    optional: bool = False

    def __post_init__(self):
        if self.type not in FIELD_TYPES:
            raise SchemaError(f"unknown field type {self.type!r}")


@dataclass(frozen=True)
class ContainerSchema:
    name: str
    fields: tuple[SchemaField, ...]

    def __post_init__(self):
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate field names in schema {self.name!r}")

    def field_names(self) -> list[str]:
        return [f.name for f in self.fields]

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "fields": [
                {"name": f.name, "type": f.type, "optional": f.optional}
                for f in self.fields
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ContainerSchema":
        return cls(
            name=data["name"],
            fields=tuple(
                SchemaField(f["name"], f["type"], f.get("optional", False))
                for f in data["fields"]
            ),
        )


# ---------------------------------------------------------------------------
# Codecs
# ---------------------------------------------------------------------------

_CODECS: dict[str, tuple[Callable[[bytes], bytes], Callable[[bytes], bytes]]] = {
    "none": (lambda b: b, lambda b: b),
    "lz-block": (lambda b: zlib.compress(b, 1), zlib.decompress),
}


def register_codec(name: str, compress: Callable[[bytes], bytes],
                   decompress: Callable[[bytes], bytes]) -> None:
    _CODECS[name] = (compress, decompress)


def _codec(name: str):
    try:
        return _CODECS[name]
    except KeyError:
        raise ArchiveError(f"unknown codec id {name!r}") from None


# ---------------------------------------------------------------------------
# Row encoding
# ---------------------------------------------------------------------------


def _write_varint(out: bytearray, n: int) -> None:
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return


def _read_varint(data: bytes, pos: int) -> tuple[int, int]:
    shift = 0
    result = 0
    while True:
        b = data[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7


def _encode_record(rec: dict, schema: ContainerSchema, out: bytearray,
                   index: int) -> None:
    optionals = [f for f in schema.fields if f.optional]
    bitmap = bytearray((len(optionals) + 7) // 8) if optionals else b""
    oi = 0
    for f in schema.fields:
        if f.optional:
            if rec.get(f.name) is not None:
                bitmap[oi >> 3] |= 1 << (oi & 7)
            oi += 1
    out.extend(bitmap)
    for f in schema.fields:
        v = rec.get(f.name)
        if v is None:
            if not f.optional:
                raise SchemaError("required field is missing", index, f.name)
            continue
        t = f.type
        if t == "int64":
            if not isinstance(v, int) or isinstance(v, bool):
                raise SchemaError(f"expected int, got {type(v).__name__}", index, f.name)
            out.extend(_I64.pack(v))
        elif t == "float64":
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise SchemaError(f"expected number, got {type(v).__name__}", index, f.name)
            out.extend(_F64.pack(float(v)))
        elif t == "text":
            if not isinstance(v, str):
                raise SchemaError(f"expected str, got {type(v).__name__}", index, f.name)
            raw = v.encode("utf-8")
            _write_varint(out, len(raw))
            out.extend(raw)
        elif t == "bool":
            if not isinstance(v, bool):
                raise SchemaError(f"expected bool, got {type(v).__name__}", index, f.name)
            out.append(1 if v else 0)
        else:  # bytes
            if not isinstance(v, (bytes, bytearray)):
                raise SchemaError(f"expected bytes, got {type(v).__name__}", index, f.name)
            _write_varint(out, len(v))
            out.extend(v)


def _decode_records(data: bytes, schema: ContainerSchema, count: int) -> list[dict]:
    optionals = [f.name for f in schema.fields if f.optional]
    bitmap_len = (len(optionals) + 7) // 8
    out: list[dict] = []
    pos = 0
    for _ in range(count):
        present: dict[str, bool] = {}
        if bitmap_len:
            bm = data[pos : pos + bitmap_len]
            pos += bitmap_len
            for oi, name in enumerate(optionals):
                present[name] = bool(bm[oi >> 3] & (1 << (oi & 7)))
        rec: dict[str, Any] = {}
        for f in schema.fields:
            if f.optional and not present[f.name]:
                rec[f.name] = None
                continue
            t = f.type
            if t == "int64":
                rec[f.name] = _I64.unpack_from(data, pos)[0]
                pos += 8
            elif t == "float64":
                rec[f.name] = _F64.unpack_from(data, pos)[0]
                pos += 8
            elif t == "text":
                n, pos = _read_varint(data, pos)
                rec[f.name] = data[pos : pos + n].decode("utf-8")
                pos += n
            elif t == "bool":
                rec[f.name] = data[pos] == 1
                pos += 1
            else:
                n, pos = _read_varint(data, pos)
                rec[f.name] = bytes(data[pos : pos + n])
                pos += n
        out.append(rec)
    if pos != len(data):
        raise ValueError("trailing bytes after last record")
    return out


# ---------------------------------------------------------------------------
# Container write/read
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContainerInfo:
    path: Path
    schema: ContainerSchema
    codec: str
    sync: bytes
    first_block_at: int


def write_container(records: Iterable[dict], schema: ContainerSchema,
                    path: str | Path, *, codec: str = "lz-block",
                    target_block_records: int = DEFAULT_BLOCK_RECORDS,
                    sync_marker: bytes | None = None, fsync: bool = False) -> int:
    """Write records into blocks of <= target_block_records; returns count."""
    compress, _ = _codec(codec)
    sync = sync_marker if sync_marker is not None else os.urandom(SYNC_LEN)
    if len(sync) != SYNC_LEN:
        raise ArchiveError(f"sync marker must be {SYNC_LEN} bytes")
    header = json.dumps({"schema": schema.to_json(), "codec": codec},
                        separators=(",", ":")).encode("utf-8")
    written = 0
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(_LEN.pack(len(header)))
        f.write(header)
        f.write(sync)
        buf = bytearray()
        in_block = 0

        def flush_block():
            nonlocal buf, in_block, written
            payload = compress(bytes(buf))
            f.write(_BLK.pack(in_block, len(buf), len(payload), zlib.crc32(payload)))
            f.write(payload)
            f.write(sync)
            written += in_block
            buf = bytearray()
            in_block = 0

        for i, rec in enumerate(records):
            _encode_record(rec, schema, buf, i)
            in_block += 1
            if in_block >= target_block_records:
                flush_block()
        if in_block:
            flush_block()
        if fsync:
            f.flush()
            os.fsync(f.fileno())
    return written


def container_info(path: str | Path) -> ContainerInfo:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise NotAContainerError(f"{path}: bad magic {magic!r}")
        raw_len = f.read(4)
        if len(raw_len) < 4:
            raise NotAContainerError(f"{path}: truncated header")
        (hlen,) = _LEN.unpack(raw_len)
        header = f.read(hlen)
        sync = f.read(SYNC_LEN)
        if len(header) < hlen or len(sync) < SYNC_LEN:
            raise NotAContainerError(f"{path}: truncated header")
        meta = json.loads(header)
        return ContainerInfo(
            path=Path(path),
            schema=ContainerSchema.from_json(meta["schema"]),
            codec=meta["codec"],
            sync=sync,
            first_block_at=8 + hlen + SYNC_LEN,
        )


def _read_block_here(f, info: ContainerInfo, decompress, block: int,
                     path) -> list[dict] | None:
    """Decode one block at the current position; None on clean EOF."""
    head = f.read(_BLK.size)
    if len(head) == 0:
        return None
    if len(head) < _BLK.size:
        raise ContainerTruncatedError(str(path), block - 1)
    count, raw_len, payload_len, crc = _BLK.unpack(head)
    payload = f.read(payload_len)
    sync = f.read(SYNC_LEN)
    if len(payload) < payload_len or len(sync) < SYNC_LEN:
        raise ContainerTruncatedError(str(path), block - 1)
    if sync != info.sync:
        raise ContainerCorruptError(str(path), block, "sync marker mismatch")
    if zlib.crc32(payload) != crc:
        raise ContainerCorruptError(str(path), block, "payload crc mismatch")
    try:
        raw = decompress(payload)
    except Exception as exc:
        raise ContainerCorruptError(str(path), block, f"decompress: {exc}")
    if len(raw) != raw_len:
        raise ContainerCorruptError(str(path), block, "uncompressed length mismatch")
    try:
        return _decode_records(raw, info.schema, count)
    except Exception as exc:
        raise ContainerCorruptError(str(path), block, f"row decode: {exc}")


def iter_blocks(path: str | Path, *, ranges=None) -> Iterator[tuple[int, list[dict]]]:
    """Yield (block_index, records); corruption raises with the block index.

    `ranges` restricts iteration to the listed blocks. Entries in the
    (block_index, (start, end)) form returned by split_points() are read
    by direct seek, independent of the blocks before them.
    """
    info = container_info(path)
    _, decompress = _codec(info.codec)
    with open(path, "rb") as f:
        if ranges is not None and all(not isinstance(r, int) for r in ranges):
            for block, (start, _end) in sorted(ranges):
                f.seek(start)
                records = _read_block_here(f, info, decompress, block, path)
                if records is not None:
                    yield block, records
            return
        wanted = None if ranges is None else {int(r) for r in ranges}
        f.seek(info.first_block_at)
        block = 0
        while True:
            if wanted is not None and not wanted:
                return
            records = _read_block_here(f, info, decompress, block, path)
            if records is None:
                return
            if wanted is None or block in wanted:
                if wanted is not None:
                    wanted.discard(block)
                yield block, records
            block += 1


def read_container(path: str | Path) -> list[dict]:
    out: list[dict] = []
    for _, records in iter_blocks(path):
        out.extend(records)
    return out


def split_points(path: str | Path) -> list[tuple[int, tuple[int, int]]]:
    """Per-block byte ranges [start of block header, end of trailing sync)."""
    info = container_info(path)
    out = []
    with open(path, "rb") as f:
        f.seek(info.first_block_at)
        block = 0
        while True:
            start = f.tell()
            head = f.read(_BLK.size)
            if len(head) == 0:
                return out
            if len(head) < _BLK.size:
                raise ContainerTruncatedError(str(path), block - 1)
            _, _, payload_len, _ = _BLK.unpack(head)
            f.seek(payload_len + SYNC_LEN, os.SEEK_CUR)
            end = f.tell()
            out.append((block, (start, end)))
            block += 1


def container_record_count(path: str | Path) -> int:
    """Total records from block headers alone (no payload decode)."""
    info = container_info(path)
    total = 0
    with open(path, "rb") as f:
        f.seek(info.first_block_at)
        block = 0
        while True:
            head = f.read(_BLK.size)
            if len(head) == 0:
                return total
            if len(head) < _BLK.size:
                raise ContainerTruncatedError(str(path), block - 1)
            count, _, payload_len, _ = _BLK.unpack(head)
            f.seek(payload_len + SYNC_LEN, os.SEEK_CUR)
            total += count
            block += 1


def sync_positions(path: str | Path) -> list[int]:
    """Byte offsets of every sync marker (header's, then one per block)."""
    info = container_info(path)
    positions = [info.first_block_at - SYNC_LEN]
    for _, (_, end) in split_points(path):
        positions.append(end - SYNC_LEN)
    return positions


def read_from_sync(path: str | Path, offset: int) -> list[dict]:
    """Resynchronize at a sync-marker offset and read the remaining blocks."""
    info = container_info(path)
    _, decompress = _codec(info.codec)
    out: list[dict] = []
    with open(path, "rb") as f:
        f.seek(offset)
        if f.read(SYNC_LEN) != info.sync:
            raise ArchiveError(f"{path}: no sync marker at byte {offset}")
        block = -1  # index unknown when resuming mid-file; only used in errors
        while True:
            records = _read_block_here(f, info, decompress, block, path)
            if records is None:
                return out
            out.extend(records)


# ---------------------------------------------------------------------------
# Predicates and scanning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldPredicate:
    """Conjunction of equality and closed-interval tests over schema fields."""

    equals: tuple[tuple[str, Any], ...] = ()
    intervals: tuple[tuple[str, tuple[Any, Any]], ...] = ()

    @classmethod
    def where(cls, equals: dict | None = None,
              intervals: dict | None = None) -> "FieldPredicate":
        return cls(
            equals=tuple(sorted((equals or {}).items())),
            intervals=tuple(sorted((intervals or {}).items())),
        )

    def fields(self) -> set[str]:
        return {k for k, _ in self.equals} | {k for k, _ in self.intervals}

    def matches(self, rec: dict) -> bool:
        for k, v in self.equals:
            if rec[k] != v:
                return False
        for k, (lo, hi) in self.intervals:
            v = rec[k]
            if v is None:
                return False
            if lo is not None and v < lo:
                return False
            if hi is not None and v > hi:
                return False
        return True


MATCH_ALL = FieldPredicate()


def scan(paths: str | Path | Iterable[str | Path],
         where: FieldPredicate = MATCH_ALL,
         select: list[str] | None = None,
         ranges=None) -> list[dict]:
    """Filtered, projected read; equals a brute-force filter of a full read."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    out: list[dict] = []
    for path in paths:
        info = container_info(path)
        known = set(info.schema.field_names())
        unknown = where.fields() - known
        if unknown:
            raise QueryError(f"unknown field(s) in predicate: {sorted(unknown)}")
        if select:
            missing = set(select) - known
            if missing:
                raise QueryError(f"unknown field(s) in projection: {sorted(missing)}")
        for _, records in iter_blocks(path, ranges=ranges):
            for rec in records:
                if where.matches(rec):
                    out.append({k: rec[k] for k in select} if select else rec)
    return out


# ---------------------------------------------------------------------------
# Format benchmark (CSV vs container vs compressed container)
# ---------------------------------------------------------------------------

FORMAT_CSV = "csv"
FORMAT_CONTAINER = "container"
FORMAT_CONTAINER_LZ = "container+lz"


def csv_write(records: Iterable[dict], schema: ContainerSchema, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(schema.field_names())
        for rec in records:
            row = []
            for fld in schema.fields:
                v = rec.get(fld.name)
                if v is None:
                    row.append("")
                elif fld.type == "bool":
                    row.append("true" if v else "false")
                elif fld.type == "float64":
                    row.append(repr(float(v)))
                elif fld.type == "bytes":
                    row.append(base64.b64encode(v).decode("ascii"))
                else:
                    row.append(str(v))
            writer.writerow(row)


def csv_read(path: str | Path, schema: ContainerSchema) -> list[dict]:
    out: list[dict] = []
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != schema.field_names():
            raise ArchiveError(f"{path}: csv header does not match schema")
        for row in reader:
            rec: dict[str, Any] = {}
            for fld, cell in zip(schema.fields, row):
                if cell == "" and fld.optional:
                    rec[fld.name] = None
                elif fld.type == "int64":
                    rec[fld.name] = int(cell)
                elif fld.type == "float64":
                    rec[fld.name] = float(cell)
                elif fld.type == "bool":
                    rec[fld.name] = cell == "true"
                elif fld.type == "bytes":
                    rec[fld.name] = base64.b64decode(cell)
                else:
                    rec[fld.name] = cell
            out.append(rec)
    return out


@dataclass(frozen=True)
class BenchmarkCell:
    write_ms: float
    read_ms: float
    size_bytes: int


@dataclass(frozen=True)
class BenchmarkReport:
    corpus: dict
    repetitions: int
    machine: str
    cells: dict[str, BenchmarkCell]

    def to_json(self) -> str:
        payload = {
            "corpus": self.corpus,
            "repetitions": self.repetitions,
            "machine": self.machine,
            "formats": {
                name: {"write_ms": c.write_ms, "read_ms": c.read_ms,
                       "size_bytes": c.size_bytes}
                for name, c in self.cells.items()
            },
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_table(self) -> str:
        csv_size = self.cells[FORMAT_CSV].size_bytes
        lines = [
            f"{'format':<14} {'write ms':>10} {'read ms':>10} {'size bytes':>12} {'vs csv':>8}",
        ]
        for name in (FORMAT_CSV, FORMAT_CONTAINER, FORMAT_CONTAINER_LZ):
            c = self.cells[name]
            rel = c.size_bytes / csv_size if csv_size else float("nan")
            lines.append(
                f"{name:<14} {c.write_ms:>10.1f} {c.read_ms:>10.1f} "
                f"{c.size_bytes:>12d} {rel:>8.3f}"
            )
        lines.append(f"repetitions={self.repetitions} (mean reported); {self.machine}")
        return "\n".join(lines)


def _record_fingerprint(rec: dict, schema: ContainerSchema) -> tuple:
    return tuple(rec[f.name] for f in schema.fields)


def benchmark_formats(records: list[dict], schema: ContainerSchema,
                      workdir: str | Path, *, repetitions: int = 3,
                      target_block_records: int = DEFAULT_BLOCK_RECORDS,
                      corpus_descriptor: dict | None = None) -> BenchmarkReport:
    """Write+read the corpus in all three formats, mean of `repetitions`."""
    import platform as _platform

    if not records:
        raise ValueError("benchmark corpus is empty")
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    plans = {
        FORMAT_CSV: (
            workdir / "corpus.csv",
            lambda p: csv_write(records, schema, p),
            lambda p: csv_read(p, schema),
        ),
        FORMAT_CONTAINER: (
            workdir / "corpus.none.ctr",
            lambda p: write_container(records, schema, p, codec="none",
                                      target_block_records=target_block_records),
            read_container,
        ),
        FORMAT_CONTAINER_LZ: (
            workdir / "corpus.lz.ctr",
            lambda p: write_container(records, schema, p, codec="lz-block",
                                      target_block_records=target_block_records),
            read_container,
        ),
    }

    cells: dict[str, BenchmarkCell] = {}
    baseline = sorted(_record_fingerprint(r, schema) for r in records)
    for name, (path, write_fn, read_fn) in plans.items():
        writes, reads = [], []
        for rep in range(repetitions):
            t0 = time.perf_counter()
            write_fn(path)
            writes.append((time.perf_counter() - t0) * 1000)
            t0 = time.perf_counter()
            back = read_fn(path)
            reads.append((time.perf_counter() - t0) * 1000)
            if rep == 0:
                got = sorted(_record_fingerprint(r, schema) for r in back)
                if got != baseline:
                    raise ArchiveError(f"{name}: readback does not match corpus")
        cells[name] = BenchmarkCell(
            write_ms=statistics.fmean(writes),
            read_ms=statistics.fmean(reads),
            size_bytes=path.stat().st_size,
        )

    descriptor = dict(corpus_descriptor or {})
    descriptor.setdefault("records", len(records))
    descriptor.setdefault("schema", schema.name)
    return BenchmarkReport(
        corpus=descriptor,
        repetitions=repetitions,
        machine=f"{_platform.platform()} / Python {_platform.python_version()}",
        cells=cells,
    )
