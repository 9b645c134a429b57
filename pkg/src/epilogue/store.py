"""Append-optimized, chunk-compressed, CRC-protected episode log files.

File layout (all integers little-endian):

    "RLDS" | u32 version | u32 schema_len | schema bytes
          | u32 dsmeta_len | dsmeta bytes
          | chunk*
          | footer
          | u64 footer_offset | "SDLR"

    chunk  = u8 compression | u32 record_count | u32 uncompressed_len
           | u32 payload_len | u32 crc32 | payload
    footer = u32 index_entry_count
           | entry*            (u64 episode_number | u64 chunk_offset
                                | u32 record_ordinal_in_chunk
                                | u64 num_steps | u64 metadata_offset)
           | metadata blob region

Chunk payloads concatenate records. A record is a type byte (0x00 step,
0x01 episode boundary) followed by its body. Step bodies pack one flags
byte (bit0 is_first, bit1 is_last, bit2 is_terminal) then every leaf in
canonical schema order: fixed numeric leaves as raw row-major bytes,
variable first dimensions and byte strings varint-length-prefixed. A chunk
never splits a record. CRCs cover the stored (possibly compressed) payload
bytes. The footer index enables O(1) episode seeks; episode boundary
markers are also in-stream so a lost footer is recoverable by scanning.
"""

from __future__ import annotations

import json
import mmap
import os
import struct
import zlib
from dataclasses import dataclass
from typing import Any, Iterator

import numpy as np

from . import model
from .errors import (
    BadMagicError,
    ChunkCorruptError,
    DanglingEpisodeError,
    EpisodeOutOfRangeError,
    FlagSequenceError,
    InvalidArgumentError,
    IOFailureError,
    MissingFooterError,
    SchemaMismatchError,
    StepOutOfRangeError,
    UnsupportedVersionError,
    WriterClosedError,
)
from .model import DatasetSchema, EpisodeRecord, Leaf, StepRecord

MAGIC = b"RLDS"
TRAILER_MAGIC = b"SDLR"
VERSION = 1
FILE_EXTENSION = ".rlds"

COMPRESSION_NONE = 0
COMPRESSION_DEFLATE = 1
COMPRESSION_NAMES = {"none": COMPRESSION_NONE, "deflate": COMPRESSION_DEFLATE}

DEFAULT_CHUNK_BYTES = 262_144

REC_STEP = 0x00
REC_EPISODE_END = 0x01

_CHUNK_HEADER = struct.Struct("<BIIII")
_INDEX_ENTRY = struct.Struct("<QQIQQ")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")

_FLAG_FIRST = 1
_FLAG_LAST = 2
_FLAG_TERMINAL = 4


def write_varint(out: bytearray, value: int) -> None:
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def read_varint(buf, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7


@dataclass(frozen=True)
class IndexEntry:
    episode_number: int
    chunk_offset: int
    record_ordinal: int
    num_steps: int
    metadata_offset: int


class _LeafCodec:
    """Encode/decode one leaf; layout fixed by the leaf spec."""

    __slots__ = ("path", "leaf", "np_dtype", "itemsize", "row_count", "fixed_nbytes")

    def __init__(self, path: tuple[str, ...], leaf: Leaf):
        self.path = path
        self.leaf = leaf
        if leaf.dtype == "bytes":
            self.np_dtype = None
            self.itemsize = 0
        else:
            self.np_dtype = model.NUMPY_DTYPES[leaf.dtype]
            self.itemsize = self.np_dtype.itemsize
        self.row_count = leaf.fixed_count()
        self.fixed_nbytes = None
        if self.np_dtype is not None and not leaf.is_variable:
            self.fixed_nbytes = self.row_count * self.itemsize

    def check(self, value) -> None:
        reason = model._leaf_matches(value, self.leaf)
        if reason:
            raise SchemaMismatchError(reason, path="/".join(self.path))

    def encode(self, out: bytearray, value: np.ndarray) -> None:
        if not isinstance(value, np.ndarray):
            value = model.as_leaf_array(value)
        leaf = self.leaf
        if leaf.dtype == "bytes":
            if leaf.is_variable:
                write_varint(out, value.shape[0])
            for item in value.reshape(-1):
                write_varint(out, len(item))
                out += item
            return
        if leaf.is_variable:
            write_varint(out, value.shape[0])
        if not value.flags.c_contiguous:
            value = np.ascontiguousarray(value)
        out += value.tobytes()

    def decode(self, buf, pos: int) -> tuple[np.ndarray, int]:
        leaf = self.leaf
        shape = leaf.shape
        if leaf.is_variable:
            extent, pos = read_varint(buf, pos)
            shape = (extent, *leaf.shape[1:])
        if leaf.dtype == "bytes":
            count = self.row_count * (shape[0] if leaf.is_variable else 1)
            arr = np.empty(shape, dtype=object)
            flat = arr.reshape(-1)
            for i in range(count):
                length, pos = read_varint(buf, pos)
                flat[i] = bytes(buf[pos : pos + length])
                pos += length
            return arr, pos
        count = self.row_count * (shape[0] if leaf.is_variable else 1)
        nbytes = count * self.itemsize
        arr = np.frombuffer(buf[pos : pos + nbytes], dtype=self.np_dtype, count=count)
        return arr.reshape(shape).copy(), pos + nbytes


def _build_codecs(spec) -> list[_LeafCodec]:
    return [_LeafCodec(path, leaf) for path, leaf in model.walk_spec(spec)]


def _pack_tree(codecs: list[_LeafCodec], values: list[np.ndarray]):
    """Rebuild the nested dict (or bare leaf) from decoded leaf values."""
    if len(codecs) == 1 and codecs[0].path == ():
        return values[0]
    tree: dict = {}
    for codec, value in zip(codecs, values):
        node = tree
        for key in codec.path[:-1]:
            node = node.setdefault(key, {})
        node[codec.path[-1]] = value
    return tree


class StepCodec:
    """Serializer for step records and episode metadata under one schema."""

    def __init__(self, schema: DatasetSchema):
        self.schema = schema
        self.parts = [
            (part if part != "step_metadata" else "metadata", _build_codecs(schema.part(part)))
            for part in model.STEP_PARTS
        ]
        self.meta_codecs = _build_codecs(schema.episode_metadata)

    def encode_step(self, out: bytearray, step: StepRecord, check: bool = True) -> None:
        out.append(REC_STEP)
        flags = (
            (_FLAG_FIRST if step.is_first else 0)
            | (_FLAG_LAST if step.is_last else 0)
            | (_FLAG_TERMINAL if step.is_terminal else 0)
        )
        out.append(flags)
        for attr, codecs in self.parts:
            value = getattr(step, attr)
            for codec in codecs:
                leaf_value = model.get_path(value, codec.path)
                if check:
                    codec.check(leaf_value)
                codec.encode(out, leaf_value)

    def decode_step(self, buf, pos: int) -> tuple[StepRecord, int]:
        flags = buf[pos]
        pos += 1
        fields: dict[str, Any] = {}
        for attr, codecs in self.parts:
            values = []
            for codec in codecs:
                value, pos = codec.decode(buf, pos)
                values.append(value)
            fields[attr] = _pack_tree(codecs, values) if codecs else {}
        return (
            StepRecord(
                observation=fields["observation"],
                action=fields["action"],
                reward=fields["reward"],
                discount=fields["discount"],
                is_first=bool(flags & _FLAG_FIRST),
                is_last=bool(flags & _FLAG_LAST),
                is_terminal=bool(flags & _FLAG_TERMINAL),
                metadata=fields["metadata"],
            ),
            pos,
        )

    def encode_episode_meta(self, metadata) -> bytes:
        out = bytearray()
        for codec in self.meta_codecs:
            leaf_value = model.get_path(metadata, codec.path)
            codec.check(leaf_value)
            codec.encode(out, leaf_value)
        return bytes(out)

    def decode_episode_meta(self, buf, pos: int = 0):
        values = []
        for codec in self.meta_codecs:
            value, pos = codec.decode(buf, pos)
            values.append(value)
        return (_pack_tree(self.meta_codecs, values) if self.meta_codecs else {}), pos


class Writer:
    """Exclusive single-producer append writer. Not thread-safe."""

    def __init__(
        self,
        path: str | os.PathLike,
        schema: DatasetSchema,
        dataset_metadata: dict | None = None,
        *,
        compression: str = "deflate",
        target_chunk_bytes: int = DEFAULT_CHUNK_BYTES,
    ):
        if compression not in COMPRESSION_NAMES:
            raise InvalidArgumentError("unknown compression codec", compression=compression)
        if target_chunk_bytes < 1:
            raise InvalidArgumentError("target_chunk_bytes must be positive")
        schema.validate()
        self.path = os.fspath(path)
        self.schema = schema
        self._codec = StepCodec(schema)
        self._compression = COMPRESSION_NAMES[compression]
        self._target_chunk_bytes = target_chunk_bytes

        meta = dict(dataset_metadata if dataset_metadata is not None else schema.dataset_metadata)
        schema_bytes = schema.canonical_bytes()
        meta_bytes = model.canonical_json(meta)
        try:
            self._file = open(self.path, "wb")
            self._file.write(MAGIC)
            self._file.write(_U32.pack(VERSION))
            self._file.write(_U32.pack(len(schema_bytes)))
            self._file.write(schema_bytes)
            self._file.write(_U32.pack(len(meta_bytes)))
            self._file.write(meta_bytes)
            self._file.flush()
        except OSError as exc:
            raise IOFailureError(f"cannot create log file: {exc}", path=self.path) from exc

        self._offset = 4 + 4 + 4 + len(schema_bytes) + 4 + len(meta_bytes)
        self._chunk = bytearray()
        self._chunk_records = 0
        self._entries: list[IndexEntry] = []
        self._meta_blobs = bytearray()
        self._episode_open = False
        self._after_last = False  # previous step carried is_last, episode not yet ended
        self._episode_start: tuple[int, int] | None = None
        self._steps_in_episode = 0
        self._total_steps = 0
        self._closed = False

    # -- write path -----------------------------------------------------

    def append_step(self, step: StepRecord) -> None:
        if self._closed:
            raise WriterClosedError("writer already finalized")
        if self._after_last:
            # The spec allows a new first step directly after a last step;
            # the finished episode is committed with empty metadata.
            self.end_episode(model.undefined_fill(self.schema.episode_metadata, variable_extent=0))
        if not self._episode_open:
            if not step.is_first:
                raise FlagSequenceError("first step of an episode must set is_first")
        elif step.is_first:
            raise FlagSequenceError("is_first inside an open episode")
        if step.is_terminal and not step.is_last:
            raise FlagSequenceError("is_terminal requires is_last")

        # Encode into a scratch buffer so a mid-encode schema mismatch
        # cannot leave a torn record in the chunk.
        scratch = bytearray()
        self._codec.encode_step(scratch, step)

        if not self._episode_open:
            self._episode_start = (self._offset, self._chunk_records)
            self._episode_open = True
            self._steps_in_episode = 0

        self._chunk += scratch
        self._chunk_records += 1
        self._steps_in_episode += 1
        self._total_steps += 1
        if step.is_last:
            self._after_last = True
        if len(self._chunk) >= self._target_chunk_bytes:
            self._flush_chunk()

    def end_episode(self, metadata=None) -> None:
        if self._closed:
            raise WriterClosedError("writer already finalized")
        if not self._episode_open:
            raise DanglingEpisodeError("no open episode to end")
        if not self._after_last:
            raise DanglingEpisodeError("last appended step does not set is_last")
        if metadata is None:
            metadata = model.undefined_fill(self.schema.episode_metadata, variable_extent=0)
        meta_bytes = self._codec.encode_episode_meta(metadata)
        self._chunk.append(REC_EPISODE_END)
        self._chunk += meta_bytes
        self._chunk_records += 1

        chunk_offset, ordinal = self._episode_start  # type: ignore[misc]
        self._entries.append(
            IndexEntry(
                episode_number=len(self._entries),
                chunk_offset=chunk_offset,
                record_ordinal=ordinal,
                num_steps=self._steps_in_episode,
                metadata_offset=len(self._meta_blobs),
            )
        )
        self._meta_blobs += meta_bytes
        self._episode_open = False
        self._after_last = False
        self._episode_start = None
        if len(self._chunk) >= self._target_chunk_bytes:
            self._flush_chunk()

    def finalize(self) -> dict:
        if self._closed:
            raise WriterClosedError("writer already finalized")
        if self._episode_open:
            if self._after_last:
                self.end_episode()
            else:
                raise DanglingEpisodeError("open episode without a final is_last step")
        if self._chunk:
            self._flush_chunk()

        footer_offset = self._offset
        try:
            self._file.write(_U32.pack(len(self._entries)))
            for e in self._entries:
                self._file.write(
                    _INDEX_ENTRY.pack(
                        e.episode_number, e.chunk_offset, e.record_ordinal, e.num_steps, e.metadata_offset
                    )
                )
            self._file.write(self._meta_blobs)
            self._file.write(_U64.pack(footer_offset))
            self._file.write(TRAILER_MAGIC)
            self._file.flush()
            os.fsync(self._file.fileno())
            size = self._file.tell()
            self._file.close()
        except OSError as exc:
            raise IOFailureError(f"cannot finalize log file: {exc}", path=self.path) from exc
        self._closed = True
        return {"episodes": len(self._entries), "steps": self._total_steps, "bytes": size}

    def flush(self) -> None:
        """Push buffered records to disk (chunk boundary); keeps the writer open."""
        if self._chunk:
            self._flush_chunk()
        self._file.flush()

    def _flush_chunk(self) -> None:
        raw = bytes(self._chunk)
        if self._compression == COMPRESSION_DEFLATE:
            comp = zlib.compressobj(wbits=-zlib.MAX_WBITS)
            payload = comp.compress(raw) + comp.flush()
        else:
            payload = raw
        header = _CHUNK_HEADER.pack(
            self._compression, self._chunk_records, len(raw), len(payload), zlib.crc32(payload)
        )
        try:
            self._file.write(header)
            self._file.write(payload)
        except OSError as exc:
            raise IOFailureError(f"cannot write chunk: {exc}", path=self.path) from exc
        self._offset += len(header) + len(payload)
        self._chunk = bytearray()
        self._chunk_records = 0

    @property
    def episodes_written(self) -> int:
        return len(self._entries)

    def __enter__(self) -> "Writer":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if not self._closed and exc_type is None:
            self.finalize()


def open_writer(
    path: str | os.PathLike,
    schema: DatasetSchema,
    dataset_metadata: dict | None = None,
    *,
    compression: str = "deflate",
    target_chunk_bytes: int = DEFAULT_CHUNK_BYTES,
) -> Writer:
    return Writer(
        path,
        schema,
        dataset_metadata,
        compression=compression,
        target_chunk_bytes=target_chunk_bytes,
    )


class _Header:
    __slots__ = ("schema_bytes", "dataset_metadata", "end")

    def __init__(self, schema_bytes: bytes, dataset_metadata: dict, end: int):
        self.schema_bytes = schema_bytes
        self.dataset_metadata = dataset_metadata
        self.end = end


def _parse_header(buf) -> _Header:
    if len(buf) < 12 or bytes(buf[0:4]) != MAGIC:
        raise BadMagicError("not an RLDS log file")
    (version,) = _U32.unpack_from(buf, 4)
    if version != VERSION:
        raise UnsupportedVersionError("unsupported format version", version=version)
    (schema_len,) = _U32.unpack_from(buf, 8)
    pos = 12
    if len(buf) < pos + schema_len + 4:
        raise BadMagicError("truncated header")
    schema_bytes = bytes(buf[pos : pos + schema_len])
    pos += schema_len
    (meta_len,) = _U32.unpack_from(buf, pos)
    pos += 4
    if len(buf) < pos + meta_len:
        raise BadMagicError("truncated header")
    meta_bytes = bytes(buf[pos : pos + meta_len])
    pos += meta_len
    return _Header(schema_bytes, json.loads(meta_bytes.decode("utf-8")), pos)


class Reader:
    """Random and sequential access over a finalized (or recovered) log file.

    Read-only and safe to share across tasks; every access works off an
    immutable memory map.
    """

    def __init__(self, path: str | os.PathLike, *, _recovered: tuple | None = None):
        self.path = os.fspath(path)
        try:
            with open(self.path, "rb") as f:
                self._size = os.fstat(f.fileno()).st_size
                if self._size == 0:
                    raise BadMagicError("empty file")
                self._map = mmap.mmap(f.fileno(), 0, access=mmap.ACCESS_READ)
        except OSError as exc:
            raise IOFailureError(f"cannot open log file: {exc}", path=self.path) from exc
        self._buf = memoryview(self._map)
        self._header = _parse_header(self._buf)
        self.schema = DatasetSchema.from_canonical(
            self._header.schema_bytes, self._header.dataset_metadata
        )
        self._codec = StepCodec(self.schema)

        if _recovered is not None:
            self._entries, self._meta_region, self._chunks_end = _recovered
            return
        self._entries, self._meta_region, self._chunks_end = self._parse_footer()

    # -- footer -----------------------------------------------------------

    def _parse_footer(self):
        buf = self._buf
        if self._size < self._header.end + 12:
            raise MissingFooterError("file too short for a footer", path=self.path)
        if bytes(buf[self._size - 4 : self._size]) != TRAILER_MAGIC:
            raise MissingFooterError("trailer magic missing", path=self.path)
        (footer_offset,) = _U64.unpack_from(buf, self._size - 12)
        if footer_offset < self._header.end or footer_offset > self._size - 12 - 4:
            raise MissingFooterError("footer offset out of bounds", path=self.path)
        (count,) = _U32.unpack_from(buf, footer_offset)
        entries_end = footer_offset + 4 + count * _INDEX_ENTRY.size
        if entries_end > self._size - 12:
            raise MissingFooterError("footer index truncated", path=self.path)
        entries = [
            IndexEntry(*_INDEX_ENTRY.unpack_from(buf, footer_offset + 4 + i * _INDEX_ENTRY.size))
            for i in range(count)
        ]
        meta_region = bytes(buf[entries_end : self._size - 12])
        return entries, meta_region, footer_offset

    # -- chunk access -------------------------------------------------------

    def _read_chunk(self, offset: int) -> tuple[bytes, int, int]:
        """Return (payload, record_count, next_chunk_offset); verifies the CRC."""
        buf = self._buf
        if offset + _CHUNK_HEADER.size > self._chunks_end:
            raise ChunkCorruptError("chunk header out of bounds", offset=offset)
        compression, record_count, uncompressed_len, payload_len, crc = _CHUNK_HEADER.unpack_from(
            buf, offset
        )
        start = offset + _CHUNK_HEADER.size
        end = start + payload_len
        if end > self._chunks_end:
            raise ChunkCorruptError("chunk payload out of bounds", offset=offset)
        payload = bytes(buf[start:end])
        if zlib.crc32(payload) != crc:
            raise ChunkCorruptError("chunk crc mismatch", offset=offset)
        if compression == COMPRESSION_DEFLATE:
            try:
                payload = zlib.decompress(payload, wbits=-zlib.MAX_WBITS)
            except zlib.error as exc:
                raise ChunkCorruptError(f"chunk decompression failed: {exc}", offset=offset) from exc
        elif compression != COMPRESSION_NONE:
            raise ChunkCorruptError("unknown compression codec", offset=offset)
        if len(payload) != uncompressed_len:
            raise ChunkCorruptError("uncompressed length mismatch", offset=offset)
        return payload, record_count, end

    def _iter_records(self, chunk_offset: int, skip_records: int = 0) -> Iterator[tuple[int, Any]]:
        """Yield (record_type, decoded) from a chunk position onward."""
        offset = chunk_offset
        while offset < self._chunks_end:
            payload, record_count, next_offset = self._read_chunk(offset)
            pos = 0
            for _ in range(record_count):
                rec_type = payload[pos]
                pos += 1
                if rec_type == REC_STEP:
                    step, pos = self._codec.decode_step(payload, pos)
                    record: Any = step
                elif rec_type == REC_EPISODE_END:
                    record, pos = self._codec.decode_episode_meta(payload, pos)
                else:
                    raise ChunkCorruptError("unknown record type", offset=offset)
                if skip_records:
                    skip_records -= 1
                    continue
                yield rec_type, record
            offset = next_offset

    # -- public API -----------------------------------------------------

    def episode_count(self) -> int:
        return len(self._entries)

    def schema_bytes(self) -> bytes:
        return self._header.schema_bytes

    def dataset_metadata(self) -> dict:
        return dict(self._header.dataset_metadata)

    def num_steps(self, i: int) -> int:
        return self._entry(i).num_steps

    def _entry(self, i: int) -> IndexEntry:
        if not 0 <= i < len(self._entries):
            raise EpisodeOutOfRangeError("no such episode", episode=i, count=len(self._entries))
        return self._entries[i]

    def episode_metadata(self, i: int):
        entry = self._entry(i)
        meta, _ = self._codec.decode_episode_meta(self._meta_region, entry.metadata_offset)
        return meta

    def get_episode(self, i: int) -> EpisodeRecord:
        entry = self._entry(i)
        steps: list[StepRecord] = []
        for rec_type, record in self._iter_records(entry.chunk_offset, entry.record_ordinal):
            if rec_type == REC_STEP:
                steps.append(record)
                if len(steps) == entry.num_steps:
                    break
            elif steps:
                raise ChunkCorruptError("episode shorter than indexed", offset=entry.chunk_offset)
        if len(steps) != entry.num_steps:
            raise ChunkCorruptError("episode truncated", offset=entry.chunk_offset)
        return EpisodeRecord(steps=steps, metadata=self.episode_metadata(i))

    def get_step(self, i: int, j: int) -> StepRecord:
        entry = self._entry(i)
        if not 0 <= j < entry.num_steps:
            raise StepOutOfRangeError("no such step", episode=i, step=j, count=entry.num_steps)
        seen = 0
        for rec_type, record in self._iter_records(entry.chunk_offset, entry.record_ordinal):
            if rec_type == REC_STEP:
                if seen == j:
                    return record
                seen += 1
        raise ChunkCorruptError("episode truncated", offset=entry.chunk_offset)

    def iter_episodes(self) -> Iterator[EpisodeRecord]:
        if not self._entries:
            return
        steps: list[StepRecord] = []
        produced = 0
        for rec_type, record in self._iter_records(self._entries[0].chunk_offset):
            if rec_type == REC_STEP:
                steps.append(record)
            else:
                yield EpisodeRecord(steps=steps, metadata=record)
                steps = []
                produced += 1
                if produced == len(self._entries):
                    return

    def iter_steps(self) -> Iterator[StepRecord]:
        for episode in self.iter_episodes():
            yield from episode.steps

    def close(self) -> None:
        self._buf.release()
        self._map.close()

    def __enter__(self) -> "Reader":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()


def open_reader(path: str | os.PathLike) -> Reader:
    return Reader(path)


def recover(path: str | os.PathLike) -> tuple[Reader, dict]:
    """Rebuild the episode index by scanning chunks and boundary markers.

    Trailing partial chunks and any trailing unterminated episode are
    discarded. Over an uncorrupted file the rebuilt index equals the
    written footer index.
    """
    with open(path, "rb") as f:
        data = f.read()
    header = _parse_header(data)
    schema = DatasetSchema.from_canonical(header.schema_bytes, {})
    codec = StepCodec(schema)

    # Prefer the trailer to bound the chunk region; fall back to EOF.
    chunks_end = len(data)
    footer_valid = False
    if len(data) >= header.end + 12 and data[-4:] == TRAILER_MAGIC:
        (footer_offset,) = _U64.unpack_from(data, len(data) - 12)
        if header.end <= footer_offset <= len(data) - 16:
            chunks_end = footer_offset
            footer_valid = True

    entries: list[IndexEntry] = []
    meta_blobs = bytearray()
    pos = header.end
    consumed = pos
    episode_start: tuple[int, int] | None = None
    steps_in_episode = 0
    while pos + _CHUNK_HEADER.size <= chunks_end:
        compression, record_count, uncompressed_len, payload_len, crc = _CHUNK_HEADER.unpack_from(
            data, pos
        )
        payload_end = pos + _CHUNK_HEADER.size + payload_len
        if payload_end > chunks_end:
            break
        payload = data[pos + _CHUNK_HEADER.size : payload_end]
        if zlib.crc32(payload) != crc:
            break
        if compression == COMPRESSION_DEFLATE:
            try:
                payload = zlib.decompress(payload, wbits=-zlib.MAX_WBITS)
            except zlib.error:
                break
        elif compression != COMPRESSION_NONE:
            break
        if len(payload) != uncompressed_len:
            break
        try:
            cursor = 0
            for ordinal in range(record_count):
                rec_type = payload[cursor]
                cursor += 1
                if rec_type == REC_STEP:
                    _, cursor = codec.decode_step(payload, cursor)
                    if episode_start is None:
                        episode_start = (pos, ordinal)
                        steps_in_episode = 0
                    steps_in_episode += 1
                elif rec_type == REC_EPISODE_END:
                    meta_start = cursor
                    _, cursor = codec.decode_episode_meta(payload, cursor)
                    if episode_start is None:
                        raise ValueError("marker without steps")
                    entries.append(
                        IndexEntry(
                            episode_number=len(entries),
                            chunk_offset=episode_start[0],
                            record_ordinal=episode_start[1],
                            num_steps=steps_in_episode,
                            metadata_offset=len(meta_blobs),
                        )
                    )
                    meta_blobs += payload[meta_start:cursor]
                    episode_start = None
                else:
                    raise ValueError("unknown record type")
        except (ValueError, IndexError, struct.error):
            break
        pos = payload_end
        consumed = pos

    recovered_region_end = consumed
    if footer_valid and consumed == chunks_end:
        recovered_region_end = len(data)  # footer + trailer account for the rest
    report = {
        "episodes_recovered": len(entries),
        "bytes_discarded": len(data) - recovered_region_end,
    }
    reader = Reader(path, _recovered=(entries, bytes(meta_blobs), consumed))
    return reader, report
