"""Desk-scale dataset sharing: manifests, splits, checksummed retrieval.

A catalog is a directory convention: `<store>/<name>/<version>/manifest.json`
holds the canonical manifest document; data files stay wherever their
authors host them and are fetched into a content-addressed cache
(`<cache>/sha256/<hex>`) on demand. There is no registry service.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import shutil
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Iterator
from urllib.parse import urlparse

from . import model, store
from .errors import (
    BadSplitExprError,
    ChecksumMismatchError,
    DuplicateVersionError,
    InvalidArgumentError,
    NetworkFailureError,
    SchemaDigestMismatchError,
    UnknownDatasetError,
    UnknownSplitError,
)
from .model import EpisodeRecord

FETCH_ATTEMPTS = 3
FETCH_BACKOFF_S = 0.5


@dataclass(frozen=True)
class FileEntry:
    path: str  # local path or http(s)/file URL
    sha256: str
    episode_count: int

    def is_remote(self) -> bool:
        return urlparse(self.path).scheme in ("http", "https")


@dataclass
class Manifest:
    name: str
    version: str
    description: str = ""
    citation: str = ""
    license: str = ""
    homepage: str = ""
    schema_digest: str = ""
    splits: dict[str, list[FileEntry]] = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "description": self.description,
            "citation": self.citation,
            "license": self.license,
            "homepage": self.homepage,
            "schema_digest": self.schema_digest,
            "splits": {
                split: [
                    {"path": e.path, "sha256": e.sha256, "episode_count": e.episode_count}
                    for e in entries
                ]
                for split, entries in self.splits.items()
            },
        }

    def to_bytes(self) -> bytes:
        return model.canonical_json(self.to_doc())

    @classmethod
    def from_doc(cls, doc: dict) -> "Manifest":
        return cls(
            name=doc["name"],
            version=doc["version"],
            description=doc.get("description", ""),
            citation=doc.get("citation", ""),
            license=doc.get("license", ""),
            homepage=doc.get("homepage", ""),
            schema_digest=doc.get("schema_digest", ""),
            splits={
                split: [
                    FileEntry(e["path"], e["sha256"], int(e["episode_count"])) for e in entries
                ]
                for split, entries in doc.get("splits", {}).items()
            },
        )

    def validate(self) -> None:
        if not self.name or "/" in self.name:
            raise InvalidArgumentError("bad dataset name", name=self.name)
        if not re.fullmatch(r"\d+\.\d+\.\d+", self.version):
            raise InvalidArgumentError("version must be semver", version=self.version)
        for split, entries in self.splits.items():
            if not split:
                raise InvalidArgumentError("empty split name")
            for entry in entries:
                if not re.fullmatch(r"[0-9a-f]{64}", entry.sha256):
                    raise InvalidArgumentError(
                        "entry needs a sha256 checksum", split=split, path=entry.path
                    )


@dataclass(frozen=True)
class SplitExpr:
    """`NAME`, `NAME[:K]`, `NAME[A:B]`, or `NAME[A:]` (half-open episode range)."""

    split: str
    start: int = 0
    stop: int | None = None

    _PATTERN = re.compile(r"^([^\[\]]+)(?:\[(\d*):(\d*)\])?$")

    @classmethod
    def parse(cls, text: str) -> "SplitExpr":
        match = cls._PATTERN.match(text.strip())
        if not match:
            raise BadSplitExprError("cannot parse split expression", expr=text)
        name, a, b = match.groups()
        if a is None and b is None:
            return cls(name)
        start = int(a) if a else 0
        stop = int(b) if b else None
        if stop is not None and start > stop:
            raise BadSplitExprError("range start exceeds stop", expr=text)
        return cls(name, start, stop)


def file_sha256(path: str | os.PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def manifest_for_files(
    name: str,
    version: str,
    splits: dict[str, list[str]],
    **fields_,
) -> Manifest:
    """Build a manifest for locally generated files: checksums, episode
    counts and the schema digest are read from the files themselves."""
    manifest = Manifest(name=name, version=version, **fields_)
    digest = None
    for split, paths in splits.items():
        entries = []
        for path in paths:
            with store.open_reader(path) as reader:
                count = reader.episode_count()
                file_digest = model.schema_digest(reader.schema_bytes())
            if digest is None:
                digest = file_digest
            entries.append(FileEntry(os.path.abspath(path), file_sha256(path), count))
        manifest.splits[split] = entries
    manifest.schema_digest = digest or ""
    return manifest


class _StoreLock:
    """`<store>/.lock`: register is exclusive per store directory."""

    def __init__(self, store_dir: str, timeout_s: float = 10.0):
        self._path = os.path.join(store_dir, ".lock")
        self._timeout = timeout_s
        self._fd = None

    def __enter__(self):
        deadline = time.monotonic() + self._timeout
        while True:
            try:
                self._fd = os.open(self._path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                return self
            except FileExistsError:
                if time.monotonic() > deadline:
                    raise InvalidArgumentError("store is locked", path=self._path) from None
                time.sleep(0.05)

    def __exit__(self, exc_type, exc, tb):
        if self._fd is not None:
            os.close(self._fd)
            os.unlink(self._path)


def register(manifest: Manifest, store_dir: str | os.PathLike) -> None:
    """Persist a manifest under `<store>/<name>/<version>/manifest.json`.

    Local files must exist, match their checksums, and embed a schema whose
    digest equals the manifest's. Remote entries are verified at fetch time.
    """
    manifest.validate()
    store_dir = os.fspath(store_dir)
    os.makedirs(store_dir, exist_ok=True)
    for split, entries in manifest.splits.items():
        for entry in entries:
            if entry.is_remote():
                continue
            if not os.path.exists(entry.path):
                raise InvalidArgumentError("referenced file missing", path=entry.path)
            actual = file_sha256(entry.path)
            if actual != entry.sha256:
                raise ChecksumMismatchError(
                    "file does not match manifest checksum",
                    path=entry.path,
                    expected=entry.sha256,
                    actual=actual,
                )
            with store.open_reader(entry.path) as reader:
                embedded = model.schema_digest(reader.schema_bytes())
            if manifest.schema_digest and embedded != manifest.schema_digest:
                raise SchemaDigestMismatchError(
                    "file schema differs from manifest", path=entry.path
                )
    with _StoreLock(store_dir):
        target = os.path.join(store_dir, manifest.name, manifest.version)
        if os.path.exists(os.path.join(target, "manifest.json")):
            raise DuplicateVersionError(
                "version already registered", name=manifest.name, version=manifest.version
            )
        os.makedirs(target, exist_ok=True)
        tmp = os.path.join(target, ".manifest.tmp")
        with open(tmp, "wb") as f:
            f.write(manifest.to_bytes())
        os.replace(tmp, os.path.join(target, "manifest.json"))


def list_datasets(store_dir: str | os.PathLike) -> list[tuple[str, str]]:
    """All (name, version) pairs registered in a store, sorted."""
    store_dir = os.fspath(store_dir)
    found = []
    if not os.path.isdir(store_dir):
        return found
    for name in sorted(os.listdir(store_dir)):
        base = os.path.join(store_dir, name)
        if not os.path.isdir(base):
            continue
        for version in sorted(os.listdir(base)):
            if os.path.exists(os.path.join(base, version, "manifest.json")):
                found.append((name, version))
    return found


def _latest_version(versions: list[str]) -> str:
    return max(versions, key=lambda v: tuple(int(p) for p in v.split(".")))


def load_manifest(name: str, store_dir: str | os.PathLike, version: str | None = None) -> Manifest:
    store_dir = os.fspath(store_dir)
    base = os.path.join(store_dir, name)
    if not os.path.isdir(base):
        raise UnknownDatasetError("dataset not registered", name=name)
    versions = [
        v for v in os.listdir(base) if os.path.exists(os.path.join(base, v, "manifest.json"))
    ]
    if not versions:
        raise UnknownDatasetError("dataset not registered", name=name)
    version = version or _latest_version(versions)
    path = os.path.join(base, version, "manifest.json")
    if not os.path.exists(path):
        raise UnknownDatasetError("no such version", name=name, version=version)
    with open(path, "rb") as f:
        return Manifest.from_doc(json.loads(f.read().decode("utf-8")))


def default_cache_dir() -> str:
    env = os.environ.get("EPILOGUE_CACHE_DIR")
    if env:
        return env
    return os.path.join(os.path.expanduser("~"), ".cache", "epilogue")


def fetch(
    entry: FileEntry,
    cache_dir: str | os.PathLike | None = None,
    *,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Return a local path for a manifest entry, via the sha256 cache.

    Remote bodies are verified against the checksum before the cache is
    populated; writes are atomic (temp file + rename). Transient network
    errors are retried 3 times with exponential backoff from 500 ms.
    """
    cache_dir = os.fspath(cache_dir) if cache_dir else default_cache_dir()
    cached = os.path.join(cache_dir, "sha256", entry.sha256)
    if os.path.exists(cached):
        return cached

    if not entry.is_remote():
        source = entry.path
        parsed = urlparse(entry.path)
        if parsed.scheme == "file":
            source = parsed.path
        if not os.path.exists(source):
            raise InvalidArgumentError("local entry missing", path=entry.path)
        actual = file_sha256(source)
        if actual != entry.sha256:
            raise ChecksumMismatchError(
                "file does not match manifest checksum", path=entry.path, actual=actual
            )
        os.makedirs(os.path.dirname(cached), exist_ok=True)
        tmp = cached + ".tmp"
        shutil.copyfile(source, tmp)
        os.replace(tmp, cached)
        return cached

    body = None
    delay = FETCH_BACKOFF_S
    for attempt in range(FETCH_ATTEMPTS):
        try:
            with urllib.request.urlopen(entry.path, timeout=30) as response:
                body = response.read()
            break
        except (urllib.error.URLError, OSError) as exc:
            if attempt == FETCH_ATTEMPTS - 1:
                raise NetworkFailureError(
                    f"fetch failed after {FETCH_ATTEMPTS} attempts: {exc}", url=entry.path
                ) from exc
            sleep(delay)
            delay *= 2
    actual = hashlib.sha256(body).hexdigest()
    if actual != entry.sha256:
        raise ChecksumMismatchError(
            "downloaded body does not match manifest checksum", url=entry.path, actual=actual
        )
    os.makedirs(os.path.dirname(cached), exist_ok=True)
    tmp = cached + f".tmp{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(body)
    os.replace(tmp, cached)
    return cached


def load(
    name: str,
    split_expr: str | SplitExpr,
    store_dir: str | os.PathLike,
    *,
    version: str | None = None,
    cache_dir: str | os.PathLike | None = None,
) -> tuple[Iterator[EpisodeRecord], Manifest]:
    """Episodes of a split restricted to the expression's range, plus the
    manifest. Range indices count episodes across the split's files in
    manifest order; `load(name, "train[a:b]")` equals episodes a..b-1 of
    `load(name, "train")` element-wise."""
    expr = SplitExpr.parse(split_expr) if isinstance(split_expr, str) else split_expr
    manifest = load_manifest(name, store_dir, version)
    if expr.split not in manifest.splits:
        raise UnknownSplitError("no such split", name=name, split=expr.split)
    entries = manifest.splits[expr.split]

    def stream() -> Iterator[EpisodeRecord]:
        index = 0
        for entry in entries:
            if expr.stop is not None and index >= expr.stop:
                return
            # Skip whole files ahead of the range without opening them.
            if index + entry.episode_count <= expr.start:
                index += entry.episode_count
                continue
            path = entry.path
            if entry.is_remote() or urlparse(entry.path).scheme == "file":
                path = fetch(entry, cache_dir)
            elif file_sha256(path) != entry.sha256:
                raise ChecksumMismatchError("file does not match manifest checksum", path=path)
            with store.open_reader(path) as reader:
                for episode in reader.iter_episodes():
                    if index >= expr.start and (expr.stop is None or index < expr.stop):
                        yield episode
                    index += 1
                    if expr.stop is not None and index >= expr.stop:
                        return

    return stream(), manifest
