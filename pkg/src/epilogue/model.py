"""Episodic data model: tensors, feature specs, schemas, records, validation.

Values are nested structures whose internal nodes are plain dicts and whose
leaves are numpy arrays. Numeric and bool leaves use the matching numpy
dtype; `bytes` leaves use object arrays holding python ``bytes``. A leaf's
first shape extent may be variable (written as -1 in the spec tree), in
which case each stored value chooses its own extent.

The canonical schema document is UTF-8 JSON with sibling keys in byte-wise
lexicographic order; that exact byte sequence is what the record store
embeds and what catalog digests hash.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Iterator

import numpy as np

from .errors import InvalidSchemaError, UnresolvedVariableExtentError

__all__ = [
    "Leaf",
    "DatasetSchema",
    "StepRecord",
    "EpisodeRecord",
    "Alignment",
    "Violation",
    "ValidationReport",
    "validate_episode",
    "undefined_fill",
    "zeros_like_value",
    "canonical_json",
    "schema_digest",
    "infer_spec",
    "value_to_doc",
    "doc_to_value",
]

DTYPES = ("f32", "f64", "i32", "i64", "u8", "bool", "bytes")

# Little-endian on disk; numpy's native order equals this on every target.
NUMPY_DTYPES = {
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "i32": np.dtype("<i4"),
    "i64": np.dtype("<i8"),
    "u8": np.dtype("u1"),
    "bool": np.dtype("?"),
}

MAX_RANK = 8
MAX_DEPTH = 8

VARIABLE = -1


@dataclass(frozen=True)
class Leaf:
    """A (dtype, shape) feature leaf; shape[0] may be VARIABLE (-1)."""

    dtype: str
    shape: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    @property
    def is_variable(self) -> bool:
        return len(self.shape) > 0 and self.shape[0] == VARIABLE

    def fixed_count(self) -> int:
        """Element count implied by the fixed extents (excludes a variable dim)."""
        count = 1
        for extent in (self.shape[1:] if self.is_variable else self.shape):
            count *= extent
        return count


# A feature spec is either a Leaf or a dict name -> child spec. The empty
# dict is the empty spec (no fields).
FeatureSpec = Any


def validate_spec(spec: FeatureSpec, *, _depth: int = 0) -> None:
    """Raise InvalidSchemaError unless `spec` is well formed."""
    if _depth > MAX_DEPTH:
        raise InvalidSchemaError("spec tree deeper than limit", depth=_depth)
    if isinstance(spec, Leaf):
        if spec.dtype not in DTYPES:
            raise InvalidSchemaError("unknown dtype", dtype=spec.dtype)
        if len(spec.shape) > MAX_RANK:
            raise InvalidSchemaError("rank above limit", shape=spec.shape)
        for i, extent in enumerate(spec.shape):
            if extent < 0 and not (i == 0 and extent == VARIABLE):
                raise InvalidSchemaError(
                    "variable extent only allowed on the first dimension",
                    shape=spec.shape,
                )
        return
    if isinstance(spec, dict):
        if not spec and _depth > 0:
            # Only a root spec may be empty; empty inner nodes would not
            # survive serialization round trips.
            raise InvalidSchemaError("empty non-root spec node")
        for name, child in spec.items():
            if not isinstance(name, str) or not name:
                raise InvalidSchemaError("node names must be non-empty strings")
            validate_spec(child, _depth=_depth + 1)
        return
    raise InvalidSchemaError("spec must be a Leaf or a dict", got=type(spec).__name__)


def walk_spec(spec: FeatureSpec) -> Iterator[tuple[tuple[str, ...], Leaf]]:
    """Yield (path, leaf) pairs in canonical (byte-wise sorted) order."""
    if isinstance(spec, Leaf):
        yield (), spec
        return
    for name in sorted(spec):
        for path, leaf in walk_spec(spec[name]):
            yield (name, *path), leaf


def get_path(value: Any, path: tuple[str, ...]) -> Any:
    for key in path:
        value = value[key]
    return value


def spec_to_doc(spec: FeatureSpec) -> Any:
    if isinstance(spec, Leaf):
        return {"dtype": spec.dtype, "shape": list(spec.shape)}
    return {name: spec_to_doc(child) for name, child in spec.items()}


def doc_to_spec(doc: Any) -> FeatureSpec:
    if isinstance(doc, dict) and isinstance(doc.get("dtype"), str):
        return Leaf(doc["dtype"], tuple(doc["shape"]))
    return {name: doc_to_spec(child) for name, child in doc.items()}


def canonical_json(obj: Any) -> bytes:
    """Canonical document bytes: sorted keys, no whitespace, UTF-8."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


SCALAR_F64 = Leaf("f64", ())

# Per-step parts in canonical document order; the record store serializes
# leaves in exactly this order.
STEP_PARTS = ("action", "discount", "observation", "reward", "step_metadata")


@dataclass(frozen=True)
class DatasetSchema:
    """Self-describing feature specification governing records and files."""

    observation: FeatureSpec
    action: FeatureSpec
    reward: FeatureSpec = SCALAR_F64
    discount: FeatureSpec = SCALAR_F64
    step_metadata: FeatureSpec = field(default_factory=dict)
    episode_metadata: FeatureSpec = field(default_factory=dict)
    dataset_metadata: dict = field(default_factory=dict)

    def validate(self) -> None:
        for part in (*STEP_PARTS, "episode_metadata"):
            validate_spec(getattr(self, part))
        for key, value in self.dataset_metadata.items():
            if not isinstance(key, str):
                raise InvalidSchemaError("dataset_metadata keys must be strings")
            if not isinstance(value, (str, int, float, bool)) and value is not None:
                raise InvalidSchemaError("dataset_metadata values must be scalars", key=key)

    def part(self, name: str) -> FeatureSpec:
        return getattr(self, "step_metadata" if name == "metadata" else name)

    def canonical_bytes(self) -> bytes:
        doc = {
            "action": spec_to_doc(self.action),
            "discount": spec_to_doc(self.discount),
            "episode_metadata": spec_to_doc(self.episode_metadata),
            "observation": spec_to_doc(self.observation),
            "reward": spec_to_doc(self.reward),
            "step_metadata": spec_to_doc(self.step_metadata),
        }
        return canonical_json(doc)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()

    @classmethod
    def from_canonical(cls, data: bytes, dataset_metadata: dict | None = None) -> "DatasetSchema":
        doc = json.loads(data.decode("utf-8"))
        return cls(
            observation=doc_to_spec(doc["observation"]),
            action=doc_to_spec(doc["action"]),
            reward=doc_to_spec(doc["reward"]),
            discount=doc_to_spec(doc["discount"]),
            step_metadata=doc_to_spec(doc["step_metadata"]),
            episode_metadata=doc_to_spec(doc["episode_metadata"]),
            dataset_metadata=dict(dataset_metadata or {}),
        )


def schema_digest(schema_bytes: bytes) -> str:
    return hashlib.sha256(schema_bytes).hexdigest()


@dataclass
class StepRecord:
    """One agent-environment interaction.

    Which of action/reward/discount are defined depends on the flags and the
    alignment; undefined fields hold the canonical undefined fill.
    """

    observation: Any
    action: Any
    reward: Any
    discount: Any
    is_first: bool = False
    is_last: bool = False
    is_terminal: bool = False
    metadata: Any = field(default_factory=dict)

    def replace(self, **changes) -> "StepRecord":
        return replace(self, **changes)


@dataclass
class EpisodeRecord:
    """Ordered steps plus episode-level metadata."""

    steps: list[StepRecord]
    metadata: Any = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.steps)


class Alignment(Enum):
    SAR = "sar"
    RSA = "rsa"


# -- fills and structural helpers ----------------------------------------

def _leaf_fill(leaf: Leaf, variable_extent: int | None) -> np.ndarray:
    shape = list(leaf.shape)
    if leaf.is_variable:
        if variable_extent is None:
            raise UnresolvedVariableExtentError("variable extent unresolved", shape=leaf.shape)
        shape[0] = variable_extent
    if leaf.dtype == "bytes":
        arr = np.empty(shape, dtype=object)
        arr[...] = b""
        return arr
    return np.zeros(shape, dtype=NUMPY_DTYPES[leaf.dtype])


def undefined_fill(spec: FeatureSpec, *, variable_extent: int | None = None) -> Any:
    """Deterministic zero/false/empty value tree shaped per `spec`.

    Variable extents must be resolved by the caller (the canonical stored
    fill uses extent 0); otherwise UNRESOLVED_VARIABLE_EXTENT is raised.
    """
    if isinstance(spec, Leaf):
        return _leaf_fill(spec, variable_extent)
    return {name: undefined_fill(child, variable_extent=variable_extent) for name, child in spec.items()}


def zeros_like_value(value: Any) -> Any:
    """Zero-filled tree mirroring the structure of an actual value."""
    if isinstance(value, dict):
        return {k: zeros_like_value(v) for k, v in value.items()}
    arr = as_leaf_array(value)
    if arr.dtype == object:
        out = np.empty(arr.shape, dtype=object)
        out[...] = b""
        return out
    return np.zeros_like(arr)


def map_structure(fn: Callable[[np.ndarray], Any], value: Any) -> Any:
    if isinstance(value, dict):
        return {k: map_structure(fn, v) for k, v in value.items()}
    return fn(value)


def values_equal(a: Any, b: Any) -> bool:
    """Bit-exact structural equality (NaN payloads compare equal to themselves)."""
    if isinstance(a, dict) or isinstance(b, dict):
        if not (isinstance(a, dict) and isinstance(b, dict)) or a.keys() != b.keys():
            return False
        return all(values_equal(a[k], b[k]) for k in a)
    a, b = as_leaf_array(a), as_leaf_array(b)
    if a.shape != b.shape:
        return False
    if a.dtype == object or b.dtype == object:
        return a.dtype == b.dtype and all(x == y for x, y in zip(a.ravel(), b.ravel()))
    return a.dtype == b.dtype and a.tobytes() == b.tobytes()


def infer_spec(value: Any, *, _depth: int = 0) -> FeatureSpec:
    """Derive a FeatureSpec from a concrete value tree (fixed extents only)."""
    if isinstance(value, dict):
        return {name: infer_spec(child, _depth=_depth + 1) for name, child in value.items()}
    arr = as_leaf_array(value)
    if arr.dtype == object:
        return Leaf("bytes", arr.shape)
    for name, dt in NUMPY_DTYPES.items():
        if arr.dtype == dt:
            return Leaf(name, arr.shape)
    raise InvalidSchemaError("value dtype not representable", dtype=str(arr.dtype))


# -- schema conformance ----------------------------------------------------

def as_leaf_array(value: Any) -> np.ndarray:
    """Normalize a leaf value (ndarray, numpy scalar, bytes, ...) to an ndarray."""
    if isinstance(value, np.ndarray):
        return value
    if isinstance(value, bytes):
        arr = np.empty((), dtype=object)
        arr[()] = value
        return arr
    return np.asarray(value)


def _leaf_matches(arr: Any, leaf: Leaf) -> str | None:
    """Return None on match, else a short reason."""
    if isinstance(arr, dict):
        return "expected tensor, got mapping"
    arr = as_leaf_array(arr)
    if leaf.dtype == "bytes":
        if arr.dtype != object:
            return f"expected bytes leaf, got dtype {arr.dtype}"
    elif arr.dtype != NUMPY_DTYPES[leaf.dtype]:
        return f"expected dtype {leaf.dtype}, got {arr.dtype}"
    if leaf.is_variable:
        if arr.ndim != len(leaf.shape) or arr.shape[1:] != leaf.shape[1:]:
            return f"shape {arr.shape} incompatible with {leaf.shape}"
    elif arr.shape != leaf.shape:
        return f"shape {arr.shape} != {leaf.shape}"
    return None


def conformance_errors(value: Any, spec: FeatureSpec, path: str = "") -> list[str]:
    """All mismatches between a value tree and a spec, as 'path: reason' strings."""
    if isinstance(spec, Leaf):
        reason = _leaf_matches(value, spec)
        return [f"{path or '.'}: {reason}"] if reason else []
    errors = []
    if not isinstance(value, dict):
        return [f"{path or '.'}: expected mapping, got {type(value).__name__}"]
    for name in sorted(spec.keys() | value.keys()):
        child_path = f"{path}/{name}" if path else name
        if name not in value:
            errors.append(f"{child_path}: missing")
        elif name not in spec:
            errors.append(f"{child_path}: unexpected field")
        else:
            errors.extend(conformance_errors(value[name], spec[name], child_path))
    return errors


# -- validation -------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    rule: str
    step: int | None
    detail: str = ""

    def __str__(self) -> str:
        where = "episode" if self.step is None else f"step {self.step}"
        return f"{self.rule}@{where}" + (f": {self.detail}" if self.detail else "")


@dataclass
class ValidationReport:
    ok: bool
    violations: list[Violation]


def _undefined_parts(index: int, last: int, alignment: Alignment) -> tuple[str, ...]:
    """Step fields holding the undefined fill for a given position."""
    if alignment is Alignment.SAR:
        return ("action", "reward", "discount") if index == last else ()
    parts: list[str] = []
    if index == 0:
        parts += ["reward", "discount"]
    if index == last:
        parts.append("action")
    return tuple(parts)


def _is_fill(value: Any, spec: FeatureSpec) -> bool:
    try:
        fill = undefined_fill(spec, variable_extent=0)
    except UnresolvedVariableExtentError:
        return False
    return values_equal(value, fill)


def validate_episode(
    episode: EpisodeRecord, schema: DatasetSchema, alignment: Alignment = Alignment.SAR
) -> ValidationReport:
    """Check every record invariant and schema conformance; report all failures.

    Violations are data, not faults: the function never raises on bad input.
    """
    violations: list[Violation] = []
    steps = episode.steps
    if not steps:
        return ValidationReport(False, [Violation("EMPTY_EPISODE", None)])
    last = len(steps) - 1

    for detail in conformance_errors(episode.metadata, schema.episode_metadata, "episode_metadata"):
        violations.append(Violation("SCHEMA_MISMATCH", None, detail))

    for i, step in enumerate(steps):
        if i == 0 and not step.is_first:
            violations.append(Violation("FIRST_FLAG_MISSING", i))
        if i > 0 and step.is_first:
            violations.append(Violation("UNEXPECTED_IS_FIRST", i))
        if i == last and not step.is_last:
            violations.append(Violation("LAST_FLAG_MISSING", i))
        if i < last and step.is_last:
            violations.append(Violation("UNEXPECTED_IS_LAST", i))
        if step.is_terminal and not step.is_last:
            violations.append(Violation("TERMINAL_NOT_LAST", i))

        for part in ("observation", "action", "reward", "discount"):
            for detail in conformance_errors(getattr(step, part), getattr(schema, part), part):
                violations.append(Violation("SCHEMA_MISMATCH", i, detail))
        for detail in conformance_errors(step.metadata, schema.step_metadata, "step_metadata"):
            violations.append(Violation("SCHEMA_MISMATCH", i, detail))

        for part in _undefined_parts(i, last, alignment):
            if not _is_fill(getattr(step, part), getattr(schema, part)):
                violations.append(
                    Violation("UNDEFINED_NOT_FILL", i, f"{part} must hold the undefined fill")
                )

    return ValidationReport(not violations, violations)


# -- JSON tensor documents (CLI / HTTP surfaces) ----------------------------

def value_to_doc(value: Any) -> Any:
    """Nested JSON-able document: leaves become {dtype, shape, data}."""
    if isinstance(value, dict):
        return {k: value_to_doc(v) for k, v in value.items()}
    arr = np.asarray(value)
    if arr.dtype == object:
        data = [base64.b64encode(b).decode("ascii") for b in arr.ravel()]
        return {"dtype": "bytes", "shape": list(arr.shape), "data": data}
    spec = infer_spec(arr)
    return {"dtype": spec.dtype, "shape": list(arr.shape), "data": arr.ravel().tolist()}


def doc_to_value(doc: Any) -> Any:
    if not (isinstance(doc, dict) and isinstance(doc.get("dtype"), str)):
        return {k: doc_to_value(v) for k, v in doc.items()}
    shape = tuple(doc["shape"])
    if doc["dtype"] == "bytes":
        arr = np.empty(shape, dtype=object)
        flat = arr.reshape(-1)
        for i, s in enumerate(doc["data"]):
            flat[i] = base64.b64decode(s)
        return arr
    return np.asarray(doc["data"], dtype=NUMPY_DTYPES[doc["dtype"]]).reshape(shape)
