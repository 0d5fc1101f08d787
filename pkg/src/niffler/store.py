"""Embedded per-collection document store with a query surface for cohorts.

Each collection is an append-only log of JSON lines replayed into memory on
open; the newest record per document key wins.  Writes are serialized and
flushed (fsync by default) before the caller sees an acknowledgement, so a
crash can lose at most an unacknowledged trailing record — which replay
detects as a torn last line and drops.  Queries are exact conjunctions with
deterministic ordering, answered from secondary indexes when the predicate
allows and by full scan otherwise, with identical results either way.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, Union

from niffler.dicom.tags import resolve_identifier
from niffler.errors import (
    BadQuery,
    MissingKey,
    StoreError,
    UnknownAttribute,
    UnknownCollection,
    UnknownKeyword,
)
from niffler.vaultkeys import sanitize_component

log = logging.getLogger(__name__)

STORE_SCHEMA_VERSION = 1

#: Every document is keyed by this attribute within its collection.
DOCUMENT_KEY = "SOPInstanceUID"

#: Document fields that exist outside the DICOM dictionary.
ENVELOPE_ATTRIBUTES = frozenset({"extracted_at"})

DEFAULT_INDEXED_ATTRIBUTES = (
    "PatientID",
    "StudyInstanceUID",
    "SeriesInstanceUID",
)


def known_attribute(name: str) -> bool:
    """An attribute is queryable if the dictionary resolves it or it is an
    envelope field the extractor stamps onto every document."""
    if not isinstance(name, str) or not name:
        return False
    if name in ENVELOPE_ATTRIBUTES:
        return True
    try:
        resolve_identifier(name)
        return True
    except UnknownKeyword:
        return False


def _require_known(attribute: str) -> str:
    if not known_attribute(attribute):
        raise UnknownAttribute(f"unknown attribute: {attribute!r}")
    return attribute


def _doc_values(doc: dict, attribute: str) -> list[str]:
    value = doc.get(attribute)
    if value is None:
        return []
    return list(value) if isinstance(value, list) else [value]


# --- predicates ---------------------------------------------------------------


@dataclass(frozen=True)
class Eq:
    attribute: str
    value: str

    def matches(self, doc: dict) -> bool:
        return self.value in _doc_values(doc, self.attribute)


@dataclass(frozen=True)
class In:
    attribute: str
    values: tuple[str, ...]

    def matches(self, doc: dict) -> bool:
        allowed = set(self.values)
        return any(v in allowed for v in _doc_values(doc, self.attribute))


@dataclass(frozen=True)
class DateRange:
    """Inclusive range over DICOM DA values (YYYYMMDD, lexicographic)."""

    attribute: str
    lo: str
    hi: str

    def matches(self, doc: dict) -> bool:
        return any(self.lo <= v <= self.hi for v in _doc_values(doc, self.attribute))


@dataclass(frozen=True)
class Present:
    attribute: str

    def matches(self, doc: dict) -> bool:
        return self.attribute in doc


Predicate = Union[Eq, In, DateRange, Present]


def _is_da(text: str) -> bool:
    return isinstance(text, str) and len(text) == 8 and text.isdigit()


@dataclass(frozen=True)
class CohortQuery:
    """Conjunction of predicates over one collection, with paging/projection."""

    collection: str
    where: tuple[Predicate, ...] = ()
    project: tuple[str, ...] | None = None
    limit: int | None = None
    offset: int = 0

    def validate(self) -> "CohortQuery":
        if not self.collection or not isinstance(self.collection, str):
            raise BadQuery("query names no collection")
        for predicate in self.where:
            _require_known(predicate.attribute)
            if isinstance(predicate, Eq) and not isinstance(predicate.value, str):
                raise BadQuery(f"eq value for {predicate.attribute} must be a string")
            if isinstance(predicate, In):
                if not predicate.values:
                    raise BadQuery(f"empty value set for {predicate.attribute}")
                if not all(isinstance(v, str) for v in predicate.values):
                    raise BadQuery(f"in values for {predicate.attribute} must be strings")
            if isinstance(predicate, DateRange):
                if not (_is_da(predicate.lo) and _is_da(predicate.hi)):
                    raise BadQuery(
                        f"range bounds for {predicate.attribute} must be YYYYMMDD dates"
                    )
                if predicate.lo > predicate.hi:
                    raise BadQuery(f"empty date range for {predicate.attribute}")
        if self.project is not None:
            for name in self.project:
                _require_known(name)
        if self.limit is not None and self.limit < 0:
            raise BadQuery("limit must be non-negative")
        if self.offset < 0:
            raise BadQuery("offset must be non-negative")
        return self

    def to_json(self) -> dict:
        where = []
        for p in self.where:
            if isinstance(p, Eq):
                where.append({"attr": p.attribute, "op": "eq", "value": p.value})
            elif isinstance(p, In):
                where.append({"attr": p.attribute, "op": "in", "values": list(p.values)})
            elif isinstance(p, DateRange):
                where.append({"attr": p.attribute, "op": "range", "lo": p.lo, "hi": p.hi})
            else:
                where.append({"attr": p.attribute, "op": "present"})
        payload: dict = {"collection": self.collection, "where": where}
        if self.project is not None:
            payload["project"] = list(self.project)
        if self.limit is not None:
            payload["limit"] = self.limit
        if self.offset:
            payload["offset"] = self.offset
        return payload

    @classmethod
    def from_json(cls, payload: object) -> "CohortQuery":
        if not isinstance(payload, dict):
            raise BadQuery("query body must be a JSON object")
        unknown = set(payload) - {"collection", "where", "project", "limit", "offset"}
        if unknown:
            raise BadQuery(f"unknown query fields: {sorted(unknown)}")
        collection = payload.get("collection")
        if not isinstance(collection, str) or not collection:
            raise BadQuery("query names no collection")
        raw_where = payload.get("where", [])
        if not isinstance(raw_where, list):
            raise BadQuery("'where' must be a list of predicates")
        where: list[Predicate] = []
        for row in raw_where:
            where.append(_predicate_from_json(row))
        project = payload.get("project")
        if project is not None:
            if not isinstance(project, list) or not all(isinstance(x, str) for x in project):
                raise BadQuery("'project' must be a list of attribute names")
            project = tuple(project)
        limit = payload.get("limit")
        if limit is not None and not isinstance(limit, int):
            raise BadQuery("'limit' must be an integer")
        offset = payload.get("offset", 0)
        if not isinstance(offset, int):
            raise BadQuery("'offset' must be an integer")
        return cls(
            collection=collection,
            where=tuple(where),
            project=project,
            limit=limit,
            offset=offset,
        ).validate()


def _predicate_from_json(row: object) -> Predicate:
    if not isinstance(row, dict):
        raise BadQuery(f"predicate is not an object: {row!r}")
    attribute = row.get("attr")
    op = row.get("op")
    if not isinstance(attribute, str) or not attribute:
        raise BadQuery(f"predicate names no attribute: {row!r}")
    if op == "eq":
        return Eq(attribute, row.get("value"))
    if op == "in":
        values = row.get("values")
        if not isinstance(values, list):
            raise BadQuery(f"'in' predicate needs a value list: {row!r}")
        return In(attribute, tuple(values))
    if op == "range":
        return DateRange(attribute, row.get("lo"), row.get("hi"))
    if op == "present":
        return Present(attribute)
    raise BadQuery(f"unknown predicate op: {op!r}")


@dataclass(frozen=True)
class FacetCount:
    """Value histogram of one attribute over a matching document set."""

    attribute: str
    buckets: tuple[tuple[str, int], ...]


# --- the store -----------------------------------------------------------------


@dataclass
class _Collection:
    name: str
    path: Path
    docs: dict[str, dict] = field(default_factory=dict)
    indexes: dict[str, dict[str, set[str]]] = field(default_factory=dict)
    handle: object | None = None


class MetadataStore:
    """Document collections under one directory, one JSONL log per collection."""

    def __init__(
        self,
        root: Path,
        fsync: bool = True,
        indexed_attributes: Sequence[str] = DEFAULT_INDEXED_ATTRIBUTES,
    ) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.fsync = fsync
        self.indexed_attributes = tuple(indexed_attributes)
        self._lock = threading.RLock()
        self._collections: dict[str, _Collection] = {}
        for path in sorted(self.root.glob("*.jsonl")):
            collection = self._replay(path)
            self._collections[collection.name] = collection

    # --- lifecycle ---------------------------------------------------------

    def _replay(self, path: Path) -> _Collection:
        records = []
        data = path.read_bytes()
        lines = data.split(b"\n")
        if lines and lines[-1] == b"":
            lines.pop()
            torn = None
        else:
            # No final newline: the last append was cut short and never
            # acknowledged, so it is dropped rather than treated as damage.
            torn = lines.pop() if lines else None
        for line_no, line in enumerate(lines, start=1):
            try:
                records.append(json.loads(line.decode("utf-8")))
            except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                raise StoreError(f"{path.name} line {line_no} is corrupt: {exc}") from exc
        if torn is not None:
            log.warning("%s: dropping torn trailing record (%d bytes)", path.name, len(torn))
        if not records or records[0].get("type") != "collection":
            raise StoreError(f"{path.name} lacks the collection header record")
        header = records[0]
        name = header.get("name")
        if not isinstance(name, str) or not name:
            raise StoreError(f"{path.name} header names no collection")
        if header.get("schema_version") != STORE_SCHEMA_VERSION:
            raise StoreError(
                f"{path.name} has schema {header.get('schema_version')!r}, "
                f"expected {STORE_SCHEMA_VERSION}"
            )
        collection = _Collection(name=name, path=path)
        for record in records[1:]:
            if record.get("type") != "doc" or not isinstance(record.get("doc"), dict):
                raise StoreError(f"{path.name} holds a non-document record")
            self._install(collection, record["doc"])
        if torn is not None:
            os.truncate(path, len(data) - len(torn))
        return collection

    def close(self) -> None:
        with self._lock:
            for collection in self._collections.values():
                if collection.handle is not None:
                    collection.handle.close()
                    collection.handle = None

    def __enter__(self) -> "MetadataStore":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    # --- writing -------------------------------------------------------------

    def upsert(self, collection_name: str, doc: dict) -> bool:
        """Durably store a document; returns True when the key was new."""
        key = doc.get(DOCUMENT_KEY)
        if not isinstance(key, str) or not key:
            raise MissingKey(f"document lacks {DOCUMENT_KEY}")
        for attribute, value in doc.items():
            ok = isinstance(value, str) or (
                isinstance(value, list) and all(isinstance(v, str) for v in value)
            )
            if not ok:
                raise StoreError(
                    f"document value for {attribute!r} must be a string or string list"
                )
        with self._lock:
            collection = self._ensure_collection(collection_name)
            record = json.dumps({"type": "doc", "doc": doc}, sort_keys=True)
            handle = self._writer(collection)
            handle.write(record + "\n")
            handle.flush()
            if self.fsync:
                os.fsync(handle.fileno())
            fresh = key not in collection.docs
            self._install(collection, doc)
            return fresh

    def _ensure_collection(self, name: str) -> _Collection:
        collection = self._collections.get(name)
        if collection is not None:
            return collection
        path = self.root / (sanitize_component(name) + ".jsonl")
        if path.exists():
            raise StoreError(f"collection file {path.name} already holds another collection")
        collection = _Collection(name=name, path=path)
        header = {"type": "collection", "name": name, "schema_version": STORE_SCHEMA_VERSION}
        handle = path.open("a", encoding="utf-8")
        handle.write(json.dumps(header, sort_keys=True) + "\n")
        handle.flush()
        if self.fsync:
            os.fsync(handle.fileno())
        collection.handle = handle
        self._collections[name] = collection
        return collection

    def _writer(self, collection: _Collection):
        if collection.handle is None:
            collection.handle = collection.path.open("a", encoding="utf-8")
        return collection.handle

    def _install(self, collection: _Collection, doc: dict) -> None:
        key = doc[DOCUMENT_KEY]
        previous = collection.docs.get(key)
        if previous is not None:
            for attribute in self.indexed_attributes:
                bucket = collection.indexes.get(attribute)
                if bucket is None:
                    continue
                for value in _doc_values(previous, attribute):
                    entries = bucket.get(value)
                    if entries is not None:
                        entries.discard(key)
                        if not entries:
                            del bucket[value]
        collection.docs[key] = doc
        for attribute in self.indexed_attributes:
            for value in _doc_values(doc, attribute):
                collection.indexes.setdefault(attribute, {}).setdefault(value, set()).add(key)

    def compact(self, collection_name: str | None = None) -> None:
        """Rewrite logs to one record per visible document."""
        with self._lock:
            names = [collection_name] if collection_name else sorted(self._collections)
            for name in names:
                collection = self._collection(name)
                if collection.handle is not None:
                    collection.handle.close()
                    collection.handle = None
                header = {
                    "type": "collection",
                    "name": collection.name,
                    "schema_version": STORE_SCHEMA_VERSION,
                }
                fd, tmp_name = tempfile.mkstemp(
                    dir=self.root, prefix=collection.path.stem, suffix=".part"
                )
                with os.fdopen(fd, "w", encoding="utf-8") as tmp:
                    tmp.write(json.dumps(header, sort_keys=True) + "\n")
                    for key in sorted(collection.docs):
                        record = {"type": "doc", "doc": collection.docs[key]}
                        tmp.write(json.dumps(record, sort_keys=True) + "\n")
                    tmp.flush()
                    os.fsync(tmp.fileno())
                os.replace(tmp_name, collection.path)

    # --- reading ------------------------------------------------------------

    def collections(self) -> list[str]:
        with self._lock:
            return sorted(self._collections)

    def document_count(self, collection_name: str) -> int:
        with self._lock:
            return len(self._collection(collection_name).docs)

    def _collection(self, name: str) -> _Collection:
        collection = self._collections.get(name)
        if collection is None:
            raise UnknownCollection(f"no collection named {name!r}")
        return collection

    def _matching_keys(self, collection: _Collection, query: CohortQuery,
                       use_indexes: bool) -> list[str]:
        candidates: set[str] | None = None
        remaining: list[Predicate] = []
        for predicate in query.where:
            narrowed = self._index_lookup(collection, predicate) if use_indexes else None
            if narrowed is None:
                remaining.append(predicate)
            else:
                candidates = narrowed if candidates is None else candidates & narrowed
        if candidates is None:
            keys: Iterable[str] = collection.docs
        else:
            keys = candidates
        return sorted(
            key
            for key in keys
            if all(p.matches(collection.docs[key]) for p in remaining)
        )

    def _index_lookup(self, collection: _Collection, predicate: Predicate) -> set[str] | None:
        if predicate.attribute not in self.indexed_attributes:
            return None
        bucket = collection.indexes.get(predicate.attribute, {})
        if isinstance(predicate, Eq):
            return set(bucket.get(predicate.value, ()))
        if isinstance(predicate, In):
            found: set[str] = set()
            for value in predicate.values:
                found |= bucket.get(value, set())
            return found
        return None

    def query(self, query: CohortQuery, *, use_indexes: bool = True) -> list[dict]:
        """Matching documents, SOPInstanceUID ascending, paged and projected."""
        query.validate()
        with self._lock:
            collection = self._collection(query.collection)
            keys = self._matching_keys(collection, query, use_indexes)
            window = keys[query.offset:]
            if query.limit is not None:
                window = window[: query.limit]
            out = []
            for key in window:
                doc = collection.docs[key]
                if query.project is None:
                    out.append(dict(doc))
                else:
                    out.append({k: doc[k] for k in query.project if k in doc})
            return out

    def count(self, query: CohortQuery) -> int:
        """Number of matching documents, ignoring paging and projection."""
        query.validate()
        with self._lock:
            collection = self._collection(query.collection)
            return len(self._matching_keys(collection, query, use_indexes=True))

    def facets(
        self,
        collection_name: str,
        attribute: str,
        base: CohortQuery | None = None,
    ) -> FacetCount:
        """Histogram of an attribute over the documents matching ``base``.

        Each matching document that carries the attribute contributes exactly
        one bucket entry; multi-valued attributes bucket on the backslash-joined
        composite so bucket counts always sum to the document count.
        """
        _require_known(attribute)
        query = base if base is not None else CohortQuery(collection=collection_name)
        if query.collection != collection_name:
            raise BadQuery("facet base query names a different collection")
        query.validate()
        with self._lock:
            collection = self._collection(collection_name)
            counts: dict[str, int] = {}
            for key in self._matching_keys(collection, query, use_indexes=True):
                doc = collection.docs[key]
                values = _doc_values(doc, attribute)
                if not values:
                    continue
                label = "\\".join(values)
                counts[label] = counts.get(label, 0) + 1
        buckets = tuple(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))
        return FacetCount(attribute=attribute, buckets=buckets)
