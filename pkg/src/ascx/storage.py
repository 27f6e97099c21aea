"""On-disk formats: binary index files and JSON-lines corpora.

Index file layout, all little-endian:

    magic "ASCX" | u16 version | u8 quant_bits | f32 quant_scale
    u32 m | u32 n | u32 vocab | u32 doc_count
    u8 segmentation method | u32 lexicon terms | per term: u32 id, u32 max
    m x (u64 offset, u64 length)          cluster directory
    m cluster blocks                      see _encode_cluster
    u32 CRC32 of every preceding byte

Posting doc ids are delta-encoded varints (first id absolute); weights are
fixed-width at 1 byte for quant_bits <= 8, else 2. A cluster block holds
the member list with segment ids, the per-term segment-max vectors, and
the posting payloads. Serialization is canonical (sorted terms, sorted
members), so serialize(deserialize(b)) == b.
"""

from __future__ import annotations

import json
import struct
import zlib
from typing import Iterable, Mapping, Sequence

import numpy as np

from ascx.core import DataError, Query, SparseVector
from ascx.index import (
    Cluster,
    ClusterSkippingIndex,
    LexiconEntry,
    PostingList,
    SegmentMaxTable,
    weight_byte_width,
)

MAGIC = b"ASCX"
VERSION = 1
_HEADER = struct.Struct("<4sHBfIIII")
_DIR_ENTRY = struct.Struct("<QQ")
_SEG_METHOD_CODES = {"random": 0, "kmeans": 1}
_SEG_METHOD_NAMES = {v: k for k, v in _SEG_METHOD_CODES.items()}


def encode_varint(value: int, out: bytearray) -> None:
    if value < 0:
        raise DataError(f"cannot varint-encode negative value {value}")
    while True:
        b = value & 0x7F
        value >>= 7
        if value:
            out.append(b | 0x80)
        else:
            out.append(b)
            return


def decode_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise DataError("truncated varint")
        b = buf[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift > 63:
            raise DataError("varint too long")


def encode_postings(doc_ids: Sequence[int], weights: Sequence[int], wwidth: int) -> bytes:
    out = bytearray()
    prev = 0
    first = True
    for d in doc_ids:
        encode_varint(int(d) if first else int(d) - prev, out)
        prev = int(d)
        first = False
    for w in weights:
        out += int(w).to_bytes(wwidth, "little")
    return bytes(out)


def decode_postings(buf: bytes, count: int, wwidth: int) -> tuple[list[int], list[int]]:
    ids: list[int] = []
    pos = 0
    prev = 0
    for i in range(count):
        gap, pos = decode_varint(buf, pos)
        if i > 0 and gap == 0:
            raise DataError("posting doc ids not strictly increasing")
        prev = gap if i == 0 else prev + gap
        ids.append(prev)
    weights: list[int] = []
    need = count * wwidth
    if len(buf) - pos != need:
        raise DataError("posting payload length mismatch")
    for i in range(count):
        weights.append(int.from_bytes(buf[pos + i * wwidth : pos + (i + 1) * wwidth], "little"))
    return ids, weights


def _encode_cluster(cl: Cluster, n: int, wwidth: int) -> bytes:
    out = bytearray()
    out += struct.pack("<I", len(cl.member_docs))
    prev = 0
    for i, d in enumerate(cl.member_docs.tolist()):
        encode_varint(d if i == 0 else d - prev, out)
        prev = d
    for s in cl.member_segments.tolist():
        out += struct.pack("<H", s)
    terms = sorted(cl.postings)
    out += struct.pack("<I", len(terms))
    payloads: list[bytes] = []
    for t in terms:
        pl = cl.postings[t]
        payload = encode_postings(pl.doc_ids.tolist(), pl.weights.tolist(), wwidth)
        payloads.append(payload)
        out += struct.pack("<I", t)
        row = cl.seg_max.row(t)
        for j in range(n):
            out += int(row[j]).to_bytes(wwidth, "little")
        out += struct.pack("<II", len(pl), len(payload))
    for payload in payloads:
        out += payload
    return bytes(out)


def _decode_cluster(buf: bytes, cid: int, n: int, wwidth: int) -> Cluster:
    try:
        pos = 0
        (member_count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        member_docs: list[int] = []
        prev = 0
        for i in range(member_count):
            gap, pos = decode_varint(buf, pos)
            prev = gap if i == 0 else prev + gap
            member_docs.append(prev)
        member_segments: list[int] = []
        for _ in range(member_count):
            (s,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            if s >= n:
                raise DataError(f"segment id {s} out of range in cluster {cid}")
            member_segments.append(s)
        (term_count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        entries: list[tuple[int, list[int], int, int]] = []
        prev_term = -1
        for _ in range(term_count):
            (t,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            if t <= prev_term:
                raise DataError(f"term directory not sorted in cluster {cid}")
            prev_term = t
            row = [
                int.from_bytes(buf[pos + j * wwidth : pos + (j + 1) * wwidth], "little")
                for j in range(n)
            ]
            pos += n * wwidth
            count, payload_len = struct.unpack_from("<II", buf, pos)
            pos += 8
            entries.append((t, row, count, payload_len))
        postings: dict[int, PostingList] = {}
        seg_rows: dict[int, np.ndarray] = {}
        term_max: dict[int, int] = {}
        for t, row, count, payload_len in entries:
            payload = buf[pos : pos + payload_len]
            if len(payload) != payload_len:
                raise DataError(f"truncated posting payload in cluster {cid}")
            pos += payload_len
            ids, weights = decode_postings(payload, count, wwidth)
            postings[t] = PostingList(
                doc_ids=np.array(ids, dtype=np.uint32),
                weights=np.array(weights, dtype=np.uint32),
            )
            seg_rows[t] = np.array(row, dtype=np.int64)
            term_max[t] = max(weights)
        if pos != len(buf):
            raise DataError(f"trailing bytes in cluster {cid} block")
    except struct.error as e:
        raise DataError(f"truncated cluster {cid} block") from e
    return Cluster(
        cluster_id=cid,
        member_docs=np.array(member_docs, dtype=np.uint32),
        member_segments=np.array(member_segments, dtype=np.uint16),
        postings=postings,
        seg_max=SegmentMaxTable(n, seg_rows),
        term_max=term_max,
    )


def serialize_index(index: ClusterSkippingIndex) -> bytes:
    wwidth = weight_byte_width(index.quant_bits)
    out = bytearray()
    out += _HEADER.pack(
        MAGIC,
        VERSION,
        index.quant_bits,
        index.quant_scale,
        index.m,
        index.n,
        index.vocab_size,
        index.doc_count,
    )
    method_code = _SEG_METHOD_CODES.get(index.seg_method)
    if method_code is None:
        raise DataError(f"unknown segmentation method {index.seg_method!r}")
    out += struct.pack("<B", method_code)
    terms = sorted(index.lexicon)
    out += struct.pack("<I", len(terms))
    for t in terms:
        out += struct.pack("<II", t, index.lexicon[t].global_max)
    dir_pos = len(out)
    out += b"\x00" * (_DIR_ENTRY.size * index.m)
    offsets: list[tuple[int, int]] = []
    for cl in index.clusters:
        block = _encode_cluster(cl, index.n, wwidth)
        offsets.append((len(out), len(block)))
        out += block
    for i, (off, length) in enumerate(offsets):
        _DIR_ENTRY.pack_into(out, dir_pos + i * _DIR_ENTRY.size, off, length)
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def deserialize_index(data: bytes) -> ClusterSkippingIndex:
    if len(data) < _HEADER.size + 4:
        raise DataError("index file too short")
    stored_crc = struct.unpack_from("<I", data, len(data) - 4)[0]
    if zlib.crc32(data[:-4]) != stored_crc:
        raise DataError("index checksum mismatch")
    magic, version, quant_bits, quant_scale, m, n, vocab, doc_count = _HEADER.unpack_from(
        data, 0
    )
    if magic != MAGIC:
        raise DataError(f"bad index magic {magic!r}")
    if version != VERSION:
        raise DataError(f"unsupported index version {version}")
    if not 1 <= quant_bits <= 16 or n < 1:
        raise DataError("corrupt index header")
    wwidth = weight_byte_width(quant_bits)
    pos = _HEADER.size
    try:
        (method_code,) = struct.unpack_from("<B", data, pos)
        pos += 1
        method = _SEG_METHOD_NAMES.get(method_code)
        if method is None:
            raise DataError(f"unknown segmentation method code {method_code}")
        (term_count,) = struct.unpack_from("<I", data, pos)
        pos += 4
        lex_max: dict[int, int] = {}
        prev_term = -1
        for _ in range(term_count):
            t, gmax = struct.unpack_from("<II", data, pos)
            pos += 8
            if t <= prev_term:
                raise DataError("lexicon not sorted")
            prev_term = t
            lex_max[t] = gmax
        clusters: list[Cluster] = []
        presence: dict[int, list[int]] = {}
        for cid in range(m):
            off, length = _DIR_ENTRY.unpack_from(data, pos + cid * _DIR_ENTRY.size)
            if off + length > len(data) - 4:
                raise DataError(f"cluster {cid} block out of bounds")
            cl = _decode_cluster(data[off : off + length], cid, n, wwidth)
            clusters.append(cl)
            for t in cl.postings:
                presence.setdefault(t, []).append(cid)
    except struct.error as e:
        raise DataError("truncated index file") from e
    lexicon: dict[int, LexiconEntry] = {}
    for t, gmax in lex_max.items():
        present_in = tuple(presence.get(t, ()))
        if not present_in:
            raise DataError(f"lexicon term {t} has no postings")
        actual = max(clusters[c].term_max[t] for c in present_in)
        if actual != gmax:
            raise DataError(f"lexicon maximum for term {t} disagrees with postings")
        lexicon[t] = LexiconEntry(gmax, present_in)
    for t in presence:
        if t not in lex_max:
            raise DataError(f"term {t} has postings but no lexicon entry")
    return ClusterSkippingIndex(
        quant_bits=quant_bits,
        quant_scale=quant_scale,
        n=n,
        doc_count=doc_count,
        vocab_size=vocab,
        seg_method=method,
        lexicon=lexicon,
        clusters=clusters,
    )


def write_index(index: ClusterSkippingIndex, path: str) -> None:
    data = serialize_index(index)
    with open(path, "wb") as fh:
        fh.write(data)


def read_index(path: str) -> ClusterSkippingIndex:
    with open(path, "rb") as fh:
        return deserialize_index(fh.read())


def _parse_terms(obj: object, where: str, *, integral: bool) -> dict[int, float]:
    if not isinstance(obj, dict):
        raise DataError(f"{where}: 'terms' must be an object")
    out: dict[int, float] = {}
    for key, value in obj.items():
        try:
            t = int(key)
        except (TypeError, ValueError):
            raise DataError(f"{where}: bad term id {key!r}") from None
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise DataError(f"{where}: bad weight {value!r} for term {key}")
        w = float(value)
        if integral and w != int(w):
            raise DataError(f"{where}: weight {value!r} for term {key} must be integral")
        if t in out:
            raise DataError(f"{where}: duplicate term id {t}")
        out[t] = w
    return out


def read_corpus_jsonl(path: str) -> list[tuple[int, dict[int, float]]]:
    """Parse documents of the form {"doc_id": int, "terms": {"<id>": weight}}."""
    docs: list[tuple[int, dict[int, float]]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{ln}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{where}: invalid JSON ({e.msg})") from e
            if not isinstance(obj, dict) or "doc_id" not in obj or "terms" not in obj:
                raise DataError(f"{where}: expected doc_id and terms fields")
            if not isinstance(obj["doc_id"], int) or isinstance(obj["doc_id"], bool):
                raise DataError(f"{where}: doc_id must be an integer")
            docs.append((obj["doc_id"], _parse_terms(obj["terms"], where, integral=False)))
    return docs


def write_corpus_jsonl(path: str, docs: Iterable[tuple[int, Mapping[int, float]]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, terms in docs:
            row = {"doc_id": int(doc_id), "terms": {str(t): terms[t] for t in sorted(terms)}}
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def read_queries_jsonl(path: str) -> list[Query]:
    """Parse queries of the form {"query_id": str, "terms": {"<id>": int}}."""
    queries: list[Query] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{ln}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{where}: invalid JSON ({e.msg})") from e
            if not isinstance(obj, dict) or "query_id" not in obj or "terms" not in obj:
                raise DataError(f"{where}: expected query_id and terms fields")
            qid = str(obj["query_id"])
            if qid in seen:
                raise DataError(f"{where}: duplicate query id {qid}")
            seen.add(qid)
            terms = _parse_terms(obj["terms"], where, integral=True)
            vec = SparseVector.from_pairs((t, int(w)) for t, w in terms.items())
            queries.append(Query(qid, vec))
    return queries


def write_queries_jsonl(path: str, queries: Iterable[Query]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            row = {"query_id": q.query_id, "terms": {str(t): w for t, w in q.vector}}
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")
