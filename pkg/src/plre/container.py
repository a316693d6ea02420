"""Binary model containers.

Layout: 4 magic bytes ``PLRE``, a little-endian u32 format version, a u64
header length, a canonical JSON header (sorted keys, no whitespace), then
for each name in ``header["sections"]`` (in order) a u64 payload length and
the payload bytes.  All numeric payloads are little-endian, floats are 64
bit, word ids are 32 bit, counts 64 bit.  Keyed maps are serialized sorted
by key, and every float that a query can touch is stored verbatim rather
than recomputed, so a loaded model answers queries bit-identically and a
rebuild with the same seed produces byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from typing import Dict, List, Optional, Tuple

import numpy as np

from .baselines import DiscountParams, NgramLM
from .corpus import CountTable, Key, Vocabulary
from .ensemble import LowRankCPT, PlreLevel, PlreModel, SliceFactors
from .errors import ContainerError
from .factorization import FactorPair

MAGIC = b"PLRE"
FORMAT_VERSION = 1


def _pack_keyed(entries: Dict[Key, object], keylen: int, dtype: str) -> bytes:
    keys = sorted(entries)
    head = struct.pack("<IQ", keylen, len(keys))
    karr = np.array(keys, dtype="<i4").reshape(len(keys), keylen)
    vals = np.array([entries[k] for k in keys], dtype=dtype)
    return head + karr.tobytes() + vals.tobytes()


class _Cursor:
    """Bounds-checked reader over one payload."""

    def __init__(self, buf: bytes, name: str):
        self.buf = buf
        self.pos = 0
        self.name = name

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ContainerError(f"section {self.name}: truncated payload")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(itemsize * count), dtype=dtype)

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise ContainerError(f"section {self.name}: trailing bytes")


def _unpack_keyed(buf: bytes, name: str, dtype: str, value_cast) -> Dict[Key, object]:
    cur = _Cursor(buf, name)
    keylen, n = cur.unpack("<IQ")
    karr = cur.array("<i4", keylen * n).reshape(n, keylen)
    vals = cur.array(dtype, n)
    cur.done()
    return {
        tuple(int(x) for x in karr[i]): value_cast(vals[i]) for i in range(n)
    }


def _pack_slices(z: LowRankCPT) -> bytes:
    parts = [struct.pack("<Q", len(z.slices))]
    for interior in sorted(z.slices):
        sl = z.slices[interior]
        L = np.ascontiguousarray(sl.pair.L, dtype="<f8")
        R = np.ascontiguousarray(sl.pair.R, dtype="<f8")
        parts.append(
            struct.pack(
                "<IIII", len(interior), len(sl.row_ids), len(sl.col_ids), sl.pair.rank
            )
        )
        parts.append(np.array(interior, dtype="<i4").tobytes())
        parts.append(np.asarray(sl.row_ids, dtype="<i4").tobytes())
        parts.append(np.asarray(sl.col_ids, dtype="<i4").tobytes())
        parts.append(L.tobytes())
        parts.append(R.tobytes())
    return b"".join(parts)


def _unpack_slices(buf: bytes, name: str) -> Dict[Key, SliceFactors]:
    cur = _Cursor(buf, name)
    (n_slices,) = cur.unpack("<Q")
    slices: Dict[Key, SliceFactors] = {}
    for _ in range(n_slices):
        ilen, rows, cols, rank = cur.unpack("<IIII")
        interior = tuple(int(x) for x in cur.array("<i4", ilen))
        row_ids = cur.array("<i4", rows).astype(np.int64)
        col_ids = cur.array("<i4", cols).astype(np.int64)
        L = cur.array("<f8", rows * rank).reshape(rows, rank)
        R = cur.array("<f8", rank * cols).reshape(rank, cols)
        slices[interior] = SliceFactors(
            FactorPair(L, R),
            row_ids,
            col_ids,
            {int(w): i for i, w in enumerate(row_ids)},
            {int(x): j for j, x in enumerate(col_ids)},
            report=None,
        )
    cur.done()
    return slices


def _assemble(header: dict, sections: List[Tuple[str, bytes]]) -> bytes:
    header = dict(header)
    header["sections"] = [name for name, _ in sections]
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<Q", len(hjson)), hjson]
    for _, payload in sections:
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(payload)
    return b"".join(parts)


def save_model(model, path: str, config_echo: Optional[dict] = None) -> None:
    """Serialize an NgramLM or PlreModel to a container file."""
    if not isinstance(model, (PlreModel, NgramLM)):
        raise TypeError(f"cannot serialize {type(model).__name__}")
    vocab_bytes = "\n".join(model.vocab.export_lines()).encode("utf-8")
    header = {
        "format_version": FORMAT_VERSION,
        "order": model.order,
        "smoother": model.smoother,
        "vocab_size": len(model.vocab),
        "vocab_sha256": hashlib.sha256(vocab_bytes).hexdigest(),
    }
    if config_echo is not None:
        header["config"] = config_echo
    sections: List[Tuple[str, bytes]] = [("vocab", vocab_bytes)]

    if isinstance(model, PlreModel):
        header["kind"] = "plre"
        header["seed"] = model.seed
        header["dstars"] = {str(k): model.dstars[k] for k in model.dstars}
        header["powers"] = {
            str(k): list(level.powers) for k, level in model.levels.items()
        }
        header["ranks"] = {
            str(k): list(model.resolved_ranks[k]) for k in model.resolved_ranks
        }
        header["warnings"] = list(model.warnings)
        for k in range(model.order, 1, -1):
            level = model.levels[k]
            sections.append((f"counts.{k}", _pack_keyed(level.counts, k, "<i8")))
            sections.append((f"top.{k}", _pack_keyed(level.top_numerators, k, "<f8")))
            for j, gamma in enumerate(level.gammas):
                sections.append(
                    (f"gamma.{k}.{j}", _pack_keyed(gamma, k - 1, "<f8"))
                )
            for j, z in enumerate(level.z_tables, start=1):
                sections.append((f"z.{k}.{j}", _pack_slices(z)))
                sections.append(
                    (f"zden.{k}.{j}", _pack_keyed(z.denominators, k - 1, "<f8"))
                )
        sections.append(
            ("base_counts", np.asarray(model.base_counts, dtype="<i8").tobytes())
        )
    elif isinstance(model, NgramLM):
        header["kind"] = "baseline"
        header["discounts"] = {
            str(k): [dp.d1, dp.d2, dp.d3plus] for k, dp in model.discounts.items()
        }
        for k in sorted(model.tables):
            sections.append(
                (f"counts.{k}", _pack_keyed(model.tables[k].entries, k, "<i8"))
            )
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")

    with open(path, "wb") as fh:
        fh.write(_assemble(header, sections))


def load_model(path: str):
    """Load a container; returns an NgramLM or a PlreModel."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ContainerError(f"{path}: not a model container (bad magic)")
    if len(blob) < 16:
        raise ContainerError(f"{path}: truncated container")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != FORMAT_VERSION:
        raise ContainerError(
            f"{path}: unsupported container version {version} (expected {FORMAT_VERSION})"
        )
    (hlen,) = struct.unpack("<Q", blob[8:16])
    if 16 + hlen > len(blob):
        raise ContainerError(f"{path}: truncated header")
    try:
        header = json.loads(blob[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: corrupt header: {exc}") from exc

    payloads: Dict[str, bytes] = {}
    pos = 16 + hlen
    for name in header.get("sections", []):
        if pos + 8 > len(blob):
            raise ContainerError(f"{path}: missing section {name}")
        (plen,) = struct.unpack("<Q", blob[pos : pos + 8])
        pos += 8
        if pos + plen > len(blob):
            raise ContainerError(f"{path}: truncated section {name}")
        payloads[name] = blob[pos : pos + plen]
        pos += plen
    if pos != len(blob):
        raise ContainerError(f"{path}: trailing bytes after last section")

    if "vocab" not in payloads:
        raise ContainerError(f"{path}: missing vocab section")
    if hashlib.sha256(payloads["vocab"]).hexdigest() != header.get("vocab_sha256"):
        raise ContainerError(f"{path}: vocabulary hash mismatch")
    vocab = Vocabulary.from_export_lines(
        payloads["vocab"].decode("utf-8").split("\n")
    )
    if len(vocab) != header.get("vocab_size"):
        raise ContainerError(f"{path}: vocab size disagrees with header")

    try:
        if header.get("kind") == "plre":
            return _load_plre(header, payloads, vocab)
        if header.get("kind") == "baseline":
            return _load_baseline(header, payloads, vocab)
    except KeyError as exc:
        raise ContainerError(f"{path}: missing container field {exc}") from exc
    raise ContainerError(f"{path}: unknown container kind {header.get('kind')!r}")


def _load_baseline(header: dict, payloads: Dict[str, bytes], vocab: Vocabulary) -> NgramLM:
    order = int(header["order"])
    tables = {
        k: CountTable(
            k, _unpack_keyed(payloads[f"counts.{k}"], f"counts.{k}", "<i8", int)
        )
        for k in range(1, order + 1)
    }
    discounts = {
        int(k): DiscountParams(*map(float, v)) for k, v in header["discounts"].items()
    }
    return NgramLM(vocab, order, header["smoother"], tables, discounts)


def _load_plre(header: dict, payloads: Dict[str, bytes], vocab: Vocabulary) -> PlreModel:
    order = int(header["order"])
    dstars = {int(k): float(v) for k, v in header["dstars"].items()}
    powers = {int(k): tuple(map(float, v)) for k, v in header["powers"].items()}
    ranks = {int(k): tuple(map(int, v)) for k, v in header["ranks"].items()}
    levels: Dict[int, PlreLevel] = {}
    for k in range(order, 1, -1):
        counts = _unpack_keyed(payloads[f"counts.{k}"], f"counts.{k}", "<i8", int)
        context_totals = CountTable(k, counts).context_totals
        top = _unpack_keyed(payloads[f"top.{k}"], f"top.{k}", "<f8", float)
        eta = len(powers[k])
        gammas = [
            _unpack_keyed(payloads[f"gamma.{k}.{j}"], f"gamma.{k}.{j}", "<f8", float)
            for j in range(eta + 1)
        ]
        z_tables = []
        for j in range(1, eta + 1):
            slices = _unpack_slices(payloads[f"z.{k}.{j}"], f"z.{k}.{j}")
            denoms = _unpack_keyed(
                payloads[f"zden.{k}.{j}"], f"zden.{k}.{j}", "<f8", float
            )
            z_tables.append(
                LowRankCPT(k, powers[k][j - 1], ranks[k][j - 1], slices, denoms)
            )
        levels[k] = PlreLevel(
            order=k,
            dstar=dstars[k],
            powers=powers[k],
            counts=counts,
            context_totals=context_totals,
            top_numerators=top,
            gammas=gammas,
            z_tables=z_tables,
        )
    base_counts = np.frombuffer(payloads["base_counts"], dtype="<i8").astype(np.int64)
    if len(base_counts) != len(vocab):
        raise ContainerError("base_counts length disagrees with vocabulary")
    return PlreModel(
        vocab,
        order,
        levels,
        base_counts,
        dstars,
        ranks,
        int(header.get("seed", 0)),
        list(header.get("warnings", [])),
    )
