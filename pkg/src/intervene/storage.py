"""Binary corpus container and the named-tensor checkpoint archive.

Corpus layout (little-endian)::

    b"IVCORPUS" | u32 header_len | header JSON
    repeated per instance:
        u32 record_len | record

    record := u32 id_len | scm_id utf-8
              u32 scm_len | scm JSON (graph, weights, noise)
              u32 rows | float32[rows * d] observational matrix
              u32 k
              k times: u32 value_index | u64 target_bitmask | u32 rows | float32[rows * d]

Checkpoint layout::

    b"IVCKPT01" | u64 header_len | header JSON | raw float64 data

The checkpoint header maps every tensor name to ``{"shape", "offset"}`` and
carries the model config, train config and seed under ``"meta"``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .ivrep import InterventionQuery
from .scm import Corpus, CorpusConfig, Dataset, Scm, TrainingInstance

CORPUS_MAGIC = b"IVCORPUS"
CORPUS_VERSION = 1
CKPT_MAGIC = b"IVCKPT01"


class FormatError(ValueError):
    pass


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def _matrix_bytes(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype="<f4").tobytes()


def _encode_instance(inst: TrainingInstance) -> bytes:
    sid = inst.scm_id.encode()
    scm = json.dumps(inst.scm.to_dict() if inst.scm else None, sort_keys=True).encode()
    parts = [_u32(len(sid)), sid, _u32(len(scm)), scm]
    parts += [_u32(inst.observational.n), _matrix_bytes(inst.observational.values)]
    parts.append(_u32(len(inst.interventional)))
    for ds in inst.interventional:
        parts += [
            _u32(ds.query.value_index),
            struct.pack("<Q", ds.query.bitmask),
            _u32(ds.n),
            _matrix_bytes(ds.values),
        ]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.buf):
            raise FormatError("truncated corpus file")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def matrix(self, rows: int, d: int) -> np.ndarray:
        raw = self.take(rows * d * 4)
        return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(rows, d)


def _header(corpus: Corpus) -> dict:
    cfg = corpus.config
    return {
        "format_version": CORPUS_VERSION,
        "d": cfg.d,
        "n_samples": cfg.n_samples,
        "num_values": len(cfg.intervention_values),
        "intervention_values": list(cfg.intervention_values),
        "family": cfg.family,
        "seed": corpus.seed,
        "count": len(corpus.instances),
        "config": {
            "d": cfg.d,
            "count": cfg.count,
            "n_samples": cfg.n_samples,
            "family": cfg.family,
            "n_train": cfg.n_train,
            "edge_prob": cfg.edge_prob,
            "n_graphs": cfg.n_graphs,
            "intervention_values": list(cfg.intervention_values),
        },
    }


def write_corpus(corpus: Corpus, path: str | Path) -> Path:
    """Write ``corpus`` to ``path`` and its split manifest next to it as ``<path>.split.json``."""
    path = Path(path)
    header = json.dumps(_header(corpus), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CORPUS_MAGIC + _u32(len(header)) + header)
        for inst in corpus.instances:
            rec = _encode_instance(inst)
            fh.write(_u32(len(rec)) + rec)
    split = {"train": corpus.train_ids, "test": corpus.test_ids}
    split_path(path).write_text(json.dumps(split, indent=1) + "\n")
    return path


def split_path(corpus_path: str | Path) -> Path:
    corpus_path = Path(corpus_path)
    return corpus_path.with_name(corpus_path.name + ".split.json")


def read_corpus(path: str | Path) -> Corpus:
    path = Path(path)
    r = _Reader(path.read_bytes())
    if bytes(r.take(len(CORPUS_MAGIC))) != CORPUS_MAGIC:
        raise FormatError(f"{path} is not a corpus file")
    header = json.loads(bytes(r.take(r.u32())))
    if header.get("format_version") != CORPUS_VERSION:
        raise FormatError(f"unsupported corpus version {header.get('format_version')}")
    d = header["d"]
    instances = []
    for _ in range(header["count"]):
        end = r.u32() + r.pos
        sid = bytes(r.take(r.u32())).decode()
        scm_data = json.loads(bytes(r.take(r.u32())))
        obs = Dataset(r.matrix(r.u32(), d))
        inter = []
        for _ in range(r.u32()):
            vi = r.u32()
            mask = r.u64()
            q = InterventionQuery.from_bitmask(vi, mask, d)
            inter.append(Dataset(r.matrix(r.u32(), d), q))
        if r.pos != end:
            raise FormatError(f"record length mismatch for {sid}")
        scm = Scm.from_dict(scm_data) if scm_data else None
        instances.append(TrainingInstance(obs, tuple(inter), sid, scm))
    c = header["config"]
    config = CorpusConfig(
        d=c["d"],
        count=c["count"],
        n_samples=c["n_samples"],
        family=c["family"],
        n_train=c["n_train"],
        edge_prob=c["edge_prob"],
        n_graphs=c["n_graphs"],
        intervention_values=tuple(c["intervention_values"]),
    )
    sp = split_path(path)
    if sp.exists():
        split = json.loads(sp.read_text())
        train_ids, test_ids = split["train"], split["test"]
    else:
        train_ids, test_ids = [inst.scm_id for inst in instances], []
    return Corpus(config, header["seed"], instances, train_ids, test_ids)


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray], meta: dict) -> Path:
    """Write named float64 arrays in sorted name order."""
    path = Path(path)
    index = {}
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8", order="C")
        index[name] = {"shape": list(arr.shape), "offset": offset}
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"tensors": index, "meta": meta}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<Q", len(header)) + header)
        for b in blobs:
            fh.write(b)
    return path


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    if buf[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise FormatError(f"{path} is not a checkpoint archive")
    (hlen,) = struct.unpack("<Q", buf[8:16])
    header = json.loads(buf[16 : 16 + hlen])
    base = 16 + hlen
    out = {}
    for name, info in header["tensors"].items():
        n = int(np.prod(info["shape"], dtype=np.int64))
        start = base + info["offset"]
        out[name] = np.frombuffer(buf[start : start + 8 * n], dtype="<f8").reshape(tuple(info["shape"])).copy()
    return out, header["meta"]
