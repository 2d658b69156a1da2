"""Readers and writers for every on-disk format.

All binary layouts are fixed little-endian with explicit field widths, so a
file written anywhere loads identically everywhere. Loaders validate before
constructing anything and never hand back a partially filled structure.

Formats
-------
Embeddings: text. First line "<count> <dim>", then one line per word:
    "word v1 v2 ... v_dim", space-separated.

Dataset: UTF-8 text, one record per line:
    "video_id<TAB>sentence with one _____ marker<TAB>answer"

Region features (one file per video, "<video_id>.vfb"): binary.
    magic "VFB1" | R u32 | C u32 | T u32   (16-byte header, little-endian)
    followed by exactly T*R*C float32 values, ordered (frame, region, channel).
    Loading pools the T frames with an elementwise max into one R x C matrix.

Checkpoint: binary.
    magic "VFBCKPT1" | version u32 | meta_len u32 | meta (canonical JSON)
    | section_count u32 | sections | sha256 of all preceding bytes.
    Each section: name_len u32 | name utf-8 | rank u32 | rank extents (u32)
    | payload (float64, little-endian). Optimizer accumulators ride along as
    "adagrad/<name>" sections and are optional.

Metrics log: text, one line per epoch:
    "epoch<TAB>train_loss<TAB>val_loss<TAB>val_acc", losses and accuracy in
    6-decimal fixed notation.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile

import numpy as np

from .errors import FormatError, IntegrityError
from .text import BlankSentence, EmbeddingTable, tokenize, _clean

FEATURE_MAGIC = b"VFB1"
CHECKPOINT_MAGIC = b"VFBCKPT1"
CHECKPOINT_VERSION = 1
_DIGEST = hashlib.sha256
_DIGEST_LEN = 32


# -- embeddings --------------------------------------------------------------


def load_embeddings(path) -> EmbeddingTable:
    """Parse a word-vector text file into an EmbeddingTable."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2:
            raise FormatError(f"{path}:1: header must be '<count> <dim>'")
        try:
            count, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise FormatError(f"{path}:1: non-numeric header {header.strip()!r}") from None
        if count < 1 or dim < 1:
            raise FormatError(f"{path}:1: count and dim must be positive")
        vocab = {}
        vectors = np.empty((count, dim))
        lineno = 1
        for row, line in enumerate(fh):
            lineno += 1
            if row >= count:
                raise FormatError(f"{path}:{lineno}: more rows than declared {count}")
            fields = line.split()
            if len(fields) != dim + 1:
                raise FormatError(
                    f"{path}:{lineno}: expected word plus {dim} values, "
                    f"got {len(fields)} fields"
                )
            word = fields[0]
            if word in vocab:
                raise FormatError(f"{path}:{lineno}: duplicate word {word!r}")
            try:
                vectors[row] = [float(v) for v in fields[1:]]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric value") from None
            vocab[word] = row
        if len(vocab) != count:
            raise FormatError(
                f"{path}:{lineno}: declared {count} words but file ends after {len(vocab)}"
            )
    return EmbeddingTable(vocab=vocab, vectors=vectors)


def save_embeddings(path, words, vectors) -> None:
    vectors = np.asarray(vectors)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(words)} {vectors.shape[1]}\n")
        for word, row in zip(words, vectors):
            fh.write(word + " " + " ".join(f"{v:.8f}" for v in row) + "\n")


# -- datasets ----------------------------------------------------------------


def load_dataset(path) -> list:
    """Parse one BlankSentence per non-empty line; order preserved."""
    samples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise FormatError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            video_id, sentence, answer_raw = fields
            try:
                left, right = tokenize(sentence)
            except FormatError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            answer_tokens = [_clean(t) for t in answer_raw.lower().split()]
            answer_tokens = [t for t in answer_tokens if t]
            if len(answer_tokens) != 1:
                raise FormatError(
                    f"{path}:{lineno}: answer must be a single nonempty token, "
                    f"got {answer_raw!r}"
                )
            samples.append(
                BlankSentence(
                    left_tokens=left,
                    right_tokens=right,
                    answer=answer_tokens[0],
                    video_id=video_id,
                )
            )
    return samples


def save_dataset(path, rows) -> None:
    """Write (video_id, sentence, answer) triples, one TSV record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for video_id, sentence, answer in rows:
            fh.write(f"{video_id}\t{sentence}\t{answer}\n")


# -- region features ---------------------------------------------------------


def save_features(path, frames) -> None:
    """Write a T x R x C frame stack as one feature file."""
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 3:
        raise FormatError(f"frames must be T x R x C, got shape {frames.shape}")
    t, r, c = frames.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", r, c, t))
        fh.write(frames.astype("<f4").tobytes(order="C"))


def load_feature_file(path) -> np.ndarray:
    """Read one feature file and max-pool its frames into an R x C matrix."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise FileNotFoundError(f"no feature file at {path}") from None
    if len(blob) < 16 or blob[:4] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic, not a feature file")
    r, c, t = struct.unpack("<III", blob[4:16])
    if t < 1 or r < 1 or c < 1:
        raise FormatError(f"{path}: empty dimensions R={r} C={c} T={t}")
    expected = 16 + 4 * t * r * c
    if len(blob) != expected:
        raise FormatError(
            f"{path}: payload is {len(blob) - 16} bytes, expected {expected - 16}"
        )
    frames = np.frombuffer(blob, dtype="<f4", offset=16).reshape(t, r, c)
    return frames.max(axis=0).astype(np.float64)


def load_features(features_dir, video_id: str) -> np.ndarray:
    """Pooled R x C region matrix for one video."""
    return load_feature_file(os.path.join(features_dir, f"{video_id}.vfb"))


class FeatureStore:
    """Directory of per-video feature files with an in-memory cache.

    Reads are reentrant; nothing here mutates after construction except the
    cache dict, which is only safe single-threaded.
    """

    def __init__(self, features_dir):
        self.features_dir = features_dir
        self._cache = {}

    def get(self, video_id: str) -> np.ndarray:
        hit = self._cache.get(video_id)
        if hit is None:
            hit = load_features(self.features_dir, video_id)
            self._cache[video_id] = hit
        return hit


# -- checkpoints -------------------------------------------------------------


def _canonical_meta(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, tensors: dict, meta: dict, optimizer: dict | None = None) -> None:
    """Write named float64 arrays plus metadata, checksummed, atomically."""
    sections = list(tensors.items())
    if optimizer:
        sections += [(f"adagrad/{k}", v) for k, v in optimizer.items()]
    body = bytearray()
    body += CHECKPOINT_MAGIC
    body += struct.pack("<I", CHECKPOINT_VERSION)
    meta_blob = _canonical_meta(meta)
    body += struct.pack("<I", len(meta_blob))
    body += meta_blob
    body += struct.pack("<I", len(sections))
    for name, arr in sections:
        arr = np.asarray(arr, dtype=np.float64)
        name_bytes = name.encode("utf-8")
        body += struct.pack("<I", len(name_bytes))
        body += name_bytes
        body += struct.pack("<I", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.astype("<f8").tobytes(order="C")
    body += _DIGEST(bytes(body)).digest()
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(bytes(body))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, blob, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.path}: truncated at byte {self.pos}")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path):
    """Read a checkpoint; returns (tensors, optimizer, meta).

    The trailing checksum is verified over the raw bytes before any section
    is parsed; adagrad/* sections come back in the separate optimizer dict
    (empty when the file carries none).
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(CHECKPOINT_MAGIC) + 4 + _DIGEST_LEN:
        raise IntegrityError(f"{path}: too short to be a checkpoint")
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise IntegrityError(f"{path}: bad magic")
    body, digest = blob[:-_DIGEST_LEN], blob[-_DIGEST_LEN:]
    if _DIGEST(body).digest() != digest:
        raise IntegrityError(f"{path}: checksum mismatch, file corrupted")
    rd = _Reader(body, path)
    rd.take(len(CHECKPOINT_MAGIC))
    version = rd.u32()
    if version != CHECKPOINT_VERSION:
        raise IntegrityError(f"{path}: unsupported version {version}")
    meta_len = rd.u32()
    try:
        meta = json.loads(rd.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError(f"{path}: metadata block is not valid JSON") from None
    tensors = {}
    optimizer = {}
    n_sections = rd.u32()
    for _ in range(n_sections):
        name = rd.take(rd.u32()).decode("utf-8")
        rank = rd.u32()
        if rank > 8:
            raise FormatError(f"{path}: section {name!r} has implausible rank {rank}")
        shape = struct.unpack(f"<{rank}I", rd.take(4 * rank))
        n_values = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = rd.take(8 * n_values)
        arr = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
        target = optimizer if name.startswith("adagrad/") else tensors
        key = name[len("adagrad/") :] if name.startswith("adagrad/") else name
        if key in target:
            raise FormatError(f"{path}: duplicate section {name!r}")
        target[key] = arr
    if rd.pos != len(body):
        raise FormatError(f"{path}: {len(body) - rd.pos} trailing bytes after sections")
    return tensors, optimizer, meta


# -- metrics log -------------------------------------------------------------


def write_metrics(path, rows) -> None:
    """One line per epoch: epoch, train loss, val loss, val accuracy."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(
                f"{row.epoch}\t{row.train_loss:.6f}\t{row.val_loss:.6f}"
                f"\t{row.val_acc:.6f}\n"
            )
