"""Token fingerprints and the SHA-256 Merkle tree that commits to them.

Leaf preimages are raw serialized fingerprints (2*d*4 bytes), interior
preimages are 64-byte child concatenations; the length difference keeps the
two domains apart.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .core import InvalidInput

EMPTY_HASH = hashlib.sha256(b"").digest()
LEFT, RIGHT = "left", "right"


def H(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True, eq=False)
class TokenFingerprint:
    """Block embedding followed by token embedding, both as little-endian float32."""

    block_embedding: np.ndarray
    token_embedding: np.ndarray

    def __post_init__(self):
        for name in ("block_embedding", "token_embedding"):
            arr = np.asarray(getattr(self, name), dtype="<f4").copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dimension(self) -> int:
        return len(self.token_embedding)

    def serialize(self) -> bytes:
        return self.block_embedding.tobytes() + self.token_embedding.tobytes()

    @classmethod
    def deserialize(cls, data: bytes) -> "TokenFingerprint":
        if len(data) % 8:
            raise InvalidInput("fingerprint byte length must be a multiple of 8")
        vals = np.frombuffer(data, dtype="<f4")
        half = len(vals) // 2
        return cls(vals[:half], vals[half:])

    def leaf_hash(self) -> bytes:
        return H(self.serialize())

    def __eq__(self, other):
        return isinstance(other, TokenFingerprint) and self.serialize() == other.serialize()

    def __hash__(self):
        return hash(self.serialize())


def make_fingerprint(block_emb, token_emb) -> TokenFingerprint:
    if len(block_emb) != len(token_emb):
        raise InvalidInput(f"dimension mismatch: {len(block_emb)} vs {len(token_emb)}")
    return TokenFingerprint(block_emb, token_emb)


def next_pow2(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


@dataclass(frozen=True, eq=False)
class MerkleTree:
    levels: tuple  # (n_i, 32) uint8 arrays, leaves first
    leaf_count: int

    @property
    def padded_count(self) -> int:
        return len(self.levels[0])

    @property
    def depth(self) -> int:
        return self.padded_count.bit_length() - 1

    @property
    def root(self) -> bytes:
        if self.leaf_count == 0:
            return EMPTY_HASH
        return self.levels[-1][0].tobytes()

    def leaf(self, index: int) -> bytes:
        return self.levels[0][index].tobytes()


def _assemble(leaves: np.ndarray, kernels=None) -> MerkleTree:
    kernels = kernels or _kernels.active
    n = len(leaves)
    if n == 0:
        pad = np.frombuffer(EMPTY_HASH, dtype=np.uint8)[None, :]
        return MerkleTree((pad.copy(),), 0)
    size = next_pow2(n)
    if size > n:
        leaves = np.concatenate([leaves, np.repeat(leaves[-1:], size - n, axis=0)])
    levels = [np.ascontiguousarray(leaves)]
    while len(levels[-1]) > 1:
        levels.append(kernels.hash_level(levels[-1]))
    for lv in levels:
        lv.setflags(write=False)
    return MerkleTree(tuple(levels), n)


def build_tree(fingerprints: Sequence[TokenFingerprint], backend=None) -> MerkleTree:
    """Merkle tree over the SHA-256 of each serialized fingerprint.

    Leaves are padded to a power of two by repeating the last leaf hash; an
    empty input gives a single ``H(b"")`` node.
    """
    kernels = _kernels.get(backend)
    if len(fingerprints) == 0:
        return _assemble(np.empty((0, 32), np.uint8), kernels)
    rows = np.frombuffer(b"".join(fp.serialize() for fp in fingerprints), dtype=np.uint8)
    leaves = kernels.hash_rows(rows.reshape(len(fingerprints), -1))
    return _assemble(leaves, kernels)


def build_tree_from_embeddings(block_embs: np.ndarray, token_embs: np.ndarray,
                               block_size: int, backend=None) -> MerkleTree:
    """Same tree as ``build_tree`` on the implied fingerprints, without materializing them.

    Token ``i`` belongs to block ``i // block_size``.
    """
    kernels = _kernels.get(backend)
    leaves = kernels.fingerprint_leaves(block_embs, token_embs, block_size)
    return _assemble(leaves, kernels)


@dataclass(frozen=True)
class MerklePath:
    steps: tuple  # ((sibling_hash: bytes, position: str), ...)

    def __len__(self) -> int:
        return len(self.steps)

    def to_json(self) -> list[dict]:
        return [{"hash": h.hex(), "pos": pos} for h, pos in self.steps]

    @classmethod
    def from_json(cls, steps: Iterable[dict]) -> "MerklePath":
        return cls(tuple((bytes.fromhex(s["hash"]), s["pos"]) for s in steps))


def prove(tree: MerkleTree, leaf_index: int) -> MerklePath:
    if not 0 <= leaf_index < tree.leaf_count:
        raise InvalidInput(f"leaf index {leaf_index} outside [0, {tree.leaf_count})")
    steps = []
    idx = leaf_index
    for level in tree.levels[:-1]:
        if idx % 2 == 0:
            steps.append((level[idx + 1].tobytes(), RIGHT))
        else:
            steps.append((level[idx - 1].tobytes(), LEFT))
        idx //= 2
    return MerklePath(tuple(steps))


def prove_many(tree: MerkleTree, leaf_indices: Sequence[int]) -> list[MerklePath]:
    """``prove`` for several leaves, gathering siblings level by level."""
    idx = np.asarray(leaf_indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= tree.leaf_count):
        raise InvalidInput(f"leaf index outside [0, {tree.leaf_count})")
    cols = []
    for depth, level in enumerate(tree.levels[:-1]):
        at = idx >> depth
        raw = level[at ^ 1].tobytes()
        cols.append([(raw[32 * i:32 * i + 32], LEFT if odd else RIGHT)
                     for i, odd in enumerate((at & 1).tolist())])
    return [MerklePath(steps) for steps in zip(*cols)] if cols else \
        [MerklePath(()) for _ in range(len(idx))]


def verify_proof(root: bytes, fingerprint, path: MerklePath,
                 leaf_index: int | None = None, leaf_count: int | None = None) -> bool:
    """Fold the path from ``H(fingerprint)`` and compare with ``root``.

    ``fingerprint`` may be a ``TokenFingerprint`` or its serialized bytes.
    With ``leaf_index`` the sibling positions must match the index bits; with
    ``leaf_count`` the path length must equal the depth of a tree padded from
    that many leaves. Malformed input yields ``False``.
    """
    data = fingerprint.serialize() if isinstance(fingerprint, TokenFingerprint) else bytes(fingerprint)
    if leaf_count is not None and len(path) != next_pow2(leaf_count).bit_length() - 1:
        return False
    node = H(data)
    for depth, step in enumerate(path.steps):
        try:
            sibling, pos = step
        except (TypeError, ValueError):
            return False
        if not isinstance(sibling, (bytes, bytearray)) or len(sibling) != 32:
            return False
        if leaf_index is not None and pos != (LEFT if (leaf_index >> depth) & 1 else RIGHT):
            return False
        if pos == RIGHT:
            node = H(node + sibling)
        elif pos == LEFT:
            node = H(sibling + node)
        else:
            return False
    if leaf_index is not None and leaf_index >> len(path):
        return False
    return node == root


@dataclass(frozen=True)
class MerkleCommitment:
    root: bytes
    m: int
    provider_id: str = ""

    def to_json(self) -> dict:
        return {"root": self.root.hex(), "m": self.m, "provider_id": self.provider_id}

    @classmethod
    def from_json(cls, obj: dict) -> "MerkleCommitment":
        return cls(bytes.fromhex(obj["root"]), int(obj["m"]), obj.get("provider_id", ""))

    def dumps(self) -> str:
        return json.dumps(self.to_json())


_SIDES = {LEFT, RIGHT}


def verify_batch(root: bytes, fingerprints: Sequence[bytes], paths: Sequence[MerklePath],
                 leaf_indices: Sequence[int] | None = None, leaf_count: int | None = None,
                 backend=None) -> np.ndarray:
    """``verify_proof`` over many leaves at once; returns one bool per leaf.

    Fingerprints of unequal length or paths of unequal depth are checked one by one.
    """
    k = len(fingerprints)
    if len(paths) != k or (leaf_indices is not None and len(leaf_indices) != k):
        raise InvalidInput("fingerprints, paths and indices are not aligned")
    if k == 0:
        return np.zeros(0, dtype=bool)
    data = [fp.serialize() if isinstance(fp, TokenFingerprint) else bytes(fp) for fp in fingerprints]
    depth = len(paths[0])
    if len({len(d) for d in data}) != 1 or any(len(p) != depth for p in paths):
        return np.array([verify_proof(root, d, p, None if leaf_indices is None else leaf_indices[i],
                                      leaf_count) for i, (d, p) in enumerate(zip(data, paths))])
    ok = np.ones(k, dtype=bool)
    if leaf_count is not None and depth != next_pow2(leaf_count).bit_length() - 1:
        ok[:] = False
        return ok
    sib = np.zeros((k, depth, 32), dtype=np.uint8)
    right = np.zeros((k, depth), dtype=bool)
    for i, path in enumerate(paths):
        try:
            hashes, positions = zip(*path.steps) if depth else ((), ())
        except (TypeError, ValueError):
            ok[i] = False
            continue
        try:
            blob = b"".join(hashes)
            bad = len(blob) != 32 * depth or set(map(len, hashes)) - {32} or set(positions) - _SIDES
        except TypeError:
            bad = True
        if bad:
            ok[i] = False
            continue
        sib[i] = np.frombuffer(blob, dtype=np.uint8).reshape(depth, 32)
        right[i] = [pos == RIGHT for pos in positions]
    if leaf_indices is not None:
        idx = np.asarray(leaf_indices, dtype=np.int64)
        bits = (idx[:, None] >> np.arange(depth)) & 1
        ok &= np.all(bits == ~right, axis=1) & ((idx >> depth) == 0) & (idx >= 0)
    kernels = _kernels.get(backend)
    leaves = kernels.hash_rows(np.frombuffer(b"".join(data), dtype=np.uint8).reshape(k, -1))
    roots = kernels.fold_paths(leaves, sib, right)
    ok &= np.all(roots == np.frombuffer(root, dtype=np.uint8), axis=1)
    return ok
