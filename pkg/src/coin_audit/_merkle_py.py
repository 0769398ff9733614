"""Pure-Python Merkle hashing kernels (hashlib). Reference for the compiled ones."""
from hashlib import sha256

import numpy as np

BACKEND = "python"
_CHUNK = 4096


def hash_rows(rows: np.ndarray) -> np.ndarray:
    """SHA-256 of every row of an ``(N, L)`` uint8 array."""
    rows = np.ascontiguousarray(rows, dtype=np.uint8)
    n, width = rows.shape
    if width == 0:
        return np.tile(np.frombuffer(sha256(b"").digest(), dtype=np.uint8), (n, 1))
    if n == 0:
        return np.empty((0, 32), dtype=np.uint8)
    flat = memoryview(rows).cast("B")
    digests = b"".join(sha256(flat[i * width:(i + 1) * width]).digest() for i in range(n))
    return np.frombuffer(digests, dtype=np.uint8).reshape(n, 32).copy()


def fingerprint_leaves(block_embs: np.ndarray, token_embs: np.ndarray,
                       block_size: int) -> np.ndarray:
    """Leaf hashes ``H(f32(block_emb[i // block_size]) || f32(token_emb[i]))``."""
    block_embs = np.ascontiguousarray(block_embs, dtype="<f4")
    token_embs = np.ascontiguousarray(token_embs, dtype="<f4")
    n = len(token_embs)
    out = np.empty((n, 32), dtype=np.uint8)
    for lo in range(0, n, _CHUNK):
        hi = min(n, lo + _CHUNK)
        owners = np.arange(lo, hi) // block_size
        rows = np.concatenate([block_embs[owners], token_embs[lo:hi]], axis=1)
        out[lo:hi] = hash_rows(rows.view(np.uint8))
    return out


def hash_level(nodes: np.ndarray) -> np.ndarray:
    """Parent layer: ``H(left || right)`` over consecutive pairs of ``(2n, 32)`` nodes."""
    return hash_rows(np.ascontiguousarray(nodes, dtype=np.uint8).reshape(-1, 64))


def fold_paths(leaves: np.ndarray, siblings: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Fold each ``(depth, 32)`` sibling path onto its leaf hash.

    ``right[i, j]`` is true when the sibling at level ``j`` sits to the right.
    """
    node = np.ascontiguousarray(leaves, dtype=np.uint8)
    right = np.asarray(right, dtype=bool)
    for j in range(siblings.shape[1]):
        sib = siblings[:, j]
        r = right[:, j, None]
        pairs = np.concatenate([np.where(r, node, sib), np.where(r, sib, node)], axis=1)
        node = hash_rows(pairs)
    return node
