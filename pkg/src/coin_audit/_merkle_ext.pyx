# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled Merkle hashing kernels over OpenSSL's one-shot SHA-256."""
from hashlib import sha256

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport free, malloc
from libc.string cimport memcpy

cnp.import_array()

BACKEND = "cython"


cdef extern from "openssl/sha.h" nogil:
    unsigned char *SHA256(const unsigned char *d, size_t n, unsigned char *md)


cdef void _hash_rows(const unsigned char[:, ::1] rows, unsigned char[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t i
    cdef size_t width = rows.shape[1]
    for i in range(rows.shape[0]):
        SHA256(&rows[i, 0], width, &out[i, 0])


def hash_rows(rows):
    """SHA-256 of every row of an ``(N, L)`` uint8 array."""
    arr = np.ascontiguousarray(rows, dtype=np.uint8)
    n, width = arr.shape
    if width == 0:
        return np.tile(np.frombuffer(sha256(b"").digest(), dtype=np.uint8), (n, 1))
    out = np.empty((n, 32), dtype=np.uint8)
    if n:
        _hash_rows(arr, out)
    return out


def fingerprint_leaves(block_embs, token_embs, Py_ssize_t block_size):
    """Leaf hashes ``H(f32(block_emb[i // block_size]) || f32(token_emb[i]))``.

    The fingerprint bytes are assembled in a scratch buffer per leaf instead of
    materializing the whole ``(N, 2d)`` matrix.
    """
    cdef const float[:, ::1] blocks = np.ascontiguousarray(block_embs, dtype="<f4")
    cdef const float[:, ::1] tokens = np.ascontiguousarray(token_embs, dtype="<f4")
    cdef Py_ssize_t n = tokens.shape[0], i, j
    cdef size_t half = tokens.shape[1] * sizeof(float)
    out = np.empty((n, 32), dtype=np.uint8)
    if n == 0:
        return out
    if blocks.shape[1] != tokens.shape[1]:
        raise ValueError("block and token embeddings differ in width")
    if (n - 1) // block_size >= blocks.shape[0]:
        raise ValueError("not enough block embeddings for the token count")
    cdef unsigned char[:, ::1] res = out
    cdef unsigned char *buf = <unsigned char *> malloc(2 * half)
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(n):
                j = i // block_size
                memcpy(buf, &blocks[j, 0], half)
                memcpy(buf + half, &tokens[i, 0], half)
                SHA256(buf, 2 * half, &res[i, 0])
    finally:
        free(buf)
    return out


def hash_level(nodes):
    """Parent layer: ``H(left || right)`` over consecutive pairs of ``(2n, 32)`` nodes."""
    return hash_rows(np.ascontiguousarray(nodes, dtype=np.uint8).reshape(-1, 64))


def fold_paths(leaves, siblings, right):
    """Fold each ``(depth, 32)`` sibling path onto its leaf hash.

    ``right[i, j]`` is true when the sibling at level ``j`` sits to the right.
    """
    cdef const unsigned char[:, ::1] lv = np.ascontiguousarray(leaves, dtype=np.uint8)
    cdef const unsigned char[:, :, ::1] sib = np.ascontiguousarray(siblings, dtype=np.uint8)
    cdef const unsigned char[:, ::1] pos = np.ascontiguousarray(right, dtype=np.uint8)
    cdef Py_ssize_t k = lv.shape[0], depth = sib.shape[1], i, j
    out = np.empty((k, 32), dtype=np.uint8)
    cdef unsigned char[:, ::1] res = out
    cdef unsigned char buf[64]
    with nogil:
        for i in range(k):
            memcpy(&res[i, 0], &lv[i, 0], 32)
            for j in range(depth):
                if pos[i, j]:
                    memcpy(buf, &res[i, 0], 32)
                    memcpy(buf + 32, &sib[i, j, 0], 32)
                else:
                    memcpy(buf, &sib[i, j, 0], 32)
                    memcpy(buf + 32, &res[i, 0], 32)
                SHA256(buf, 64, &res[i, 0])
    return out
