import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coin_audit import _kernels
from coin_audit.core import InvalidInput
from coin_audit.merkle import (EMPTY_HASH, LEFT, RIGHT, MerkleCommitment, MerklePath,
                               TokenFingerprint, build_tree, build_tree_from_embeddings,
                               make_fingerprint, next_pow2, prove, prove_many, verify_batch,
                               verify_proof)

BACKENDS = ["python"] + (["cython"] if _kernels.compiled_kernels is not None else [])


def sha(b):
    return hashlib.sha256(b).digest()


def fps(n, d=8, seed=0):
    rng = np.random.default_rng(seed)
    block = rng.standard_normal(d)
    return [make_fingerprint(block, rng.standard_normal(d)) for _ in range(n)]


def test_fingerprint_serialization():
    rng = np.random.default_rng(0)
    b, t = rng.standard_normal(384), rng.standard_normal(384)
    fp = make_fingerprint(b, t)
    data = fp.serialize()
    assert len(data) == 3072
    assert data[:1536] == np.asarray(b, "<f4").tobytes()
    assert TokenFingerprint.deserialize(data) == fp
    assert make_fingerprint(t, b).leaf_hash() != fp.leaf_hash()
    with pytest.raises(InvalidInput):
        make_fingerprint(np.ones(3), np.ones(4))


def test_fingerprints_of_one_block_share_first_half(provider):
    ids = np.arange(1, 300)
    blocks = provider.embed_blocks(ids, 256).astype("<f4")
    tokens = provider.embed_tokens_f32(ids)
    halves = {TokenFingerprint(blocks[0], tokens[i]).serialize()[:1536] for i in range(256)}
    assert len(halves) == 1


def test_empty_and_single_trees():
    assert build_tree([]).root == EMPTY_HASH == sha(b"")
    fp = fps(1)[0]
    tree = build_tree([fp])
    assert tree.root == sha(fp.serialize())
    assert len(prove(tree, 0)) == 0
    assert verify_proof(tree.root, fp, prove(tree, 0))


def test_three_leaf_oracle():
    f = fps(3)
    h = [sha(x.serialize()) for x in f]
    expected = sha(sha(h[0] + h[1]) + sha(h[2] + h[2]))
    tree = build_tree(f)
    assert tree.root == expected
    assert tree.padded_count == 4
    assert [tree.leaf(i) for i in range(4)] == [h[0], h[1], h[2], h[2]]


def test_four_leaf_path_oracle():
    f = fps(4)
    h = [sha(x.serialize()) for x in f]
    path = prove(build_tree(f), 2)
    assert path.steps == ((h[3], RIGHT), (sha(h[0] + h[1]), LEFT))


@pytest.mark.parametrize("n,padded,depth", [(1, 1, 0), (2, 2, 1), (3, 4, 2), (5, 8, 3),
                                            (1000, 1024, 10)])
def test_padding_and_depth(n, padded, depth):
    tree = build_tree(fps(n, d=4))
    assert tree.padded_count == padded == next_pow2(n)
    assert len(prove(tree, n - 1)) == depth


def test_prove_out_of_range():
    tree = build_tree(fps(5))
    for bad in (-1, 5, 8):
        with pytest.raises(InvalidInput):
            prove(tree, bad)


@pytest.mark.parametrize("backend", BACKENDS)
def test_completeness_exhaustive_64(backend):
    f = fps(64)
    tree = build_tree(f, backend)
    assert all(verify_proof(tree.root, f[i], prove(tree, i), i, 64) for i in range(64))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 256), st.data())
def test_completeness_property(n, data):
    f = fps(n, d=4, seed=n)
    tree = build_tree(f)
    i = data.draw(st.integers(0, n - 1))
    assert verify_proof(tree.root, f[i], prove(tree, i), i, n)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 200), st.data())
def test_single_bit_mutations_fail(n, data):
    f = fps(n, d=4, seed=n)
    tree = build_tree(f)
    i = data.draw(st.integers(0, n - 1))
    path = prove(tree, i)
    fp_bytes = bytearray(f[i].serialize())
    bit = data.draw(st.integers(0, len(fp_bytes) * 8 - 1))
    fp_bytes[bit // 8] ^= 1 << (bit % 8)
    assert not verify_proof(tree.root, bytes(fp_bytes), path)

    j = data.draw(st.integers(0, len(path) - 1))
    sib = bytearray(path.steps[j][0])
    sib[data.draw(st.integers(0, 31))] ^= 1 << data.draw(st.integers(0, 7))
    steps = list(path.steps)
    steps[j] = (bytes(sib), steps[j][1])
    assert not verify_proof(tree.root, f[i], MerklePath(tuple(steps)))

    root = bytearray(tree.root)
    root[data.draw(st.integers(0, 31))] ^= 1
    assert not verify_proof(bytes(root), f[i], path)


def test_malformed_paths_fail():
    f = fps(4)
    tree = build_tree(f)
    path = prove(tree, 1)
    bad_tag = MerklePath(((path.steps[0][0], "up"),) + path.steps[1:])
    assert not verify_proof(tree.root, f[1], bad_tag)
    assert not verify_proof(tree.root, f[1], MerklePath((("x", RIGHT),) + path.steps[1:]))
    assert not verify_proof(tree.root, f[1], MerklePath((b"short",) + path.steps[1:]))
    # positions must agree with the claimed index and the depth with the leaf count
    assert not verify_proof(tree.root, f[1], path, leaf_index=2)
    assert not verify_proof(tree.root, f[1], path, leaf_index=5)
    assert not verify_proof(tree.root, f[1], path, leaf_count=5)


def test_padding_leaves_not_auditable_by_index():
    f = fps(3)
    tree = build_tree(f)
    # leaf 3 duplicates leaf 2; its index lies beyond the leaf count
    assert not verify_proof(tree.root, f[2], prove(tree, 2), leaf_index=3)


@pytest.mark.parametrize("backend", BACKENDS)
def test_embeddings_path_matches_fingerprint_path(backend, provider):
    ids = np.arange(1, 700)
    blocks = provider.embed_blocks(ids, 256).astype("<f4")
    tokens = provider.embed_tokens_f32(ids)
    fast = build_tree_from_embeddings(blocks, tokens, 256, backend)
    slow = build_tree([TokenFingerprint(blocks[i // 256], tokens[i]) for i in range(len(ids))],
                      "python")
    assert fast.root == slow.root


def test_backends_agree_on_kernels():
    if len(BACKENDS) < 2:
        pytest.skip("compiled kernels not built")
    py, cy = _kernels.python_kernels, _kernels.compiled_kernels
    rng = np.random.default_rng(0)
    rows = rng.integers(0, 256, (37, 3072), dtype=np.uint8)
    assert np.array_equal(py.hash_rows(rows), cy.hash_rows(rows))
    nodes = rng.integers(0, 256, (64, 32), dtype=np.uint8)
    assert np.array_equal(py.hash_level(nodes), cy.hash_level(nodes))
    sib = rng.integers(0, 256, (5, 6, 32), dtype=np.uint8)
    right = rng.random((5, 6)) < 0.5
    assert np.array_equal(py.fold_paths(nodes[:5], sib, right), cy.fold_paths(nodes[:5], sib, right))


def test_prove_many_matches_prove():
    tree = build_tree(fps(37))
    idx = [0, 5, 36, 17, 17]
    assert prove_many(tree, idx) == [prove(tree, i) for i in idx]


@pytest.mark.parametrize("backend", BACKENDS)
def test_verify_batch_matches_verify_proof(backend):
    f = fps(50)
    tree = build_tree(f)
    idx = [3, 10, 49, 20]
    data = [f[i].serialize() for i in idx]
    paths = prove_many(tree, idx)
    assert verify_batch(tree.root, data, paths, idx, 50, backend).all()
    tampered = list(data)
    tampered[1] = bytes([data[1][0] ^ 1]) + data[1][1:]
    wrong_idx = [3, 10, 48, 20]
    assert list(verify_batch(tree.root, tampered, paths, idx, 50, backend)) == \
        [True, False, True, True]
    assert list(verify_batch(tree.root, data, paths, wrong_idx, 50, backend)) == \
        [True, True, False, True]
    assert not verify_batch(tree.root, data, paths, idx, 100, backend).any()
    junk = MerklePath((("nope", RIGHT),) * len(paths[0]))
    assert list(verify_batch(tree.root, data, [paths[0], junk, paths[2], paths[3]], idx, 50,
                             backend)) == [True, False, True, True]


def test_root_is_deterministic():
    assert build_tree(fps(100, seed=5)).root == build_tree(fps(100, seed=5)).root


def test_commitment_json():
    c = MerkleCommitment(sha(b"x"), 1000, "cola")
    assert c.to_json()["root"] == sha(b"x").hex()
    assert MerkleCommitment.from_json(c.to_json()) == c
