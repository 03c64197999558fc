import numpy as np
import pytest

from ovmine.augment import (
    AttentionWeights,
    augment_concepts,
    load_weights,
    random_weights,
    save_weights,
    zero_weights,
)
from ovmine.tensorio import DataError

from oracles import attention_forward_ref

RNG = np.random.default_rng(2024)


def test_scalar_hand_evaluation():
    # one concept [2], one token [3], identity projections, no FFN:
    # single-key attention weight is 1, so output = 2 + 3 = 5 exactly
    weights = AttentionWeights(
        w_q=np.array([[1.0]]),
        w_k=np.array([[1.0]]),
        w_v=np.array([[1.0]]),
        ffn_w1=np.zeros((4, 1)),
        ffn_b1=np.zeros(4),
        ffn_w2=np.zeros((1, 4)),
        ffn_b2=np.zeros(1),
    )
    out = augment_concepts(np.array([[2.0]]), np.array([[3.0]]), weights)
    assert out.shape == (1, 1)
    assert out[0, 0] == 5.0


def test_zeroed_value_and_ffn_path_is_identity():
    dim = 6
    weights = zero_weights(dim)
    # non-zero queries/keys must not matter when the value path is zero
    weights = AttentionWeights(
        w_q=RNG.normal(size=(dim, dim)),
        w_k=RNG.normal(size=(dim, dim)),
        w_v=np.zeros((dim, dim)),
        ffn_w1=weights.ffn_w1,
        ffn_b1=weights.ffn_b1,
        ffn_w2=weights.ffn_w2,
        ffn_b2=weights.ffn_b2,
    )
    concepts = RNG.normal(size=(5, dim))
    tokens = RNG.normal(size=(3, dim))
    out = augment_concepts(concepts, tokens, weights)
    assert np.array_equal(out, concepts)


def test_concept_permutation_equivariance():
    dim = 8
    weights = random_weights(dim, seed=3)
    concepts = RNG.normal(size=(6, dim))
    tokens = RNG.normal(size=(4, dim))
    perm = RNG.permutation(6)
    direct = augment_concepts(concepts[perm], tokens, weights)
    permuted = augment_concepts(concepts, tokens, weights)[perm]
    assert np.max(np.abs(direct - permuted)) <= 1e-6


def test_token_permutation_invariance():
    dim = 8
    weights = random_weights(dim, seed=4)
    concepts = RNG.normal(size=(5, dim))
    tokens = RNG.normal(size=(7, dim))
    perm = RNG.permutation(7)
    assert np.max(
        np.abs(augment_concepts(concepts, tokens[perm], weights) - augment_concepts(concepts, tokens, weights))
    ) <= 1e-6


def test_forward_matches_reference():
    dim = 5
    weights = random_weights(dim, seed=11, hidden=9)
    concepts = RNG.normal(size=(4, dim))
    tokens = RNG.normal(size=(3, dim))
    ours = augment_concepts(concepts, tokens, weights)
    theirs = np.array(attention_forward_ref(concepts, tokens, weights))
    assert np.max(np.abs(ours - theirs)) <= 1e-9


def test_empty_concepts_pass_through():
    dim = 4
    weights = random_weights(dim, seed=5)
    out = augment_concepts(np.zeros((0, dim)), RNG.normal(size=(2, dim)), weights)
    assert out.shape == (0, dim)


def test_empty_token_set_rejected():
    weights = zero_weights(3)
    with pytest.raises(ValueError, match="empty image token set"):
        augment_concepts(np.zeros((1, 3)), np.zeros((0, 3)), weights)


def test_dim_mismatch_rejected():
    weights = zero_weights(3)
    with pytest.raises(ValueError, match="dim mismatch"):
        augment_concepts(np.zeros((1, 4)), np.zeros((1, 3)), weights)


def test_weight_shape_validation():
    with pytest.raises(DataError, match="shape"):
        AttentionWeights(
            w_q=np.zeros((3, 3)),
            w_k=np.zeros((3, 3)),
            w_v=np.zeros((3, 2)),
            ffn_w1=np.zeros((12, 3)),
            ffn_b1=np.zeros(12),
            ffn_w2=np.zeros((3, 12)),
            ffn_b2=np.zeros(3),
        )


def test_weight_nonfinite_rejected():
    bad = np.zeros((2, 2))
    bad[0, 0] = np.nan
    with pytest.raises(DataError, match="non-finite element in w_q"):
        AttentionWeights(
            w_q=bad,
            w_k=np.zeros((2, 2)),
            w_v=np.zeros((2, 2)),
            ffn_w1=np.zeros((8, 2)),
            ffn_b1=np.zeros(8),
            ffn_w2=np.zeros((2, 8)),
            ffn_b2=np.zeros(2),
        )


def test_random_weights_are_seeded_and_bounded():
    first = random_weights(16, seed=7)
    second = random_weights(16, seed=7)
    other = random_weights(16, seed=8)
    assert np.array_equal(first.w_q, second.w_q)
    assert not np.array_equal(first.w_q, other.w_q)
    bound = 1.0 / np.sqrt(16)
    for name in ("w_q", "w_k", "w_v", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2"):
        values = getattr(first, name)
        assert np.all(np.abs(values) <= bound)
    assert first.hidden == 64


def test_weight_bundle_roundtrip(tmp_path):
    weights = random_weights(6, seed=9, hidden=10)
    manifest = save_weights(weights, tmp_path, stem="blk")
    loaded = load_weights(manifest)
    for name in ("w_q", "w_k", "w_v", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2"):
        stored = np.asarray(getattr(weights, name), dtype=np.float32)
        assert np.array_equal(np.asarray(getattr(loaded, name), dtype=np.float32), stored)


def test_weight_bundle_missing_key(tmp_path):
    manifest = save_weights(zero_weights(2), tmp_path)
    text = manifest.read_text().splitlines()
    manifest.write_text("\n".join(line for line in text if not line.startswith("w_q")) + "\n")
    with pytest.raises(DataError, match="missing manifest keys"):
        load_weights(manifest)
