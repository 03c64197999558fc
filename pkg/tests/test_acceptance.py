"""End-to-end acceptance checks, one test per shipped guarantee.

Each test is self-contained and asserts the documented tolerances; the
reference implementations live in oracles.py and share no code with the
package internals.
"""

import json
import math
import random
import time

import numpy as np

from ovmine.augment import augment_concepts, random_weights, zero_weights
from ovmine.calibrate import (
    BiasEntry,
    BiasVector,
    adjust_scores,
    compute_bias,
    density_peak_cluster,
)
from ovmine.cli import run
from ovmine.geometry import BBox, iou
from ovmine.matching import MatchParams, matching_loss, set_similarity
from ovmine.mining import (
    MinedProposal,
    MiningParams,
    merge_fragments,
    mine_image,
    similarity_entropy,
)
from ovmine.synth import WorldConfig, evaluate_bias, evaluate_mining, generate_world, score_labels
from ovmine.tensorio import (
    ConceptRecord,
    ImageRecord,
    ProposalRecord,
    Tensor,
    Vocabulary,
    load_dataset,
    read_tensor,
)

from oracles import cluster_ref, mine_ref

SMALL_WORLD_ARGS = [
    "--images", "10", "--dim", "8", "--base-concepts", "4", "--novel-concepts", "2",
    "--distractors-per-image", "2", "--context-concepts", "1",
    "--frequency-ratio", "1.0", "--seed", "7",
]


def test_01_shipped_defaults_appear_in_run_meta(tmp_path):
    world = tmp_path / "world"
    mined = tmp_path / "mined"
    assert run(["synth", "--out", str(world)] + SMALL_WORLD_ARGS) == 0
    assert run(["mine", "--data", str(world / "world.manifest"), "--out", str(mined)]) == 0
    params = json.loads((mined / "run.meta").read_text())["params"]
    assert params["theta_iou"] == 0.6
    assert params["margin"] == 0.2
    assert params["gamma"] == 0.4
    scored = tmp_path / "scored"
    calib = tmp_path / "calib"
    assert run(["score", "--mined", str(mined), "--out", str(scored)]) == 0
    assert json.loads((scored / "run.meta").read_text())["params"]["margin"] == 0.2
    assert run(["calibrate", "--mined", str(mined), "--out", str(calib)]) == 0
    assert json.loads((calib / "run.meta").read_text())["params"]["gamma"] == 0.4


# ------------------------------------------------------------- mining

def _fuzz_rows(rnd, count, dim, allow_zero=True):
    rows = []
    for _ in range(count):
        roll = rnd.random()
        if rows and roll < 0.25:
            rows.append(rows[rnd.randrange(len(rows))].copy())
        elif allow_zero and roll < 0.30:
            rows.append(np.zeros(dim, dtype=np.float32))
        else:
            rows.append(
                np.array([rnd.gauss(0.0, 1.0) for _ in range(dim)], dtype=np.float32)
            )
    if not rows:
        return np.zeros((0, dim), dtype=np.float32)
    return np.stack(rows)


def _fuzz_world(rnd):
    dim = rnd.choice([4, 8, 16])
    vocab_size = rnd.randint(1, 16)
    vocab = _fuzz_rows(rnd, vocab_size, dim)
    caption = rnd.sample(range(vocab_size), rnd.randint(1, vocab_size))
    n_proposals = rnd.randint(0, 32)
    embeddings = _fuzz_rows(rnd, n_proposals, dim)
    boxes = []
    objectness = []
    for _ in range(n_proposals):
        if boxes and rnd.random() < 0.2:
            boxes.append(boxes[rnd.randrange(len(boxes))])
        else:
            x1 = float(rnd.randrange(0, 40))
            y1 = float(rnd.randrange(0, 40))
            boxes.append(
                (x1, y1, x1 + float(rnd.randrange(5, 40)), y1 + float(rnd.randrange(5, 40)))
            )
        objectness.append(rnd.randrange(0, 1001) / 1000.0)
    tokens = _fuzz_rows(rnd, rnd.randint(1, 2), dim, allow_zero=False)
    weights = random_weights(dim, seed=rnd.randrange(1 << 16)) if rnd.random() < 0.25 else None
    return vocab, caption, embeddings, boxes, objectness, tokens, weights


def _as_record(vocab, caption, embeddings, boxes, objectness, tokens):
    records = tuple(
        ConceptRecord(concept_id=cid, text=f"c{cid}", embedding_row=cid, origin="base")
        for cid in range(vocab.shape[0])
    )
    vocabulary = Vocabulary(records, Tensor(vocab))
    proposals = tuple(
        ProposalRecord(
            image_id="img",
            box=BBox(*boxes[m]),
            objectness=objectness[m],
            embedding_row=m,
            embedding=embeddings[m],
        )
        for m in range(embeddings.shape[0])
    )
    record = ImageRecord(
        image_id="img",
        image_tokens=tokens,
        proposals=proposals,
        caption_concepts=tuple(caption),
    )
    return record, vocabulary


def _f32_bytes(vector):
    return np.asarray(vector, dtype=np.float32).tobytes()


def _canon_mined(mined):
    concepts = [(c.concept_id, _f32_bytes(c.embedding)) for c in mined.concepts]
    proposals = [
        (
            p.concept_id,
            tuple(p.box.as_tuple()),
            float(p.objectness),
            _f32_bytes(p.embedding),
            float(np.float32(p.score)),
            bool(p.merged),
        )
        for p in mined.proposals
    ]
    return concepts, proposals


def _canon_ref(concepts, proposals):
    canon_c = [(cid, _f32_bytes(emb)) for cid, emb in concepts]
    canon_p = [
        (cid, tuple(box), float(obj), _f32_bytes(emb), float(np.float32(score)), bool(merged))
        for cid, box, obj, emb, score, merged in proposals
    ]
    return canon_c, canon_p


def test_02_mining_matches_bruteforce_reference():
    rnd = random.Random(20260814)
    start = time.perf_counter()
    augmented = 0
    for trial in range(100):
        vocab, caption, embeddings, boxes, objectness, tokens, weights = _fuzz_world(rnd)
        record, vocabulary = _as_record(vocab, caption, embeddings, boxes, objectness, tokens)
        params = MiningParams(use_augmentation=weights is not None)
        mined = mine_image(record, vocabulary, weights=weights, params=params)
        reference = mine_ref(
            caption,
            [vocab[cid] for cid in caption],
            tokens,
            list(zip(boxes, objectness, embeddings)),
            theta_iou=params.theta_iou,
            top_k=params.top_k,
            weights=weights,
        )
        assert mined.image_id == "img"
        assert _canon_mined(mined) == _canon_ref(*reference), f"trial {trial}"
        augmented += weights is not None
    elapsed = time.perf_counter() - start
    assert augmented >= 10  # the attention path was actually exercised
    assert elapsed < 10.0, f"mining comparison took {elapsed:.2f}s"


# ---------------------------------------------------------- clustering

def test_03_clustering_matches_quadratic_reference():
    gen = np.random.default_rng(777)
    rnd = random.Random(777)
    sizes = (
        [rnd.randint(2, 96) for _ in range(40)]
        + [rnd.randint(97, 180) for _ in range(8)]
        + [256, 256]
    )
    start = time.perf_counter()
    for set_index, n in enumerate(sizes):
        dim = rnd.choice([3, 4, 8])
        if rnd.random() < 0.5:
            k = rnd.randint(1, 4)
            centers = gen.normal(size=(k, dim))
            centers /= np.linalg.norm(centers, axis=1, keepdims=True)
            points = centers[gen.integers(0, k, size=n)] + 0.05 * gen.normal(size=(n, dim))
        else:
            points = gen.normal(size=(n, dim))
        ours = density_peak_cluster(points, concept_id=set_index)
        theirs = cluster_ref(points)
        label = f"set {set_index} (n={n})"
        assert ours.assignment.tolist() == theirs["assignment"], label
        assert list(ours.centers) == theirs["centers"], label
        assert ours.halo.tolist() == theirs["halo"], label
        assert ours.retained_count == theirs["retained"], label
        assert np.allclose(ours.rho, theirs["rho"], rtol=0.0, atol=1e-6), label
        assert np.allclose(ours.delta, theirs["delta"], rtol=0.0, atol=1e-6), label
        assert abs(ours.cutoff - theirs["cutoff"]) <= 1e-6, label
    elapsed = time.perf_counter() - start
    assert elapsed < 20.0, f"clustering comparison took {elapsed:.2f}s"


# ---------------------------------------------------------- adjustment

def test_04_adjustment_identity_and_shift_properties():
    gen = np.random.default_rng(99)
    betas = gen.uniform(0.0, 30.0, size=12)
    entries = tuple(
        BiasEntry(concept_id=c, beta=float(betas[c]), cluster_count=1, retained_count=1)
        for c in range(12)
    )
    bias = BiasVector(gamma=0.4, entries=entries)

    raw = gen.normal(size=(40, 12))
    assert np.array_equal(adjust_scores(raw, bias, gamma_override=0.0), raw)

    flat = BiasVector(
        gamma=0.8,
        entries=tuple(
            BiasEntry(concept_id=c, beta=7.5, cluster_count=1, retained_count=1)
            for c in range(12)
        ),
    )
    vectors = gen.normal(size=(1000, 12))
    shifted = adjust_scores(vectors, flat)
    assert np.array_equal(shifted.argmax(axis=1), vectors.argmax(axis=1))

    bumped = list(entries)
    bumped[5] = BiasEntry(
        concept_id=5, beta=float(betas[5]) + 1.3, cluster_count=1, retained_count=1
    )
    before = adjust_scores(raw, bias)
    after = adjust_scores(raw, BiasVector(gamma=0.4, entries=tuple(bumped)))
    diff = after - before
    assert np.max(np.abs(diff[:, 5] + 0.4 * 1.3)) <= 1e-7
    assert np.all(np.delete(diff, 5, axis=1) == 0.0)


# ------------------------------------------------------------ matching

def test_05_matching_loss_and_similarity_bounds():
    params = MatchParams()
    gen = np.random.default_rng(5)

    single = [(gen.normal(size=(3, 8)), gen.normal(size=(2, 8)))]
    assert matching_loss(single, params) == 0.0

    axes = np.eye(8)
    satisfied = [(axes[i : i + 1], axes[i : i + 1]) for i in range(3)]
    assert matching_loss(satisfied, params) == 0.0

    pairs = [
        (
            gen.normal(size=(int(gen.integers(1, 5)), 6)),
            gen.normal(size=(int(gen.integers(1, 5)), 6)),
        )
        for _ in range(5)
    ]
    base_loss = matching_loss(pairs, params)
    for _ in range(3):
        order = gen.permutation(5)
        assert abs(matching_loss([pairs[j] for j in order], params) - base_loss) <= 1e-9

    one = np.zeros((1, 8))
    one[0, 2] = 1.0
    for steps in (1, 3):
        assert set_similarity(one, one, MatchParams(steps=steps)) == 2.0 * steps

    for _ in range(1000):
        a = gen.normal(size=(int(gen.integers(1, 6)), 6))
        b = gen.normal(size=(int(gen.integers(1, 6)), 6))
        assert abs(set_similarity(a, b, params)) <= 2.0 * params.steps + 1e-9


# --------------------------------------------------------- augmentation

def test_06_augmentation_zero_path_and_permutation_properties():
    gen = np.random.default_rng(6)
    for trial in range(100):
        dim = int(gen.integers(2, 9))
        concepts = gen.normal(size=(int(gen.integers(1, 6)), dim))
        tokens = gen.normal(size=(int(gen.integers(1, 5)), dim))

        frozen = augment_concepts(concepts, tokens, zero_weights(dim))
        assert np.allclose(frozen, concepts, atol=1e-6)

        weights = random_weights(dim, seed=trial)
        out = augment_concepts(concepts, tokens, weights)
        concept_order = gen.permutation(concepts.shape[0])
        assert np.allclose(
            augment_concepts(concepts[concept_order], tokens, weights),
            out[concept_order],
            atol=1e-6,
        )
        token_order = gen.permutation(tokens.shape[0])
        assert np.allclose(
            augment_concepts(concepts, tokens[token_order], weights), out, atol=1e-6
        )


# -------------------------------------------------------------- merging

def test_07_merging_reaches_fixed_point():
    rnd = random.Random(4242)
    unit_rows = np.eye(4)
    for _ in range(10_000):
        theta = rnd.choice([0.3, 0.6, 0.85])
        count = rnd.randint(1, 6)
        items = []
        for m in range(count):
            x1 = float(rnd.randrange(0, 16))
            y1 = float(rnd.randrange(0, 16))
            box = BBox(
                x1, y1, x1 + float(rnd.randrange(2, 14)), y1 + float(rnd.randrange(2, 14))
            )
            items.append(
                MinedProposal(
                    concept_id=0,
                    box=box,
                    objectness=rnd.randrange(1, 1001) / 1000.0,
                    embedding=unit_rows[m % 4],
                    score=0.0,
                    merged=False,
                    index=m,
                )
            )
        merged = merge_fragments(items, theta)
        assert 1 <= len(merged) <= count  # a merge always removes one entry
        for a in range(len(merged)):
            for b in range(a + 1, len(merged)):
                assert iou(merged[a].box, merged[b].box) < theta


# -------------------------------------------------------------- entropy

def test_08_entropy_of_uniform_scores():
    lone = similarity_entropy(np.array([0.42]))
    assert lone == 0.0
    assert math.copysign(1.0, lone) == 1.0  # exactly +0.0, not -0.0
    for n in range(2, 65):
        uniform = similarity_entropy(np.full(n, 0.37))
        assert abs(uniform - math.log(n)) <= 1e-9


# ------------------------------------------------------- synthetic world

def test_09_standard_world_mining_quality(tmp_path):
    start = time.perf_counter()
    truth = generate_world(WorldConfig(), tmp_path)
    dataset = load_dataset(tmp_path / "world.manifest")
    pairs = []
    for record in dataset.images:
        mined = mine_image(record, dataset.vocabulary)
        pairs.extend((mined.image_id, p.concept_id, p.box) for p in mined.proposals)
    report = evaluate_mining(pairs, truth)
    elapsed = time.perf_counter() - start
    assert report.precision >= 0.9, f"precision {report.precision:.4f}"
    assert report.recall >= 0.8, f"recall {report.recall:.4f}"
    assert elapsed < 30.0, f"standard world took {elapsed:.2f}s"


def test_10_adjustment_narrows_group_confidence_gap(tmp_path):
    truth = generate_world(WorldConfig(images=600), tmp_path)
    dataset = load_dataset(tmp_path / "world.manifest")
    pooled: dict[int, list[np.ndarray]] = {}
    for record in dataset.images:
        for p in mine_image(record, dataset.vocabulary).proposals:
            pooled.setdefault(p.concept_id, []).append(p.embedding)
    results = {
        cid: density_peak_cluster(np.stack(vectors), concept_id=cid)
        for cid, vectors in sorted(pooled.items())
    }
    bias = compute_bias(results)

    raw = read_tensor(tmp_path / "scores_raw.mdet").values.astype(np.float64)
    labels = score_labels(truth)
    base_ids = dataset.vocabulary.base_ids()
    novel_ids = dataset.vocabulary.novel_ids()

    report = evaluate_bias(raw, adjust_scores(raw, bias), labels, base_ids, novel_ids)
    gap_raw = report.stats("raw").confidence_gap
    gap_adjusted = report.stats("adjusted").confidence_gap
    assert gap_raw > 0.0, "world failed to produce a confidence gap"
    assert abs(gap_adjusted) <= 0.5 * abs(gap_raw), f"{gap_raw:.3f} -> {gap_adjusted:.3f}"
    assert (
        report.stats("adjusted").novel.top1_accuracy
        >= report.stats("raw").novel.top1_accuracy
    )

    novel_accuracy = []
    for gamma in (0.2, 0.4, 0.6, 0.8, 1.0):
        swept = adjust_scores(raw, bias, gamma_override=gamma)
        stats = evaluate_bias(raw, swept, labels, base_ids, novel_ids).stats("adjusted")
        novel_accuracy.append(stats.novel.top1_accuracy)
    assert max(novel_accuracy) - min(novel_accuracy) <= 0.05


# --------------------------------------------------------- determinism

def _run_pipeline():
    assert run(["synth", "--out", "world"] + SMALL_WORLD_ARGS) == 0
    assert run(["mine", "--data", "world/world.manifest", "--out", "mined"]) == 0
    assert run(["score", "--mined", "mined", "--out", "scored"]) == 0
    assert run(["calibrate", "--mined", "mined", "--out", "calib"]) == 0
    assert (
        run(
            ["adjust", "--scores", "world/scores_raw.mdet", "--bias", "calib/bias.json",
             "--out", "adjusted"]
        )
        == 0
    )
    assert (
        run(
            ["eval", "mining", "--mined", "mined", "--truth", "world/truth.jsonl",
             "--out", "eval_mining"]
        )
        == 0
    )
    assert (
        run(
            ["eval", "bias", "--raw", "world/scores_raw.mdet", "--truth", "world/truth.jsonl",
             "--concepts", "world/concepts.jsonl", "--bias", "calib/bias.json",
             "--gammas", "0.0,0.2,0.4", "--out", "eval_bias"]
        )
        == 0
    )


def _tree_bytes(root, skip=()):
    tree = {}
    for path in sorted(root.rglob("*")):
        if not path.is_file() or path.name in skip:
            continue
        tree[path.relative_to(root).as_posix()] = path.read_bytes()
    return tree


def test_11_reruns_and_worker_counts_are_byte_identical(tmp_path, monkeypatch):
    first = tmp_path / "first"
    second = tmp_path / "second"
    for replica in (first, second):
        replica.mkdir()
        monkeypatch.chdir(replica)
        _run_pipeline()
    monkeypatch.chdir(tmp_path)
    left = _tree_bytes(first)
    right = _tree_bytes(second)
    assert list(left) == list(right)
    for rel, payload in left.items():
        assert right[rel] == payload, rel
    assert any(rel.endswith(".png") for rel in left)  # figures are in the comparison
    assert any(rel.endswith("run.meta") for rel in left)

    workers_one = tmp_path / "w1"
    workers_four = tmp_path / "w4"
    for base, workers in ((workers_one, "1"), (workers_four, "4")):
        base.mkdir()
        monkeypatch.chdir(base)
        assert run(["synth", "--out", "world", "--workers", workers] + SMALL_WORLD_ARGS) == 0
        assert (
            run(["mine", "--data", "world/world.manifest", "--out", "mined",
                 "--workers", workers])
            == 0
        )
    monkeypatch.chdir(tmp_path)
    # run.meta records the literal argv, which names the worker count;
    # every data artifact must still match byte for byte
    left = _tree_bytes(workers_one, skip=("run.meta",))
    right = _tree_bytes(workers_four, skip=("run.meta",))
    assert list(left) == list(right)
    for rel, payload in left.items():
        assert right[rel] == payload, rel
