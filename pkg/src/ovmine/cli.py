"""Command-line front end.

Subcommands: synth, mine, score, calibrate, adjust, eval (mining|bias),
report. Machine-readable results go to files under --out; anything
meant for humans goes to standard error. Every run writes a run.meta
JSON snapshot of its fully expanded configuration.

Exit codes: 0 success, 1 usage problem (unknown flag or config key,
invalid parameter value), 2 broken input data.

A ``--config`` file holds flat ``key = value`` lines using the
parameter names below (underscores); explicit command-line flags win
over the file, the file wins over built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import functools
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .augment import load_weights, random_weights
from .calibrate import (
    BiasVector,
    ClusterParams,
    compute_bias,
    density_peak_cluster,
    load_bias,
    save_bias,
)
from .geometry import BBox
from .matching import MatchParams, loss_from_similarity, pairwise_similarity
from .mining import MiningParams, mine_image, read_mined_sets, write_mined_sets
from .report import render_all
from .synth import (
    SCORE_INFLATION,
    SCORE_SCALE,
    WorldConfig,
    bias_report_csv,
    evaluate_bias,
    evaluate_mining,
    gamma_sweep_csv,
    generate_world,
    load_truth,
    mining_report_csv,
    score_labels,
)
from .tensorio import DataError, Tensor, load_dataset, read_jsonl, read_tensor, write_tensor

ALGO_DEFAULTS: dict[str, float | int] = {
    "theta_iou": 0.6,
    "top_k": 3,
    "margin": 0.2,
    "steps": 3,
    "temperature": 10.0,
    "gamma": 0.4,
    "neighbor_fraction": 0.02,
    "center_sigma": 3.0,
    "iou_threshold": 0.5,
    "seed": 42,
    "workers": 1,
}

_WORLD = WorldConfig()
SYNTH_DEFAULTS: dict[str, float | int] = {
    "seed": _WORLD.seed,
    "dim": _WORLD.dim,
    "base_concepts": _WORLD.base_concepts,
    "novel_concepts": _WORLD.novel_concepts,
    "images": _WORLD.images,
    "objects_per_image": _WORLD.objects_per_image,
    "distractors_per_image": _WORLD.distractors_per_image,
    "context_concepts": _WORLD.context_concepts,
    "fragment_rate": _WORLD.fragment_rate,
    "noise_sigma": _WORLD.noise_sigma,
    "frequency_ratio": _WORLD.frequency_ratio,
    "min_angle_deg": _WORLD.min_angle_deg,
    "score_scale": SCORE_SCALE,
    "score_inflation": SCORE_INFLATION,
    "workers": 1,
}

PARAM_SPECS: dict[str, dict[str, tuple[float | int, type]]] = {
    "synth": {name: (value, type(value)) for name, value in SYNTH_DEFAULTS.items()},
    "mine": {
        "theta_iou": (0.6, float),
        "top_k": (3, int),
        "seed": (42, int),
        "workers": (1, int),
    },
    "score": {
        "steps": (3, int),
        "margin": (0.2, float),
        "temperature": (10.0, float),
    },
    "calibrate": {
        "neighbor_fraction": (0.02, float),
        "center_sigma": (3.0, float),
        "gamma": (0.4, float),
    },
    "adjust": {},
    "eval": {
        "iou_threshold": (0.5, float),
        "gamma": (0.4, float),
    },
    "report": {},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are exit 1
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="ovmine", description=__doc__, add_help=True)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic world")
    synth.add_argument("--out", required=True)
    synth.add_argument("--config")
    for name in SYNTH_DEFAULTS:
        flag = "--" + name.replace("_", "-")
        caster = PARAM_SPECS["synth"][name][1]
        synth.add_argument(flag, dest=name, type=caster, default=None)

    mine = sub.add_parser("mine", help="mine concept/proposal pairs")
    mine.add_argument("--data", required=True, help="dataset manifest path")
    mine.add_argument("--out", required=True)
    mine.add_argument("--config")
    mine.add_argument("--theta-iou", dest="theta_iou", type=float, default=None)
    mine.add_argument("--top-k", dest="top_k", type=int, default=None)
    mine.add_argument("--seed", dest="seed", type=int, default=None)
    mine.add_argument("--workers", dest="workers", type=int, default=None)
    mine.add_argument("--weights", help="attention weight bundle manifest")
    mine.add_argument(
        "--random-weights",
        action="store_true",
        help="enable augmentation with seeded random weights",
    )

    score = sub.add_parser("score", help="set-to-set similarity over mined output")
    score.add_argument("--mined", required=True)
    score.add_argument("--out", required=True)
    score.add_argument("--config")
    score.add_argument("--steps", dest="steps", type=int, default=None)
    score.add_argument("--margin", dest="margin", type=float, default=None)
    score.add_argument("--temperature", dest="temperature", type=float, default=None)

    calibrate = sub.add_parser("calibrate", help="cluster mined embeddings into a bias file")
    calibrate.add_argument("--mined", required=True)
    calibrate.add_argument("--out", required=True)
    calibrate.add_argument("--config")
    calibrate.add_argument(
        "--neighbor-fraction", dest="neighbor_fraction", type=float, default=None
    )
    calibrate.add_argument("--center-sigma", dest="center_sigma", type=float, default=None)
    calibrate.add_argument("--gamma", dest="gamma", type=float, default=None)

    adjust = sub.add_parser("adjust", help="subtract gamma * bias from raw scores")
    adjust.add_argument("--scores", required=True)
    adjust.add_argument("--bias", required=True)
    adjust.add_argument("--out", required=True)
    adjust.add_argument(
        "--gamma", dest="gamma", type=float, default=None, help="override the stored gamma"
    )

    evaluate = sub.add_parser("eval", help="score mined output against ground truth")
    eval_sub = evaluate.add_subparsers(dest="mode", required=True)
    ev_mining = eval_sub.add_parser("mining", help="precision/recall of mined pairs")
    ev_mining.add_argument("--mined", required=True)
    ev_mining.add_argument("--truth", required=True)
    ev_mining.add_argument("--out", required=True)
    ev_mining.add_argument("--config")
    ev_mining.add_argument("--iou-threshold", dest="iou_threshold", type=float, default=None)
    ev_mining.add_argument("--no-figures", action="store_true")
    ev_bias = eval_sub.add_parser("bias", help="confidence gap before/after adjustment")
    ev_bias.add_argument("--raw", required=True)
    ev_bias.add_argument("--truth", required=True)
    ev_bias.add_argument("--concepts", required=True, help="concepts.jsonl for the split")
    ev_bias.add_argument("--out", required=True)
    ev_bias.add_argument("--config")
    ev_bias.add_argument("--adjusted", help="precomputed adjusted score tensor")
    ev_bias.add_argument("--bias", help="bias file to adjust with instead of --adjusted")
    ev_bias.add_argument("--gamma", dest="gamma", type=float, default=None)
    ev_bias.add_argument("--gammas", help="comma list for a sweep CSV (needs --bias)")
    ev_bias.add_argument("--no-figures", action="store_true")

    report = sub.add_parser("report", help="render figures from report CSVs")
    report.add_argument("--from", dest="from_dir", required=True)
    return parser


def _read_config(path: str | None, spec: dict[str, tuple]) -> dict[str, object]:
    if path is None:
        return {}
    from .tensorio import parse_manifest

    entries = parse_manifest(path)
    out: dict[str, object] = {}
    for key, raw in entries.items():
        if key not in spec:
            raise UsageError(f"unknown config key {key!r} in {path}")
        caster = spec[key][1]
        try:
            out[key] = caster(raw)
        except ValueError as exc:
            raise UsageError(f"bad value for config key {key!r}: {exc}") from exc
    return out


def _effective_params(args, subcommand: str) -> dict[str, object]:
    spec = PARAM_SPECS[subcommand]
    config = _read_config(getattr(args, "config", None), spec)
    effective: dict[str, object] = {}
    for name, (default, _caster) in spec.items():
        value = getattr(args, name, None)
        if value is None:
            value = config.get(name, default)
        effective[name] = value
    return effective


def _write_run_meta(out_dir: Path, subcommand: str, argv, inputs: dict, params: dict) -> None:
    meta = {
        "subcommand": subcommand,
        "argv": list(argv),
        "inputs": inputs,
        "params": {**ALGO_DEFAULTS, **params},
        "version": __version__,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run.meta").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _say(message: str) -> None:
    print(message, file=sys.stderr)


def _cmd_synth(args, argv) -> int:
    params = _effective_params(args, "synth")
    workers = int(params.pop("workers"))
    score_scale = float(params.pop("score_scale"))
    score_inflation = float(params.pop("score_inflation"))
    config = WorldConfig(**params)
    out_dir = Path(args.out)
    truth = generate_world(
        config, out_dir, workers=workers, score_scale=score_scale, score_inflation=score_inflation
    )
    proposals = sum(len(image.origins) for image in truth.images)
    _say(
        f"[synth] wrote {config.images} images, {truth.object_count()} objects, "
        f"{proposals} proposals to {args.out}"
    )
    params.update(workers=workers, score_scale=score_scale, score_inflation=score_inflation)
    _write_run_meta(out_dir, "synth", argv, {"out": args.out}, params)
    return 0


def _mine_one(record, vocabulary, weights, params):
    return mine_image(record, vocabulary, weights=weights, params=params)


def _cmd_mine(args, argv) -> int:
    params = _effective_params(args, "mine")
    dataset = load_dataset(args.data)
    weights = None
    if args.weights and args.random_weights:
        raise UsageError("--weights and --random-weights are mutually exclusive")
    if args.weights:
        weights = load_weights(args.weights)
    elif args.random_weights:
        weights = random_weights(dataset.vocabulary.dim, int(params["seed"]))
    mining = MiningParams(
        theta_iou=float(params["theta_iou"]),
        top_k=int(params["top_k"]),
        use_augmentation=weights is not None,
    )
    _say(
        f"[mine] theta_iou={mining.theta_iou} top_k={mining.top_k} "
        f"augmentation={'on' if mining.use_augmentation else 'off'}"
    )
    workers = int(params["workers"])
    task = functools.partial(
        _mine_one, vocabulary=dataset.vocabulary, weights=weights, params=mining
    )
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            sets = list(pool.map(task, dataset.images, chunksize=8))
    else:
        sets = [task(record) for record in dataset.images]
    out_dir = Path(args.out)
    pair_count, concept_count = write_mined_sets(sets, out_dir, dataset.vocabulary.dim)
    _say(f"[mine] {pair_count} pairs across {concept_count} concept entries")
    params["use_augmentation"] = mining.use_augmentation
    _write_run_meta(
        out_dir,
        "mine",
        argv,
        {"data": args.data, "weights": args.weights, "out": args.out},
        params,
    )
    return 0


def _cmd_score(args, argv) -> int:
    params = _effective_params(args, "score")
    match = MatchParams(
        steps=int(params["steps"]),
        margin=float(params["margin"]),
        temperature=float(params["temperature"]),
    )
    sets = read_mined_sets(args.mined)
    usable = [s for s in sets if s.proposals and s.concepts]
    skipped = len(sets) - len(usable)
    if skipped:
        _say(f"[score] skipping {skipped} empty sets")
    if not usable:
        raise DataError("no non-empty mined sets to score")
    proposal_sets = [np.stack([p.embedding for p in s.proposals]) for s in usable]
    concept_sets = [np.stack([c.embedding for c in s.concepts]) for s in usable]
    matrix = pairwise_similarity(proposal_sets, concept_sets, match)
    loss = loss_from_similarity(matrix, match.margin)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = [s.image_id for s in usable]
    with open(out_dir / "similarity.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image_id"] + ids)
        for i, image_id in enumerate(ids):
            writer.writerow([image_id] + [repr(float(v)) for v in matrix[i]])
    with open(out_dir / "loss.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["batch_size", "steps", "margin", "temperature", "loss"])
        writer.writerow(
            [
                len(usable),
                match.steps,
                repr(match.margin),
                repr(match.temperature),
                repr(float(loss)),
            ]
        )
    _say(f"[score] batch {len(usable)}, loss {loss:.6f}")
    _write_run_meta(out_dir, "score", argv, {"mined": args.mined, "out": args.out}, params)
    return 0


def _cmd_calibrate(args, argv) -> int:
    params = _effective_params(args, "calibrate")
    cluster_params = ClusterParams(
        neighbor_fraction=float(params["neighbor_fraction"]),
        center_sigma=float(params["center_sigma"]),
    )
    sets = read_mined_sets(args.mined)
    pooled: dict[int, list[np.ndarray]] = {}
    for mined in sets:
        for item in mined.proposals:
            pooled.setdefault(item.concept_id, []).append(item.embedding)
    if not pooled:
        raise DataError("no mined pairs to calibrate")
    results = {
        cid: density_peak_cluster(np.stack(vectors), cluster_params, concept_id=cid)
        for cid, vectors in sorted(pooled.items())
    }
    bias = compute_bias(results, gamma=float(params["gamma"]))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_bias(bias, out_dir / "bias.json")
    _say(f"[calibrate] {len(results)} concepts -> {out_dir / 'bias.json'}")
    _write_run_meta(out_dir, "calibrate", argv, {"mined": args.mined, "out": args.out}, params)
    return 0


def _cmd_adjust(args, argv) -> int:
    raw = read_tensor(args.scores)
    if raw.rank != 2:
        raise DataError(f"score tensor must be rank 2, got rank {raw.rank}")
    bias = load_bias(args.bias)
    gamma = bias.gamma if args.gamma is None else float(args.gamma)
    offsets = gamma * bias.beta_for(list(range(raw.shape[1])))
    adjusted = raw.values.astype(np.float64) - offsets[None, :]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_tensor(Tensor(adjusted.astype(np.float32)), out_dir / "adjusted.mdet")
    _say(f"[adjust] gamma={gamma} over {raw.shape[0]}x{raw.shape[1]} scores")
    _write_run_meta(
        out_dir,
        "adjust",
        argv,
        {"scores": args.scores, "bias": args.bias, "out": args.out},
        {"gamma": gamma},
    )
    return 0


def _split_from_concepts(path: str) -> tuple[frozenset[int], frozenset[int]]:
    base, novel = set(), set()
    for row in read_jsonl(path):
        origin = row.get("origin")
        cid = int(row["concept_id"])
        if origin == "base":
            base.add(cid)
        elif origin == "caption":
            novel.add(cid)
        else:
            raise DataError(f"{path}: bad origin {origin!r} for concept {cid}")
    return frozenset(base), frozenset(novel)


def _cmd_eval_mining(args, argv) -> int:
    params = _effective_params(args, "eval")
    truth = load_truth(args.truth)
    pairs = [
        (str(row["image_id"]), int(row["concept_id"]), BBox(*map(float, row["box"])))
        for row in read_jsonl(Path(args.mined) / "mined.jsonl")
    ]
    report = evaluate_mining(pairs, truth, iou_threshold=float(params["iou_threshold"]))
    out_dir = Path(args.out)
    mining_report_csv(report, out_dir)
    if not args.no_figures:
        render_all(out_dir)
    flag = " (empty)" if report.empty else ""
    _say(f"[eval] precision {report.precision:.4f} recall {report.recall:.4f}{flag}")
    _write_run_meta(
        out_dir,
        "eval mining",
        argv,
        {"mined": args.mined, "truth": args.truth, "out": args.out},
        {"iou_threshold": float(params["iou_threshold"])},
    )
    return 0


def _cmd_eval_bias(args, argv) -> int:
    params = _effective_params(args, "eval")
    raw = read_tensor(args.raw)
    if raw.rank != 2:
        raise DataError(f"score tensor must be rank 2, got rank {raw.rank}")
    truth = load_truth(args.truth)
    labels = score_labels(truth)
    base_ids, novel_ids = _split_from_concepts(args.concepts)
    if (args.adjusted is None) == (args.bias is None):
        raise UsageError("exactly one of --adjusted or --bias is required")
    raw_values = raw.values.astype(np.float64)
    bias: BiasVector | None = None
    if args.adjusted is not None:
        adjusted_tensor = read_tensor(args.adjusted)
        if adjusted_tensor.shape != raw.shape:
            raise DataError("adjusted tensor shape differs from raw")
        adjusted = adjusted_tensor.values.astype(np.float64)
        gamma = None
    else:
        bias = load_bias(args.bias)
        gamma = bias.gamma if args.gamma is None else float(params["gamma"])
        offsets = gamma * bias.beta_for(list(range(raw.shape[1])))
        adjusted = raw_values - offsets[None, :]
    report = evaluate_bias(raw_values, adjusted, labels, base_ids, novel_ids)
    out_dir = Path(args.out)
    bias_report_csv(report, out_dir)
    if args.gammas:
        if bias is None:
            raise UsageError("--gammas needs --bias to recompute adjustments")
        try:
            grid = [float(g) for g in args.gammas.split(",") if g.strip()]
        except ValueError as exc:
            raise UsageError(f"bad --gammas list: {exc}") from exc
        rows = []
        for g in grid:
            offsets = g * bias.beta_for(list(range(raw.shape[1])))
            swept = evaluate_bias(
                raw_values, raw_values - offsets[None, :], labels, base_ids, novel_ids
            )
            rows.append((g, swept.stats("adjusted")))
        gamma_sweep_csv(rows, out_dir)
    if not args.no_figures:
        render_all(out_dir)
    raw_stats = report.stats("raw")
    adj_stats = report.stats("adjusted")
    _say(
        f"[eval] confidence gap raw {raw_stats.confidence_gap:.4f} -> "
        f"adjusted {adj_stats.confidence_gap:.4f}"
    )
    _write_run_meta(
        out_dir,
        "eval bias",
        argv,
        {
            "raw": args.raw,
            "adjusted": args.adjusted,
            "bias": args.bias,
            "truth": args.truth,
            "concepts": args.concepts,
            "out": args.out,
        },
        {"gamma": gamma, "gammas": args.gammas},
    )
    return 0


def _cmd_report(args, argv) -> int:
    written = render_all(args.from_dir)
    if written:
        for path in written:
            _say(f"[report] wrote {path}")
    else:
        _say("[report] nothing to render")
    return 0


def run(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        _say(f"usage error: {exc}")
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    handlers = {
        "synth": _cmd_synth,
        "mine": _cmd_mine,
        "score": _cmd_score,
        "calibrate": _cmd_calibrate,
        "adjust": _cmd_adjust,
        "report": _cmd_report,
    }
    try:
        if args.subcommand == "eval":
            handler = _cmd_eval_mining if args.mode == "mining" else _cmd_eval_bias
            return handler(args, argv)
        return handlers[args.subcommand](args, argv)
    except UsageError as exc:
        _say(f"usage error: {exc}")
        return 1
    except ValueError as exc:
        if isinstance(exc, DataError):
            _say(f"data error: {exc}")
            return 2
        _say(f"usage error: {exc}")
        return 1
    except OSError as exc:
        _say(f"data error: {exc}")
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
