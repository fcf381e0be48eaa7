"""Command-line front end: synth | fit | infer | annotate | query | segment | eval.

Exit codes: 0 success, 1 usage error, 2 data/format error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import generative, inference, io, metrics, tasks
from .core import ModelConfig, WsibpError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _add_hyper_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=2.0,
                   help="IBP sparsity prior (alpha)")
    p.add_argument("--sigma-a", type=float, default=1.0,
                   help="appearance prior std (sigma_A)")
    p.add_argument("--sigma", type=float, default=0.5,
                   help="observation noise std (sigma)")
    p.add_argument("--beta", type=float, default=1.0,
                   help="spatial MRF coupling (beta)")
    p.add_argument("--rho", type=float, default=0.1,
                   help="factorial MRF weight (rho)")
    p.add_argument("--k-extra", type=int, default=20,
                   help="unannotated/background factor slots (K_bg)")
    p.add_argument("--max-iters", type=int, default=1500)
    p.add_argument("--tol", type=float, default=1e-4,
                   help="convergence threshold on mean |delta nu|")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)


def _config(args, k_objects: int, k_attributes: int) -> ModelConfig:
    return ModelConfig(
        k_objects=k_objects, k_attributes=k_attributes, k_extra=args.k_extra,
        alpha=args.alpha, sigma_a=args.sigma_a, sigma=args.sigma,
        beta=args.beta, rho=args.rho, max_iters=args.max_iters,
        tol=args.tol, seed=args.seed,
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="wsibp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="sample a synthetic dataset with ground truth")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--num-bags", type=int, default=50)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--k-objects", type=int, default=3)
    p.add_argument("--k-attributes", type=int, default=3)
    p.add_argument("--label-density", type=float, default=0.5)
    p.add_argument("--no-grid", action="store_true",
                   help="omit the 4-neighbour grid adjacency")
    p.add_argument("--text", action="store_true",
                   help="write features as decimal text instead of binary")
    _add_hyper_flags(p)

    p = sub.add_parser("fit", help="train on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--posteriors-out", help="also write training-bag posteriors")
    p.add_argument("--trace-out", help="write per-iteration delta/time CSV")
    p.add_argument("--no-mrf", action="store_true",
                   help="disable the MRF code path entirely")
    _add_hyper_flags(p)

    p = sub.add_parser("infer", help="test-time inference with a trained model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="posteriors file")
    _add_hyper_flags(p)

    p = sub.add_parser("annotate", help="rank objects and attributes per bag")
    p.add_argument("--posteriors", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--top-objects", type=int, default=1)
    p.add_argument("--top-attrs", type=int, default=2)

    p = sub.add_parser("query", help="rank bags for an object(+attribute) conjunction")
    p.add_argument("--posteriors", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--object", required=True, help="object factor name or index")
    p.add_argument("--attrs", default="",
                   help="comma-separated attribute names or indices")
    p.add_argument("--out", required=True)

    p = sub.add_parser("segment", help="label instances with object factors")
    p.add_argument("--posteriors", help="posteriors from infer")
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--transductive", action="store_true",
                   help="refit appearance jointly over train and test bags")
    p.add_argument("--train-data", help="training dataset (transductive mode)")
    p.add_argument("--data", help="test dataset (transductive mode)")
    p.add_argument("--raster", help="CSV raster of pixel -> instance ids")
    p.add_argument("--raster-bag", help="bag id the raster applies to")
    _add_hyper_flags(p)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--task", required=True,
                   choices=("annotation", "query", "segmentation"))
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--t", default="2,5,8",
                   help="comma-separated t values for AP@t")
    return parser


def _factor_index(token: str, vocab: list[str]) -> int:
    token = token.strip()
    if token in vocab:
        return vocab.index(token)
    try:
        return int(token)
    except ValueError:
        raise WsibpError(f"unknown factor {token!r}") from None


def _cmd_synth(args) -> int:
    config = _config(args, args.k_objects, args.k_attributes)
    ds = generative.sample_dataset(
        config, args.num_bags, args.instances, args.feature_dim,
        grid_adjacency=not args.no_grid, labels=args.label_density,
        seed=args.seed,
    )
    vocab = config.default_vocab()
    io.save_dataset(args.out, ds.bags, vocab, config.k_objects,
                    config.k_attributes, config.k_extra, binary=not args.text)
    io.save_truth(os.path.join(args.out, "truth.json"), ds.true_z,
                  ds.true_pi, ds.true_a, [b.id for b in ds.bags])
    print(f"wrote {len(ds.bags)} bags to {args.out}")
    return 0


def _cmd_fit(args) -> int:
    loaded = io.load_dataset(args.data)
    args.k_extra = loaded.k_extra if args.k_extra == 20 else args.k_extra
    config = _config(args, loaded.k_objects, loaded.k_attributes)
    vocab = loaded.vocab
    if len(vocab) != config.k_max:
        vocab = (vocab[: loaded.k_objects + loaded.k_attributes]
                 + [f"bg{i}" for i in range(config.k_extra)])
    result = inference.fit(loaded.bags, config, vocab=vocab,
                           use_mrf=not args.no_mrf, threads=args.threads)
    io.save_model(args.model_out, result.model, result.correlation)
    if args.posteriors_out:
        io.save_posteriors(args.posteriors_out,
                           [(b.id, p) for b, p in zip(loaded.bags, result.posteriors)],
                           config.k_max)
    if args.trace_out:
        with open(args.trace_out, "w", encoding="ascii") as fh:
            fh.write("iteration,mean_abs_delta_nu,seconds\n")
            for i, (delta, secs) in enumerate(result.trace):
                fh.write(f"{i},{delta!r},{secs!r}\n")
    delta = result.trace[-1][0]
    print(f"fit: {len(result.trace)} iterations, final mean |delta nu| = {delta:.3g}")
    return 0


def _cmd_infer(args) -> int:
    loaded = io.load_dataset(args.data)
    model, corr = io.load_model(args.model)
    config = model.config
    posts = [(bag.id, inference.infer_test(bag, model, corr, config))
             for bag in loaded.bags]
    io.save_posteriors(args.out, posts, config.k_max)
    print(f"inferred posteriors for {len(posts)} bags -> {args.out}")
    return 0


def _cmd_annotate(args) -> int:
    model, _ = io.load_model(args.model)
    config = model.config
    posts = io.load_posteriors(args.posteriors)
    out = {"bags": []}
    for bag_id, post in posts:
        anns = tasks.free_annotation(post, config, args.top_objects, args.top_attrs)
        lo, hi = config.k_objects, config.k_annotated
        out["bags"].append({
            "bag": bag_id,
            "annotations": [
                {
                    "object": a.object,
                    "object_name": model.vocab[a.object],
                    "object_score": a.object_score,
                    "instance": a.object_instance,
                    "attributes": [[k, s] for k, s in a.attributes],
                    "attribute_scores": post.nu[a.object_instance, lo:hi].tolist(),
                }
                for a in anns
            ],
        })
    with open(args.out, "w", encoding="ascii") as fh:
        json.dump(out, fh, indent=1)
    print(f"annotated {len(posts)} bags -> {args.out}")
    return 0


def _cmd_query(args) -> int:
    model, _ = io.load_model(args.model)
    config = model.config
    posts = io.load_posteriors(args.posteriors)
    obj = _factor_index(args.object, model.vocab)
    attrs = [_factor_index(t, model.vocab) for t in args.attrs.split(",") if t.strip()]
    ranked = tasks.rank_query(posts, config, obj, attrs)
    payload = {"queries": [{
        "object": obj,
        "attributes": attrs,
        "ranking": [[bag_id, j, score] for bag_id, j, score in ranked],
    }]}
    with open(args.out, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=1)
    print(f"ranked {len(ranked)} bags -> {args.out}")
    return 0


def _cmd_segment(args) -> int:
    model, corr = io.load_model(args.model)
    config = model.config
    if args.transductive:
        if not (args.train_data and args.data):
            raise UsageError("segment --transductive needs --train-data and --data")
        train = io.load_dataset(args.train_data)
        test = io.load_dataset(args.data)
        _, test_posts, _ = inference.fit_transductive(
            train.bags, test.bags, config, vocab=model.vocab,
            threads=args.threads)
        posts = [(b.id, p) for b, p in zip(test.bags, test_posts)]
    else:
        if not args.posteriors:
            raise UsageError("segment needs --posteriors (or --transductive)")
        posts = io.load_posteriors(args.posteriors)
    os.makedirs(args.out_dir, exist_ok=True)
    raster = None
    if args.raster:
        with open(args.raster, encoding="ascii") as fh:
            raster = np.array([[int(v) for v in row] for row in csv.reader(fh)])
        if not args.raster_bag:
            raise UsageError("--raster requires --raster-bag")
    for bag_id, post in posts:
        seg = tasks.segment(post, config)
        out = os.path.join(args.out_dir, f"{bag_id}.csv")
        use_raster = raster if args.raster_bag == bag_id else None
        io.write_segmentation(out, seg, model.vocab, raster=use_raster)
    print(f"segmented {len(posts)} bags -> {args.out_dir}")
    return 0


def _eval_annotation(pred: dict, truth: dict, t_values: list[int]) -> None:
    truth_bags = {bid: metrics.BagTruth(object=int(v["object"]),
                                        attributes=set(v["attributes"]))
                  for bid, v in truth["bags"].items()}
    k_objects = int(truth.get("k_objects", 0))
    predictions = {}
    scores_rows, row_ids = [], []
    for entry in pred["bags"]:
        ann = entry["annotations"][0]
        attrs_ranked = [int(k) for k, _ in ann["attributes"]]
        predictions[entry["bag"]] = (int(ann["object"]), attrs_ranked)
        if "attribute_scores" in ann:
            scores_rows.append(ann["attribute_scores"])
            row_ids.append(entry["bag"])
    for t in t_values:
        score = metrics.ap_at_t(predictions, truth_bags, t)
        print(f"AP@{t}: {score:.4f}")
    if scores_rows:
        # attribute_scores vectors cover the attribute block, whose absolute
        # factor indices start at k_objects
        n_attrs = len(scores_rows[0])
        rel = np.zeros((len(scores_rows), n_attrs), dtype=bool)
        for r, bid in enumerate(row_ids):
            for a in truth_bags[bid].attributes:
                if 0 <= a - k_objects < n_attrs:
                    rel[r, a - k_objects] = True
        try:
            mean_ap, skipped = metrics.map_pr(np.array(scores_rows), rel)
            print(f"mAP: {mean_ap:.4f}")
            if skipped:
                print(f"mAP skipped attributes with no positives: {skipped}")
        except WsibpError as exc:
            print(f"mAP: skipped ({exc})")


def _eval_query(pred: dict, truth: dict) -> None:
    rankings = {}
    for entry in pred["queries"]:
        key = (entry["object"], tuple(entry["attributes"]))
        rankings[key] = [row[0] for row in entry["ranking"]]
    relevance = {}
    for entry in truth["queries"]:
        key = (entry["object"], tuple(entry["attributes"]))
        relevance[key] = set(entry["relevant"])
    mar, skipped = metrics.mar_query(rankings, relevance)
    print(f"MAR: {mar:.4f}")
    if skipped:
        print(f"skipped queries with empty relevance: {len(skipped)}")


def _eval_segmentation(pred_dir: str, truth: dict) -> None:
    pred_maps, truth_maps, pixels = {}, {}, {}
    for bid, entry in truth["bags"].items():
        truth_maps[bid] = np.array(entry["labels"], dtype=np.int64)
        if "pixels" in entry:
            pixels[bid] = np.array(entry["pixels"], dtype=np.float64)
        path = os.path.join(pred_dir, f"{bid}.csv")
        with open(path, encoding="ascii") as fh:
            rows = list(csv.DictReader(fh))
        pred_maps[bid] = np.array([int(r["label_index"]) for r in rows],
                                  dtype=np.int64)
    scores = metrics.segmentation_metrics(
        pred_maps, truth_maps, pixels if pixels else None)
    print(f"mean IOU: {scores.mean_iou:.4f}")
    print(f"per-pixel accuracy: {scores.per_pixel_accuracy:.4f}")
    print(f"per-class accuracy: {scores.per_class_accuracy:.4f}")
    for c, v in scores.class_iou.items():
        print(f"class {c} IOU: {v:.4f}")


def _cmd_eval(args) -> int:
    with open(args.truth, encoding="ascii") as fh:
        truth = json.load(fh)
    if args.task == "segmentation":
        _eval_segmentation(args.pred, truth)
        return 0
    with open(args.pred, encoding="ascii") as fh:
        pred = json.load(fh)
    if args.task == "annotation":
        t_values = [int(v) for v in args.t.split(",") if v.strip()]
        _eval_annotation(pred, truth, t_values)
    else:
        _eval_query(pred, truth)
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "fit": _cmd_fit,
    "infer": _cmd_infer,
    "annotate": _cmd_annotate,
    "query": _cmd_query,
    "segment": _cmd_segment,
    "eval": _cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (WsibpError, OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
