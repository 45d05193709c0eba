"""Command-line interface: ``prepare``, ``train``, ``evaluate``, ``recommend``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from .baselines import PopularityScorer, UserKnnScorer
from .dataset import (
    binarize,
    build_dataset,
    parse_ratings,
    read_manifest,
    split_train_test,
    write_manifest,
)
from .evaluate import evaluate, model_scorer, rank_user
from .trainer import (
    LOG_HEADER,
    ConfigError,
    TrainConfig,
    TrainingError,
    derive_seed,
    load_checkpoint,
    save_checkpoint,
    train,
)

_log = logging.getLogger("metrec")


class CliError(Exception):
    pass


def _open(path, mode="r"):
    try:
        return open(path, mode, encoding=None if "b" in mode else "utf-8")
    except OSError as exc:
        raise CliError(f"cannot open {path}: {exc.strerror}") from None


def _read_bytes(path) -> bytes:
    with _open(path, "rb") as f:
        return f.read()


def _load_data(args):
    with _open(args.ratings) as f:
        interactions = parse_ratings(f, args.format)
    ds = build_dataset(interactions)
    with _open(args.manifest) as f:
        split = read_manifest(ds, f)
    return ds, split


def _load_model(args, ds):
    model = load_checkpoint(_read_bytes(args.checkpoint))
    spec = model.feature_spec
    if (spec.n1, spec.n2) != (ds.n_users, ds.n_items):
        raise CliError(
            f"checkpoint shape ({spec.n1} users, {spec.n2} items) does not match "
            f"dataset ({ds.n_users} users, {ds.n_items} items)"
        )
    return model


def cmd_prepare(args) -> int:
    with _open(args.ratings) as f:
        interactions = parse_ratings(f, args.format)
    ds = build_dataset(interactions)
    positives = binarize(ds, args.threshold)
    split = split_train_test(
        positives, args.ratio, derive_seed(args.seed, "split"), ds.n_items, args.threshold
    )
    with _open(args.manifest, "w") as out:
        rows = write_manifest(ds, split, out)
    n_test = sum(t.size for t in split.test)
    print(f"users\t{ds.n_users}")
    print(f"items\t{ds.n_items}")
    print(f"interactions\t{len(ds.interactions)}")
    print(f"positives\t{rows}")
    print(f"train\t{rows - n_test}")
    print(f"test\t{n_test}")
    print(f"eval_users\t{len(split.eval_users())}")
    return 0


_CONFIG_FLAGS = {
    "seed": int,
    "epochs": int,
    "steps_per_epoch": int,
    "batch_size": int,
    "learning_rate": float,
    "optimizer": str,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_eps": float,
    "margin": float,
    "embedding_dim": int,
    "user_hidden": int,
    "item_hidden": int,
    "activation": str,
    "threshold": float,
    "train_ratio": float,
    "clip_radius": float,
}


def resolve_config(config_path, overrides: dict) -> TrainConfig:
    """Defaults, then config-file keys, then command-line flags."""
    data = {}
    if config_path:
        with _open(config_path) as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as exc:
                raise CliError(f"config file {config_path}: {exc}") from None
        if not isinstance(data, dict):
            raise CliError("config file must hold a flat JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(data).validate()


def cmd_train(args) -> int:
    overrides = {k: getattr(args, k) for k in _CONFIG_FLAGS}
    config = resolve_config(args.config, overrides)
    print(json.dumps(config.to_dict(), sort_keys=True))
    ds, split = _load_data(args)
    log_path = args.log or str(args.checkpoint) + ".log.csv"
    with _open(log_path, "w") as log:
        log.write(LOG_HEADER + "\n")

        def on_epoch(epoch, loss, active, secs):
            log.write(f"{epoch},{loss!r},{active!r},{secs:.3f}\n")
            log.flush()

        try:
            model, _ = train(config, split, ds.n_users, on_epoch=on_epoch)
        except TrainingError as exc:
            raise CliError(f"training failed: {exc}") from None
    with _open(args.checkpoint, "wb") as f:
        save_checkpoint(model, f)
    return 0


def _digest(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()


def cmd_evaluate(args) -> int:
    ds, split = _load_data(args)
    settings = {
        "scorer": args.scorer,
        "ks": sorted(args.k),
        "manifest": _digest(_read_bytes(args.manifest)),
    }
    if args.scorer == "model":
        if not args.checkpoint:
            raise CliError("--checkpoint is required for --scorer model")
        settings["checkpoint"] = _digest(_read_bytes(args.checkpoint))
        scorer = model_scorer(_load_model(args, ds))
    elif args.scorer == "popularity":
        scorer = PopularityScorer(split)
    else:
        settings["k_neighbors"] = args.k_neighbors
        scorer = UserKnnScorer(split, args.k_neighbors)
    config_hash = _digest(json.dumps(settings, sort_keys=True).encode())[:16]
    report = evaluate(scorer, split, args.k, config_hash, args.seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"metrics_{args.scorer}"
    with _open(out_dir / f"{stem}.csv", "w") as f:
        report.write_csv(f)
    with _open(out_dir / f"{stem}.json", "w") as f:
        f.write(report.to_json())
    report.write_csv(sys.stdout)
    return 0


def cmd_recommend(args) -> int:
    ds, split = _load_data(args)
    if args.user not in ds.user_index:
        raise CliError(f"unknown user id {args.user}")
    if args.k < 1:
        raise CliError("--k must be >= 1")
    scorer = model_scorer(_load_model(args, ds))
    ranked = rank_user(scorer, split, ds.user_index[args.user], args.k)
    item_ids = ds.item_ids
    for rank, (item, dist) in enumerate(zip(ranked.items.tolist(), ranked.scores.tolist()), 1):
        print(f"{rank}\t{item_ids[item]}\t{dist!r}")
    return 0


def _data_args(p, manifest=True):
    p.add_argument("--ratings", required=True, help="ratings file")
    p.add_argument("--format", choices=["ml1m", "csv"], default="ml1m")
    if manifest:
        p.add_argument("--manifest", required=True, help="split manifest")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metrec", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="binarize ratings and write a train/test manifest")
    _data_args(p, manifest=False)
    p.add_argument("--manifest", required=True, help="output manifest path")
    p.add_argument("--threshold", type=float, default=4.0)
    p.add_argument("--ratio", type=float, default=0.8, help="train fraction")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train the two-tower model")
    _data_args(p)
    p.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p.add_argument("--config", help="JSON file with TrainConfig keys")
    p.add_argument("--log", help="per-epoch CSV log (default: <checkpoint>.log.csv)")
    for key, typ in _CONFIG_FLAGS.items():
        flag = "--" + key.replace("_", "-")
        if key in ("user_hidden", "item_hidden"):
            p.add_argument(flag, type=int, nargs="*", dest=key, default=None)
        else:
            p.add_argument(flag, type=typ, dest=key, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="Precision@K / Recall@K report")
    _data_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--scorer", choices=["model", "popularity", "knn"], default="model")
    p.add_argument("--k", type=int, nargs="+", default=[5, 10, 20])
    p.add_argument("--k-neighbors", type=int, default=50)
    p.add_argument("--seed", type=int, default=None, help="recorded in the report")
    p.add_argument("--out-dir", default=".", help="report directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("recommend", help="top-k items for one user")
    _data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user", type=int, required=True, help="external user id")
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_recommend)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if getattr(args, "k", None) is not None and isinstance(args.k, list):
        if args.k != sorted(set(args.k)):
            print("error: --k list must be ascending without repeats", file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except (CliError, ConfigError, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
