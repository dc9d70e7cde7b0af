"""Command-line front end: dataset generation/ingestion, training,
evaluation, tree decoding and export, the distortion and substructure
protocols, the space-comparison and constraint experiments, and the
gradient check suite.

Exit codes: 0 success, 64 usage error, 65 bad configuration, 70 runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, ball, cluster, data, evaluation, geometry, model as model_mod, optim
from . import tape as tp

EX_USAGE = 64
EX_CONFIG = 65
EX_RUNTIME = 70

VERBS = (
    "gen",
    "ingest",
    "train",
    "eval",
    "cluster",
    "distortion",
    "mine",
    "compare-spaces",
    "constraint-exp",
    "gradcheck",
)


class ConfigError(ValueError):
    pass


# key -> (parser, default); flat key=value config file
CONFIG_KEYS = {
    "space": (str, "hyperbolic"),
    "curvature": (float, 2.0),
    "latent_dim": (int, 256),
    "lr": (float, 0.001),
    "epochs": (int, 100),
    "batch_size": (int, 32),
    "tau": (float, 0.1),
    "lambda": (float, 0.5),
    "gamma": (float, 0.5),
    "schedule.mode": (str, "joint"),
    "schedule.k": (int, 5),
    "schedule.switch_epoch": (int, 100),
    "seed": (int, 0),
    "similarity_source": (str, "logits"),
    "literal_sign": (lambda s: s.lower() in ("1", "true", "yes"), False),
    "lca_tol": (float, 1e-8),
    "triplets_per_item": (int, 50),
    "trials_per_class": (int, 20),
    "feature_dim": (int, 50),
    "noise_sigma": (float, 0.25),
    "level_scale_group": (float, 0.5),
    "level_scale_class": (float, 0.25),
    "classes_per_group": (int, 6),
    "protocol": (str, "holdout"),
    "runs": (int, 100),
    "threshold": (float, 0.5),
    "mu": (float, 0.01),
    "top_n": (str, "1,5"),
}


def parse_config(text, source="<config>"):
    """Parse `key = value` lines (# comments, blank lines allowed)."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        parser, _ = CONFIG_KEYS[key]
        try:
            out[key] = parser(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {value!r}")
    return out


def load_config(args):
    cfg = {k: default for k, (_, default) in CONFIG_KEYS.items()}
    if getattr(args, "config", None):
        try:
            text = open(args.config).read()
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}")
        cfg.update(parse_config(text, source=args.config))
    for item in getattr(args, "set", None) or []:
        cfg.update(parse_config(item, source="--set"))
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def model_config(cfg, input_dim, num_classes, space=None):
    try:
        return model_mod.ModelConfig(
            input_dim=input_dim,
            num_classes=num_classes,
            latent_dim=cfg["latent_dim"],
            curvature=cfg["curvature"],
            space=space or cfg["space"],
        )
    except ValueError as e:
        raise ConfigError(str(e))


def sim_config(cfg):
    try:
        return cluster.SimilarityConfig(
            tau=cfg["tau"],
            similarity_source=cfg["similarity_source"],
            literal_sign=cfg["literal_sign"],
            lca_tol=cfg["lca_tol"],
        )
    except ValueError as e:
        raise ConfigError(str(e))


def schedule_from(cfg):
    try:
        return optim.Schedule(
            mode=cfg["schedule.mode"],
            switch_epoch=cfg["schedule.switch_epoch"],
            k_steps=cfg["schedule.k"],
            weights=optim.LossWeights(cfg["lambda"], cfg["gamma"]),
        )
    except ValueError as e:
        raise ConfigError(str(e))


def write_json(path, doc):
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, indent=2)
        f.write("\n")


def out_path(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def similarity_points(mdl, features, cfg):
    """The decoded model's clustering inputs, as geometry points."""
    scfg = sim_config(cfg)
    config = mdl.config
    latent = tp.value(model_mod.forward_latent(config, mdl.weight, mdl.bias, features))
    logits = tp.value(mdl.logits(features))
    source = {"logits": logits, "latent": latent, "input": features}[
        scfg.similarity_source
    ]
    geom = geometry.of(config.space, config.curvature)
    if config.space == "hyperbolic" and scfg.similarity_source != "latent":
        source = tp.value(ball.exp0(source, config.curvature))
    return source, geom


def decode_dataset_tree(mdl, dataset, cfg):
    points, geom = similarity_points(mdl, dataset.features, cfg)
    labels = [dataset.classes[i] for i in dataset.labels]
    return cluster.decode_tree(points, labels, geom)


def make_trainer(cfg, num_classes, space=None):
    schedule = schedule_from(cfg)

    def trainer(ds, seed=None):
        config = model_config(cfg, ds.features.shape[1], num_classes, space=space)
        state = optim.train(
            ds,
            config,
            schedule,
            epochs=cfg["epochs"],
            seed=cfg["seed"] if seed is None else seed,
            lr=cfg["lr"],
            batch_size=cfg["batch_size"],
            sim_cfg=sim_config(cfg),
            triplets_per_item=cfg["triplets_per_item"],
        )
        return state

    return trainer


# -- commands -----------------------------------------------------------


def cmd_gen(args, cfg):
    try:
        tax = data.builtin_taxonomy(args.preset, classes_per_group=cfg["classes_per_group"]) \
            if args.preset == "vowel_mouth4" else data.builtin_taxonomy(args.preset)
        spec = data.SyntheticSpec(
            taxonomy=tax,
            trials_per_class=cfg["trials_per_class"],
            feature_dim=cfg["feature_dim"],
            level_scales=(cfg["level_scale_group"], cfg["level_scale_class"]),
            noise_sigma=cfg["noise_sigma"],
            seed=cfg["seed"],
        )
    except ValueError as e:
        raise ConfigError(str(e))
    ds = data.generate_synthetic(spec)
    path = out_path(args, "dataset.json")
    data.save_dataset(ds, path)
    print(f"wrote {path}: {ds.n_trials} trials, {len(ds.classes)} classes, seed {cfg['seed']}")
    return 0


def cmd_ingest(args, cfg):
    labels = None
    if args.labels:
        rows = data._read_csv(args.labels, ("trial", "label"))
        labels = {r[0].strip(): r[1].strip() for r in rows}
    ds = data.ingest_spike_recording(args.spikes, args.markers, labels=labels)
    path = out_path(args, "dataset.json")
    data.save_dataset(ds, path)
    print(f"wrote {path}: {ds.n_trials} trials, {ds.n_units} units x {ds.n_bins} bins")
    return 0


def cmd_train(args, cfg):
    ds = data.load_dataset(args.data)
    state = make_trainer(cfg, len(ds.classes))(ds)
    ckpt = out_path(args, "model.json")
    model_mod.save_checkpoint(state.model, ckpt)
    write_json(
        out_path(args, "history.json"),
        {"seed": cfg["seed"], "lr": state.learning_rate, "epochs": state.epoch,
         "loss_history": state.loss_history},
    )
    print(f"wrote {ckpt}: final loss {state.loss_history[-1]:.6f}, seed {cfg['seed']}")
    return 0


def _loo_metrics(ds, cfg, space=None):
    trainer = make_trainer(cfg, len(ds.classes), space=space)
    return evaluation.evaluate(
        ds, protocol="leave_one_out", trainer=lambda sub: trainer(sub).model
    )


def cmd_eval(args, cfg):
    ds = data.load_dataset(args.data)
    if cfg["protocol"] == "leave_one_out":
        metrics = _loo_metrics(ds, cfg)
        mdl = make_trainer(cfg, len(ds.classes))(ds).model
    else:
        mdl = model_mod.load_checkpoint(args.model)
        metrics = evaluation.evaluate(ds, protocol="holdout", model=mdl)
    n_values = [int(v) for v in str(cfg["top_n"]).split(",") if v]
    top_n = evaluation.top_n_accuracy(mdl, ds, n_values)
    evaluation.metrics_to_json(
        metrics,
        out_path(args, "metrics.json"),
        extra={"seed": cfg["seed"], "top_n": {str(k): v for k, v in top_n.items()}},
    )
    evaluation.confusion_to_csv(metrics.confusion, out_path(args, "confusion.csv"))
    print(f"accuracy {metrics.accuracy:.4f} ({metrics.protocol}); wrote metrics.json")
    return 0


def cmd_cluster(args, cfg):
    ds = data.load_dataset(args.data)
    mdl = model_mod.load_checkpoint(args.model)
    tree = decode_dataset_tree(mdl, ds, cfg)
    cluster.dump_tree_json(tree, out_path(args, "tree.json"))
    with open(out_path(args, "tree.newick"), "w") as f:
        f.write(cluster.tree_to_newick(tree) + "\n")
    print(f"wrote tree.json / tree.newick ({len(tree.leaves())} leaves)")
    return 0


def cmd_distortion(args, cfg):
    ds = data.load_dataset(args.data)
    if args.tree:
        with open(args.tree) as f:
            tree = cluster.tree_from_json(json.load(f))
    else:
        mdl = model_mod.load_checkpoint(args.model)
        tree = decode_dataset_tree(mdl, ds, cfg)
    tax = data.builtin_taxonomy(args.preset) if args.preset else None
    classes = tax.group_of if tax else {c: c.rstrip("0123456789") for c in tree.leaves()}
    value, pct = evaluation.distortion_vs_random(
        tree, classes, runs=cfg["runs"], seed=cfg["seed"]
    )
    write_json(
        out_path(args, "distortion.json"),
        {"distortion": value, "random_percentile": pct, "runs": cfg["runs"],
         "seed": cfg["seed"]},
    )
    print(f"distortion {value:.4f}, percentile {pct:.1f} of {cfg['runs']} random trees")
    return 0


def cmd_mine(args, cfg):
    datasets = [data.load_dataset(p) for p in args.data]

    def tree_fn(ds, seed):
        state = make_trainer(cfg, len(ds.classes))(ds, seed=seed)
        return decode_dataset_tree(state.model, ds, cfg)

    out = evaluation.mine_substructures(
        datasets, args.runs, tree_fn, threshold=cfg["threshold"], seed=cfg["seed"]
    )
    write_json(
        out_path(args, "substructures.json"),
        {
            "runs": out.runs,
            "threshold": cfg["threshold"],
            "seed": cfg["seed"],
            "counts": {"|".join(sorted(p)): c for p, c in sorted(
                out.counts.items(), key=lambda kv: sorted(kv[0]))},
            "consensus": [sorted(g) for g in out.consensus],
            "consensus_newick": [
                cluster.tree_to_newick(_group_tree(g)) for g in out.consensus
            ],
        },
    )
    print(f"{len(out.consensus)} consensus groups from {out.runs} runs")
    return 0


def _group_tree(group):
    members = sorted(group)
    tree = cluster.ClusterTree.leaf(members[0])
    for m in members[1:]:
        tree = cluster.ClusterTree.merge(tree, cluster.ClusterTree.leaf(m))
    return tree


def _split(ds, cfg, holdout_fraction=0.2):
    rng = np.random.default_rng(cfg["seed"])
    order = rng.permutation(ds.n_trials)
    cut = max(1, int(holdout_fraction * ds.n_trials))
    test, train_idx = np.sort(order[:cut]), np.sort(order[cut:])

    def subset(idx):
        return data.Dataset(
            ds.classes, ds.features[idx], ds.labels[idx], ds.n_units, ds.n_bins, ds.dtype
        )

    return subset(train_idx), subset(test)


def cmd_compare_spaces(args, cfg):
    ds = data.load_dataset(args.data)
    train_ds, test_ds = _split(ds, cfg)
    results = {}
    for space in ("hyperbolic", "euclidean"):
        state = make_trainer(cfg, len(ds.classes), space=space)(train_ds)
        metrics = evaluation.evaluate(test_ds, protocol="holdout", model=state.model)
        results[space] = {"accuracy": metrics.accuracy, "final_loss": state.loss_history[-1]}
    write_json(
        out_path(args, "compare.json"),
        {"seed": cfg["seed"], "holdout_trials": test_ds.n_trials, "results": results},
    )
    print(
        "accuracy hyperbolic {h:.4f} vs euclidean {e:.4f} on the same holdout".format(
            h=results["hyperbolic"]["accuracy"], e=results["euclidean"]["accuracy"]
        )
    )
    return 0


def cmd_constraint_exp(args, cfg):
    ds = data.load_dataset(args.data)
    train_ds, test_ds = _split(ds, cfg)
    tax = data.builtin_taxonomy(args.preset) if args.preset else None
    config = model_config(cfg, ds.features.shape[1], len(ds.classes))
    common = dict(epochs=cfg["epochs"], seed=cfg["seed"], lr=cfg["lr"],
                  batch_size=cfg["batch_size"], sim_cfg=sim_config(cfg), mu=cfg["mu"])

    def accuracy(state):
        return evaluation.evaluate(test_ds, protocol="holdout", model=state.model).accuracy

    results = {}
    none_state = optim.train_with_constraint(train_ds, config, {}, **{**common, "mu": 0.0})
    results["no_constraint"] = accuracy(none_state)
    if tax is not None:
        art = optim.train_with_constraint(train_ds, config, tax, **common)
        results["articulation"] = accuracy(art)

    def tree_fn(d, seed):
        state = make_trainer(cfg, len(ds.classes))(d, seed=seed)
        return decode_dataset_tree(state.model, d, cfg)

    mined = evaluation.mine_substructures(
        [train_ds], args.runs, tree_fn, threshold=cfg["threshold"], seed=cfg["seed"]
    )
    sub_state = optim.train_with_constraint(
        train_ds, config, list(mined.consensus), **common
    )
    results["substructure"] = accuracy(sub_state)
    write_json(
        out_path(args, "constraint.json"),
        {"seed": cfg["seed"], "results": results,
         "consensus": [sorted(g) for g in mined.consensus]},
    )
    print("; ".join(f"{k} {v:.4f}" for k, v in results.items()))
    return 0


def cmd_gradcheck(args, cfg):
    rng = np.random.default_rng(cfg["seed"])
    worst = 0.0
    checks = [
        ("tanh", lambda ps: tp.vsum(tp.tanh(ps[0]))),
        ("atanh", lambda ps: tp.vsum(tp.atanh(ps[0] * 0.2))),
        ("asinh", lambda ps: tp.vsum(tp.asinh(ps[0]))),
        ("softmax", lambda ps: tp.vsum(tp.softmax(ps[0], axis=-1) * np.arange(8.0))),
        ("exp0", lambda ps: tp.vsum(ball.exp0(ps[0], 1.0))),
        ("log0", lambda ps: tp.vsum(ball.log0(tp.tanh(ps[0]) * 0.2, 1.0))),
        ("mobius_add", lambda ps: tp.vsum(
            ball.mobius_add(tp.tanh(ps[0]) * 0.25, tp.tanh(ps[0] * 0.5) * 0.25, 1.0))),
        ("dist", lambda ps: tp.vsum(ball.dist(
            tp.tanh(ps[0]) * 0.3, tp.tanh(ps[0] * 0.7) * 0.3, 2.0))),
    ]
    for name, fn in checks:
        err = max(
            tp.check_gradient(fn, [rng.uniform(-1, 1, size=8)]) for _ in range(20)
        )
        print(f"  {name}: max rel. error {err:.2e}")
        worst = max(worst, err)
    config = model_mod.ModelConfig(input_dim=4, num_classes=3, latent_dim=5)
    mdl = model_mod.Model.initialize(config, seed=cfg["seed"])
    x = rng.uniform(-1, 1, (5, 4))
    y = rng.integers(0, 3, 5)
    e2e = tp.check_gradient(
        lambda ps: model_mod.cross_entropy(model_mod.forward_logits(config, *ps, x), y),
        list(mdl.params),
    )
    print(f"  end-to-end classifier: max rel. error {e2e:.2e}")
    print(f"max rel. error {max(worst, e2e):.2e}")
    if worst >= 1e-4 or e2e >= 1e-3:
        raise RuntimeError("gradient check failed")
    return 0


# -- argument parsing ---------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hyrep",
        description="hyperbolic representation pipeline for binned spike data",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="verb")

    def common(p, preset=False):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        if preset:
            p.add_argument("--preset", choices=("consonant21", "vowel_mouth4"))

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p, preset=True)
    p.set_defaults(fn=cmd_gen, need_preset=True)

    p = sub.add_parser("ingest", help="spike + marker CSV -> dataset JSON")
    common(p)
    p.add_argument("--spikes", required=True)
    p.add_argument("--markers", required=True)
    p.add_argument("--labels", help="optional trial,label CSV")
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("train", help="train a model on a dataset")
    common(p)
    p.add_argument("--data", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="accuracy / top-N / confusion")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", help="checkpoint (holdout protocol)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("cluster", help="decode and export the merge tree")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.set_defaults(fn=cmd_cluster)

    p = sub.add_parser("distortion", help="tree distortion vs random trees")
    common(p, preset=True)
    p.add_argument("--data", required=True)
    p.add_argument("--model")
    p.add_argument("--tree", help="tree JSON instead of a model")
    p.set_defaults(fn=cmd_distortion)

    p = sub.add_parser("mine", help="mine common substructures across runs")
    common(p)
    p.add_argument("--data", required=True, nargs="+")
    p.add_argument("--runs", type=int, default=20)
    p.set_defaults(fn=cmd_mine)

    p = sub.add_parser("compare-spaces", help="hyperbolic vs euclidean, same folds")
    common(p)
    p.add_argument("--data", required=True)
    p.set_defaults(fn=cmd_compare_spaces)

    p = sub.add_parser("constraint-exp", help="constraint comparison protocol")
    common(p, preset=True)
    p.add_argument("--data", required=True)
    p.add_argument("--runs", type=int, default=10)
    p.set_defaults(fn=cmd_constraint_exp)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    common(p)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def _apply_thread_cap():
    raw = os.environ.get("HYREP_THREADS")
    if not raw:
        return
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"HYREP_THREADS must be an integer, got {raw!r}")
    if n < 0:
        raise ConfigError("HYREP_THREADS must be >= 0")
    if n > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if argv and argv[0] not in VERBS and not argv[0].startswith("-"):
        print(f"unknown verb: {argv[0]!r}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EX_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else EX_USAGE
    if getattr(args, "verb", None) is None:
        parser.print_usage(sys.stderr)
        return EX_USAGE
    if getattr(args, "need_preset", False) and not args.preset:
        print("gen requires --preset", file=sys.stderr)
        return EX_USAGE
    try:
        _apply_thread_cap()
        cfg = load_config(args)
        return args.fn(args, cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EX_CONFIG
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return EX_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
