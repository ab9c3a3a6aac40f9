"""``nhgcn`` command line: metrics, train, multiseed, synth, gradcheck, bins."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import config as C
from . import data_io, plotting
from .autodiff import grad_check
from .graph import build_graph, khop_index
from .metrics import (
    MaskPair,
    bin_accuracy,
    make_masks,
    nh_values,
    node_homophily,
    normalize_metric,
)
from .model import (
    ConfigError,
    GraphOperators,
    ModelConfig,
    forward,
    init_params,
    load_checkpoint,
    loss_and_grad,
    param_count,
    reported_param_formula,
    save_checkpoint,
    train_targets,
)
from .training import TrainingDiverged, make_split, multi_seed, train_run

log = logging.getLogger("nhgcn")

OUTPUT_ROOT_ENV = "NHGCN_OUTPUT_ROOT"
GRADCHECK_TOL = 1e-4


class CliError(Exception):
    pass


def _out_dir(args, cfg: dict, default_name: str) -> Path:
    out = getattr(args, "out", None) or cfg.get("out")
    if not out:
        out = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / default_name
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(paths: Sequence[Path]) -> None:
    missing = [str(p) for p in paths if p is None or not Path(p).is_file()]
    if missing:
        raise CliError(f"expected outputs were not written: {missing}")


def _overrides(args) -> dict[str, Any]:
    o: dict[str, Any] = {}
    for key, attr in (("arch", "arch"), ("hop", "hop"), ("inv_threshold", "inv_threshold"),
                      ("combiner", "combiner"), ("seed", "seed"), ("dataset", "dataset"),
                      ("out", "out"), ("activation", "activation"), ("hidden", "hidden"),
                      ("max_epochs", "epochs"), ("patience", "patience"), ("lr", "lr"),
                      ("weight_decay", "weight_decay"), ("workers", "workers")):
        v = getattr(args, attr, None)
        if v is not None:
            o[key] = v
    if getattr(args, "self_loop", None) is not None:
        o["self_loop"] = C.parse_value("self_loop", args.self_loop)
    if getattr(args, "seeds", None):
        o["seeds"] = C.parse_value("seeds", " ".join(args.seeds))
    if getattr(args, "set", None):
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            o[k.strip()] = C.parse_value(k.strip(), v)
    return o


def _resolve(args) -> tuple[dict, data_io.Dataset]:
    file_values = C.read_config_file(args.config) if getattr(args, "config", None) else {}
    over = _overrides(args)
    dataset_path = over.get("dataset") or file_values.get("dataset")
    if not dataset_path:
        raise ConfigError("no dataset given (use --dataset or dataset= in the config file)")
    ds = data_io.load_dataset(dataset_path)
    cfg = C.merge(file_values, over, ds.name)
    cfg["dataset"] = str(dataset_path)
    return cfg, ds


# -- metrics -------------------------------------------------------------------


def cmd_metrics(args) -> int:
    ds = data_io.load_dataset(args.dataset)
    out = _out_dir(args, {}, f"metrics-{ds.name}")
    h_node, h_graph = node_homophily(ds.graph, ds.labels)
    hops = sorted({1, 2, args.hop})
    rows = []
    per_hop = {}
    for k in hops:
        v = nh_values(khop_index(ds.graph, k), ds.labels, ds.n_classes)
        vn = normalize_metric(v)
        per_hop[k] = (v, vn)
        rows.append((f"NH^{k}", float(v.values.mean()), float(vn.values.mean())))
    rows.insert(0, ("H^node", h_graph, h_graph))

    v, vn = per_hop[args.hop]
    dump = data_io.export_metric_dump(out / "metrics.csv", v.values, vn.values, h_node)
    table = data_io.write_csv(out / "summary.csv", ("metric", "raw", "normalized"), rows)
    summary = data_io.export_summary(out / "summary.json", {
        "dataset": ds.name, "n": ds.n, "edges": ds.graph.num_edges, "classes": ds.n_classes,
        "hop": args.hop, "metrics": {name: {"raw": r, "normalized": z} for name, r, z in rows},
    })
    written = [dump, table, summary]
    if args.plots:
        written.append(plotting.metric_distributions(
            out / "metrics.png",
            {f"NH^{args.hop}" + (" (normalized)" if args.normalize else ""): (vn if args.normalize else v).values,
             "node homophily": h_node},
            title=ds.name,
        ))
    _require(written)

    col = 2 if args.normalize else 1
    print(f"{ds.name}: n={ds.n} edges={ds.graph.num_edges} C={ds.n_classes}")
    for r in rows:
        print(f"  {r[0]:<8} {r[col]:.3f}")
    return 0


# -- train / multiseed ---------------------------------------------------------


def _write_run(out: Path, res, ds, mcfg: ModelConfig, cfg: dict, plots: bool) -> list[Path]:
    written = [
        data_io.export_epoch_log(out / "epochs.csv", res.epochs),
        data_io.export_alpha_trace(out / "alpha.csv", res.epochs),
        C.write_config_file(out / "config.txt", cfg),
    ]
    extra: dict[str, Any] = {
        "seed": res.seed, "split_ratios": list(cfg["split_ratios"]), "dataset": ds.name,
        "best_epoch": res.best_epoch,
    }
    if res.best_masks is not None:
        extra["mask_low"] = res.best_masks.low.astype(np.int8)
    written.append(save_checkpoint(out / "checkpoint.npz", res.best_params, mcfg, extra))
    written.append(data_io.export_summary(out / "summary.json", {
        "config": cfg | {"split_ratios": list(cfg["split_ratios"]), "seeds": list(cfg["seeds"])},
        "model": mcfg.to_dict(),
        "dataset": ds.name,
        "seed": res.seed,
        "epochs_run": len(res.epochs),
        "best_epoch": res.best_epoch,
        "best_val_acc": res.best_val,
        "test_acc": res.test_acc,
        "test_acc_refreshed_masks": res.test_acc_final_masks,
        "nh_updates": len(res.nh_history) - 1,
        "param_count": param_count(mcfg),
    }))
    if plots:
        written.append(plotting.training_curves(out / "curves.png", res.epochs))
        fig = plotting.alpha_trace(out / "alpha.png", res.epochs)
        if fig is not None:
            written.append(fig)
    return written


def _train_one(ds, cfg: dict, seed: int, out: Path, args) -> Any:
    mcfg = C.model_config(cfg, ds.n_features, ds.n_classes)
    tcfg = C.train_config(cfg, seed)
    split = make_split(ds.n, seed, tcfg.split_ratios)
    res = train_run(ds.graph, ds.X, ds.labels, split, mcfg, tcfg,
                    truth_for_masks=ds.labels if getattr(args, "mask_acc", False) else None)
    _require(_write_run(out, res, ds, mcfg, {**cfg, "seed": seed}, cfg["plots"]))
    return res, mcfg


def cmd_train(args) -> int:
    cfg, ds = _resolve(args)
    if args.no_plots:
        cfg["plots"] = False
    out = _out_dir(args, cfg, f"train-{ds.name}-{cfg['arch']}")
    cfg["out"] = str(out)
    res, mcfg = _train_one(ds, cfg, cfg["seed"], out, args)
    print(f"{ds.name} {mcfg.arch} seed={res.seed}: best epoch {res.best_epoch}/{len(res.epochs)}, "
          f"val {res.best_val:.4f}, test {res.test_acc:.4f}")
    if args.time:
        print(f"time: {res.epoch_seconds * 1e3:.2f}ms per epoch / {res.total_seconds:.2f}s total")
    return 0


def cmd_multiseed(args) -> int:
    cfg, ds = _resolve(args)
    if args.no_plots:
        cfg["plots"] = False
    out = _out_dir(args, cfg, f"multiseed-{ds.name}-{cfg['arch']}")
    cfg["out"] = str(out)
    seeds = list(cfg["seeds"])
    if len(seeds) < 2:
        raise ConfigError("multiseed needs at least two seeds")
    mcfg = C.model_config(cfg, ds.n_features, ds.n_classes)
    result = multi_seed(ds.graph, ds.X, ds.labels, mcfg, C.train_config(cfg), seeds,
                        workers=cfg["workers"], keep_runs=True)
    written = [C.write_config_file(out / "config.txt", cfg)]
    for seed, res in result.runs.items():
        written += _write_run(out / f"seed_{seed}", res, ds, mcfg, {**cfg, "seed": seed}, cfg["plots"])
    rows = [(s, result.accuracies[s]) for s in seeds if s in result.accuracies]
    written.append(data_io.write_csv(out / "seeds.csv", ("seed", "test_acc"), rows))
    written.append(data_io.write_csv(out / "multiseed.csv", ("dataset", "arch", "runs", "mean", "std"),
                                     [(ds.name, mcfg.arch, len(rows), result.mean, result.std)]))
    written.append(data_io.export_summary(out / "multiseed.json", {
        "dataset": ds.name, "arch": mcfg.arch, "seeds": seeds, "mean": result.mean, "std": result.std,
        "accuracies": {str(k): v for k, v in result.accuracies.items()}, "failed": result.failed,
    }))
    _require(written)
    print(f"{ds.name} {mcfg.arch}: {100 * result.mean:.2f} ± {100 * result.std:.2f} over {len(rows)} seeds")
    if result.failed:
        print(f"  excluded diverged seeds: {sorted(result.failed)}", file=sys.stderr)
    if args.time:
        runs = list(result.runs.values())
        per_epoch = np.mean([r.epoch_seconds for r in runs])
        total = np.mean([r.total_seconds for r in runs])
        print(f"time: {per_epoch * 1e3:.2f}ms per epoch / {total:.2f}s total (mean over seeds)")
    return 0


# -- synth ---------------------------------------------------------------------


def cmd_synth(args) -> int:
    vals = args.values
    if args.kind == "bipartite":
        if len(vals) not in (2, 3):
            raise CliError("bipartite takes: SIZE_A SIZE_B [P]")
        sizes = (int(vals[0]), int(vals[1]))
        p_out = float(vals[2]) if len(vals) == 3 else args.p_out
        p_in = 0.0
    else:
        if len(vals) < 2:
            raise CliError("planted_partition takes at least two block sizes")
        sizes = tuple(int(v) for v in vals)
        p_in, p_out = args.p_in, args.p_out
    if p_out is None:
        p_out = 0.5 if args.kind == "bipartite" else 0.01
    spec = data_io.SynthSpec(
        kind=args.kind, sizes=sizes, p_in=p_in, p_out=p_out, n_features=args.features,
        mean_scale=args.mean_scale, sigma=args.sigma, hubs=args.hubs, hub_degree=args.hub_degree,
        no_isolated=args.no_isolated, seed=args.seed, name=args.name or args.kind,
    )
    ds = data_io.generate(spec)
    out = _out_dir(args, {}, f"synth-{spec.name}")
    data_io.save_dataset(ds, out)
    _require([out / f for f in data_io.REQUIRED_FILES])
    print(f"wrote {ds.name} (n={ds.n}, edges={ds.graph.num_edges}, C={ds.n_classes}) to {out}")
    return 0


# -- gradcheck -----------------------------------------------------------------


def tiny_instance(seed: int = 0, n: int = 12, f: int = 5, n_classes: int = 3, p: float = 0.3):
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    g = build_graph(np.stack([iu[keep], ju[keep]], axis=1), n)
    X = rng.normal(size=(n, f))
    labels = rng.integers(0, n_classes, size=n)
    return g, X, labels


def cmd_gradcheck(args) -> int:
    over = _overrides(args)
    file_values = C.read_config_file(args.config) if args.config else {}
    cfg = C.merge(file_values, over)
    if cfg.get("dataset"):
        ds = data_io.load_dataset(cfg["dataset"])
        g, X, labels, n_classes = ds.graph, ds.X, ds.labels, ds.n_classes
    else:
        g, X, labels = tiny_instance(cfg["seed"])
        n_classes = 3
        if "hidden" not in over and "hidden" not in file_values:
            cfg["hidden"] = 4
    mcfg = C.model_config(cfg, X.shape[1], n_classes)
    ops = GraphOperators(g, mcfg)
    rng = np.random.default_rng(cfg["seed"])
    masks = None
    if mcfg.uses_masks:
        nh = nh_values(khop_index(g, mcfg.hop), rng.integers(0, n_classes, size=g.n), n_classes)
        masks = make_masks(nh, mcfg.threshold)
    y = train_targets(labels, np.arange(g.n), n_classes)
    params = init_params(mcfg, cfg["seed"])
    if "alpha" in params:
        params["alpha"] = rng.normal(size=params["alpha"].shape)

    def fn(p):
        value, grads, _ = loss_and_grad(p, X, ops, masks, mcfg, y, "eval")
        return value, grads

    err = grad_check(fn, params, probes=args.probes, seed=cfg["seed"])
    ok = err < GRADCHECK_TOL
    print(f"gradcheck {mcfg.arch} combiner={mcfg.combiner} activation={mcfg.activation} "
          f"self_loop={mcfg.self_loop}: max relative error {err:.3e} ({'ok' if ok else 'FAIL'})")
    print(f"parameters: {param_count(mcfg)} (closed-form report: {reported_param_formula(mcfg)})")
    return 0 if ok else 1


# -- bins ----------------------------------------------------------------------


def cmd_bins(args) -> int:
    ds = data_io.load_dataset(args.dataset)
    params, mcfg, extra = load_checkpoint(args.checkpoint)
    if mcfg.in_dim != ds.n_features or mcfg.n_classes != ds.n_classes:
        raise CliError("checkpoint does not match the dataset's feature/class dimensions")
    seed = int(extra.get("seed", 0))
    ratios = tuple(extra.get("split_ratios", (0.6, 0.2, 0.2)))
    split = make_split(ds.n, seed, ratios)
    masks = None
    if mcfg.uses_masks:
        if "mask_low" not in extra:
            raise CliError("checkpoint has no NH masks")
        low = np.asarray(extra["mask_low"], dtype=np.int8)
        masks = MaskPair(low=low, high=(1 - low).astype(np.int8), threshold=mcfg.threshold)
    ops = GraphOperators(ds.graph, mcfg) if mcfg.arch != "mlp" else None
    pred, _, _ = forward(params, ds.X, ops, masks, mcfg, "eval")
    correct = pred.labels == ds.labels

    hop = args.hop or mcfg.hop
    if args.metric == "nh":
        metric = normalize_metric(nh_values(khop_index(ds.graph, hop), ds.labels, ds.n_classes)).values
        label = f"NH^{hop} (normalized)"
    else:
        metric = node_homophily(ds.graph, ds.labels)[0]
        label = "node homophily"
    idx = split.test if args.nodes == "test" else np.arange(ds.n)
    table = bin_accuracy(metric[idx], correct[idx])
    out = _out_dir(args, {}, f"bins-{ds.name}-{mcfg.arch}")
    written = [data_io.export_bin_table(out / "bins.csv", table)]
    if args.plots:
        written.append(plotting.bin_accuracy(out / "bins.png", {mcfg.arch: table}, xlabel=label))
    _require(written)
    print(f"{ds.name} {mcfg.arch}: accuracy by {label} ({args.nodes} nodes)")
    for b in np.flatnonzero(table.count > 0):
        print(f"  [{table.edges[b]:.1f}, {table.edges[b + 1]:.1f}{']' if b == 9 else ')'} "
              f"n={table.count[b]:<5d} acc={table.accuracy[b]:.3f}")
    return 0


# -- parser --------------------------------------------------------------------


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value run configuration file")
    p.add_argument("--dataset", help="dataset directory (TSV layout)")
    p.add_argument("--arch", choices=("nhgcn", "nhgcn_ss", "gcn", "mlp", "gcn_plus_x"))
    p.add_argument("--hop", type=int)
    p.add_argument("--inv-threshold", dest="inv_threshold", type=float, help="1/T")
    p.add_argument("--combiner", choices=("add", "concatenate", "maxpooling"))
    p.add_argument("--activation", choices=("relu", "tanh"))
    p.add_argument("--self-loop", dest="self_loop", choices=("yes", "no", "true", "false"))
    p.add_argument("--hidden", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--epochs", type=int, help="maximum epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ROOT_ENV}/<name>)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nhgcn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("metrics", help="NH and node homophily of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--hop", type=int, default=2)
    p.add_argument("--normalize", action="store_true", help="print normalized values")
    p.add_argument("--no-plots", dest="plots", action="store_false")
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("train", help="train one model")
    _model_flags(p)
    p.add_argument("--mask-acc", action="store_true", help="log masking accuracy against ground truth")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--time", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("multiseed", help="train over several seeds and report mean ± std")
    _model_flags(p)
    p.add_argument("--seeds", nargs="+", help="seed list, e.g. 0 1 2 or 0-9")
    p.add_argument("--workers", type=int)
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--time", action="store_true")
    p.set_defaults(func=cmd_multiseed)

    p = sub.add_parser("synth", help="write a synthetic dataset directory")
    p.add_argument("kind", choices=("bipartite", "planted_partition"))
    p.add_argument("values", nargs="+", help="block sizes (bipartite: A B [P])")
    p.add_argument("--p-in", type=float, default=0.1)
    p.add_argument("--p-out", type=float)
    p.add_argument("--features", type=int, default=8)
    p.add_argument("--mean-scale", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--hubs", type=int, default=0)
    p.add_argument("--hub-degree", type=int, default=10)
    p.add_argument("--no-isolated", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name")
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    _model_flags(p)
    p.add_argument("--probes", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bins", help="per-metric-bin accuracy of a trained checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--metric", choices=("nh", "node_hom"), default="nh")
    p.add_argument("--hop", type=int)
    p.add_argument("--nodes", choices=("test", "all"), default="test")
    p.add_argument("--no-plots", dest="plots", action="store_false")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bins)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, data_io.DatasetError, CliError, FileNotFoundError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
