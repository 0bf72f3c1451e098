"""Command-line entry point.

Subcommands: pretrain, search, simulate, finetune, workload dump,
report pareto. Exit codes: 0 success, 2 validation failure, 3 IO/format
error. Every command is reproducible from (config, seed).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .accel import AccelConfig, validate
from .errors import (
    CheckpointMismatchError,
    GnncoError,
    GraphFormatError,
    GraphParseError,
    SimulationRefusedError,
)
from .graph import sparsity_profile
from .search import (
    Candidate,
    CandidateSpaces,
    CoSearchFitness,
    evolve,
    pareto_report,
)
from .simulator import simulate
from .supernet import (
    GraphTensors,
    SharedWeights,
    SubnetSpec,
    evaluate,
    finetune,
    pretrain,
)
from .workload import parse_subnet, workloads_to_json

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise GraphFormatError(f"{path}: {exc}") from exc


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(cfg) -> Path:
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_effective_config(cfg, out: Path) -> None:
    with open(out / "effective_config.json", "w") as fh:
        fh.write(cfgmod.dump_config(cfg))
        fh.write("\n")


def cmd_pretrain(args) -> int:
    cfg = cfgmod.load_config(args.config, args.set)
    out = _out_dir(cfg)
    _dump_effective_config(cfg, out)
    g = cfgmod.build_graph(cfg)
    space = cfgmod.build_space(cfg, g.num_classes)
    train_cfg = cfgmod.build_train_config(cfg, "pretrain_epochs")
    gt = GraphTensors.from_graph(g)
    weights = SharedWeights.initialize(space, g.num_features, g.num_classes,
                                       seed=train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed)
    losses = pretrain(space, weights, gt, train_cfg, rng,
                      g.splits.train_mask)
    ckpt = out / "checkpoint.npz"
    weights.save(ckpt)
    with open(out / "pretrain_loss.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for i, v in enumerate(losses):
            writer.writerow([i, repr(v)])
    print(f"pretrained {train_cfg.epochs} epochs; checkpoint: {ckpt}")
    return EXIT_OK


def _accuracy_evaluator(weights, gt, mask):
    def run(subnet):
        return evaluate(subnet, weights, gt, mask)
    return run


def cmd_search(args) -> int:
    cfg = cfgmod.load_config(args.config, args.set)
    out = _out_dir(cfg)
    _dump_effective_config(cfg, out)
    g = cfgmod.build_graph(cfg)
    space = cfgmod.build_space(cfg, g.num_classes)
    weights = SharedWeights.load(args.checkpoint, space)
    gt = GraphTensors.from_graph(g)
    accel_space = cfgmod.build_accel_space(cfg)
    params = cfgmod.build_search_params(cfg, workers=args.workers)
    profile = sparsity_profile(g.adjacency)
    context = CoSearchFitness(
        accuracy_fn=_accuracy_evaluator(weights, gt, g.splits.val_mask),
        num_nodes=g.num_nodes, in_features=g.num_features,
        num_classes=g.num_classes, profile=profile,
        support_csr=gt.a_hat, platform=accel_space.platform,
        accel_space=accel_space,
        latency_weight=params.latency_weight, latency_ref=params.latency_ref,
        workers=params.workers,
    )
    spaces = CandidateSpaces(gnet=space, accel=accel_space)
    rng = np.random.default_rng(params.seed)
    gen_log = []
    result = evolve(params, spaces, context, rng,
                    checkpoint_path=out / "search_state.json",
                    on_generation=gen_log.append)

    _write_json(out / "top_candidates.json", {
        "converged": result.converged,
        "generations": result.generations,
        "candidates": [c.to_json_dict() for c in result.candidates],
    })
    _write_pareto_csv(out / "pareto.csv", pareto_report(result.pool))
    with open(out / "generations.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["generation", "pool_size", "fit_avg", "best_fitness"])
        for rec in gen_log:
            writer.writerow([rec.generation, rec.pool_size,
                             repr(rec.fit_avg), repr(rec.best_fitness)])

    best = result.candidates[0] if result.candidates else None
    if best is not None and args.finetune_best:
        ft_cfg = cfgmod.build_train_config(cfg, "finetune_epochs")
        _, test_acc = finetune(best.gnet, g, ft_cfg, epochs=ft_cfg.epochs)
        _write_json(out / "best_finetuned.json", {
            "gnet": best.gnet.to_json_dict(),
            "hw": best.hw.to_json_dict(),
            "search_accuracy": best.accuracy,
            "latency_seconds": best.latency_seconds,
            "test_accuracy": test_acc,
            "finetune_epochs": ft_cfg.epochs,
        })
        print(f"best candidate fine-tuned: test accuracy {test_acc:.4f}")
    status = "converged" if result.converged else "not converged"
    print(f"search {status} after {result.generations} generations; "
          f"results in {out}")
    return EXIT_OK


def _write_pareto_csv(path, candidates) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["accuracy", "latency_seconds", "fitness",
                         "gnet", "hw"])
        for c in candidates:
            writer.writerow([
                repr(c.accuracy), repr(c.latency_seconds), repr(c.fitness),
                json.dumps(c.gnet.to_json_dict(), sort_keys=True),
                json.dumps(c.hw.to_json_dict(), sort_keys=True),
            ])


def cmd_simulate(args) -> int:
    cfg = cfgmod.load_config(args.config, args.set)
    g = cfgmod.build_graph(cfg)
    subnet = SubnetSpec.from_json_dict(_load_json(args.subnet))
    accel = AccelConfig.from_json_dict(_load_json(args.accel))
    accel_space = cfgmod.build_accel_space(cfg)
    platform = accel_space.platform
    gt = GraphTensors.from_graph(g)
    profile = sparsity_profile(g.adjacency)
    workloads = parse_subnet(subnet, g.num_nodes, g.num_features,
                             g.num_classes, profile, support_csr=gt.a_hat)
    violations = validate(accel, platform, workloads, space=accel_space)
    if violations:
        for v in violations:
            print(f"violation: {v}", file=sys.stderr)
        return EXIT_VALIDATION
    report = simulate(workloads, accel, platform, accel_space, check=False)
    _print_report_table(report)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report.to_json())
            fh.write("\n")
        print(f"report written to {args.out}")
    return EXIT_OK


def _print_report_table(report) -> None:
    print(f"latency: {report.latency_seconds * 1e3:.4f} ms "
          f"({report.total_cycles} cycles)")
    print(f"off-chip traffic: {report.offchip_bytes_total / 1e6:.3f} MB "
          f"(avg bandwidth {report.average_bandwidth_bytes_per_sec / 1e9:.2f} GB/s)")
    print(f"PE utilization: {report.pe_utilization:.4f}")
    header = f"{'layer':>5} {'phase':<18} {'cycles':>12} {'traffic MB':>12}"
    print(header)
    print("-" * len(header))
    for p in report.phases:
        mb = sum(p.traffic.values()) / 1e6
        print(f"{p.layer:>5} {p.phase:<18} {p.cycles:>12} {mb:>12.3f}")


def cmd_finetune(args) -> int:
    cfg = cfgmod.load_config(args.config, args.set)
    out = _out_dir(cfg)
    g = cfgmod.build_graph(cfg)
    subnet = SubnetSpec.from_json_dict(_load_json(args.subnet))
    ft_cfg = cfgmod.build_train_config(cfg, "finetune_epochs")
    _, acc = finetune(subnet, g, ft_cfg, epochs=ft_cfg.epochs)
    payload = {"gnet": subnet.to_json_dict(), "test_accuracy": acc,
               "epochs": ft_cfg.epochs, "seed": ft_cfg.seed}
    _write_json(out / "finetuned.json", payload)
    print(f"test accuracy: {acc:.4f}")
    return EXIT_OK


def cmd_workload_dump(args) -> int:
    cfg = cfgmod.load_config(args.config, args.set)
    g = cfgmod.build_graph(cfg)
    subnet = SubnetSpec.from_json_dict(_load_json(args.subnet))
    profile = sparsity_profile(g.adjacency)
    workloads = parse_subnet(subnet, g.num_nodes, g.num_features,
                             g.num_classes, profile)
    text = workloads_to_json(workloads, include_rows=not args.no_rows)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"workloads written to {args.out}")
    else:
        print(text)
    return EXIT_OK


def cmd_report_pareto(args) -> int:
    data = _load_json(args.pool)
    if isinstance(data, dict):
        items = data.get("candidates", data.get("pool", []))
    else:
        items = data
    pool = [Candidate.from_json_dict(d) for d in items]
    frontier = pareto_report(pool)
    _write_pareto_csv(args.out, frontier)
    print(f"{len(frontier)} non-dominated candidates -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gnnco",
        description="joint search over GNN structures and matched accelerators",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--set", action="append", default=[],
                       metavar="SECTION.KEY=VALUE",
                       help="override a config value")

    p = sub.add_parser("pretrain", help="one-shot supernet pre-training")
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("search", help="evolutionary co-search")
    common(p)
    p.add_argument("--checkpoint", required=True,
                   help="supernet weight checkpoint from pretrain")
    p.add_argument("--workers", type=int, default=None,
                   help="concurrent candidate evaluations")
    p.add_argument("--no-finetune-best", dest="finetune_best",
                   action="store_false",
                   help="skip fine-tuning the best candidate")
    p.set_defaults(func=cmd_search, finetune_best=True)

    p = sub.add_parser("simulate", help="simulate one (subnet, accel) pair")
    common(p)
    p.add_argument("--subnet", required=True, help="SubnetSpec JSON file")
    p.add_argument("--accel", required=True, help="AccelConfig JSON file")
    p.add_argument("--out", default=None, help="write the report JSON here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("finetune", help="train one subnet from scratch")
    common(p)
    p.add_argument("--subnet", required=True, help="SubnetSpec JSON file")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("workload", help="workload inspection")
    wsub = p.add_subparsers(dest="workload_command", required=True)
    pd = wsub.add_parser("dump", help="dump parsed workloads as JSON")
    common(pd)
    pd.add_argument("--subnet", required=True)
    pd.add_argument("--out", default=None)
    pd.add_argument("--no-rows", action="store_true",
                    help="omit per-row nonzero vectors")
    pd.set_defaults(func=cmd_workload_dump)

    p = sub.add_parser("report", help="result reporting")
    rsub = p.add_subparsers(dest="report_command", required=True)
    pp = rsub.add_parser("pareto", help="non-dominated frontier CSV")
    pp.add_argument("--pool", required=True,
                    help="candidates JSON (search output or state)")
    pp.add_argument("--out", required=True, help="CSV output path")
    pp.set_defaults(func=cmd_report_pareto)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SimulationRefusedError, CheckpointMismatchError,
            cfgmod.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (GraphParseError, GraphFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GnncoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
