"""Command-line harness: run experiments, compare algorithms, inspect datasets."""

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from pfedsv.config import parse_config, with_algorithm, with_seed
from pfedsv.data import load_idx, relevance_truth, write_label_histogram
from pfedsv.errors import ParseError, SimulatorError, ValidationError
from pfedsv.federation import SimulationResult, run_experiment
from pfedsv.learner import save_params

OUT_ROOT_ENV = "PFEDSV_OUT"

ROUNDS_HEADER = (
    "round",
    "client",
    "participated",
    "test_accuracy",
    "k_eff",
    "coalition",
    "shapley",
    "weights",
    "fallback",
)


def _floats(values) -> str:
    return ";".join(repr(float(v)) for v in values)


def write_rounds_csv(path, reports) -> None:
    """One row per round per client; repr floats keep reruns byte-identical."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROUNDS_HEADER)
        for report in reports:
            for client, acc in enumerate(report.accuracies):
                record = report.records[client]
                if record is None:
                    coalition = shapley = weights = fallback = ""
                else:
                    coalition = ";".join(str(m) for m in record.members)
                    shapley = _floats(record.shapley)
                    weights = _floats(record.weights)
                    fallback = "1" if record.fallback else "0"
                writer.writerow(
                    [
                        report.round_index,
                        client,
                        "1" if client in report.participants else "0",
                        repr(float(acc)),
                        report.k_eff[client],
                        coalition,
                        shapley,
                        weights,
                        fallback,
                    ]
                )


def write_matrix_csv(path, matrix) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(matrix):
            writer.writerow([repr(float(v)) for v in row])


def export_relevance_heatmap_data(result: SimulationResult, out_dir: Path) -> None:
    """Final relevance matrix plus the binary label-overlap ground truth."""
    write_matrix_csv(out_dir / "relevance_final.csv", result.relevance_matrix())
    truth = relevance_truth(result.partition).astype(int)
    with open(out_dir / "relevance_truth.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in truth:
            writer.writerow([int(v) for v in row])


def write_summary(path, result: SimulationResult, wall_time: float) -> None:
    cfg = result.config
    payload = {
        "algorithm": cfg.algorithm,
        "seed": cfg.seed,
        "clients": cfg.clients,
        "rounds": cfg.rounds,
        "final_mta": result.reports[-1].mta if result.reports else None,
        "mta_per_round": [r.mta for r in result.reports],
        "utility_evaluations": sum(r.utility_evaluations for r in result.reports),
        "wall_time_s": wall_time,
        "config": asdict(cfg),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _prepare_out_dir(out_dir: Path, force: bool) -> None:
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise ValidationError(f"{out_dir} is not empty; pass --force to reuse it")
    out_dir.mkdir(parents=True, exist_ok=True)


def _default_out(config_path: Path, cfg) -> Path:
    root = Path(os.environ.get(OUT_ROOT_ENV, "runs"))
    return root / f"{config_path.stem}-{cfg.algorithm}-seed{cfg.seed}"


def run_single(cfg, out_dir: Path, checkpoints: bool = False) -> SimulationResult:
    """Execute one seeded run and write its artifact set into out_dir."""
    started = time.perf_counter()
    result = run_experiment(cfg)
    wall_time = time.perf_counter() - started
    write_rounds_csv(out_dir / "rounds.csv", result.reports)
    write_summary(out_dir / "summary.json", result, wall_time)
    export_relevance_heatmap_data(result, out_dir)
    write_label_histogram(result.partition, result.dataset, out_dir / "partition_labels.csv")
    if checkpoints:
        ckpt_dir = out_dir / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
        for state in result.states:
            save_params(state.params, ckpt_dir / f"client_{state.id:03d}.params")
    return result


def _seed_stats(mtas) -> tuple:
    mean = float(np.mean(mtas))
    std = float(np.std(mtas, ddof=1)) if len(mtas) > 1 else 0.0
    return mean, std


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    out_dir = Path(args.out) if args.out else _default_out(Path(args.config), cfg)
    _prepare_out_dir(out_dir, args.force)
    if args.repeats == 1:
        result = run_single(cfg, out_dir, checkpoints=args.checkpoints)
        final = result.reports[-1].mta if result.reports else float("nan")
        print(f"{cfg.algorithm}: final MTA {final:.4f} over {cfg.rounds} rounds -> {out_dir}")
        return 0
    mtas = []
    for offset in range(args.repeats):
        seeded = with_seed(cfg, cfg.seed + offset)
        sub = out_dir / f"run_seed{seeded.seed}"
        _prepare_out_dir(sub, args.force)
        result = run_single(seeded, sub, checkpoints=args.checkpoints)
        mtas.append(result.reports[-1].mta if result.reports else float("nan"))
    mean, std = _seed_stats(mtas)
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(
            {
                "algorithm": cfg.algorithm,
                "repeats": args.repeats,
                "seeds": [cfg.seed + i for i in range(args.repeats)],
                "mta_mean": mean,
                "mta_std": std,
                "mta_per_seed": mtas,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    print(f"{cfg.algorithm}: MTA {mean:.4f} +/- {std:.4f} over {args.repeats} seeds -> {out_dir}")
    return 0


def cmd_compare(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    algorithms = [a.strip() for a in args.algorithms.split(",") if a.strip()]
    if not algorithms:
        raise ValidationError("algorithms: expected a comma-separated list")
    out_dir = Path(args.out) if args.out else _default_out(Path(args.config), cfg).parent / (
        Path(args.config).stem + "-compare"
    )
    _prepare_out_dir(out_dir, args.force)
    table = {}
    for algo in algorithms:
        algo_cfg = with_algorithm(cfg, algo)
        mtas = []
        for offset in range(args.repeats):
            seeded = with_seed(algo_cfg, algo_cfg.seed + offset)
            result = run_experiment(seeded)
            mtas.append(result.reports[-1].mta if result.reports else float("nan"))
        mean, std = _seed_stats(mtas)
        table[algo] = {"mta_mean": mean, "mta_std": std, "mta_per_seed": mtas}
    with open(out_dir / "compare_summary.json", "w") as fh:
        json.dump(
            {"seeds": [cfg.seed + i for i in range(args.repeats)], "results": table},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    width = max(len("algorithm"), *(len(a) for a in table))
    print(f"{'algorithm'.ljust(width)}  mta_mean  mta_std")
    for algo, row in table.items():
        print(f"{algo.ljust(width)}  {row['mta_mean']:.4f}    {row['mta_std']:.4f}")
    return 0


def cmd_inspect(args) -> int:
    images, labels = args.idx
    ds = load_idx(images, labels)
    print(f"samples: {len(ds)}")
    print(f"features per sample: {ds.input_dim}")
    print(f"classes: {ds.class_count}")
    values, counts = np.unique(ds.labels, return_counts=True)
    for value, count in zip(values, counts):
        print(f"  label {value}: {count}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pfedsv",
        description="Shapley-value personalized federation simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one algorithm from a config file")
    run.add_argument("--config", required=True, help="experiment config file")
    run.add_argument("--out", default=None, help="output directory (default runs/<name>)")
    run.add_argument("--force", action="store_true", help="allow writing into a nonempty directory")
    run.add_argument("--repeats", type=int, default=1, help="independent repeats with seeds seed..seed+N-1")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--checkpoints", action="store_true", help="save final per-client parameters")
    run.set_defaults(func=cmd_run)

    compare = sub.add_parser("compare", help="run several algorithms, same data")
    compare.add_argument("--config", required=True, help="experiment config file")
    compare.add_argument("--algorithms", required=True, help="comma-separated algorithm names")
    compare.add_argument("--out", default=None, help="output directory (default runs/<name>)")
    compare.add_argument("--force", action="store_true", help="allow writing into a nonempty directory")
    compare.add_argument("--repeats", type=int, default=5, help="repeats per algorithm")
    compare.add_argument("--seed", type=int, default=None, help="override the config seed")
    compare.set_defaults(func=cmd_compare)

    inspect = sub.add_parser("inspect", help="describe an image/label file pair")
    inspect.add_argument("--idx", nargs=2, metavar=("IMAGES", "LABELS"), required=True,
                         help="paths to the image and label files")
    inspect.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SimulatorError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
