"""Command-line surface: dataset generation, experiment sweeps, metric analysis.

Subcommands:

* ``generate`` -- write a synthetic dataset (motivating instances or random
  chains) as trajectory JSONL.
* ``train``    -- run a config-file-driven sweep of (variant, seed) pairs,
  emitting one learning-curve CSV per run plus a summary JSON.
* ``analyze``  -- tabulate per-trajectory metric values and ranks as CSV.

Config files are flat ``key = value`` lines ('#' comments); any value may be a
comma-separated list, and the cross-product of all list-valued keys defines
the variants.  Learning-curve CSVs are deterministic: fixed column order, 9
significant digits, LF line endings.  Wall-clock timing is reported in the
summary JSON only, keeping the CSVs byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import OfflineDataset, load_dataset, save_dataset
from .learner import (
    PRIO_TRAJ,
    EnsembleQ,
    TrainConfig,
    TrainResult,
    steps_to_threshold,
    train,
    value_iteration_oracle,
)
from .priority import (
    ALL_KINDS,
    UNCERTAINTY_KINDS,
    build_priority_table,
    rank_order,
)
from .scenarios import (
    FIGURE1_DENSE,
    FIGURE1_SPARSE,
    SCENARIOS,
    make_figure1,
    make_random_chain,
)
from .targets import STANDARD, TargetKind

SEED_ENV_VAR = "TRAJ_REPLAY_SEED"


def _fmt(value: float) -> str:
    return format(value, ".9g")


def parse_config_file(path: str | Path) -> dict[str, list[str]]:
    """Read flat key = value lines; comma-separated values become lists."""
    values: dict[str, list[str]] = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{line_no}: expected 'key = value', got {raw.strip()!r}")
        entries = [v.strip() for v in value.split(",") if v.strip()]
        if not entries:
            raise ValueError(f"{path}:{line_no}: no value given for {key.strip()!r}")
        values[key.strip()] = entries
    return values


_SCALAR_KEYS = {
    "gamma": float,
    "alpha": float,
    "epsilon": float,
    "eta": float,
    "beta": float,
    "ensemble_size": int,
    "batch_size": int,
    "total_steps": int,
    "target_sync_period": int,
}


def expand_variants(raw: dict[str, list[str]]) -> list[TrainConfig]:
    """Cross-product of all list-valued keys into normalized TrainConfigs.

    Non-prioritized samplers ignore the metric axis (TrainConfig normalizes it
    to uniform), so duplicates created by the product are dropped.
    """
    known = {"sampler", "metric", "target", "seed"} | set(_SCALAR_KEYS)
    for key in raw:
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
    pending: list[dict] = [{}]
    for key, entries in raw.items():
        if key == "seed":
            continue
        pending = [dict(combo, **{key: entry}) for combo in pending for entry in entries]
    configs: list[TrainConfig] = []
    seen: set[tuple] = set()
    for combo in pending:
        kwargs: dict = {}
        if "sampler" in combo:
            kwargs["sampler"] = combo["sampler"]
        if "metric" in combo:
            kwargs["metric"] = combo["metric"]
        target_kind = combo.get("target", STANDARD)
        # beta only differentiates weighted targets; pin it elsewhere so a
        # beta sweep cannot mint duplicate standard/sarsa variants
        beta = float(combo.get("beta", 0.5)) if target_kind == "weighted" else 0.5
        kwargs["target"] = TargetKind(target_kind, beta)
        for key, cast in _SCALAR_KEYS.items():
            if key in combo and key != "beta":
                kwargs[key] = cast(combo[key])
        config = TrainConfig(**kwargs)
        key = (
            config.sampler,
            config.metric,
            config.target,
            config.gamma,
            config.alpha,
            config.epsilon,
            config.eta,
            config.ensemble_size,
            config.batch_size,
            config.total_steps,
            config.target_sync_period,
        )
        if key not in seen:
            seen.add(key)
            configs.append(config)
    return configs


def variant_label(config: TrainConfig) -> str:
    parts = [config.sampler]
    if config.sampler == PRIO_TRAJ:
        parts.append(config.metric)
    if config.target.kind != STANDARD:
        parts.append(config.target.kind)
        if config.target.kind == "weighted":
            parts.append(f"beta{config.target.beta:g}")
    return "-".join(parts)


@dataclass
class ExperimentSpec:
    """A full sweep: dataset, config variants, seeds, and output directory."""

    dataset_path: Path
    variants: list[TrainConfig]
    seeds: list[int]
    out_dir: Path
    eps_rel: float = 0.05
    jobs: int = 1
    save_ensembles: bool = False

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ValueError("seed list is empty")
        if not self.variants:
            raise ValueError("no variants configured")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")


def run_experiment(spec: ExperimentSpec, dataset: OfflineDataset | None = None) -> Path:
    """Execute every (variant, seed) run and write CSVs plus summary.json.

    Workers only train; the coordinator writes all files after the last worker
    finishes, so output is deterministic regardless of ``jobs``.  Returns the
    output directory.
    """
    if dataset is None:
        dataset = load_dataset(spec.dataset_path)
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    oracle = value_iteration_oracle(dataset)
    s0 = dataset.trajectories[0].transitions[0].state
    oracle_s0 = float(oracle[s0])

    jobs = [(config, seed) for config in spec.variants for seed in spec.seeds]

    def run_one(job: tuple[TrainConfig, int]) -> TrainResult:
        config, seed = job
        try:
            return train(dataset, config.with_seed(seed))
        except Exception as exc:
            raise RuntimeError(
                f"run failed for (variant, seed) = ({variant_label(config)}, {seed}): {exc}"
            ) from exc

    if spec.jobs > 1:
        with ThreadPoolExecutor(max_workers=spec.jobs) as pool:
            outputs = list(pool.map(run_one, jobs))
    else:
        outputs = [run_one(job) for job in jobs]
    results = {
        (variant_label(config), seed): result
        for (config, seed), result in zip(jobs, outputs)
    }

    summary: dict = {
        "dataset": str(spec.dataset_path),
        "oracle_s0": oracle_s0,
        "eps_rel": spec.eps_rel,
        "seeds": spec.seeds,
        "variants": {},
    }
    for config in spec.variants:
        label = variant_label(config)
        steps_to = []
        finals = []
        wall = []
        for seed in spec.seeds:
            result = results[(label, seed)]
            write_curve_csv(spec.out_dir / f"{label}__seed{seed}.csv", result)
            if spec.save_ensembles:
                result.ensemble.save(spec.out_dir / f"{label}__seed{seed}.npz")
            steps_to.append(steps_to_threshold(result.curve, oracle_s0, spec.eps_rel))
            finals.append(float(result.curve[-1]))
            wall.append(result.wall_ms_per_1000)
        censored = [np.inf if s is None else s for s in steps_to]
        median = float(np.median(censored))
        summary["variants"][label] = {
            "steps_to_eps": steps_to,
            "median_steps_to_eps": None if not np.isfinite(median) else median,
            "final_max_q_s0": finals,
            "median_final_max_q_s0": float(np.median(finals)),
            "mean_wall_ms_per_1000": float(np.mean(wall)),
        }
    with (spec.out_dir / "summary.json").open("w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return spec.out_dir


def _resolve_seeds(args, raw_config: dict[str, list[str]]) -> list[int]:
    if args.seeds:
        return [int(s) for s in args.seeds.split(",")]
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        return [int(env)]
    if "seed" in raw_config:
        return [int(s) for s in raw_config["seed"]]
    return [0]


def write_curve_csv(path: Path, result: TrainResult) -> None:
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,max_q_s0\n")
        for step, value in enumerate(result.curve, start=1):
            fh.write(f"{step},{_fmt(value)}\n")


def cmd_generate(args) -> int:
    if args.scenario == FIGURE1_SPARSE:
        dataset = make_figure1("sparse")
    elif args.scenario == FIGURE1_DENSE:
        dataset = make_figure1("dense")
    else:
        rng = np.random.default_rng(args.seed)
        dataset = make_random_chain(
            n_trajectories=args.n_traj,
            min_length=args.min_len,
            max_length=args.max_len,
            rng=rng,
            action_count=args.actions,
            terminal_prob=args.terminal_prob,
        )
    save_dataset(dataset, args.out)
    print(f"wrote {dataset.n_trajectories} trajectories "
          f"({dataset.total_transitions} transitions) to {args.out}")
    return 0


def cmd_train(args) -> int:
    dataset = load_dataset(args.dataset)
    raw = parse_config_file(args.config)
    spec = ExperimentSpec(
        dataset_path=Path(args.dataset),
        variants=expand_variants(raw),
        seeds=_resolve_seeds(args, raw),
        out_dir=Path(args.out),
        eps_rel=args.eps_rel,
        jobs=args.jobs,
        save_ensembles=args.save_ensembles,
    )
    try:
        run_experiment(spec, dataset)
    except RuntimeError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    print(
        f"wrote {len(spec.variants) * len(spec.seeds)} runs "
        f"({len(spec.variants)} variants x {len(spec.seeds)} seeds) to {spec.out_dir}"
    )
    return 0


def cmd_analyze(args) -> int:
    dataset = load_dataset(args.dataset, args.format)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()] if args.metrics else []
    for metric in metrics:
        if metric not in ALL_KINDS:
            raise ValueError(f"unknown metric name {metric!r}")
    uncertainty = None
    if args.ensemble:
        uncertainty = EnsembleQ.load(args.ensemble).uncertainty
    available = []
    for metric in metrics:
        if metric in UNCERTAINTY_KINDS and uncertainty is None:
            print(f"metric {metric!r} unavailable without --ensemble", file=sys.stderr)
            available.append(False)
        else:
            available.append(True)

    n = dataset.n_trajectories
    header = ["id", "length"]
    columns: list[list[str]] = []
    for metric, ok in zip(metrics, available):
        header += [metric, f"{metric}_rank"]
        if not ok:
            columns.append(["unavailable"] * n)
            columns.append(["unavailable"] * n)
            continue
        table = build_priority_table(dataset, metric, u=uncertainty)
        order = rank_order(table, [traj.id for traj in dataset.trajectories])
        ranks = {tid: rank for rank, tid in enumerate(order, start=1)}
        columns.append([_fmt(table.values[traj.id]) for traj in dataset.trajectories])
        columns.append([str(ranks[traj.id]) for traj in dataset.trajectories])

    lines = [",".join(header)]
    for idx, traj in enumerate(dataset.trajectories):
        row = [str(traj.id), str(traj.length)] + [col[idx] for col in columns]
        lines.append(",".join(row))
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajreplay",
        description="Trajectory replay experiments: generate datasets, run sweeps, analyze metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic dataset")
    gen.add_argument("--scenario", required=True, choices=SCENARIOS)
    gen.add_argument("--out", required=True)
    gen.add_argument("--n-traj", type=int, default=10, dest="n_traj")
    gen.add_argument("--min-len", type=int, default=1, dest="min_len")
    gen.add_argument("--max-len", type=int, default=10, dest="max_len")
    gen.add_argument("--actions", type=int, default=2)
    gen.add_argument("--terminal-prob", type=float, default=0.8, dest="terminal_prob")
    gen.add_argument("--seed", type=int, default=0)
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", help="run a sweep from a config file")
    tr.add_argument("--dataset", required=True)
    tr.add_argument("--config", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--seeds", default=None, help="comma-separated seed list")
    tr.add_argument("--jobs", type=int, default=1)
    tr.add_argument("--eps-rel", type=float, default=0.05, dest="eps_rel",
                    help="relative band around the oracle for steps-to-eps")
    tr.add_argument("--save-ensembles", action="store_true", dest="save_ensembles")
    tr.set_defaults(func=cmd_train)

    an = sub.add_parser("analyze", help="per-trajectory metric table as CSV")
    an.add_argument("--dataset", required=True)
    an.add_argument("--format", default=None, choices=("trajectory-jsonl", "flat-transitions"))
    an.add_argument("--metrics", default="", help="comma-separated metric names")
    an.add_argument("--ensemble", default=None, help="saved ensemble .npz for uncertainty metrics")
    an.add_argument("--out", default=None)
    an.set_defaults(func=cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
