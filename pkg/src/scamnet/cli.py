"""Command-line interface: synth, train, eval, dump-cls.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import load_checkpoint
from .episodic import SynthConfig, load_dataset, save_dataset, synth_generate
from .errors import ConfigError, DataError, NumericalError
from .harness import TrainConfig, dump_cls, evaluate, train

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _load_json(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {p}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {p} must be a JSON object")
    return raw


def _cmd_synth(args) -> int:
    config = SynthConfig.from_dict(_load_json(args.config))
    store = synth_generate(config)
    save_dataset(store, args.out)
    counts = {s: ds.n_classes for s, ds in store.splits.items()}
    print(json.dumps({"out": str(args.out), "classes": counts}))
    return 0


def _cmd_train(args) -> int:
    raw = _load_json(args.config)
    config = TrainConfig.from_dict(raw)
    if args.out:
        config = replace(config, out_dir=str(args.out))
    if config.out_dir is None:
        raise ConfigError("no output directory: pass --out or set out_dir")
    dataset = load_dataset(args.data)["train"]
    result = train(config, dataset)
    last = result.metrics[-1] if result.metrics else None
    print(
        json.dumps(
            {
                "out": config.out_dir,
                "steps": len(result.metrics),
                "final_total_loss": None if last is None else last.total,
                "final_acc_h": None if last is None else last.acc_h,
                "metrics_digest": result.metrics_digest,
            }
        )
    )
    return 0


def _cmd_eval(args) -> int:
    state, _ = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)[args.split]
    report = evaluate(
        state,
        dataset,
        n_way=args.n,
        k_shot=args.k,
        q_queries=args.q,
        episodes=args.episodes,
        seed=args.seed,
    )
    print(json.dumps(report.to_dict()))
    return 0


def _cmd_dump_cls(args) -> int:
    state, _ = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)[args.split]
    path = dump_cls(
        state,
        dataset,
        episodes=args.episodes,
        seed=args.seed,
        out=args.out,
        n_way=args.n,
        k_shot=args.k,
    )
    print(json.dumps({"out": str(path), "episodes": args.episodes}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scamnet",
        description="Dual-network few-shot classifier with a regulated CLS memory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--config", required=True, help="SynthConfig JSON")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("train", help="run the consolidation training loop")
    p.add_argument("--config", required=True, help="TrainConfig JSON")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="episodic evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--q", type=int, default=15)
    p.add_argument("--episodes", type=int, default=2500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="test")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("dump-cls", help="export raw/regulated CLS tokens to CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train")
    p.set_defaults(fn=_cmd_dump_cls)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
