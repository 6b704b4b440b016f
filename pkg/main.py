import argparse
import asyncio
import json
import os
import sys
from typing import List, Optional

from rl.data import ToyPathConfig, generate_toy_path_dataset, load_dataset, save_dataset
from rl.envs import ToyPathEnv, grid_deviation, network_policy, rollout
from rl.harness import (
    env_for_dataset,
    render_report_trajectories,
    resolve_dataset,
    run_experiment,
    w_sweep,
)
from rl.nets import load_checkpoint
from rl.oracle import check_policy_improvement
from rl.plots import render_score_curves
from utils.config_loader import ConfigLoader
from utils.errors import DatasetParseError, DatasetValidationError
from utils.helpers import Helpers
from utils.logger import PPLLogger


class PPLApp:
    """
    Kommandozeilen-Einstieg: Datensätze, Training, Sweeps, Evaluation, Plots, Oracle.
    """

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config = ConfigLoader(config_file=args.config)
        self.logger = PPLLogger(log_dir=self.config.get("logging.dir"),
                                log_level=args.log_level or self.config.get("logging.level"))

    def spec(self, **overrides):
        seeds = self.args.seeds or ([self.args.seed] if self.args.seed is not None else None)
        return self.config.experiment_spec(output_dir=self.args.out, seeds=seeds, **overrides)

    async def run(self) -> int:
        self.config.validate()
        handler = getattr(self, f"cmd_{self.args.command}_{getattr(self.args, 'action', '') or ''}".rstrip("_"))
        return await handler()

    async def cmd_dataset_gen(self) -> int:
        seed = self.args.seed if self.args.seed is not None else 0
        if self.args.kind == "toy":
            ds = generate_toy_path_dataset(ToyPathConfig(action_noise=self.args.noise), seed)
        else:
            ds = resolve_dataset(self.args.kind, seed, self.args.episodes)
        path = self.args.path or os.path.join(self.args.out or ".", f"{self.args.kind}.jsonl")
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        save_dataset(ds, path)
        for warning in ds.metadata.get("warnings", []):
            self.logger.warning(f"⚠ {warning}")
        self.logger.info(f"💾 Datensatz geschrieben: {path} ({len(ds)} Transitionen)")
        return 0

    async def cmd_dataset_validate(self) -> int:
        try:
            ds = load_dataset(self.args.path)
        except (DatasetParseError, DatasetValidationError) as e:
            self.logger.error(f"❌ Ungültiger Datensatz: {e}")
            return 1
        self.logger.info(f"✅ {self.args.path}: {len(ds)} Transitionen, state_dim={ds.state_dim}, "
                         f"action_dim={ds.action_dim}, generator={ds.metadata.get('generator')}")
        return 0

    async def cmd_train(self) -> int:
        overrides = {"dataset": self.args.dataset, "algorithm": self.args.algorithm}
        spec = self.spec(**overrides)
        if self.args.w is not None:
            spec.train = spec.train.replace(w=self.args.w)
        report = await run_experiment(spec, self.logger)
        self.logger.info(f"📊 {json.dumps(report.aggregate())}")
        return 1 if report.failed else 0

    async def cmd_sweep(self) -> int:
        w_values = self.args.w_values or self.config.get_list("sweep.w_values")
        sweep = await w_sweep(self.spec(dataset=self.args.dataset), w_values, self.logger)
        for row in sweep.rows():
            self.logger.info(f"📊 w={row['w']:g}: return={row['mean_discounted_return']:.4f} "
                             f"± {row['std_discounted_return']:.4f}")
        return 1 if sweep.failed else 0

    async def cmd_eval(self) -> int:
        policy = load_checkpoint(self.args.checkpoint)
        spec = self.spec(dataset=self.args.dataset)
        ds = resolve_dataset(spec.dataset, spec.dataset_seed, spec.tabular_episodes)
        env = env_for_dataset(ds)
        rows = []
        for episode in range(self.args.episodes):
            result = rollout(env, network_policy(policy), seed=episode)
            row = {"episode": episode, "discounted_return": result.discounted_return,
                   "undiscounted_return": result.undiscounted_return, "steps": result.steps,
                   "reached_target": result.reached_target, "clamped": result.clamped}
            if isinstance(env, ToyPathEnv):
                row["grid_deviation"] = grid_deviation(env, result)
            rows.append(row)
            self.logger.info(f"🎯 {json.dumps(row)}")
        if self.args.out:
            Helpers.save_json(os.path.join(self.args.out, "eval.json"), {"checkpoint": self.args.checkpoint,
                                                                         "episodes": rows})
        return 0

    async def cmd_plot(self) -> int:
        report = Helpers.load_json(self.args.report)
        if not report:
            self.logger.error(f"❌ Report nicht gefunden: {self.args.report}")
            return 1
        out = self.args.out or os.path.dirname(self.args.report)
        path = render_report_trajectories(report, os.path.join(out, "trajectories.svg"), self.args.run_index)
        self.logger.info(f"🖼 {path}")
        curves = [r["score_curve"] for r in report.get("rows", []) if r.get("score_curve")]
        if curves:
            path = render_score_curves({report.get("name", "run"): curves}, os.path.join(out, "scores.svg"))
            self.logger.info(f"🖼 {path}")
        return 0

    async def cmd_oracle_check(self) -> int:
        seed = self.args.seed if self.args.seed is not None else 0
        report = check_policy_improvement(self.args.instances, seed)
        self.logger.info(f"🔍 Oracle: {json.dumps(report.to_dict())}")
        if self.args.out:
            Helpers.save_json(os.path.join(self.args.out, "oracle.json"), report.to_dict())
        return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ppl", description="Partial policy learning experiments")
    parser.add_argument("--seed", type=int, default=None, help="single seed (datasets, training, oracle)")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--config", default=None, help="flat KEY=VALUE config file")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    dataset = sub.add_parser("dataset", help="generate or validate offline datasets")
    dataset_sub = dataset.add_subparsers(dest="action", required=True)
    gen = dataset_sub.add_parser("gen")
    gen.add_argument("kind", choices=["toy", "stitching", "tabular"])
    gen.add_argument("--path", default=None)
    gen.add_argument("--episodes", type=int, default=200)
    gen.add_argument("--noise", type=float, default=0.01)
    validate = dataset_sub.add_parser("validate")
    validate.add_argument("path")

    train = sub.add_parser("train", help="train and evaluate one experiment")
    train.add_argument("--dataset", default=None)
    train.add_argument("--algorithm", choices=["ppl", "bc", "qbc"], default=None)
    train.add_argument("--w", type=float, default=None)
    train.add_argument("--seeds", type=int, nargs="+", default=None)

    sweep = sub.add_parser("sweep", help="one experiment per w")
    sweep.add_argument("--dataset", default=None)
    sweep.add_argument("--w-values", type=float, nargs="+", default=None)
    sweep.add_argument("--seeds", type=int, nargs="+", default=None)

    evaluate = sub.add_parser("eval", help="roll out a saved policy checkpoint")
    evaluate.add_argument("checkpoint")
    evaluate.add_argument("--dataset", default=None)
    evaluate.add_argument("--episodes", type=int, default=1)

    plot = sub.add_parser("plot", help="render SVG figures from a report.json")
    plot.add_argument("report")
    plot.add_argument("--run-index", type=int, default=None)

    oracle = sub.add_parser("oracle", help="exact tabular checks")
    oracle_sub = oracle.add_subparsers(dest="action", required=True)
    check = oracle_sub.add_parser("check")
    check.add_argument("--instances", type=int, default=100)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    for name in ("seeds", "w_values"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        app = PPLApp(args)
        return asyncio.run(app.run())
    except KeyboardInterrupt:
        print("❌ Abgebrochen.", file=sys.stderr)
        return 130
    except (ValueError, OSError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
