"""
Experiment orchestration: resolve a dataset, train one policy per seed
(concurrently), evaluate by rollout, and write report.json, metrics.csv,
per-seed train logs, checkpoints and SVG figures.
"""

import asyncio
import csv
import io
import os
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from rl.data import (
    OfflineDataset,
    TabularMdp,
    generate_tabular_dataset,
    generate_toy_path_dataset,
    load_dataset,
    random_supports,
    random_tabular_mdp,
    stitching_mdp,
)
from rl.envs import TabularEnv, ToyPathEnv, grid_deviation, network_policy, rollout
from rl.nets import Network, policy_config, save_checkpoint
from rl.plots import curve_summary, render_score_curves, render_trajectories
from rl.training import (
    TrainConfig,
    TrainLog,
    TrainMode,
    bc_pretrain,
    covered_action_counts,
    qbc_baseline,
    train,
)
from utils.errors import TrainingError
from utils.helpers import Helpers
from utils.logger import PPLLogger

ALGORITHMS = ("ppl", "bc", "qbc")
BUILTIN_DATASETS = ("toy", "stitching", "tabular")
Env = Union[ToyPathEnv, TabularEnv]


@dataclass
class ExperimentSpec:
    name: str = "experiment"
    dataset: str = "toy"
    algorithm: str = "ppl"
    train: TrainConfig = field(default_factory=TrainConfig.toy)
    eval_episodes: int = 1
    seeds: List[int] = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    dataset_seed: int = 0
    tabular_episodes: int = 200
    max_concurrency: int = 4
    config_text: str = ""

    def validate(self) -> None:
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}, expected one of {ALGORITHMS}")
        if self.eval_episodes < 0:
            raise ValueError(f"eval_episodes must be >= 0, got {self.eval_episodes}")
        if self.algorithm == "qbc" and self.train.mode != TrainMode.ONE_STEP:
            raise ValueError("the qbc baseline needs a one-step Q^beta critic (mode=one-step)")
        if self.max_concurrency < 1:
            raise ValueError("max_concurrency must be >= 1")
        if self.dataset not in BUILTIN_DATASETS and not os.path.isfile(self.dataset):
            raise ValueError(f"dataset {self.dataset!r} is neither a builtin generator nor an existing file")
        os.makedirs(self.output_dir, exist_ok=True)

    def with_w(self, w: float) -> "ExperimentSpec":
        return replace(self, train=self.train.replace(w=w), name=f"{self.name}-w{w:g}",
                       output_dir=os.path.join(self.output_dir, f"w_{w:g}"))


@dataclass
class SeedResult:
    index: int
    seed: int
    status: str = "ok"
    discounted_returns: List[float] = field(default_factory=list)
    undiscounted_returns: List[float] = field(default_factory=list)
    episode_steps: List[int] = field(default_factory=list)
    reached_target: List[bool] = field(default_factory=list)
    grid_deviation: Optional[float] = None
    baseline_discounted_return: Optional[float] = None
    baseline_grid_deviation: Optional[float] = None
    covered_actions: Optional[float] = None
    trajectory: List[List[float]] = field(default_factory=list)
    baseline_trajectory: List[List[float]] = field(default_factory=list)
    score_curve: List[Tuple[int, float]] = field(default_factory=list)
    error: str = ""
    wall_clock_s: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def mean_discounted_return(self) -> Optional[float]:
        return Helpers.mean_std(self.discounted_returns)[0] if self.discounted_returns else None

    @property
    def mean_undiscounted_return(self) -> Optional[float]:
        return Helpers.mean_std(self.undiscounted_returns)[0] if self.undiscounted_returns else None


_CSV_FIELDS = ["index", "seed", "status", "episodes", "mean_discounted_return", "mean_undiscounted_return",
               "grid_deviation", "baseline_discounted_return", "baseline_grid_deviation", "covered_actions"]


@dataclass
class MetricsReport:
    name: str
    algorithm: str
    dataset: str
    config: Dict[str, Any]
    config_text: str
    rows: List[SeedResult]
    x_grid: List[float] = field(default_factory=list)
    experts: List[List[float]] = field(default_factory=list)
    wall_clock_s: float = 0.0

    @property
    def failed(self) -> bool:
        return any(not r.ok for r in self.rows)

    def aggregate(self) -> Dict[str, Any]:
        values = [r.mean_discounted_return for r in self.rows if r.ok and r.mean_discounted_return is not None]
        mean, std = Helpers.mean_std(values)
        deviations = [r.grid_deviation for r in self.rows if r.ok and r.grid_deviation is not None]
        return {
            "mean_discounted_return": mean,
            "std_discounted_return": std,
            "evaluated_seeds": len(values),
            "failed_seeds": sum(1 for r in self.rows if not r.ok),
            "mean_grid_deviation": Helpers.mean_std(deviations)[0] if deviations else None,
        }

    def score_curves(self) -> List[List[Tuple[int, float]]]:
        return [r.score_curve for r in self.rows if r.ok and r.score_curve]

    def to_dict(self) -> Dict[str, Any]:
        rows = []
        for r in self.rows:
            row = asdict(r)
            row["mean_discounted_return"] = r.mean_discounted_return
            row["mean_undiscounted_return"] = r.mean_undiscounted_return
            rows.append(row)
        return {
            "name": self.name,
            "algorithm": self.algorithm,
            "dataset": self.dataset,
            "config": self.config,
            "config_text": self.config_text,
            "rows": rows,
            "aggregate": self.aggregate(),
            "x_grid": self.x_grid,
            "experts": self.experts,
            "wall_clock_s": self.wall_clock_s,
        }

    def metrics_csv(self) -> str:
        """Per-seed rows; wall-clock values are left out so reruns compare byte-for-byte."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(_CSV_FIELDS)
        for r in self.rows:
            writer.writerow([
                r.index, r.seed, r.status, len(r.discounted_returns),
                _fmt(r.mean_discounted_return), _fmt(r.mean_undiscounted_return), _fmt(r.grid_deviation),
                _fmt(r.baseline_discounted_return), _fmt(r.baseline_grid_deviation), _fmt(r.covered_actions),
            ])
        return buffer.getvalue()


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


# --- datasets and environments ----------------------------------------------

def stitching_dataset(episodes: int = 200, seed: int = 0, gamma: float = 0.9) -> OfflineDataset:
    """The eight-state chain, with behaviour data from both half-optimal experts."""
    mdp, expert_a, expert_b = stitching_mdp(gamma)
    supports = [sorted({expert_a[s], expert_b[s]}) for s in range(mdp.n_states)]
    return generate_tabular_dataset(mdp, supports, episodes, seed)


def resolve_dataset(name: str, dataset_seed: int = 0, tabular_episodes: int = 200) -> OfflineDataset:
    if name == "toy":
        return generate_toy_path_dataset(seed=dataset_seed)
    if name == "stitching":
        return stitching_dataset(tabular_episodes, dataset_seed)
    if name == "tabular":
        rng = np.random.default_rng(dataset_seed)
        mdp = random_tabular_mdp(8, 4, rng)
        return generate_tabular_dataset(mdp, random_supports(mdp, rng), tabular_episodes, dataset_seed)
    return load_dataset(name)


def env_for_dataset(ds: OfflineDataset) -> Env:
    generator = ds.metadata.get("generator")
    if generator == "toy_path":
        grid = np.asarray(ds.metadata["x_grid"], dtype=np.float64)
        gamma = float(ds.metadata.get("params", {}).get("gamma", 0.99))
        return ToyPathEnv.default(len(grid), float(grid[0]), float(grid[-1]), gamma)
    if generator == "tabular":
        return TabularEnv(TabularMdp.from_dict(ds.metadata["mdp"]))
    raise ValueError(f"dataset generator {generator!r} has no executable environment")


# --- runs ---------------------------------------------------------------------

class ExperimentRunner:
    """
    Führt Experimente aus: Training pro Seed, Evaluation, Artefakte.
    """

    def __init__(self, spec: ExperimentSpec, logger: Optional[PPLLogger] = None):
        self.spec = spec
        self.logger = logger or PPLLogger(log_dir=None)

    def run_seed(self, ds: OfflineDataset, env: Optional[Env], index: int, seed: int) -> SeedResult:
        """Train and evaluate one seed. Training failures mark the seed instead of raising."""
        spec = self.spec
        result = SeedResult(index=index, seed=seed)
        seed_dir = os.path.join(spec.output_dir, f"run_{index:02d}_seed_{seed}")
        os.makedirs(seed_dir, exist_ok=True)
        config = spec.train.replace(seed=seed)
        started = time.perf_counter()

        def record_score(phase: str, step: int, policy: Network) -> None:
            if env is not None:
                result.score_curve.append((step, rollout(env, network_policy(policy)).discounted_return))

        try:
            baseline: Optional[Network] = None
            log = TrainLog()
            pi_config = policy_config(ds.state_dim, ds.action_dim, config.hidden_sizes)
            if spec.algorithm == "bc":
                policy = bc_pretrain(ds, pi_config, config.steps_bc, config.lr_policy, seed,
                                     config.batch_size, log=log, logger=self.logger, log_every=config.log_every)
            else:
                trained = train(ds, config if spec.algorithm == "ppl" else config.replace(steps_ppl=0),
                                logger=self.logger, on_eval=record_score)
                log = trained.log
                save_checkpoint(trained.critic, os.path.join(seed_dir, "critic.ckpt"))
                save_checkpoint(trained.potential, os.path.join(seed_dir, "potential.ckpt"))
                policy = trained.policy
                if config.mode == TrainMode.ONE_STEP:
                    baseline = qbc_baseline(ds, trained.critic, pi_config, config.steps_ppl, config.lr_policy,
                                            config.bc_weight, seed, config.batch_size, log=log,
                                            logger=self.logger, log_every=config.log_every)
                    if spec.algorithm == "qbc":
                        policy, baseline = baseline, None
                if spec.algorithm == "ppl" and ds.metadata.get("generator") == "tabular":
                    counts = covered_action_counts(policy, ds)
                    result.covered_actions = float(np.mean(list(counts.values())))
            log.save_csv(os.path.join(seed_dir, "trainlog.csv"))
            save_checkpoint(policy, os.path.join(seed_dir, "policy.ckpt"))
            if baseline is not None:
                save_checkpoint(baseline, os.path.join(seed_dir, "baseline.ckpt"))
        except (TrainingError, FloatingPointError, ValueError) as e:
            self.logger.error(f"❌ Seed {seed} (run {index}) fehlgeschlagen: {e}")
            result.status = "failed"
            result.error = str(e)
            result.wall_clock_s = time.perf_counter() - started
            return result

        if env is not None and spec.eval_episodes > 0:
            self._evaluate(env, policy, baseline, result)
        result.wall_clock_s = time.perf_counter() - started
        self.logger.info(f"✅ Seed {seed} (run {index}) fertig: return={result.mean_discounted_return}")
        return result

    def _evaluate(self, env: Env, policy: Network, baseline: Optional[Network], result: SeedResult) -> None:
        last = None
        for episode in range(self.spec.eval_episodes):
            last = rollout(env, network_policy(policy), seed=episode)
            result.discounted_returns.append(last.discounted_return)
            result.undiscounted_returns.append(last.undiscounted_return)
            result.episode_steps.append(last.steps)
            result.reached_target.append(last.reached_target)
        if isinstance(env, ToyPathEnv) and last is not None:
            result.grid_deviation = grid_deviation(env, last)
            result.trajectory = last.positions().tolist()
            if baseline is not None:
                base = rollout(env, network_policy(baseline))
                result.baseline_discounted_return = base.discounted_return
                result.baseline_grid_deviation = grid_deviation(env, base)
                result.baseline_trajectory = base.positions().tolist()

    async def run(self) -> MetricsReport:
        spec = self.spec
        spec.validate()
        started = time.perf_counter()
        ds = resolve_dataset(spec.dataset, spec.dataset_seed, spec.tabular_episodes)
        try:
            env: Optional[Env] = env_for_dataset(ds)
        except ValueError as e:
            self.logger.warning(f"⚠ Keine Evaluation möglich: {e}")
            env = None

        self.logger.info(f"🚀 Experiment {spec.name}: {spec.algorithm} auf {spec.dataset}, seeds={spec.seeds}")
        semaphore = asyncio.Semaphore(spec.max_concurrency)

        async def bounded(index: int, seed: int) -> SeedResult:
            async with semaphore:
                return await asyncio.to_thread(self.run_seed, ds, env, index, seed)

        rows = await asyncio.gather(*(bounded(i, s) for i, s in enumerate(spec.seeds)))
        report = MetricsReport(
            name=spec.name,
            algorithm=spec.algorithm,
            dataset=spec.dataset,
            config=spec.train.to_dict(),
            config_text=spec.config_text,
            rows=list(rows),
            x_grid=list(ds.metadata.get("x_grid", [])),
            experts=list(ds.metadata.get("experts", [])),
            wall_clock_s=time.perf_counter() - started,
        )
        self.write(report)
        return report

    def write(self, report: MetricsReport) -> None:
        out = self.spec.output_dir
        Helpers.save_json(os.path.join(out, "report.json"), report.to_dict())
        with open(os.path.join(out, "metrics.csv"), "w", encoding="utf-8", newline="") as file:
            file.write(report.metrics_csv())
        if report.experts and any(r.trajectory for r in report.rows):
            render_report_trajectories(report, os.path.join(out, "trajectories.svg"))
        if report.score_curves():
            render_score_curves({report.name: report.score_curves()}, os.path.join(out, "scores.svg"))
        if report.failed:
            self.logger.warning(f"⚠ {report.aggregate()['failed_seeds']} Seed(s) fehlgeschlagen")


async def run_experiment(spec: ExperimentSpec, logger: Optional[PPLLogger] = None) -> MetricsReport:
    return await ExperimentRunner(spec, logger).run()


def render_report_trajectories(report: Union[MetricsReport, Dict[str, Any]], path: str,
                               run_index: Optional[int] = None) -> str:
    """Trajectory figure for one evaluated seed of a toy report (first one by default)."""
    data = report.to_dict() if isinstance(report, MetricsReport) else report
    rows = [r for r in data.get("rows", []) if r.get("trajectory")]
    if run_index is not None:
        rows = [r for r in rows if r["index"] == run_index]
    if not rows or not data.get("x_grid"):
        raise ValueError("report contains no trajectory dumps")
    row = rows[0]
    trajectories: Dict[str, Any] = {}
    if row.get("baseline_trajectory"):
        trajectories["baseline"] = np.array(row["baseline_trajectory"])
    trajectories[data.get("algorithm", "ppl")] = np.array(row["trajectory"])
    return render_trajectories(data["x_grid"], data.get("experts", []), trajectories, path,
                               title=f"{data.get('name', '')} seed {row['seed']}")


@dataclass
class SweepReport:
    w_values: List[float]
    reports: List[MetricsReport]

    @property
    def failed(self) -> bool:
        return any(r.failed for r in self.reports)

    def rows(self) -> List[Dict[str, Any]]:
        out = []
        for w, report in zip(self.w_values, self.reports):
            covered = [r.covered_actions for r in report.rows if r.ok and r.covered_actions is not None]
            out.append({"w": w, **report.aggregate(),
                        "mean_covered_actions": Helpers.mean_std(covered)[0] if covered else None})
        return out

    def curves(self) -> Dict[str, List[List[Tuple[int, float]]]]:
        return {f"w={w:g}": r.score_curves() for w, r in zip(self.w_values, self.reports) if r.score_curves()}

    def to_dict(self) -> Dict[str, Any]:
        return {"rows": self.rows(), "curves": curve_summary(self.curves())}


async def w_sweep(base: ExperimentSpec, w_values: Sequence[float], logger: Optional[PPLLogger] = None) -> SweepReport:
    """One experiment per w, merged into a comparative report with EMA-smoothed score curves."""
    if not w_values:
        raise ValueError("w_values must not be empty")
    for w in w_values:
        if not w >= 1.0:
            raise ValueError(f"w must be >= 1, got {w}")
    logger = logger or PPLLogger(log_dir=None)
    reports = []
    for w in w_values:
        reports.append(await run_experiment(base.with_w(float(w)), logger))
    sweep = SweepReport([float(w) for w in w_values], reports)

    os.makedirs(base.output_dir, exist_ok=True)
    Helpers.save_json(os.path.join(base.output_dir, "sweep.json"), sweep.to_dict())
    with open(os.path.join(base.output_dir, "sweep.csv"), "w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        columns = ["w", "mean_discounted_return", "std_discounted_return", "evaluated_seeds", "failed_seeds",
                   "mean_grid_deviation", "mean_covered_actions"]
        writer.writerow(columns)
        for row in sweep.rows():
            writer.writerow(["" if row[c] is None else row[c] for c in columns])
    if sweep.curves():
        render_score_curves(sweep.curves(), os.path.join(base.output_dir, "sweep_scores.svg"))
    return sweep
