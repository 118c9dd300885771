"""Experiment configuration and the method runners behind the command line."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ferret.analytics import PipelineConfig, StreamSpec, WorkerConfig
from ferret.learner import (
    POLICIES,
    DenseNet,
    test_accuracy,
    train_pipeline,
    train_sequential,
)
from ferret.metrics import RunRecord
from ferret.planner import PlanResult, min_feasible_budget, plan
from ferret.profile import ModelProfile, PartitionScheme, load_profile, stage_stats, synth_profile
from ferret.sim import simulate
from ferret.stream import (
    SkipPolicy,
    Stream,
    apply_skip_policy,
    load_csv_stream,
    synth_drift_stream,
    synth_tabular_stream,
)

CONFIG_HEADER = "ferret-config v1"
PLAN_HEADER = "ferret-plan v1"
BASELINES = ("oracle", "one_skip", "random_n", "last_n")
FERRET_LEVELS = ("ferret_M-", "ferret_M", "ferret_M+", "ferret")
METHODS = BASELINES + FERRET_LEVELS


class ExperimentError(ValueError):
    """Raised for invalid experiment configurations or mismatched artifacts."""


class InfeasibleBudget(RuntimeError):
    """Raised when no plan fits the memory budget."""


@dataclass
class ExperimentConfig:
    setting: str = "default"
    profile: dict = field(default_factory=lambda: {"source": "net"})
    hidden: tuple[int, ...] = (64, 64, 64)
    stream: dict = field(default_factory=lambda: {"kind": "tabular", "n": 50_000})
    test_fraction: float = 0.1
    t_d: float | None = None
    decay: float | None = None
    V_D: float = 1.0
    budget: float = math.inf
    methods: tuple[str, ...] = ("oracle", "ferret_M+", "ferret_M", "one_skip")
    method: str = "ferret_M+"
    baseline: str = "one_skip"
    skip_B: int = 4
    skip_N: int = 1
    compensation: str = "none"
    replay: bool = False
    seeds: tuple[int, ...] = (0,)
    horizon: int = 1000
    base_dir: Path = field(default=Path("."), repr=False)

    def validate(self) -> None:
        for m in (*self.methods, self.method):
            if m not in METHODS:
                raise ExperimentError(f"unknown method {m!r}; expected one of {METHODS}")
        if self.compensation not in POLICIES:
            raise ExperimentError(f"unknown compensation {self.compensation!r}; expected one of {POLICIES}")
        if not self.budget > 0:
            raise InfeasibleBudget(f"budget {self.budget} is infeasible: it must be > 0")
        if self.t_d is not None and not self.t_d > 0:
            raise ExperimentError("t_d must be > 0")
        if not 0 <= self.test_fraction < 1:
            raise ExperimentError("test_fraction must lie in [0, 1)")
        if not self.seeds:
            raise ExperimentError("at least one seed is required")
        src = self.profile.get("source")
        if src not in ("net", "file", "synthetic"):
            raise ExperimentError(f"profile source must be net, file or synthetic, got {src!r}")
        if src == "file" and not self.resolve(self.profile.get("path", "")).exists():
            raise ExperimentError(f"profile file not found: {self.profile.get('path')}")
        if self.stream.get("kind") == "csv" and not self.resolve(self.stream.get("path", "")).exists():
            raise ExperimentError(f"stream file not found: {self.stream.get('path')}")

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path


_FIELDS = {
    "setting", "profile", "hidden", "stream", "test_fraction", "t_d", "decay", "V_D", "budget",
    "methods", "method", "baseline", "skip", "compensation", "replay", "seeds", "horizon",
}


def parse_budget(value) -> float:
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "+inf"):
            return math.inf
        try:
            return float(value)
        except ValueError:
            raise ExperimentError(f"budget must be a count or 'inf', got {value!r}") from None
    if value is None:
        return math.inf
    return float(value)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ExperimentError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ExperimentError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict) or raw.get("format") != CONFIG_HEADER:
        raise ExperimentError(f"{path}: expected \"format\": \"{CONFIG_HEADER}\"")
    unknown = set(raw) - _FIELDS - {"format"}
    if unknown:
        raise ExperimentError(f"{path}: unknown config keys {sorted(unknown)}")
    cfg = ExperimentConfig(base_dir=path.parent)
    for key in ("setting", "profile", "stream", "test_fraction", "t_d", "decay", "V_D",
                "method", "baseline", "compensation", "replay", "horizon"):
        if key in raw:
            setattr(cfg, key, raw[key])
    if "hidden" in raw:
        cfg.hidden = tuple(int(h) for h in raw["hidden"])
    if "methods" in raw:
        cfg.methods = tuple(raw["methods"])
    if "seeds" in raw:
        cfg.seeds = tuple(int(s) for s in raw["seeds"])
    if "budget" in raw:
        cfg.budget = parse_budget(raw["budget"])
    if "skip" in raw:
        cfg.skip_B = int(raw["skip"].get("B", cfg.skip_B))
        cfg.skip_N = int(raw["skip"].get("N", cfg.skip_N))
    return cfg


def build_stream(cfg: ExperimentConfig, seed: int) -> tuple[Stream, Stream]:
    """Training stream and held-out test items, both deterministic in ``seed``."""
    spec = dict(cfg.stream)
    kind = spec.pop("kind", "tabular")
    n = int(spec.pop("n", 1000))
    n_test = int(round(n * cfg.test_fraction / (1 - cfg.test_fraction))) if cfg.test_fraction else 0
    if kind == "tabular":
        full = synth_tabular_stream(n + n_test, seed=seed, **spec)
    elif kind == "drift":
        full = synth_drift_stream(
            n + n_test, int(spec.get("n_features", 20)), int(spec.get("n_classes", 10)),
            spec.get("drift", "rotate"), seed=seed,
        )
    elif kind == "csv":
        full = load_csv_stream(cfg.resolve(spec["path"]), spec.get("label_column", "label"))
        n_test = int(round(len(full) * cfg.test_fraction))
        n = len(full) - n_test
    else:
        raise ExperimentError(f"unknown stream kind {kind!r}")
    rng = np.random.default_rng(seed)
    test_idx = np.sort(rng.choice(len(full), size=n_test, replace=False)) if n_test else np.array([], dtype=int)
    mask = np.ones(len(full), dtype=bool)
    mask[test_idx] = False
    train = Stream(full.X[mask][:n], full.y[mask][:n], full.n_classes)
    test = Stream(full.X[test_idx], full.y[test_idx], full.n_classes) if n_test else Stream(
        np.zeros((0, full.n_features)), np.zeros(0, dtype=np.int64), full.n_classes)
    return train, test


def net_sizes(cfg: ExperimentConfig, stream: Stream) -> list[int]:
    return [stream.n_features, *cfg.hidden, stream.n_classes]


def build_profile(cfg: ExperimentConfig) -> ModelProfile:
    src = cfg.profile.get("source", "net")
    if src == "file":
        return load_profile(cfg.resolve(cfg.profile["path"]))
    if src == "synthetic":
        return synth_profile(int(cfg.profile.get("n_layers", 8)), int(cfg.profile.get("seed", 0)),
                             cfg.profile.get("cost_model", "uniform"))
    train, _ = build_stream(_small(cfg), 0)
    return DenseNet(net_sizes(cfg, train)).profile()


def _small(cfg: ExperimentConfig) -> ExperimentConfig:
    """The same config with a tiny stream, for reading feature/class counts."""
    out = ExperimentConfig(**{k: getattr(cfg, k) for k in cfg.__dataclass_fields__})
    if cfg.stream.get("kind") != "csv":
        out.stream = {**cfg.stream, "n": 16}
    return out


def arrival_interval(cfg: ExperimentConfig, profile: ModelProfile) -> float:
    """Configured interval, else the slowest single-layer forward pass."""
    return float(cfg.t_d) if cfg.t_d is not None else profile.max_forward


def stream_spec(cfg: ExperimentConfig, profile: ModelProfile) -> StreamSpec:
    c = cfg.decay if cfg.decay is not None else math.log(2.0) / profile.total_time
    return StreamSpec(arrival_interval(cfg, profile), c=c, V_D=cfg.V_D)


def make_plan(cfg: ExperimentConfig, profile: ModelProfile, budget: float) -> PlanResult:
    s = stream_spec(cfg, profile)
    if not budget > 0:
        raise InfeasibleBudget(f"budget {budget} is infeasible: it must be > 0")
    res = plan(profile, s.t_d, s, budget)
    if res.infeasible:
        raise InfeasibleBudget(
            f"budget {budget:g} is infeasible: the smallest plan needs "
            f"{min_feasible_budget(profile, s.t_d, s)}"
        )
    return res


def level_budget(cfg: ExperimentConfig, profile: ModelProfile, method: str) -> float:
    """Budget of a Ferret memory level.

    M+ is unconstrained, M- is the smallest budget that keeps one worker,
    and M is the geometric mean of M- and the unconstrained plan's memory.
    """
    if method == "ferret":
        return cfg.budget
    if method == "ferret_M+":
        return math.inf
    s = stream_spec(cfg, profile)
    low = min_feasible_budget(profile, s.t_d, s)
    if method == "ferret_M-":
        return float(low)
    high = plan(profile, s.t_d, s, math.inf).memory
    return math.sqrt(low * high)


def plan_to_dict(res: PlanResult, cfg: ExperimentConfig, profile: ModelProfile, budget: float) -> dict:
    s = stream_spec(cfg, profile)
    return {
        "format": PLAN_HEADER,
        "budget": "inf" if math.isinf(budget) else budget,
        "n_layers": len(profile),
        "bounds": list(res.L.bounds),
        "t_c": res.t_c,
        "t_d": s.t_d,
        "decay": s.c,
        "V_D": s.V_D,
        "modulus": res.C.modulus,
        "workers": [
            {"c_d": w.c_d, "c_r": w.c_r, "c_a": list(w.c_a), "c_o": list(w.c_o)} for w in res.C.workers
        ],
        "rate": res.rate,
        "memory": res.memory,
        "trace": [t.to_dict() for t in res.trace],
    }


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


@dataclass(frozen=True)
class LoadedPlan:
    L: PartitionScheme
    C: PipelineConfig
    t_d: float
    memory: int
    rate: float
    n_layers: int


def read_plan(path) -> LoadedPlan:
    path = Path(path)
    if not path.exists():
        raise ExperimentError(f"plan file not found: {path}")
    try:
        raw = json.loads(path.read_text())
        if raw.get("format") != PLAN_HEADER:
            raise ExperimentError(f"{path}: expected \"format\": \"{PLAN_HEADER}\"")
        workers = tuple(WorkerConfig(w["c_d"], w["c_r"], tuple(w["c_a"]), tuple(w["c_o"])) for w in raw["workers"])
        return LoadedPlan(PartitionScheme(tuple(raw["bounds"])), PipelineConfig(workers, int(raw["modulus"])),
                          float(raw["t_d"]), int(raw["memory"]), float(raw["rate"]), int(raw["n_layers"]))
    except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
        raise ExperimentError(f"{path}: malformed plan: {exc}") from None


def baseline_memory(profile: ModelProfile, extra: int = 0) -> int:
    """One weight copy and one set of activations, plus any input buffer."""
    return sum(l.w for l in profile.layers) + sum(l.a for l in profile.layers) + extra


def run_method(cfg: ExperimentConfig, method: str, seed: int) -> RunRecord:
    """Train one method on one seeded stream and score it."""
    train, test = build_stream(cfg, seed)
    sizes = net_sizes(cfg, train)
    net = DenseNet.init(sizes, seed=seed)
    profile = build_profile(cfg) if cfg.profile.get("source") != "net" else net.profile()
    if len(profile) != net.n_layers:
        raise ExperimentError(f"profile has {len(profile)} layers, network has {net.n_layers}")
    t_d = arrival_interval(cfg, profile)
    train = train.with_interval(t_d)
    if method in BASELINES:
        policy = SkipPolicy(method, cfg.skip_B, cfg.skip_N, seed) if method in ("random_n", "last_n") else SkipPolicy(method)
        skip = apply_skip_policy(train, policy, profile.total_time)
        result, norm = train_sequential(net, train, skip, replay=cfg.replay, seed=seed)
        extra = cfg.skip_B * train.n_features if method in ("random_n", "last_n") else 0
        memory = baseline_memory(profile, extra)
    else:
        res = make_plan(cfg, profile, level_budget(cfg, profile, method))
        stats = stage_stats(profile, res.L)
        trace = simulate(stats, res.C, StreamSpec(t_d), len(train))
        result, norm = train_pipeline(net.with_partition(res.L), train, trace, cfg.compensation)
        memory = res.memory
    tacc = test_accuracy(result.net, test.X, test.y, norm)
    return RunRecord(cfg.setting, method, seed, result.oacc, tacc, memory, result.correct)
