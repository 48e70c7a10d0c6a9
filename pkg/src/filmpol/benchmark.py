"""The pre-registered synthetic benchmark (``benchmarks/benchmark.json``)."""
from dataclasses import dataclass, replace
from pathlib import Path

from . import io
from .dataset import synthesize
from .errors import ConfigError
from .evaluation import run_ablations
from .nets import PipelineMode
from .sim import SceneConfig
from .train import TrainConfig

DEFAULT_PATH = Path(__file__).resolve().parents[2] / "benchmarks" / "benchmark.json"


@dataclass(frozen=True)
class Benchmark:
    scenes: tuple
    count: int
    data_seed: int
    train: TrainConfig
    k: int
    split_seed: int
    folds: tuple
    smoke: dict
    thresholds: dict

    def dataset(self, count=None):
        return synthesize(self.scenes, self.count if count is None else count, self.data_seed)

    def run(self, modes=(PipelineMode.FULL,), dataset=None, on_fold=None):
        ds = self.dataset() if dataset is None else dataset
        return run_ablations(ds, self.train, modes, k=self.k, split_seed=self.split_seed,
                             folds=list(self.folds), on_fold=on_fold)

    def smoke_config(self):
        return replace(self.train, max_iters=int(self.smoke["max_iters"]))


def load_benchmark(path=DEFAULT_PATH):
    d = io.read_json(path, "benchmark")
    io.check_fields(d, {"version", "description", "dataset", "train", "eval", "smoke",
                        "thresholds"}, "benchmark", required=("version", "dataset", "train", "eval"))
    if d["version"] != 1:
        raise ConfigError(f"benchmark.version must be 1, got {d['version']!r}", "benchmark.version")
    ds = d["dataset"]
    io.check_fields(ds, {"count", "seed", "scenes"}, "benchmark.dataset",
                    required=("count", "seed", "scenes"))
    ev = d["eval"]
    io.check_fields(ev, {"k", "split_seed", "folds"}, "benchmark.eval", required=("k",))
    scenes = tuple(SceneConfig.from_dict(s, f"benchmark.dataset.scenes[{i}]")
                   for i, s in enumerate(ds["scenes"]))
    return Benchmark(
        scenes=scenes,
        count=int(ds["count"]),
        data_seed=int(ds["seed"]),
        train=TrainConfig.from_dict(d["train"], "benchmark.train"),
        k=int(ev["k"]),
        split_seed=int(ev.get("split_seed", 0)),
        folds=tuple(ev.get("folds") or range(int(ev["k"]))),
        smoke=dict(d.get("smoke", {})),
        thresholds=dict(d.get("thresholds", {})),
    )
