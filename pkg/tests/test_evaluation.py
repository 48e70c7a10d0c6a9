import json

import numpy as np
import pytest

from filmpol.dataset import synthesize
from filmpol.errors import ConfigError, DataError, TrainingAborted
from filmpol.evaluation import (PAPER_REFERENCE, Report, baseline_images, check_report_dict,
                                fold_seed, kfold_split, plot_report, run_ablations,
                                run_crossval)
from filmpol.nets import PipelineMode
from filmpol.sim import SceneConfig
from filmpol.train import TrainConfig, display_target


@pytest.mark.parametrize("n", [10, 103, 1000])
def test_kfold_partition(n):
    ids = [f"s{i}" for i in range(n)]
    plan = kfold_split(ids, 10, seed=5)
    tests = [plan.test_ids(f) for f in range(10)]
    flat = [i for t in tests for i in t]
    assert sorted(flat) == sorted(ids)
    assert len(set(flat)) == n
    sizes = plan.sizes()
    assert max(sizes) - min(sizes) <= 1
    for tr, te in plan.folds():
        assert not set(tr) & set(te)
        assert len(tr) + len(te) == n
    assert kfold_split(ids, 10, seed=5).assignments == plan.assignments
    assert kfold_split(ids, 10, seed=6).assignments != plan.assignments


def test_kfold_errors():
    with pytest.raises(ConfigError):
        kfold_split(range(10), 1)
    with pytest.raises(ConfigError):
        kfold_split(range(3), 4)
    with pytest.raises(DataError):
        kfold_split([1, 1, 2, 3], 2)


def test_fold_seed_distinct():
    seeds = {fold_seed(0, f) for f in range(10)}
    assert len(seeds) == 10
    assert fold_seed(3, 2) == fold_seed(3, 2)


def test_population_variance_matches_published_folds():
    # the published means/variances are recovered from the per-fold values
    # only under the population (ddof=0) convention
    ps = np.array(PAPER_REFERENCE["psnr_per_fold"])
    ss = np.array(PAPER_REFERENCE["ssim_per_fold"])
    assert round(ps.mean(), 2) == PAPER_REFERENCE["psnr_mean"]
    assert round(ss.mean(), 4) == PAPER_REFERENCE["ssim_mean"]
    assert abs(ps.var() - 0.5776) < 1e-9
    assert abs(ss.var() - 1.2264e-5) < 1e-9
    assert abs(ps.var() - PAPER_REFERENCE["psnr_variance"]) < 0.01
    assert abs(ss.var() - PAPER_REFERENCE["ssim_variance"]) < 1e-7
    assert abs(ps.var(ddof=1) - PAPER_REFERENCE["psnr_variance"]) > 0.05
    rep = Report(list(range(10)), {"full": {"psnr": ps.tolist(), "ssim": ss.tolist()}}, {})
    s = rep.summary()["full"]
    assert s["psnr_variance"] == pytest.approx(0.5776, abs=1e-9)
    assert s["psnr_mean_u16_peak"] == pytest.approx(s["psnr_mean"] + 96.33, abs=0.01)


def test_report_check_and_roundtrip():
    rep = Report([0, 1, 2], {"full": {"psnr": [30.0, 31.0, 32.5], "ssim": [0.9, 0.91, 0.95]},
                             "baseline:x": {"psnr": [20.0, 21.0, 22.0],
                                            "ssim": [0.5, 0.6, 0.7]}}, {"k": 3})
    assert rep.check()
    d = json.loads(rep.to_json())
    assert d["paper_reference"] == PAPER_REFERENCE
    assert d["variance_convention"].startswith("population")
    assert check_report_dict(d)
    d["summary"]["full"]["psnr_mean"] += 1e-6
    assert not check_report_dict(d)
    d = json.loads(rep.to_json())
    d["methods"]["full"]["psnr"].append(1.0)
    assert not check_report_dict(d)
    table = rep.table()
    assert "K1" in table and "K3" in table and "variance" in table
    assert len(table.strip().splitlines()) == 1 + 2 * 2


@pytest.fixture(scope="module")
def small():
    return synthesize([SceneConfig(content="text"), SceneConfig(content="qr")], 20, seed=8)


def test_baselines_are_close_but_imperfect(small):
    target = display_target(small.gt, 2.2)
    base = baseline_images(small, 2.2)
    for imgs in base.values():
        assert imgs.shape == target.shape
        err = np.abs(imgs - target).mean()
        assert 0 < err < 0.3


def test_crossval_toy_run(small, tmp_path):
    cfg = TrainConfig(max_iters=3, batch_size=2, lr=1e-3)
    seen = []
    rep = run_crossval(small, cfg, k=2, split_seed=1,
                       on_fold=lambda f, m, p, res: seen.append((f, m)))
    assert rep.folds == [0, 1] and seen == [(0, "full"), (1, "full")]
    assert set(rep.methods) == {"full", "baseline:mean_intensity", "baseline:analytic_prior"}
    assert all(len(m["psnr"]) == 2 for m in rep.methods.values())
    assert rep.check()
    again = run_crossval(small, cfg, k=2, split_seed=1)
    assert again.methods == rep.methods and again.fingerprint == rep.fingerprint
    deltas = rep.paired_deltas["full - baseline:mean_intensity"]["psnr"]
    full, base = rep.methods["full"]["psnr"], rep.methods["baseline:mean_intensity"]["psnr"]
    assert deltas == [a - b for a, b in zip(full, base)]
    files = plot_report(rep, tmp_path)
    assert all((tmp_path / f).stat().st_size > 0 for f in ("psnr_boxplot.png",
                                                          "psnr_heatmap.png"))
    assert len(files) == 2


def test_ablation_shares_folds(small):
    cfg = TrainConfig(max_iters=2, batch_size=2, lr=1e-3)
    rep = run_ablations(small, cfg, [PipelineMode.FULL, PipelineMode.NO_PRIOR], k=2,
                        folds=[1], baselines=False)
    assert rep.folds == [1]
    assert set(rep.methods) == {"full", "no-prior"}
    assert set(rep.paired_deltas) == {"full - no-prior"}
    solo = run_crossval(small, cfg, PipelineMode.NO_PRIOR, k=2, folds=[1], baselines=False)
    assert solo.methods["no-prior"] == rep.methods["no-prior"]
    with pytest.raises(ConfigError):
        run_crossval(small, cfg, k=2, folds=[2])


def test_abort_carries_fold(small):
    bad = small.subset(range(len(small)))
    bad.captures[:] = np.nan
    with pytest.raises(TrainingAborted) as e:
        run_crossval(bad, TrainConfig(max_iters=2, batch_size=2), k=2, folds=[1])
    assert e.value.fold == 1
