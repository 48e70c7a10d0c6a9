"""Cross-validation protocol, ablation runner and reports."""
import hashlib
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, TrainingAborted
from .metrics import U16_PEAK_OFFSET_DB, psnr, ssim
from .nets import PipelineMode
from .plm import analytic_prior
from .polar import PolarStack, gamma_correct, intensity_gt, stokes_from_stack
from .train import display_target, predict, train

# Published cross-validation figures for the full method, kept as external
# references only; the synthetic benchmark is not expected to match them.
PAPER_REFERENCE = {
    "psnr_mean": 36.48,
    "psnr_variance": 0.57,
    "ssim_mean": 0.9824,
    "ssim_variance": 1.23e-5,
    "psnr_per_fold": [36.76, 37.29, 36.62, 35.12, 36.93, 37.21, 36.24, 36.67, 36.94, 35.02],
    "ssim_per_fold": [0.9852, 0.9859, 0.9822, 0.9767, 0.9845, 0.9833, 0.9836, 0.9830,
                      0.9850, 0.9749],
    "note": "published 10-fold results on the real capture dataset; not reproducible here",
}

ABLATION_MODES = (PipelineMode.FULL, PipelineMode.NO_PRIOR, PipelineMode.NO_AOP_DOP,
                  PipelineMode.NO_POLAR)


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: dict
    seed: int

    def test_ids(self, fold):
        return [i for i, f in self.assignments.items() if f == fold]

    def train_ids(self, fold):
        return [i for i, f in self.assignments.items() if f != fold]

    def folds(self):
        """(train ids, test ids) for every fold in order."""
        for f in range(self.k):
            yield self.train_ids(f), self.test_ids(f)

    def sizes(self):
        return [len(self.test_ids(f)) for f in range(self.k)]


def kfold_split(ids, k=10, seed=0):
    """Shuffle ``ids`` with ``seed`` and deal them round-robin into ``k`` folds."""
    ids = list(ids)
    if k < 2:
        raise ConfigError(f"k must be at least 2, got {k}", "k")
    if len(ids) < k:
        raise ConfigError(f"{len(ids)} samples cannot fill {k} folds", "k")
    if len(set(ids)) != len(ids):
        raise DataError("sample ids must be unique")
    order = np.random.default_rng(np.random.SeedSequence([int(seed), 0xF01D])).permutation(len(ids))
    return FoldPlan(k, {ids[j]: int(pos % k) for pos, j in enumerate(order)}, int(seed))


def fold_seed(base, fold):
    return int(np.random.SeedSequence([int(base), int(fold)]).generate_state(1)[0])


# --- per-sample scoring ----------------------------------------------------

def score(preds, targets):
    """Per-image PSNR and SSIM lists."""
    ps = [psnr(p, t) for p, t in zip(preds, targets)]
    ss = [ssim(p, t) for p, t in zip(preds, targets)]
    return ps, ss


def baseline_images(dataset, gamma):
    """Non-learned references: the mean captured intensity and the analytic prior."""
    mean_int, prior = [], []
    for cap in dataset.captures:
        st = PolarStack.from_array(cap)
        mean_int.append(intensity_gt(st, gamma))
        prior.append(gamma_correct(analytic_prior(stokes_from_stack(st)).p, gamma))
    return {"mean_intensity": np.stack(mean_int), "analytic_prior": np.stack(prior)}


def evaluate(model, dataset, gamma):
    target = display_target(dataset.gt, gamma)
    out = predict(model, dataset.captures)
    return score(out["rec"], target)


def _stats(values):
    v = np.asarray(values, dtype=np.float64)
    return float(np.mean(v)), float(np.var(v))


# --- reports ---------------------------------------------------------------

def config_fingerprint(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Report:
    """Per-fold PSNR/SSIM per method, with mean and (population) variance.

    ``methods`` maps a method name to ``{"psnr": [...], "ssim": [...]}`` with
    one value per evaluated fold. Learned methods are pipeline modes,
    baselines carry a ``baseline:`` prefix.
    """

    folds: list
    methods: dict
    config: dict
    fingerprint: str = ""
    runtime_s: float = 0.0
    paired_deltas: dict = field(default_factory=dict)

    def summary(self):
        out = {}
        for name, m in self.methods.items():
            pm, pv = _stats(m["psnr"])
            sm, sv = _stats(m["ssim"])
            out[name] = {"psnr_mean": pm, "psnr_variance": pv,
                         "psnr_mean_u16_peak": pm + U16_PEAK_OFFSET_DB,
                         "ssim_mean": sm, "ssim_variance": sv}
        return out

    def to_dict(self):
        return {
            "format_version": 1,
            "kind": "filmpol-report",
            "folds": self.folds,
            "methods": self.methods,
            "summary": self.summary(),
            "paired_deltas": self.paired_deltas,
            "config": self.config,
            "fingerprint": self.fingerprint,
            "runtime_s": self.runtime_s,
            "paper_reference": PAPER_REFERENCE,
            "variance_convention": "population variance over folds (ddof=0)",
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(d["folds"], d["methods"], d["config"], d.get("fingerprint", ""),
                   d.get("runtime_s", 0.0), d.get("paired_deltas", {}))

    def table(self):
        """Aligned text table, one PSNR and one SSIM row per method."""
        names = [f"K{f + 1}" for f in self.folds]
        head = f"{'method':<26}{'':6}" + "".join(f"{n:>9}" for n in names)
        head += f"{'mu':>10}{'variance':>12}"
        lines = [head]
        summ = self.summary()
        for name, m in self.methods.items():
            for metric, fmt in (("psnr", "{:9.2f}"), ("ssim", "{:9.4f}")):
                row = f"{name if metric == 'psnr' else '':<26}{metric.upper():6}"
                row += "".join(fmt.format(v) for v in m[metric])
                row += f"{summ[name][metric + '_mean']:10.4f}{summ[name][metric + '_variance']:12.3e}"
                lines.append(row)
        return "\n".join(lines) + "\n"

    def check(self, tol=1e-12):
        """Recompute mean and variance from the per-fold values and compare."""
        stored = self.summary()
        for name, m in self.methods.items():
            for metric in ("psnr", "ssim"):
                v = np.asarray(m[metric], dtype=np.float64)
                if len(v) != len(self.folds):
                    return False
                if abs(stored[name][metric + "_mean"] - v.sum() / len(v)) > tol:
                    return False
                mu = v.sum() / len(v)
                if abs(stored[name][metric + "_variance"] - ((v - mu) ** 2).sum() / len(v)) > tol:
                    return False
        return True


def check_report_dict(d, tol=1e-12):
    """Validate a parsed report: stored summary must match the per-fold data."""
    rep = Report.from_dict(d)
    if not rep.check(tol):
        return False
    fresh = rep.summary()
    for name, s in d.get("summary", {}).items():
        for key, val in s.items():
            if abs(fresh[name][key] - val) > tol:
                return False
    return True


# --- runners ---------------------------------------------------------------

def _run(dataset, train_cfg, modes, k, split_seed, folds, anet_desc, rnet_desc,
         baselines, on_fold):
    t0 = time.perf_counter()
    plan = kfold_split(dataset.ids, k, split_seed)
    folds = list(range(k)) if folds is None else [int(f) for f in folds]
    for f in folds:
        if not 0 <= f < k:
            raise ConfigError(f"fold {f} is outside 0..{k - 1}", "folds")
    index = {sid: i for i, sid in enumerate(dataset.ids)}
    methods = {m.value: {"psnr": [], "ssim": []} for m in modes}
    if baselines:
        for b in ("mean_intensity", "analytic_prior"):
            methods[f"baseline:{b}"] = {"psnr": [], "ssim": []}
    for f in folds:
        tr = dataset.subset([index[i] for i in plan.train_ids(f)])
        te = dataset.subset([index[i] for i in plan.test_ids(f)])
        target = display_target(te.gt, train_cfg.gamma)
        cfg = replace(train_cfg, seed=fold_seed(train_cfg.seed, f))
        for mode in modes:
            try:
                res = train(cfg, tr, mode, anet_desc, rnet_desc)
            except TrainingAborted as err:
                raise TrainingAborted(str(err), err.diagnostic, fold=f) from None
            ps, ss = score(predict(res.model, te.captures)["rec"], target)
            methods[mode.value]["psnr"].append(float(np.mean(ps)))
            methods[mode.value]["ssim"].append(float(np.mean(ss)))
            if on_fold is not None:
                on_fold(f, mode.value, methods[mode.value]["psnr"][-1], res)
        if baselines:
            for b, imgs in baseline_images(te, train_cfg.gamma).items():
                ps, ss = score(imgs, target)
                methods[f"baseline:{b}"]["psnr"].append(float(np.mean(ps)))
                methods[f"baseline:{b}"]["ssim"].append(float(np.mean(ss)))
    config = {
        "train": train_cfg.to_dict(),
        "modes": [m.value for m in modes],
        "k": k,
        "split_seed": int(split_seed),
        "folds": folds,
        "n_samples": len(dataset),
        "anet": anet_desc,
        "rnet": rnet_desc,
    }
    rep = Report(folds, methods, config, config_fingerprint(config),
                 round(time.perf_counter() - t0, 3))
    full = PipelineMode.FULL.value
    if full in methods:
        for name, m in methods.items():
            if name == full:
                continue
            rep.paired_deltas[f"{full} - {name}"] = {
                metric: [a - b for a, b in zip(methods[full][metric], m[metric])]
                for metric in ("psnr", "ssim")
            }
    return rep


def run_crossval(dataset, train_cfg, mode=PipelineMode.FULL, k=10, split_seed=0,
                 folds=None, anet_desc=None, rnet_desc=None, baselines=True, on_fold=None):
    """Train on k-1 folds, score on the held-out one, for each selected fold.

    Each fold trains with a seed derived from ``(train_cfg.seed, fold)``.
    A training abort is re-raised with the fold index attached.
    """
    return _run(dataset, train_cfg, [PipelineMode(mode)], k, split_seed, folds,
                anet_desc, rnet_desc, baselines, on_fold)


def run_ablations(dataset, train_cfg, modes=ABLATION_MODES, k=10, split_seed=0,
                  folds=None, anet_desc=None, rnet_desc=None, baselines=True, on_fold=None):
    """Every pipeline mode on the same folds and seeds, with per-fold paired
    deltas (full minus each other method)."""
    modes = [PipelineMode(m) for m in modes]
    return _run(dataset, train_cfg, modes, k, split_seed, folds, anet_desc, rnet_desc,
                baselines, on_fold)


# --- figures ---------------------------------------------------------------

def plot_report(report, out_dir):
    """Boxplot of per-fold PSNR and a fold-by-method PSNR heatmap."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = list(report.methods)
    data = [report.methods[n]["psnr"] for n in names]
    paths = []

    fig, ax = plt.subplots(figsize=(1.6 * len(names) + 2, 4))
    ax.boxplot(data)
    ax.set_xticks(range(1, len(names) + 1), names, rotation=20, ha="right")
    ax.set_ylabel("held-out PSNR (dB)")
    fig.tight_layout()
    paths.append(out_dir / "psnr_boxplot.png")
    fig.savefig(paths[-1], dpi=100)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(1.0 * len(report.folds) + 3, 0.5 * len(names) + 1.5))
    im = ax.imshow(np.asarray(data), aspect="auto", cmap="viridis")
    ax.set_yticks(range(len(names)), names)
    ax.set_xticks(range(len(report.folds)), [f"K{f + 1}" for f in report.folds])
    fig.colorbar(im, ax=ax, label="PSNR (dB)")
    fig.tight_layout()
    paths.append(out_dir / "psnr_heatmap.png")
    fig.savefig(paths[-1], dpi=100)
    plt.close(fig)
    return [str(p) for p in paths]
