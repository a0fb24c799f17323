"""Training loops, evaluation pipelines, ablation runner, oracle baseline.

One RunConfig fully determines a run: corpus, splits, model init, batch
order, and evaluation all draw from child streams of its seed, so the same
config reproduces the same metrics on the same platform.
"""

import math
import os
import time
import warnings
from dataclasses import dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from . import nn
from .chamfer import chamfer, chamfer_loss
from .checkpoint import load_checkpoint, save_checkpoint
from .config import format_config
from .data import (
    FAMILIES,
    attach_partials,
    batch_clouds,
    make_splits,
    make_synthetic_corpus,
    split_records,
)
from .encoders import ENCODERS, make_encoder
from .errors import ConfigError, DataError, NumericsError, TrainingDiverged, UsageError
from .folding import FoldingDecoder, make_seed_source
from .optim import Adam
from .pointcloud import resample
from .psg import DecoderConfig, ProgressiveDecoder

DECODER_KINDS = ("seedgen", "fold-grid", "fold-random", "fold-latent2d", "fold-latent32")


@dataclass
class RunConfig:
    """Everything that determines a training run."""

    encoder: str = "pointnet"
    decoder: str = "seedgen"
    codeword_dim: int = 512
    seed_dim: int = 32
    resolutions: tuple = ((4, 4), (8, 8), (16, 16), (32, 32))
    fusion_stages: int = 3
    output_points: int = 1024
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 1e-6
    batch_size: int = 32
    epochs: int = 20
    families: tuple = FAMILIES[:4]
    per_family: int = 8
    n_points: int = 1024
    noise_sigma: float = 0.0
    split_ratios: tuple = (0.8, 0.1, 0.1)
    occlusion: float = 0.0
    seed: int = 0
    out_dir: str = ""

    def __post_init__(self):
        if self.encoder not in ENCODERS:
            raise ConfigError(f"unknown encoder '{self.encoder}'")
        if self.decoder not in DECODER_KINDS:
            raise ConfigError(f"unknown decoder '{self.decoder}'")
        self.resolutions = tuple(tuple(int(v) for v in hw) for hw in self.resolutions)
        self.betas = tuple(float(b) for b in self.betas)
        self.families = tuple(self.families)
        self.split_ratios = tuple(float(r) for r in self.split_ratios)
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.per_family < 1 or self.n_points < 1:
            raise ConfigError("per_family and n_points must be >= 1")
        if not 0 <= self.occlusion < 1:
            raise ConfigError(f"occlusion must lie in [0, 1), got {self.occlusion}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")

    def config_id(self):
        """Short row label: decoder kind, with stage count for seedgen."""
        if self.decoder == "seedgen":
            return f"seedgen-k{self.fusion_stages}"
        return self.decoder


def run_config_to_dict(cfg):
    """RunConfig -> {"train": {...}} tree for the config writer."""
    out = {}
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = [list(x) if isinstance(x, tuple) else x for x in v]
        out[f.name] = v
    return {"train": out}


def run_config_from_dict(tree, extra_sections=()):
    """Inverse of run_config_to_dict; unknown keys are hard errors.

    Sections named in extra_sections may sit next to [train] in the same
    file (the ablation runner keeps its sweep settings there) and are
    ignored here.
    """
    if "train" in tree:
        d = dict(tree["train"])
        stray = sorted(set(tree) - {"train"} - set(extra_sections))
        if stray:
            raise ConfigError(f"unknown config sections: {stray}")
    else:
        d = dict(tree)
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown train config keys: {unknown}")
    return RunConfig(**d)


# ---------------------------------------------------------------------------
# model assembly
# ---------------------------------------------------------------------------


def make_decoder(cfg, rng):
    if cfg.decoder == "seedgen":
        return ProgressiveDecoder(
            DecoderConfig(
                codeword_dim=cfg.codeword_dim,
                seed_dim=cfg.seed_dim,
                resolutions=cfg.resolutions,
                fusion_stages=cfg.fusion_stages,
                output_points=cfg.output_points,
            ),
            rng,
        )
    kind = {
        "fold-grid": "fixed_grid",
        "fold-random": "uniform_random",
        "fold-latent2d": "generated_2d",
        "fold-latent32": "generated_nd",
    }[cfg.decoder]
    source = make_seed_source(
        kind, cfg.output_points, codeword_dim=cfg.codeword_dim, rng=rng,
        dim=cfg.seed_dim,
    )
    return FoldingDecoder(cfg.codeword_dim, source, cfg.output_points, rng)


class AutoEncoder(nn.Module):
    """Encoder to codeword, decoder back to a cloud."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.encoder = make_encoder(cfg.encoder, cfg.codeword_dim, rng)
        self.decoder = make_decoder(cfg, rng)

    def forward(self, points):
        return self.decoder(self.encoder(points))


def count_parameters(model):
    """Trainable element count plus a per-child breakdown."""
    total = 0
    breakdown = {}
    for name, param in model.named_parameters():
        if not param.trainable:
            continue
        total += param.data.size
        child = name.split(".", 1)[0]
        breakdown[child] = breakdown.get(child, 0) + param.data.size
    return total, breakdown


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------


def build_dataset(cfg):
    """Corpus + splits (+ partial clouds when occlusion is on) from cfg.seed."""
    records = make_synthetic_corpus(
        cfg.families,
        cfg.per_family,
        cfg.n_points,
        cfg.noise_sigma,
        seed=np.random.default_rng([cfg.seed, 17]),
    )
    make_splits(records, cfg.split_ratios, seed=np.random.default_rng([cfg.seed, 23]))
    if cfg.occlusion > 0:
        attach_partials(records, cfg.occlusion, seed=np.random.default_rng([cfg.seed, 29]))
    return records


# ---------------------------------------------------------------------------
# metrics table
# ---------------------------------------------------------------------------

_CSV_COLUMNS = ("config_id", "group", "cd", "cd_x1e3", "cd_x1e4", "cd_sq",
                "param_count", "epoch")


class MetricsTable:
    """Rows of per-config, per-group chamfer results.

    Scaled columns are raw * 1e3 and raw * 1e4. Wall time is tracked per
    config for the human-readable table only; the CSV stays free of
    nondeterministic fields so a rerun of the same config byte-matches.
    """

    def __init__(self):
        self.rows = []
        self.wall_times = {}

    def add(self, config_id, group, cd, cd_sq=None, param_count=None, epoch=None):
        self.rows.append(
            {
                "config_id": config_id,
                "group": group,
                "cd": float(cd),
                "cd_x1e3": float(cd) * 1e3,
                "cd_x1e4": float(cd) * 1e4,
                "cd_sq": None if cd_sq is None else float(cd_sq),
                "param_count": param_count,
                "epoch": epoch,
            }
        )

    def note_wall_time(self, config_id, seconds):
        self.wall_times[config_id] = seconds

    @staticmethod
    def _cell(value):
        if value is None:
            return ""
        if isinstance(value, float):
            return repr(value)
        return str(value)

    def to_csv(self):
        lines = [",".join(_CSV_COLUMNS)]
        for row in self.rows:
            lines.append(",".join(self._cell(row[c]) for c in _CSV_COLUMNS))
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_csv())

    def to_text(self):
        """Aligned table with wall time appended where known."""
        header = list(_CSV_COLUMNS) + ["wall_s"]
        body = []
        for row in self.rows:
            wall = self.wall_times.get(row["config_id"])
            cells = []
            for c in _CSV_COLUMNS:
                v = row[c]
                cells.append(f"{v:.6g}" if isinstance(v, float) else self._cell(v))
            cells.append("" if wall is None else f"{wall:.1f}")
            body.append(cells)
        widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h)
                  for i, h in enumerate(header)]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        lines = [fmt.format(*header)]
        lines.extend(fmt.format(*r) for r in body)
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    config: RunConfig
    model: AutoEncoder
    records: list
    history: list          # per-epoch dicts: epoch, train_loss, val_cd
    log_lines: list        # "epoch,step,loss,val_cd" records
    losses: list           # per-step training losses
    best_val: float
    best_epoch: int
    metrics: MetricsTable
    checkpoint_path: str = ""


def predict_clouds(model, arrs, chunk=16):
    """Eval-mode decode of (r, n, 3) inputs in chunks; returns (r, m, 3)."""
    model.eval()
    outs = []
    with ad.no_grad():
        for start in range(0, len(arrs), chunk):
            outs.append(model(arrs[start : start + chunk]).data)
    return np.concatenate(outs, axis=0)


def _record_inputs(records, use_partial):
    if use_partial:
        if any(r.partial is None for r in records):
            raise UsageError("records lack partial clouds; build with occlusion > 0")
        return np.stack([r.partial for r in records])
    return np.stack([r.cloud for r in records])


def evaluate_cd(model, records, use_partial=False):
    """Mean test-metric chamfer (64-bit, unsquared) of reconstructions."""
    if not records:
        raise UsageError("no records to evaluate")
    preds = predict_clouds(model, _record_inputs(records, use_partial))
    cds = [
        chamfer(p.astype(np.float64), r.cloud.astype(np.float64)).value
        for p, r in zip(preds, records)
    ]
    return float(np.mean(cds))


def _train_loop(cfg, model, records, use_partial):
    train = split_records(records, "train")
    val = split_records(records, "val") or train
    if not train:
        raise DataError("train split is empty")

    opt = Adam(
        model.parameters(trainable_only=True),
        lr=cfg.lr,
        betas=cfg.betas,
        weight_decay=cfg.weight_decay,
    )
    rng_batch = np.random.default_rng([cfg.seed, 2])

    history = []
    log_lines = []
    losses = []
    best_val = np.inf
    best_epoch = -1
    best_state = None
    step = 0
    for epoch in range(cfg.epochs):
        model.train()
        epoch_losses = []
        for ids, pts, _ in batch_clouds(train, cfg.batch_size, rng_batch):
            inputs = _partial_batch(train, ids) if use_partial else pts
            try:
                pred = model(inputs)
                loss = chamfer_loss(pred, pts)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericsError("nonfinite loss")
                opt.zero_grad()
                loss.backward()
                opt.step()
            except NumericsError as exc:
                raise TrainingDiverged(
                    f"nonfinite values at epoch {epoch} step {step}, "
                    f"batch ids {list(ids)}: {exc}"
                ) from exc
            losses.append(value)
            epoch_losses.append(value)
            log_lines.append(f"{epoch},{step},{value:.6f},")
            step += 1
        val_cd = evaluate_cd(model, val, use_partial=use_partial)
        history.append(
            {"epoch": epoch, "train_loss": float(np.mean(epoch_losses)), "val_cd": val_cd}
        )
        log_lines.append(f"{epoch},{step},{np.mean(epoch_losses):.6f},{val_cd:.6f}")
        if val_cd < best_val:
            best_val = val_cd
            best_epoch = epoch
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
    if best_state is not None:
        model.load_state_dict(best_state)
    return history, log_lines, losses, best_val, best_epoch


def _partial_batch(records, ids):
    by_id = {r.id: r for r in records}
    return np.stack([by_id[i].partial for i in ids])


def _finalize_run(cfg, model, records, loop_out, use_partial):
    history, log_lines, losses, best_val, best_epoch = loop_out
    params, _ = count_parameters(model)
    metrics, _ = eval_reconstruction(
        model,
        records,
        split="test" if split_records(records, "test") else "train",
        class_names=cfg.families,
        config_id=cfg.config_id(),
        param_count=params,
        epoch=best_epoch,
        seed=cfg.seed,
        use_partial=use_partial,
    )
    result = TrainResult(
        config=cfg,
        model=model,
        records=records,
        history=history,
        log_lines=log_lines,
        losses=losses,
        best_val=best_val,
        best_epoch=best_epoch,
        metrics=metrics,
    )
    if cfg.out_dir:
        os.makedirs(os.path.join(cfg.out_dir, "checkpoints"), exist_ok=True)
        result.checkpoint_path = os.path.join(cfg.out_dir, "checkpoints", "best.ckpt")
        meta = {
            "config": run_config_to_dict(cfg)["train"],
            "task": "completion" if use_partial else "reconstruction",
            "best_epoch": best_epoch,
            "best_val_cd": best_val,
        }
        save_checkpoint(result.checkpoint_path, model.state_dict(), meta)
        with open(os.path.join(cfg.out_dir, "config.resolved"), "w") as fh:
            fh.write(format_config(run_config_to_dict(cfg)))
        with open(os.path.join(cfg.out_dir, "log.txt"), "w") as fh:
            fh.write("epoch,step,loss,val_cd\n")
            fh.write("\n".join(log_lines) + "\n")
        metrics.write_csv(os.path.join(cfg.out_dir, "metrics.csv"))
    return result


def train_autoencoder(cfg, records=None):
    """Chamfer-loss reconstruction training; returns a TrainResult.

    The best-validation-CD epoch's weights are restored on the returned
    model and saved to out_dir/checkpoints/best.ckpt when out_dir is set.
    """
    if records is None:
        records = build_dataset(cfg)
    model = AutoEncoder(cfg, np.random.default_rng([cfg.seed, 1]))
    loop_out = _train_loop(cfg, model, records, use_partial=False)
    return _finalize_run(cfg, model, records, loop_out, use_partial=False)


def train_completion(cfg, records=None):
    """Partial-in, full-out training: encoder sees the occluded cloud and
    the loss compares the decode against the complete ground truth."""
    if records is None:
        if cfg.occlusion <= 0:
            raise ConfigError("completion needs occlusion > 0 in the config")
        records = build_dataset(cfg)
    if any(r.partial is None for r in records):
        raise DataError("completion records need partial clouds")
    model = AutoEncoder(cfg, np.random.default_rng([cfg.seed, 1]))
    loop_out = _train_loop(cfg, model, records, use_partial=True)
    return _finalize_run(cfg, model, records, loop_out, use_partial=True)


def load_run(checkpoint_path):
    """Rebuild the model a checkpoint was saved from.

    Returns (model, cfg, task) where task is "completion" for runs trained
    on partial inputs and "reconstruction" otherwise, so evaluation knows
    what the encoder expects. Checkpoints written before the task field
    default to the config's occlusion setting.
    """
    state, meta = load_checkpoint(checkpoint_path)
    cfg = run_config_from_dict({"train": meta["config"]})
    task = meta.get(
        "task", "completion" if cfg.occlusion > 0 else "reconstruction"
    )
    model = AutoEncoder(cfg, np.random.default_rng([cfg.seed, 1]))
    model.load_state_dict(state)
    model.eval()
    return model, cfg, task


# ---------------------------------------------------------------------------
# evaluation: reconstruction + oracle
# ---------------------------------------------------------------------------


def oracle_cd(cloud, m, rng):
    """Chamfer between a random m-point resample of the surface and the
    surface itself: the sampling-noise floor no model output can beat."""
    c64 = cloud.astype(np.float64)
    return chamfer(resample(c64, m, rng), c64).value


def eval_reconstruction(
    model,
    records,
    split="test",
    class_names=FAMILIES[:4],
    config_id="model",
    param_count=None,
    epoch=None,
    seed=0,
    use_partial=False,
):
    """Per-class and mean CD over a split, with matching oracle rows.

    Returns (MetricsTable, summary dict). Classes named but absent from the
    split are skipped with a warning.
    """
    recs = split_records(records, split)
    if not recs:
        raise UsageError(f"split '{split}' is empty")
    preds = predict_clouds(model, _record_inputs(recs, use_partial))
    m = preds.shape[1]
    rng = np.random.default_rng([seed, 31])

    cds = {}
    oracles = {}
    all_oracle = []
    for rec, pred in zip(recs, preds):
        pair = chamfer(pred.astype(np.float64), rec.cloud.astype(np.float64))
        pair_sq = chamfer(pred.astype(np.float64), rec.cloud.astype(np.float64),
                          squared=True)
        cds.setdefault(rec.label, []).append((pair.value, pair_sq.value))
        floor = oracle_cd(rec.cloud, m, rng)
        oracles.setdefault(rec.label, []).append(floor)
        all_oracle.append(floor)

    table = MetricsTable()
    summary = {"per_class": {}, "oracle": {}, "split": split}
    all_cd = []
    all_sq = []
    for label, name in enumerate(class_names):
        if label not in cds:
            warnings.warn(f"class '{name}' absent from split '{split}'; omitted")
            continue
        vals = np.array(cds[label])
        mean_cd = float(vals[:, 0].mean())
        mean_sq = float(vals[:, 1].mean())
        table.add(config_id, name, mean_cd, cd_sq=mean_sq,
                  param_count=param_count, epoch=epoch)
        summary["per_class"][name] = mean_cd
        all_cd.extend(vals[:, 0])
        all_sq.extend(vals[:, 1])
    mean_cd = float(np.mean(all_cd))
    table.add(config_id, "mean", mean_cd, cd_sq=float(np.mean(all_sq)),
              param_count=param_count, epoch=epoch)
    summary["mean"] = mean_cd
    for label, name in enumerate(class_names):
        if label in oracles:
            val = float(np.mean(oracles[label]))
            table.add("oracle", name, val)
            summary["oracle"][name] = val
    table.add("oracle", "mean", float(np.mean(all_oracle)))
    return table, summary


# ---------------------------------------------------------------------------
# evaluation: completion vs resampled-partial baseline
# ---------------------------------------------------------------------------


def eval_completion(model, records, split="test", class_names=FAMILIES[:4], seed=0):
    """Completion CD per class against the no-model baseline: the partial
    input resampled to the output size and compared with the full shape."""
    recs = split_records(records, split)
    if not recs:
        raise UsageError(f"split '{split}' is empty")
    if any(r.partial is None for r in recs):
        raise UsageError("completion evaluation needs partial clouds")
    preds = predict_clouds(model, _record_inputs(recs, use_partial=True))
    m = preds.shape[1]
    rng = np.random.default_rng([seed, 37])

    model_cd = {}
    base_cd = {}
    for rec, pred in zip(recs, preds):
        full = rec.cloud.astype(np.float64)
        model_cd.setdefault(rec.label, []).append(
            chamfer(pred.astype(np.float64), full).value
        )
        base_cd.setdefault(rec.label, []).append(
            chamfer(resample(rec.partial.astype(np.float64), m, rng), full).value
        )

    table = MetricsTable()
    summary = {"per_class": {}, "baseline": {}, "split": split}
    for row_id, values in (("completion", model_cd), ("resampled-partial", base_cd)):
        all_vals = []
        for label, name in enumerate(class_names):
            if label not in values:
                warnings.warn(f"class '{name}' absent from split '{split}'; omitted")
                continue
            mean = float(np.mean(values[label]))
            table.add(row_id, name, mean)
            key = "per_class" if row_id == "completion" else "baseline"
            summary[key][name] = mean
            all_vals.extend(values[label])
        table.add(row_id, "overall", float(np.mean(all_vals)))
        summary[f"{row_id}_overall"] = float(np.mean(all_vals))
    summary["mean"] = summary["completion_overall"]
    return table, summary


def completion_table_text(summary, class_names=FAMILIES[:4]):
    """Wide per-class layout: one column per class plus Overall, one row
    per method, scaled by 1e4 like completion benchmarks report."""
    names = [n for n in class_names if n in summary["per_class"]]
    header = ["method"] + list(names) + ["overall"]
    rows = [
        ["completion"]
        + [f"{summary['per_class'][n] * 1e4:.2f}" for n in names]
        + [f"{summary['completion_overall'] * 1e4:.2f}"],
        ["resampled-partial"]
        + [f"{summary['baseline'][n] * 1e4:.2f}" for n in names]
        + [f"{summary['resampled-partial_overall'] * 1e4:.2f}"],
    ]
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    return "\n".join([fmt.format(*header)] + [fmt.format(*r) for r in rows]) + "\n"


# ---------------------------------------------------------------------------
# evaluation: codeword classification
# ---------------------------------------------------------------------------


def extract_codewords(model, records):
    """L2-normalized encoder outputs, (n, d) float64, plus labels (n,)."""
    model.eval()
    codes = []
    with ad.no_grad():
        for start in range(0, len(records), 16):
            chunk = records[start : start + 16]
            pts = np.stack([r.cloud for r in chunk])
            codes.append(model.encoder(pts).data.astype(np.float64))
    x = np.concatenate(codes, axis=0)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms[norms < 1e-12] = 1.0
    y = np.array([r.label for r in records], dtype=np.int64)
    return x / norms, y


def fit_linear_classifier(x, y, num_classes, l2=1e-3, iters=600):
    """One-vs-rest hinge loss with L2 regularization, solved by
    deterministic full-batch projected subgradient descent (step 1/(l2*t),
    iterates projected onto the ball of radius 1/sqrt(l2)).

    Returns (weights (c, d), biases (c,)).
    """
    if num_classes < 2:
        raise UsageError("classifier needs at least 2 classes")
    n, d = x.shape
    weights = np.zeros((num_classes, d))
    biases = np.zeros(num_classes)
    radius = 1.0 / np.sqrt(l2)
    for c in range(num_classes):
        yc = np.where(y == c, 1.0, -1.0)
        w = np.zeros(d)
        b = 0.0
        for t in range(1, iters + 1):
            eta = 1.0 / (l2 * t)
            margins = yc * (x @ w + b)
            viol = margins < 1.0
            grad_w = l2 * w - (yc[viol, None] * x[viol]).sum(axis=0) / n
            grad_b = -yc[viol].sum() / n
            w = w - eta * grad_w
            b = b - eta * grad_b
            norm = np.linalg.norm(w)
            if norm > radius:
                w *= radius / norm
        weights[c] = w
        biases[c] = b
    return weights, biases


def classify(weights, biases, x):
    return np.argmax(x @ weights.T + biases, axis=1)


def eval_unsupervised_classification(
    model, records, l2=1e-3, iters=600, label_permutation_seed=None
):
    """Protocol: freeze the autoencoder, L2-normalize train-split codewords,
    fit the linear classifier, report test-split accuracy.

    label_permutation_seed, when set, shuffles the training labels first
    (the null experiment: accuracy should fall to chance). Also reports a
    nearest-class-centroid baseline on the same codewords.
    """
    train = split_records(records, "train")
    test = split_records(records, "test")
    if not train or not test:
        raise UsageError("classification needs nonempty train and test splits")
    x_train, y_train = extract_codewords(model, train)
    x_test, y_test = extract_codewords(model, test)
    num_classes = int(max(y_train.max(), y_test.max())) + 1
    if len(set(y_train.tolist())) < 2:
        raise UsageError("train split has a single class; cannot fit classifier")
    if label_permutation_seed is not None:
        y_train = np.random.default_rng(label_permutation_seed).permutation(y_train)

    weights, biases = fit_linear_classifier(x_train, y_train, num_classes, l2, iters)
    pred = classify(weights, biases, x_test)
    accuracy = float((pred == y_test).mean())
    train_acc = float((classify(weights, biases, x_train) == y_train).mean())

    centroids = np.stack(
        [
            x_train[y_train == c].mean(axis=0)
            if (y_train == c).any()
            else np.zeros(x_train.shape[1])
            for c in range(num_classes)
        ]
    )
    dists = ((x_test[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    centroid_acc = float((np.argmin(dists, axis=1) == y_test).mean())
    return {
        "accuracy": accuracy,
        "train_accuracy": train_acc,
        "centroid_accuracy": centroid_acc,
        "num_classes": num_classes,
        "test_size": len(test),
        "predictions": pred,
        "labels": y_test,
    }


# ---------------------------------------------------------------------------
# ablation runner
# ---------------------------------------------------------------------------

_SHARED_FIELDS = (
    "encoder", "codeword_dim", "output_points", "lr", "betas", "weight_decay",
    "batch_size", "epochs", "families", "per_family", "n_points",
    "noise_sigma", "split_ratios", "occlusion", "seed",
)


@dataclass
class AblationResult:
    table: MetricsTable
    mean_cd: dict       # config id -> mean test CD
    deltas: list        # (earlier id, later id, cd difference)
    results: list       # TrainResult per cell


def run_ablation(grid):
    """Train every config in the grid on the identical dataset and budget;
    emit one comparative table plus consecutive pairwise deltas.

    Grids whose shared fields (encoder, dataset, seed, optimization budget)
    differ are rejected: the comparison would be meaningless.
    """
    if not grid:
        raise UsageError("empty ablation grid")
    base = grid[0]
    for cfg in grid[1:]:
        for name in _SHARED_FIELDS:
            if getattr(cfg, name) != getattr(base, name):
                raise UsageError(
                    f"ablation configs disagree on shared field '{name}': "
                    f"{getattr(base, name)!r} vs {getattr(cfg, name)!r}"
                )
    records = build_dataset(base)
    table = MetricsTable()
    mean_cd = {}
    results = []
    order = []
    for cfg in grid:
        cid = cfg.config_id()
        t0 = time.perf_counter()
        result = train_autoencoder(cfg, records=records)
        test = split_records(records, "test") or records
        cd = evaluate_cd(result.model, test)
        params, _ = count_parameters(result.model)
        table.add(cid, "mean", cd, param_count=params, epoch=result.best_epoch)
        table.note_wall_time(cid, time.perf_counter() - t0)
        if cid in mean_cd:
            raise UsageError(f"duplicate config id '{cid}' in the grid")
        mean_cd[cid] = cd
        order.append(cid)
        results.append(result)
    deltas = [
        (order[i], order[i + 1], mean_cd[order[i + 1]] - mean_cd[order[i]])
        for i in range(len(order) - 1)
    ]
    return AblationResult(table, mean_cd, deltas, results)


def default_ablation_grid(base):
    """The seven comparison cells: four folding seed variants and the
    progressive decoder with 1, 2, and 3 fusion stages."""
    cells = []
    for decoder in ("fold-grid", "fold-random", "fold-latent2d"):
        cells.append(replace(base, decoder=decoder))
    cells.append(replace(base, decoder="fold-latent32", seed_dim=32))
    for k in (1, 2, 3):
        cells.append(replace(base, decoder="seedgen", fusion_stages=k))
    return cells


def ordering_holds(earlier, later, tie_fraction=0.02):
    """Directional claim `earlier >= later` with a relative tie band:
    a violation smaller than tie_fraction of the earlier value passes."""
    return later <= earlier * (1.0 + tie_fraction)


# ---------------------------------------------------------------------------
# single-shape memorization
# ---------------------------------------------------------------------------


def overfit_single_shape(cfg, cloud, steps=500, lr=None):
    """Drive the autoencoder to memorize one cloud; returns
    (initial CD, final CD, per-step losses). Eval-mode CDs bracket the run.

    The learning rate follows a cosine decay to zero: the chamfer loss has
    unit-magnitude gradients arbitrarily close to the optimum, so constant-lr
    Adam orbits the minimum at a radius set by lr instead of converging.
    After the last step the batchnorm running statistics are re-estimated
    with forward passes on the frozen weights; the per-step exponential
    average lags while the weights are still moving.
    """
    model = AutoEncoder(cfg, np.random.default_rng([cfg.seed, 1]))
    base_lr = cfg.lr if lr is None else lr
    opt = Adam(
        model.parameters(trainable_only=True),
        lr=base_lr,
        betas=cfg.betas,
        weight_decay=0.0,
    )
    cloud = np.asarray(cloud, dtype=np.float32)
    batch = cloud[None]

    def current_cd():
        model.eval()
        with ad.no_grad():
            pred = model(batch).data[0]
        return chamfer(pred.astype(np.float64), cloud.astype(np.float64)).value

    initial = current_cd()
    losses = []
    model.train()
    for step in range(steps):
        opt.lr = 0.5 * base_lr * (1.0 + math.cos(math.pi * step / steps))
        pred = model(batch)
        loss = chamfer_loss(pred, batch)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.data))
    with ad.no_grad():
        for _ in range(64):
            model(batch)
    return initial, current_cd(), losses


def moving_average(values, window=100):
    """Trailing moving average; partial windows at the start."""
    out = []
    acc = 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        out.append(acc / min(i + 1, window))
    return out
