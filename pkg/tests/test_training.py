"""Training loop, evaluation tables, classifier, ablation runner."""

import numpy as np
import pytest

from seedcloud import nn
from seedcloud.data import make_synthetic_corpus, make_splits
from seedcloud.errors import ConfigError, DataError, TrainingDiverged, UsageError
from seedcloud.training import (
    MetricsTable,
    RunConfig,
    build_dataset,
    classify,
    count_parameters,
    default_ablation_grid,
    eval_completion,
    eval_reconstruction,
    eval_unsupervised_classification,
    evaluate_cd,
    fit_linear_classifier,
    load_run,
    moving_average,
    ordering_holds,
    overfit_single_shape,
    run_ablation,
    run_config_from_dict,
    run_config_to_dict,
    split_records,
    train_autoencoder,
    train_completion,
)
from dataclasses import replace


def tiny_config(**kw):
    base = dict(
        encoder="pointnet",
        decoder="seedgen",
        codeword_dim=32,
        seed_dim=4,
        resolutions=((2, 2), (4, 4)),
        fusion_stages=1,
        output_points=16,
        lr=1e-3,
        batch_size=2,
        epochs=2,
        families=("sphere", "box"),
        per_family=4,
        n_points=32,
        split_ratios=(0.5, 0.25, 0.25),
        seed=0,
    )
    base.update(kw)
    return RunConfig(**base)


# ---------------------------------------------------------------------------
# config round trip
# ---------------------------------------------------------------------------


def test_run_config_dict_round_trip():
    cfg = tiny_config(occlusion=0.4)
    again = run_config_from_dict(run_config_to_dict(cfg))
    assert again == cfg


def test_run_config_rejects_unknown_keys():
    tree = run_config_to_dict(tiny_config())
    tree["train"]["warmup"] = 5
    with pytest.raises(ConfigError, match="warmup"):
        run_config_from_dict(tree)


def test_config_id_names_decoder_and_stages():
    assert tiny_config().config_id() == "seedgen-k1"
    assert tiny_config(decoder="fold-grid").config_id() == "fold-grid"


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def test_training_is_deterministic():
    a = train_autoencoder(tiny_config())
    b = train_autoencoder(tiny_config())
    assert a.losses == b.losses
    assert a.metrics.to_csv() == b.metrics.to_csv()


def test_training_loss_decreases():
    # generous run on an easy corpus; compare epoch means, not single steps
    res = train_autoencoder(tiny_config(codeword_dim=64, seed_dim=8, lr=3e-3,
                                        batch_size=4, epochs=20, per_family=6,
                                        split_ratios=(1.0, 0.0, 0.0)))
    first = res.history[0]["train_loss"]
    best = min(h["train_loss"] for h in res.history)
    assert best < 0.65 * first, (first, best)


def test_divergence_reports_batch_ids():
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(TrainingDiverged, match=r"epoch \d+ step \d+.*batch ids"):
            train_autoencoder(tiny_config(lr=1e30, epochs=2))


def test_history_and_log_shapes():
    cfg = tiny_config(epochs=3)
    res = train_autoencoder(cfg)
    assert len(res.history) == 3
    assert all(set(h) == {"epoch", "train_loss", "val_cd"} for h in res.history)
    # two train records, batch 2 -> one step per epoch; plus one epoch line
    step_lines = [ln for ln in res.log_lines if ln.endswith(",")]
    epoch_lines = [ln for ln in res.log_lines if not ln.endswith(",")]
    assert len(step_lines) == len(res.losses)
    assert len(epoch_lines) == 3


def test_best_checkpoint_round_trips(tmp_path):
    cfg = tiny_config(epochs=4, out_dir=str(tmp_path / "run"))
    res = train_autoencoder(cfg)
    assert res.best_val == min(h["val_cd"] for h in res.history)
    model, cfg_back, task = load_run(res.checkpoint_path)
    assert cfg_back == cfg
    assert task == "reconstruction"
    val = split_records(res.records, "val")
    assert evaluate_cd(model, val) == res.best_val


def test_completion_checkpoint_records_task(tmp_path):
    cfg = tiny_config(occlusion=0.4, epochs=1, out_dir=str(tmp_path / "run"))
    res = train_completion(cfg)
    _, _, task = load_run(res.checkpoint_path)
    assert task == "completion"


def test_completion_needs_partials():
    with pytest.raises(ConfigError, match="occlusion"):
        train_completion(tiny_config(occlusion=0.0))
    records = build_dataset(tiny_config())  # no partials attached
    with pytest.raises(DataError, match="partial"):
        train_completion(tiny_config(occlusion=0.5), records=records)


def test_completion_trains_and_evaluates():
    cfg = tiny_config(occlusion=0.4, epochs=2)
    res = train_completion(cfg)
    assert all(np.isfinite(v) for v in res.losses)
    table, summary = eval_completion(res.model, res.records,
                                     class_names=cfg.families, seed=cfg.seed)
    assert set(summary["per_class"]) == set(summary["baseline"]) != set()
    csv = table.to_csv()
    assert "completion,overall" in csv and "resampled-partial,overall" in csv


# ---------------------------------------------------------------------------
# metrics table
# ---------------------------------------------------------------------------


def test_metrics_scaled_columns_consistent():
    table = MetricsTable()
    table.add("m", "g", 0.123456, cd_sq=0.01, param_count=7, epoch=3)
    header, row = table.to_csv().splitlines()
    cols = dict(zip(header.split(","), row.split(",")))
    assert float(cols["cd_x1e3"]) == 0.123456e3
    assert float(cols["cd_x1e4"]) == 0.123456e4
    assert cols["param_count"] == "7" and cols["epoch"] == "3"


def test_metrics_wall_time_kept_out_of_csv():
    table = MetricsTable()
    table.add("m", "g", 0.5)
    table.note_wall_time("m", 12.5)
    assert "12.5" not in table.to_csv()
    assert "12.5" in table.to_text()


# ---------------------------------------------------------------------------
# reconstruction evaluation
# ---------------------------------------------------------------------------


def test_eval_reconstruction_emits_oracle_rows():
    cfg = tiny_config()
    res = train_autoencoder(cfg)
    table, summary = eval_reconstruction(res.model, res.records,
                                         class_names=cfg.families, seed=cfg.seed)
    csv = table.to_csv()
    assert "oracle,mean" in csv
    assert set(summary["oracle"]) == set(summary["per_class"])


def test_eval_reconstruction_warns_on_absent_class():
    cfg = tiny_config()
    res = train_autoencoder(cfg)
    with pytest.warns(UserWarning, match="cylinder"):
        table, summary = eval_reconstruction(
            res.model, res.records,
            class_names=("sphere", "box", "cylinder"), seed=cfg.seed,
        )
    assert "cylinder" not in summary["per_class"]


def test_eval_reconstruction_empty_split_rejected():
    cfg = tiny_config(split_ratios=(1.0, 0.0, 0.0))
    res = train_autoencoder(cfg)
    with pytest.raises(UsageError, match="test"):
        eval_reconstruction(res.model, res.records, split="test")


# ---------------------------------------------------------------------------
# codeword classifier
# ---------------------------------------------------------------------------


def separable_codewords(n_per=40, noise=0.05, seed=0):
    rng = np.random.default_rng(seed)
    centers = np.eye(3)
    x = np.concatenate([c + noise * rng.normal(size=(n_per, 3)) for c in centers])
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    y = np.repeat(np.arange(3), n_per)
    return x, y


def test_classifier_separates_clean_clusters():
    x, y = separable_codewords()
    w, b = fit_linear_classifier(x, y, 3)
    assert (classify(w, b, x) == y).all()


def test_classifier_chance_on_shuffled_labels():
    x, y = separable_codewords(n_per=100)
    y_shuf = np.random.default_rng(7).permutation(y)
    w, b = fit_linear_classifier(x, y_shuf, 3)
    acc = float((classify(w, b, x) == y) .mean())
    # binomial CI around 1/3 for n=300
    assert abs(acc - 1 / 3) < 4 * np.sqrt((1 / 3) * (2 / 3) / 300)


def test_classification_protocol_on_tiny_model():
    cfg = tiny_config()
    res = train_autoencoder(cfg)
    report = eval_unsupervised_classification(res.model, res.records)
    assert 0.0 <= report["accuracy"] <= 1.0
    assert report["num_classes"] == 2
    assert len(report["predictions"]) == report["test_size"]


def test_classification_single_class_rejected():
    cfg = tiny_config(families=("sphere",), per_family=6,
                      split_ratios=(0.5, 0.25, 0.25))
    res = train_autoencoder(cfg)
    with pytest.raises(UsageError, match="single class"):
        eval_unsupervised_classification(res.model, res.records)


# ---------------------------------------------------------------------------
# parameter counting
# ---------------------------------------------------------------------------


def test_count_parameters_linear():
    lin = nn.Linear(10, 5, np.random.default_rng(0))
    total, breakdown = count_parameters(lin)
    assert total == 10 * 5 + 5
    assert sum(breakdown.values()) == total


def test_count_parameters_splits_encoder_and_decoder():
    res = train_autoencoder(tiny_config(epochs=1))
    total, breakdown = count_parameters(res.model)
    assert set(breakdown) == {"encoder", "decoder"}
    assert total == breakdown["encoder"] + breakdown["decoder"]


# ---------------------------------------------------------------------------
# ablation runner
# ---------------------------------------------------------------------------


def test_ablation_rejects_mismatched_budgets():
    grid = [tiny_config(), tiny_config(epochs=5)]
    with pytest.raises(UsageError, match="epochs"):
        run_ablation(grid)


def test_ablation_rejects_duplicate_ids():
    grid = [tiny_config(), tiny_config()]
    with pytest.raises(UsageError, match="duplicate"):
        run_ablation(grid)


def test_ablation_rejects_empty_grid():
    with pytest.raises(UsageError, match="empty"):
        run_ablation([])


def test_ablation_grid_covers_seven_cells():
    base = tiny_config(resolutions=((2, 2), (4, 4), (8, 8), (16, 16)),
                       output_points=256)
    ids = [c.config_id() for c in default_ablation_grid(base)]
    assert ids == ["fold-grid", "fold-random", "fold-latent2d", "fold-latent32",
                   "seedgen-k1", "seedgen-k2", "seedgen-k3"]
    latent32 = default_ablation_grid(base)[3]
    assert latent32.seed_dim == 32


def test_ablation_runs_and_orders_rows():
    base = tiny_config(epochs=1)
    grid = [replace(base, decoder="fold-grid"), replace(base, decoder="fold-random")]
    res = run_ablation(grid)
    assert list(res.mean_cd) == ["fold-grid", "fold-random"]
    assert len(res.deltas) == 1
    assert res.deltas[0][0] == "fold-grid"


def test_ordering_holds_tie_band():
    assert ordering_holds(0.10, 0.10)
    assert ordering_holds(0.10, 0.101)   # 1% worse, inside the 2% band
    assert not ordering_holds(0.10, 0.103)


# ---------------------------------------------------------------------------
# memorization
# ---------------------------------------------------------------------------


def test_single_shape_overfit_reaches_memorization():
    # one shape, 500 steps: final CD must fall below 1e-3 of the initial CD
    cloud = make_synthetic_corpus(families=("torus",), per_family=1,
                                  n_points=32, seed=5)[0].cloud
    cfg = RunConfig(encoder="pointnet", decoder="seedgen", codeword_dim=256,
                    seed_dim=16, resolutions=((4, 4), (8, 8), (16, 16)),
                    fusion_stages=2, output_points=256, n_points=32, seed=1)
    initial, final, losses = overfit_single_shape(cfg, cloud, steps=500, lr=3e-3)
    assert len(losses) == 500
    assert final < 1e-3 * initial, (initial, final)


def test_moving_average_trailing_window():
    assert moving_average([1.0, 2.0, 3.0, 4.0], window=2) == [1.0, 1.5, 2.5, 3.5]
    assert moving_average([2.0, 4.0], window=10) == [2.0, 3.0]
