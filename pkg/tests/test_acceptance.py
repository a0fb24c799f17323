"""End-to-end acceptance suite.

One test per shipping claim, ordered cheap-to-expensive. Every test funnels
through _verdict(), which prints exactly one PASS/FAIL line (streamed past
pytest's capture so the lines show up live) and then asserts. Expensive
trained models are shared across tests via module-scoped fixtures, so the
suite trains three things total: one reconstruction run, one completion run,
and the 7-cell x 3-seed decoder comparison.

Approximate wall time on one desktop core: the comparison grid dominates at
about twenty minutes; everything else finishes in under two.
"""

import contextlib
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

import seedcloud.autodiff as ad
from seedcloud.autodiff import Tensor, check_gradient
from seedcloud.chamfer import chamfer, chamfer_grad_check, chamfer_loss
from seedcloud.cli import main as cli_main
from seedcloud.data import make_synthetic_corpus
from seedcloud.folding import FoldingDecoder, make_seed_source
from seedcloud.pointcloud import ball_query, farthest_point_sample
from seedcloud.psg import DecoderConfig, ProgressiveDecoder
from seedcloud.training import (
    RunConfig,
    completion_table_text,
    count_parameters,
    default_ablation_grid,
    eval_completion,
    eval_reconstruction,
    eval_unsupervised_classification,
    ordering_holds,
    overfit_single_shape,
    run_ablation,
    train_autoencoder,
    train_completion,
)

_CAPSYS = None


@pytest.fixture(autouse=True)
def _stream_past_capture(capsys):
    global _CAPSYS
    _CAPSYS = capsys
    yield
    _CAPSYS = None


def _emit(text):
    cm = _CAPSYS.disabled() if _CAPSYS is not None else contextlib.nullcontext()
    with cm:
        sys.stdout.write(text)
        sys.stdout.flush()


def _verdict(name, ok, detail):
    line = f"[acceptance] {name}: {'PASS' if ok else 'FAIL'}  ({detail})"
    _emit("\n" + line + "\n")
    assert ok, line


def rng(seed):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# 01  chamfer equals the O(N^2) scan
# ---------------------------------------------------------------------------


def _chamfer_bruteforce(a, b):
    # row-at-a-time nearest neighbor, no shared code with the production path
    fwd = sum(np.linalg.norm(b - pa, axis=1).min() for pa in a) / len(a)
    rev = sum(np.linalg.norm(a - pb, axis=1).min() for pb in b) / len(b)
    return fwd + rev


def test_01_chamfer_matches_bruteforce_500_pairs():
    g = rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(500):
        n, m = int(g.integers(1, 65)), int(g.integers(1, 65))
        a = g.normal(size=(n, 3))
        b = g.normal(size=(m, 3))
        worst = max(worst, abs(chamfer(a, b).value - _chamfer_bruteforce(a, b)))
    took = time.perf_counter() - t0
    _verdict(
        "chamfer-vs-bruteforce",
        worst <= 1e-9 and took < 10.0,
        f"max |diff| {worst:.3e} over 500 pairs, {took:.1f}s",
    )


# ---------------------------------------------------------------------------
# 02  finite-difference gradient integrity, ops then the composed decoder
# ---------------------------------------------------------------------------

# fixed weights so every case is a deterministic function of its input
_g = rng(11)
_X53 = _g.normal(size=(5, 3))
_C53 = _g.normal(size=(5, 3))
_B3 = _g.normal(size=3)
_M34 = _g.normal(size=(3, 4))
_C54 = _g.normal(size=(5, 4))
_W43 = _g.normal(size=(4, 3))
_B4 = _g.normal(size=4)
_C15 = _g.normal(size=15)
_C56 = _g.normal(size=(5, 6))
_C543 = _g.normal(size=(5, 4, 3))
_C63 = _g.normal(size=(6, 3))
_IDX = np.array([0, 2, 2, 4])
_C43b = _g.normal(size=(4, 3))
_X4D = _g.normal(size=(2, 3, 2, 2))
_CONV_OUT = _g.normal(size=(2, 4, 2, 2))
_TCX = _g.normal(size=(1, 3, 3, 3))
_TCW = _g.normal(size=(3, 2, 4, 4))
_TCB = _g.normal(size=2)
_BIL_IN = _g.normal(size=(2, 3, 3, 4))
_BIL_OUT = _g.normal(size=(2, 3, 5, 7))
_XBN = _g.normal(size=(4, 3, 2, 2))
_GAMMA = _g.normal(size=3) + 2.0
_BETA = _g.normal(size=3)
_CBN = _g.normal(size=(4, 3, 2, 2))
_AMAX_X = np.argsort(_g.normal(size=15)).reshape(5, 3) * 0.37


def _bn(x, gamma, beta, training):
    out = ad.batchnorm(x, gamma, beta, np.zeros(3), np.ones(3), training)
    return ad.tsum(ad.mul(out, Tensor(_CBN)))


OP_CASES = [
    ("add", lambda x: ad.tsum(ad.mul(ad.add(x, Tensor(_C53)), Tensor(_C53))), _X53),
    ("sub", lambda x: ad.tsum(ad.mul(ad.sub(x, Tensor(_C53)), Tensor(_C53))), _X53),
    ("mul", lambda x: ad.tsum(ad.mul(x, Tensor(_C53))), _X53),
    ("scale", lambda x: ad.tsum(ad.scale(x, -1.7)), _X53),
    ("relu", lambda x: ad.tsum(ad.mul(ad.relu(x), Tensor(_C53))),
     _X53 + np.sign(_X53) * 0.05),
    ("sqrt", lambda x: ad.tsum(ad.sqrt(ad.add(ad.mul(x, x), 0.3))), _X53),
    ("add_bias_x", lambda x: ad.tsum(ad.mul(ad.add_bias(x, Tensor(_B3)),
                                            Tensor(_C53))), _X53),
    ("add_bias_b", lambda b: ad.tsum(ad.mul(ad.add_bias(Tensor(_X53), b),
                                            Tensor(_C53))), _B3),
    ("matmul_a", lambda x: ad.tsum(ad.mul(ad.matmul(x, Tensor(_M34)),
                                          Tensor(_C54))), _X53),
    ("matmul_b", lambda x: ad.tsum(ad.mul(ad.matmul(Tensor(_X53), x),
                                          Tensor(_C54))), _M34),
    ("fully_connected_w", lambda w: ad.tsum(ad.fully_connected(Tensor(_X53), w,
                                                               Tensor(_B4))), _M34),
    ("tsum_axis", lambda x: ad.tsum(ad.mul(ad.tsum(x, axis=0),
                                           ad.tsum(x, axis=0))), _X53),
    ("mean", lambda x: ad.mean(ad.mul(x, x)), _X53),
    ("amax", lambda x: ad.tsum(ad.amax(x, axis=1)), _AMAX_X),
    ("reshape_transpose", lambda x: ad.tsum(ad.mul(
        ad.reshape(ad.transpose(x, (1, 0)), (-1,)), Tensor(_C15))), _X53),
    ("flatten", lambda x: ad.tsum(ad.mul(ad.flatten(x), ad.flatten(x))), _X53),
    ("concat", lambda x: ad.tsum(ad.mul(ad.concat([x, ad.mul(x, x)], axis=1),
                                        Tensor(_C56))), _X53),
    ("expand", lambda x: ad.tsum(ad.mul(ad.expand(x, 1, 4), Tensor(_C543))), _X53),
    ("replicate_vector", lambda v: ad.tsum(ad.mul(ad.replicate_vector(v, 6),
                                                  Tensor(_C63.T.copy()))), _B3),
    ("gather", lambda x: ad.tsum(ad.mul(ad.gather(x, _IDX, axis=0),
                                        Tensor(_C43b))), _X53),
    ("conv1x1_x", lambda x: ad.tsum(ad.mul(ad.conv1x1(x, Tensor(_W43), Tensor(_B4)),
                                           Tensor(_CONV_OUT))), _X4D),
    ("conv1x1_w", lambda w: ad.tsum(ad.mul(ad.conv1x1(Tensor(_X4D), w),
                                           Tensor(_CONV_OUT))), _W43),
    ("tconv_x", lambda x: ad.tsum(ad.transposed_conv2d(x, Tensor(_TCW),
                                                       Tensor(_TCB))), _TCX),
    ("tconv_w", lambda w: ad.tsum(ad.transposed_conv2d(Tensor(_TCX), w)), _TCW),
    ("bilinear", lambda x: ad.tsum(ad.mul(ad.bilinear_interp(x, (5, 7)),
                                          Tensor(_BIL_OUT))), _BIL_IN),
    ("batchnorm_train_x", lambda x: _bn(x, Tensor(_GAMMA), Tensor(_BETA), True), _XBN),
    ("batchnorm_train_gamma", lambda gm: _bn(Tensor(_XBN), gm, Tensor(_BETA), True),
     _GAMMA),
    ("batchnorm_train_beta", lambda bt: _bn(Tensor(_XBN), Tensor(_GAMMA), bt, True),
     _BETA),
    ("batchnorm_eval_x", lambda x: _bn(x, Tensor(_GAMMA), Tensor(_BETA), False), _XBN),
]


def _fd_model_param(loss_fn, tensor, n_check, step=1e-5, rtol=1e-3, atol=1e-7):
    """Finite-difference check of d(loss)/d(tensor) on the first n_check
    entries, against the reverse-mode gradient accumulated on the tensor."""
    tensor.zero_grad()
    loss_fn().backward()
    analytic = tensor.grad.reshape(-1)[:n_check].copy()
    flat = tensor.data.reshape(-1)
    n_check = min(n_check, flat.size)
    numeric = np.zeros(n_check)
    with ad.no_grad():
        for i in range(n_check):
            keep = flat[i]
            flat[i] = keep + step
            hi = loss_fn().item()
            flat[i] = keep - step
            lo = loss_fn().item()
            flat[i] = keep
            numeric[i] = (hi - lo) / (2.0 * step)
    analytic = analytic[:n_check]
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), atol)
    rel = np.abs(analytic - numeric) / denom
    ok = np.all(np.abs(analytic - numeric) <= atol + rtol * denom)
    return float(rel.max() if rel.size else 0.0), bool(ok)


def test_02_gradient_integrity_ops_and_decoder():
    t0 = time.perf_counter()
    failures = []
    for name, fn, x in OP_CASES:
        rel, _, _, ok = check_gradient(fn, np.asarray(x, dtype=np.float64))
        if not ok:
            failures.append(f"{name} rel={rel:.2e}")

    # chamfer loss on a well-separated pair (ties would hit a subgradient)
    g = rng(55)
    if chamfer_grad_check(g.normal(size=(8, 3)), g.normal(size=(6, 3)) + 4.0) is not True:
        failures.append("chamfer_loss")

    # the composed decoder: codeword -> seeds -> fusion -> points -> loss,
    # differentiated at the input and at a spread of weight tensors
    dec = ProgressiveDecoder(
        DecoderConfig(codeword_dim=16, seed_dim=4, resolutions=((2, 2), (4, 4)),
                      fusion_stages=1, output_points=16),
        rng(90),
    )
    target = rng(91).normal(size=(2, 16, 3))
    theta0 = rng(92).normal(size=(2, 16))

    rel, _, _, ok = check_gradient(
        lambda th: chamfer_loss(dec(th), target), theta0, rtol=1e-3)
    if not ok:
        failures.append(f"decoder-input rel={rel:.2e}")

    params = dict(dec.named_parameters())
    names = sorted(params)
    picks = [names[0], names[len(names) // 2], names[-1]]
    theta_t = Tensor(theta0)
    for key in picks:
        rel, ok = _fd_model_param(
            lambda: chamfer_loss(dec(theta_t), target), params[key], n_check=12)
        if not ok:
            failures.append(f"decoder/{key} rel={rel:.2e}")

    took = time.perf_counter() - t0
    _verdict(
        "gradient-integrity",
        not failures and took < 120.0,
        f"{len(OP_CASES)} op checks + chamfer + decoder input + "
        f"{len(picks)} weight tensors, {took:.1f}s"
        + (f"; failed: {', '.join(failures)}" if failures else ""),
    )


# ---------------------------------------------------------------------------
# 03  geometry oracles: sampling, grouping, interpolation
# ---------------------------------------------------------------------------


def _fps_bruteforce(points, m, start):
    chosen = [start]
    d = ((points - points[start]) ** 2).sum(axis=1)
    for _ in range(m - 1):
        nxt = int(np.argmax(d))
        chosen.append(nxt)
        d = np.minimum(d, ((points - points[nxt]) ** 2).sum(axis=1))
    return chosen


def test_03_geometry_oracles():
    g = rng(17)
    t0 = time.perf_counter()
    fps_bad = 0
    for _ in range(200):
        n = int(g.integers(4, 80))
        pts = g.normal(size=(n, 3))
        m = int(g.integers(1, n + 1))
        if list(farthest_point_sample(pts, m)) != _fps_bruteforce(pts, m, 0)[:m]:
            fps_bad += 1

    bq_bad = 0
    for _ in range(60):
        n = int(g.integers(4, 50))
        pts = g.normal(size=(n, 3))
        centers = g.integers(0, n, size=int(g.integers(1, 6)))
        radius = float(g.uniform(0.3, 1.5))
        k_max = int(g.integers(1, 9))
        got = ball_query(pts, centers, radius, k_max)
        for row, c in zip(got, centers):
            within = [i for i in range(n)
                      if ((pts[i] - pts[c]) ** 2).sum() <= radius ** 2]
            expect = within[:k_max]
            expect = expect + [expect[0]] * (k_max - len(expect))
            if list(row) != expect:
                bq_bad += 1

    # bilinear resize reproduces any field linear in the grid coordinates
    bil_worst = 0.0
    for in_hw, out_hw in [((2, 2), (5, 7)), ((3, 4), (9, 5)), ((4, 4), (4, 4))]:
        yy, xx = np.meshgrid(np.linspace(0, 1, in_hw[0]),
                             np.linspace(0, 1, in_hw[1]), indexing="ij")
        field = (1.25 * yy - 0.5 * xx + 0.3)[None, None]
        out = ad.bilinear_interp(Tensor(field), out_hw).data[0, 0]
        oy, ox = np.meshgrid(np.linspace(0, 1, out_hw[0]),
                             np.linspace(0, 1, out_hw[1]), indexing="ij")
        bil_worst = max(bil_worst, np.abs(out - (1.25 * oy - 0.5 * ox + 0.3)).max())

    took = time.perf_counter() - t0
    _verdict(
        "geometry-oracles",
        fps_bad == 0 and bq_bad == 0 and bil_worst < 1e-12,
        f"fps mismatches {fps_bad}/200, ball_query mismatches {bq_bad}, "
        f"bilinear max err {bil_worst:.1e}, {took:.1f}s",
    )


# ---------------------------------------------------------------------------
# 04  single-shape memorization
# ---------------------------------------------------------------------------


def test_04_memorization_smoke():
    t0 = time.perf_counter()
    cloud = make_synthetic_corpus(families=("torus",), per_family=1,
                                  n_points=32, seed=5)[0].cloud
    cfg = RunConfig(encoder="pointnet", decoder="seedgen", codeword_dim=256,
                    seed_dim=16, resolutions=((4, 4), (8, 8), (16, 16)),
                    fusion_stages=2, output_points=256, n_points=32, seed=1)
    initial, final, _ = overfit_single_shape(cfg, cloud, steps=500, lr=3e-3)
    took = time.perf_counter() - t0
    _verdict(
        "memorization",
        final < 0.01 * initial and took < 300.0,
        f"CD {initial:.4f} -> {final:.2e} ({final / initial:.1e}x) "
        f"in 500 steps, {took:.0f}s",
    )


# ---------------------------------------------------------------------------
# shared trained models
# ---------------------------------------------------------------------------


RECON_CFG = RunConfig(
    encoder="pointnet", decoder="seedgen", codeword_dim=256, seed_dim=16,
    resolutions=((2, 2), (4, 4), (8, 8), (16, 16)), fusion_stages=2,
    output_points=256, lr=1e-3, batch_size=8, epochs=80,
    families=("sphere", "box", "cylinder", "torus"), per_family=32,
    n_points=256, split_ratios=(0.75, 0.125, 0.125), seed=0,
)

COMPLETION_CFG = replace(
    RECON_CFG, seed_dim=32, epochs=120, occlusion=0.5, per_family=16,
)

ABLATION_BASE = RunConfig(
    encoder="pointnet", decoder="fold-grid", codeword_dim=256, seed_dim=32,
    resolutions=((2, 2), (4, 4), (8, 8), (16, 16)), fusion_stages=1,
    output_points=256, lr=1e-3, batch_size=8, epochs=120,
    families=("sphere", "box", "cylinder", "torus",
              "plane-with-hole", "composite-chair-like"), per_family=8,
    n_points=256, split_ratios=(0.75, 0.125, 0.125), seed=0,
)

ABLATION_SEEDS = (0, 1, 2)

CHAIN = ("fold-random", "fold-grid", "fold-latent2d", "fold-latent32",
         "seedgen-k1", "seedgen-k2", "seedgen-k3")


@pytest.fixture(scope="module")
def recon_run():
    return train_autoencoder(RECON_CFG)


@pytest.fixture(scope="module")
def completion_run():
    return train_completion(COMPLETION_CFG)


@pytest.fixture(scope="module")
def ablation_means():
    per_seed = {}
    for seed in ABLATION_SEEDS:
        res = run_ablation(default_ablation_grid(replace(ABLATION_BASE, seed=seed)))
        per_seed[seed] = res.mean_cd
        _emit(f"\n[acceptance] comparison grid seed {seed}: "
              + "  ".join(f"{cid}={res.mean_cd[cid]:.4f}" for cid in CHAIN) + "\n")
    return {cid: float(np.mean([per_seed[s][cid] for s in ABLATION_SEEDS]))
            for cid in CHAIN}


# ---------------------------------------------------------------------------
# 05  decoder comparison: the seven-cell ordering
# ---------------------------------------------------------------------------


def test_05_decoder_ablation_ordering(ablation_means):
    t0 = time.perf_counter()
    bad = [
        f"{earlier}->{later}"
        for earlier, later in zip(CHAIN, CHAIN[1:])
        if not ordering_holds(ablation_means[earlier], ablation_means[later])
    ]
    chain = " >= ".join(f"{cid}:{ablation_means[cid]:.4f}" for cid in CHAIN)
    took = time.perf_counter() - t0
    _verdict(
        "decoder-ablation-ordering",
        not bad and took < 7 * 3600,
        f"3-seed mean CD chain (2% tie band): {chain}"
        + (f"; violated: {', '.join(bad)}" if bad else ""),
    )


# ---------------------------------------------------------------------------
# 06  resampled ground truth stays below every trained model, per class
# ---------------------------------------------------------------------------


def test_06_oracle_floor_below_model(recon_run, completion_run):
    t0 = time.perf_counter()
    bad = []
    pairs = []
    for tag, run, partial in (("recon", recon_run, False),
                              ("completion", completion_run, True)):
        _, summary = eval_reconstruction(run.model, run.records,
                                         use_partial=partial)
        for name, model_cd in summary["per_class"].items():
            oracle = summary["oracle"][name]
            pairs.append(f"{tag}/{name} {oracle:.4f}<{model_cd:.4f}")
            if not oracle < model_cd:
                bad.append(f"{tag}/{name}")
    took = time.perf_counter() - t0
    _verdict(
        "oracle-floor",
        not bad,
        f"oracle below model CD on all {len(pairs)} class rows of 2 trained "
        f"runs, {took:.1f}s" + (f"; violated: {', '.join(bad)}" if bad else ""),
    )


# ---------------------------------------------------------------------------
# 07  linear probe on normalized codewords
# ---------------------------------------------------------------------------


def test_07_codeword_classification(recon_run):
    t0 = time.perf_counter()
    real = eval_unsupervised_classification(recon_run.model, recon_run.records)
    null = eval_unsupervised_classification(recon_run.model, recon_run.records,
                                            label_permutation_seed=99)
    took = time.perf_counter() - t0
    chance = 1.0 / real["num_classes"]
    _verdict(
        "codeword-classification",
        real["accuracy"] >= 0.90 and null["accuracy"] <= 2 * chance,
        f"linear probe {real['accuracy']:.3f} on {real['test_size']} test "
        f"shapes (chance {chance:.2f}), shuffled-label {null['accuracy']:.3f}, "
        f"{took:.1f}s",
    )


# ---------------------------------------------------------------------------
# 08  completion beats copying the partial input
# ---------------------------------------------------------------------------


def test_08_completion_beats_partial_baseline(completion_run):
    t0 = time.perf_counter()
    _, summary = eval_completion(completion_run.model, completion_run.records)
    text = completion_table_text(summary)
    lines = text.strip().split("\n")
    layout_ok = (
        lines[0].split()[0] == "method"
        and lines[0].split()[-1] == "overall"
        and lines[1].startswith("completion")
        and lines[2].startswith("resampled-partial")
        and len(lines[0].split()) == 2 + len(summary["per_class"])
    )
    model_cd = summary["completion_overall"]
    base_cd = summary["resampled-partial_overall"]
    took = time.perf_counter() - t0
    _emit("\n" + text)
    _verdict(
        "completion-vs-baseline",
        model_cd < base_cd and layout_ok,
        f"model {model_cd:.4f} < resampled-partial {base_cd:.4f} "
        f"({(1 - model_cd / base_cd) * 100:.1f}% better), "
        f"per-class table emitted, {took:.1f}s",
    )


# ---------------------------------------------------------------------------
# 09  parameter economy of the progressive decoder
# ---------------------------------------------------------------------------


def test_09_parameter_economy():
    g = rng(1)
    psg = ProgressiveDecoder(DecoderConfig(), g)
    psg_params, _ = count_parameters(psg)
    fold = FoldingDecoder(512, make_seed_source("fixed_grid", 1024), 1024, g)
    fold_params, _ = count_parameters(fold)
    trunk25 = 25 * fold_params
    _verdict(
        "parameter-economy",
        psg_params < 10_000_000 and psg_params * 5 < trunk25,
        f"progressive decoder {psg_params:,} params; "
        f"25-replica folding trunk {trunk25:,}; ratio {trunk25 / psg_params:.1f}x",
    )


# ---------------------------------------------------------------------------
# 10  byte-level determinism from a resolved config
# ---------------------------------------------------------------------------


def test_10_metrics_reproducible_from_resolved_config(tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "rerun.toml"
    cfg.write_text(
        "[train]\n"
        'encoder = "pointnet"\n'
        'decoder = "seedgen"\n'
        "codeword_dim = 32\n"
        "seed_dim = 4\n"
        "resolutions = [[2, 2], [4, 4]]\n"
        "fusion_stages = 1\n"
        "output_points = 16\n"
        "lr = 0.001\n"
        "batch_size = 2\n"
        "epochs = 2\n"
        'families = ["sphere", "box"]\n'
        "per_family = 4\n"
        "n_points = 32\n"
        "split_ratios = [0.5, 0.25, 0.25]\n"
        "seed = 3\n"
    )
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli_main(["train", "--config", str(cfg), "--out", str(a), "--quiet"]) == 0
    assert cli_main(["train", "--config", str(a / "config.resolved"),
                     "--out", str(b), "--quiet"]) == 0
    same_metrics = (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    same_log = (a / "log.txt").read_bytes() == (b / "log.txt").read_bytes()
    took = time.perf_counter() - t0
    _verdict(
        "determinism",
        same_metrics and same_log,
        f"metrics.csv {'identical' if same_metrics else 'DIFFERS'}, "
        f"log.txt {'identical' if same_log else 'DIFFERS'} "
        f"across a re-run from config.resolved, {took:.1f}s",
    )
