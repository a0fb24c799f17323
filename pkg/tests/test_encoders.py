"""Encoder contracts: invariance, shapes, gradient reach."""

import numpy as np
import pytest

from seedcloud import autodiff as ad
from seedcloud.autodiff import Tensor
from seedcloud.encoders import (
    PointNetEncoder,
    PointNetPPEncoder,
    TwoStageEncoder,
    make_encoder,
)
from seedcloud.errors import ConfigError


def rng(seed=0):
    return np.random.default_rng(seed)


def cloud(n, seed):
    pts = rng(seed).normal(size=(n, 3))
    return pts / np.abs(pts).max()


@pytest.mark.parametrize("kind", ["pointnet", "pointnet2", "twostage"])
def test_output_dimension_matches_config(kind):
    for dim in (512, 1024):
        enc = make_encoder(kind, dim, rng(1))
        enc.eval()
        with ad.no_grad():
            code = enc(cloud(128, 2))
        assert code.shape == (dim,)
        assert np.all(np.isfinite(code.data))


def test_make_encoder_rejects_unknown_and_bad_dim():
    with pytest.raises(ConfigError):
        make_encoder("resnet", 512, rng(0))
    with pytest.raises(ConfigError):
        make_encoder("pointnet", 513, rng(0))


@pytest.mark.parametrize("kind", ["pointnet", "twostage"])
def test_maxpool_encoders_permutation_invariant_bitwise(kind):
    enc = make_encoder(kind, 64, rng(3))
    enc.eval()  # running-stat normalization is per-point, so order-free
    pts = cloud(96, 4)
    perm = rng(5).permutation(96)
    with ad.no_grad():
        a = enc(pts)
        b = enc(pts[perm])
    assert np.array_equal(a.data, b.data)


def test_pointnet_repeated_point_collapses_to_single():
    enc = PointNetEncoder(32, rng(6))
    enc.eval()
    p = np.array([[0.3, -0.2, 0.9]])
    with ad.no_grad():
        one = enc(p)
        many = enc(np.repeat(p, 50, axis=0))
    # Not bit-exact: a 1-row matmul and a 50-row matmul hit different BLAS
    # kernels whose last-ulp rounding differs. Tolerance stays tiny.
    np.testing.assert_allclose(one.data, many.data, atol=1e-6, rtol=0)


def test_encoders_distinguish_distinct_clouds():
    for kind in ("pointnet", "pointnet2", "twostage"):
        enc = make_encoder(kind, 64, rng(7))
        enc.eval()
        with ad.no_grad():
            a = enc(cloud(128, 8))
            b = enc(cloud(128, 9))
        assert not np.allclose(a.data, b.data)


def test_pointnetpp_repeat_encoding_bitwise_identical():
    enc = PointNetPPEncoder(64, rng(10))
    enc.eval()
    pts = cloud(256, 11)
    with ad.no_grad():
        a = enc(pts)
        b = enc(pts)
    assert np.array_equal(a.data, b.data)


def test_pointnetpp_ladder_shapes_and_minimum():
    enc = PointNetPPEncoder(32, rng(12))
    enc.eval()
    with ad.no_grad():
        xyz, feats = enc.stage1(cloud(512, 13)[None], None)
        assert xyz.shape == (1, 256, 3) and feats.shape == (1, 256, 128)
        xyz, feats = enc.stage2(xyz, feats)
        assert xyz.shape == (1, 64, 3) and feats.shape == (1, 64, 256)
        xyz, feats = enc.stage3(xyz, feats)
        assert xyz.shape == (1, 16, 3) and feats.shape == (1, 16, 512)
    with pytest.raises(ConfigError):
        enc(cloud(32, 14))


def test_twostage_global_half_is_stage1_max():
    enc = TwoStageEncoder(32, rng(15))
    enc.eval()
    arr = cloud(64, 16)[None].astype(np.float32)
    with ad.no_grad():
        per_point, global_feat = enc.stage1(arr)
    assert np.array_equal(global_feat.data, per_point.data.max(axis=1))


def test_twostage_accepts_partial_cloud():
    enc = TwoStageEncoder(32, rng(17))
    enc.eval()
    full = cloud(128, 18)
    with ad.no_grad():
        code = enc(full[:64])
    assert code.shape == (32,) and np.all(np.isfinite(code.data))


@pytest.mark.parametrize("kind", ["pointnet", "pointnet2", "twostage"])
def test_gradients_reach_every_encoder_parameter(kind):
    enc = make_encoder(kind, 32, rng(19))
    pts = cloud(128, 20)
    code = enc(pts)
    ad.tsum(ad.mul(code, code)).backward()
    for name, p in enc.named_parameters():
        assert p.grad is not None and np.any(p.grad != 0), name


def test_batched_encoding_matches_single():
    enc = PointNetEncoder(16, rng(21))
    enc.eval()
    batch = np.stack([cloud(64, s) for s in (22, 23, 24)]).astype(np.float32)
    with ad.no_grad():
        together = enc(batch)
        for i in range(3):
            alone = enc(batch[i])
            np.testing.assert_array_equal(together.data[i], alone.data)
