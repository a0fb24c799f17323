"""Module tree, parameter naming, state round trips, checkpoint container."""

import numpy as np
import pytest

from seedcloud import autodiff as ad
from seedcloud import nn
from seedcloud.autodiff import Tensor
from seedcloud.checkpoint import load_checkpoint, save_checkpoint
from seedcloud.errors import ConfigError, DataError, ShapeError


def rng(seed=0):
    return np.random.default_rng(seed)


class Toy(nn.Module):
    def __init__(self, g):
        super().__init__()
        self.head = nn.Linear(4, 8, g)
        self.blocks = nn.ModuleList([nn.LinearBlock(8, 8, g) for _ in range(2)])
        self.out = nn.Linear(8, 3, g)

    def forward(self, x):
        x = self.head(x)
        for blk in self.blocks:
            x = blk(x)
        return self.out(x)


def test_parameter_names_are_paths_and_unique():
    model = Toy(rng(1))
    names = [n for n, _ in model.named_parameters()]
    assert len(names) == len(set(names))
    assert "head.weight" in names
    assert "blocks.0.lin.weight" in names
    assert "blocks.1.bn.gamma" in names


def test_state_dict_roundtrip_changes_nothing():
    model = Toy(rng(2))
    x = rng(3).normal(size=(6, 4))
    model.eval()
    before = model.forward(Tensor(x)).data.copy()
    state = {k: v.copy() for k, v in model.state_dict().items()}
    other = Toy(rng(4))
    other.load_state_dict(state)
    other.eval()
    np.testing.assert_array_equal(other.forward(Tensor(x)).data, before)


def test_load_state_dict_strict_mismatch():
    model = Toy(rng(5))
    state = model.state_dict()
    state.pop("out.bias")
    with pytest.raises(ConfigError):
        model.load_state_dict(state)


def test_load_state_dict_shape_mismatch():
    model = Toy(rng(6))
    state = dict(model.state_dict())
    state["out.weight"] = np.zeros((2, 2))
    with pytest.raises(ShapeError):
        model.load_state_dict(state)


def test_num_parameters_counts_trainable_elements():
    g = rng(7)
    lin = nn.Linear(10, 5, g)
    assert lin.num_parameters() == 55
    bn = nn.BatchNorm(4)
    # gamma + beta trainable; running stats are buffers, not parameters
    assert bn.num_parameters() == 8


def test_train_eval_mode_propagates():
    model = Toy(rng(8))
    assert all(m.training for m in model.modules())
    model.eval()
    assert not any(m.training for m in model.modules())


def test_to_dtype_converts_params_and_buffers():
    model = Toy(rng(9))
    model.to_dtype(np.float64)
    assert all(p.dtype == np.float64 for p in model.parameters())
    assert model.blocks[0].bn.running_mean.dtype == np.float64
    out = model.forward(Tensor(rng(10).normal(size=(4, 4))))
    assert out.dtype == np.float64


def test_init_is_seeded_and_fan_in_bounded():
    a = nn.Linear(16, 8, rng(11))
    b = nn.Linear(16, 8, rng(11))
    np.testing.assert_array_equal(a.weight.data, b.weight.data)
    bound = 1.0 / np.sqrt(16)
    assert np.abs(a.weight.data).max() <= bound
    np.testing.assert_array_equal(a.bias.data, np.zeros(8))


def test_gradients_reach_all_parameters():
    model = Toy(rng(12))
    x = Tensor(rng(13).normal(size=(5, 4)))
    out = model.forward(x)
    ad.tsum(ad.mul(out, out)).backward()
    for name, p in model.named_parameters():
        assert p.grad is not None, name
        assert np.any(p.grad != 0), name


# ---------------------------------------------------------------------------
# checkpoint container


def test_checkpoint_roundtrip(tmp_path):
    state = {
        "enc.w": rng(14).normal(size=(4, 7)).astype(np.float32),
        "enc.b": rng(15).normal(size=(7,)).astype(np.float64),
        "steps": np.array([42], dtype=np.int64),
    }
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, state, meta={"codeword_dim": 512})
    loaded, meta = load_checkpoint(path)
    assert meta == {"codeword_dim": 512}
    assert set(loaded) == set(state)
    for k in state:
        np.testing.assert_array_equal(loaded[k], state[k])
        assert loaded[k].dtype == state[k].dtype


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOTACKPTxxxxxxxxxxx")
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    state = {"w": np.ones((8, 8), dtype=np.float32)}
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, state)
    blob = path.read_bytes()
    path.write_bytes(blob[:-16])
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_checkpoint_model_state_roundtrip(tmp_path):
    model = Toy(rng(16))
    x = rng(17).normal(size=(6, 4)).astype(np.float32)
    # drive batchnorm so running stats are nontrivial
    for _ in range(3):
        model.forward(Tensor(x))
    model.eval()
    before = model.forward(Tensor(x)).data.copy()
    path = tmp_path / "toy.ckpt"
    save_checkpoint(path, model.state_dict())
    fresh = Toy(rng(18))
    state, _ = load_checkpoint(path)
    fresh.load_state_dict(state)
    fresh.eval()
    np.testing.assert_array_equal(fresh.forward(Tensor(x)).data, before)
