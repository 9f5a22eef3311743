import struct

import numpy as np
import pytest

from incres_affect.data import DatasetSplit, frames_to_arrays, split_by_subject, synth_generate
from incres_affect.errors import (ArchMismatch, CorruptCheckpoint, DivergedLoss, EmptyDataset,
                                  IoFailure, MissingGradient, ShapeMismatch)
from incres_affect.layers import Mode
from incres_affect.nets import build_network
from incres_affect.tensor import Rng, Tensor
from incres_affect.training import (MAGIC, Checkpoint, TrainConfig, apply_checkpoint,
                                    decode_checkpoint, encode_checkpoint, load_checkpoint,
                                    mse_loss, network_from_checkpoint, save_checkpoint, sgd_step,
                                    snapshot, train)

from conftest import check_grads

SMALL = dict(width_multiplier=0.125, lstm_hidden=3)


@pytest.fixture(scope="module")
def tiny_split():
    frames = synth_generate(4, 12, 0.5, None)
    return split_by_subject(frames, 0.25, Rng(0))


def test_mse_identity_and_hand_value():
    p = Tensor([[0.3, -0.2]], requires_grad=True)
    loss = mse_loss(p, [[0.3, -0.2]])
    loss.backward()
    assert float(loss.data) == 0.0
    np.testing.assert_array_equal(p.grad, 0.0)
    assert float(mse_loss(Tensor([[1.0, 0.0]]), [[0.0, 0.0]]).data) == 0.5


def test_mse_gradient_finite_difference():
    g = np.random.default_rng(0)
    p = Tensor(g.normal(size=(4, 2)), requires_grad=True)
    t = g.normal(size=(4, 2))
    assert check_grads(lambda: mse_loss(p, t), [p]) <= 1e-8
    p.grad = None
    mse_loss(p, t).backward()
    np.testing.assert_allclose(p.grad, 2 * (p.data - t) / 8, rtol=1e-15)


def test_mse_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        mse_loss(Tensor(np.zeros((2, 2))), np.zeros((3, 2)))


def test_sgd_arithmetic():
    p = Tensor([1.0], requires_grad=True)
    sgd_step({"p": p}, {"p": np.array([1.0])}, TrainConfig(learning_rate=0.1, weight_decay=0.0))
    assert p.data[0] == pytest.approx(0.9, abs=1e-15)
    p = Tensor([1.0], requires_grad=True)
    sgd_step({"p": p}, {"p": np.array([0.0])}, TrainConfig())
    assert p.data[0] == pytest.approx(0.999999, abs=1e-15)


def test_pure_decay_is_geometric():
    cfg = TrainConfig()
    p = Tensor(np.array([2.0, -3.0, 0.5]), requires_grad=True)
    norms = [np.linalg.norm(p.data)]
    for _ in range(50):
        sgd_step({"p": p}, {"p": np.zeros(3)}, cfg)
        norms.append(np.linalg.norm(p.data))
    ratios = np.array(norms[1:]) / np.array(norms[:-1])
    np.testing.assert_allclose(ratios, 1 - cfg.learning_rate * cfg.weight_decay, rtol=1e-12)
    assert all(a > b for a, b in zip(norms, norms[1:]))


def test_sgd_missing_gradient():
    with pytest.raises(MissingGradient):
        sgd_step({"p": Tensor([1.0], requires_grad=True)})


def test_sgd_skips_running_statistics():
    net = build_network("shallow", SMALL)
    buffers = {k: t.data.copy() for k, t in net.named_buffers().items()}
    params = net.named_parameters()
    assert not set(buffers) & set(params)
    for t in params.values():
        t.grad = np.ones(t.shape)
    sgd_step(params)
    for k, t in net.named_buffers().items():
        np.testing.assert_array_equal(t.data, buffers[k])


def test_small_step_decreases_sample_loss():
    net = build_network("shallow", SMALL)
    frames = synth_generate(1, 1, 0.0, None)
    images, labels = frames_to_arrays(frames)
    x = Tensor(np.repeat(images, 2, axis=0))
    y = np.repeat(labels, 2, axis=0)
    params = net.named_parameters()

    def loss():
        return mse_loss(net.forward(x, Mode.TRAIN, rng=None), y)

    # keep_prob < 1 would make the two evaluations differ, so switch dropout off
    for block in net.spec.blocks:
        block.keep_prob = 1.0
    net.zero_grad()
    before = loss()
    before.backward()
    sgd_step(params, config=TrainConfig(learning_rate=1e-4, weight_decay=0.0))
    assert float(loss().data) < float(before.data)


def test_train_empty_dataset():
    with pytest.raises(EmptyDataset):
        train("shallow", DatasetSplit([], []), TrainConfig(max_steps=1))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_diverged_loss(tiny_split):
    net = build_network("shallow", SMALL)
    with pytest.raises(DivergedLoss):
        train(net, tiny_split, TrainConfig(learning_rate=1e12, max_steps=50, eval_every=50))


def test_validation_never_reaches_gradients(tiny_split):
    val_ids = {id(f) for f in tiny_split.validation}
    train_ids = {id(f) for f in tiny_split.train}
    seen = []

    def spy(step, batch):
        seen.extend(id(f) for f in batch)
    train(build_network("shallow", SMALL), tiny_split,
          TrainConfig(max_steps=6, batch_size=8, eval_every=3), on_batch=spy)
    assert seen and set(seen) <= train_ids
    assert not val_ids & set(seen)


def test_training_is_reproducible(tiny_split):
    cfg = TrainConfig(max_steps=8, batch_size=4, eval_every=4, seed=3)
    a = train(build_network("deep", SMALL), tiny_split, cfg)
    b = train(build_network("deep", SMALL), tiny_split, cfg)
    assert a.losses == b.losses
    for k, v in a.checkpoint.tensors.items():
        np.testing.assert_array_equal(v, b.checkpoint.tensors[k])


def test_train_keeps_best_checkpoint(tiny_split):
    result = train(build_network("shallow", SMALL), tiny_split,
                   TrainConfig(max_steps=9, batch_size=4, eval_every=3))
    assert [r.step for r in result.history] == [3, 6, 9]
    best = min(result.history, key=lambda r: r.report.mean_rmse())
    assert result.best is best and result.checkpoint.step == best.step
    assert result.network is not None
    for k, t in result.network.state_tensors().items():
        np.testing.assert_array_equal(t.data, result.checkpoint.tensors[k])


def test_target_rmse_stops_early(tiny_split):
    result = train(build_network("shallow", SMALL), tiny_split,
                   TrainConfig(max_steps=50, batch_size=4, eval_every=2, target_rmse=10.0))
    assert result.steps == 2


def test_lr_decay_schedule():
    cfg = TrainConfig(lr_decay_every=10, lr_decay_factor=0.5)
    assert cfg.lr_at(0) == 0.01 and cfg.lr_at(9) == 0.01
    assert cfg.lr_at(10) == 0.005
    assert TrainConfig().lr_at(10**6) == 0.01


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(weight_decay=-1)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


# checkpoints ---------------------------------------------------------------

def _trained_net():
    net = build_network("shallow", SMALL)
    for t in net.state_tensors().values():
        t.data = t.data + np.random.default_rng(0).normal(0, 0.01, t.shape)
    return net


def test_checkpoint_round_trip_bit_exact(tmp_path):
    net = _trained_net()
    path = save_checkpoint(tmp_path / "a.ckpt", net, step=17)
    ckpt = load_checkpoint(path)
    assert ckpt.step == 17
    for k, t in net.state_tensors().items():
        assert ckpt.tensors[k].tobytes() == t.data.tobytes()
    images = frames_to_arrays(synth_generate(1, 5, 0.5, None))[0]
    np.testing.assert_array_equal(network_from_checkpoint(ckpt).predict(images, clamp=False),
                                  net.predict(images, clamp=False))
    save_checkpoint(tmp_path / "b.ckpt", ckpt)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_layout():
    ckpt = Checkpoint({"k": 1}, {"w": np.array([[1.0, 2.0]])}, step=5)
    buf = encode_checkpoint(ckpt)
    assert buf[:8] == MAGIC
    assert struct.unpack("<I", buf[8:12]) == (1,)
    (blob_len,) = struct.unpack("<I", buf[12:16])
    assert buf[16 : 16 + blob_len] == b'{"k": 1}'
    rest = buf[16 + blob_len :]
    assert struct.unpack("<IH", rest[:6]) == (1, 1)
    assert rest[6:7] == b"w"
    assert struct.unpack("<BBII", rest[7:17]) == (1, 2, 1, 2)
    assert np.frombuffer(rest[17:33], "<f8").tolist() == [1.0, 2.0]
    assert struct.unpack("<Q", rest[33:]) == (5,)


def test_truncated_checkpoint(tmp_path):
    buf = encode_checkpoint(snapshot(_trained_net()))
    for cut in (4, 20, len(buf) // 2, len(buf) - 1):
        with pytest.raises(CorruptCheckpoint):
            decode_checkpoint(buf[:cut])


def test_bad_magic_version_and_trailing_bytes():
    buf = encode_checkpoint(Checkpoint({}, {}, 0))
    with pytest.raises(CorruptCheckpoint):
        decode_checkpoint(b"NOTCKPT!" + buf[8:])
    with pytest.raises(CorruptCheckpoint):
        decode_checkpoint(buf[:8] + struct.pack("<I", 2) + buf[12:])
    with pytest.raises(CorruptCheckpoint):
        decode_checkpoint(buf + b"\x00")


def test_arch_mismatch(tmp_path):
    path = save_checkpoint(tmp_path / "s.ckpt", build_network("shallow", SMALL))
    ckpt = load_checkpoint(path)
    with pytest.raises(ArchMismatch):
        apply_checkpoint(build_network("deep", SMALL), ckpt)


def test_missing_checkpoint_file(tmp_path):
    with pytest.raises(IoFailure):
        load_checkpoint(tmp_path / "nope.ckpt")
