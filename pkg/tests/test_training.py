import math

import numpy as np
import pytest

from split_inr.core_math import Prng
from split_inr.network import NetworkSpec
from split_inr.tasks import ImageFitTask, synthetic_image
from split_inr.training import (
    AdamState, MetricRecord, TrainConfig, TrainingDiverged, adam_step, bce_loss, mse_loss, psnr, train,
    write_history_csv,
)


def fd_grad(f, x, h):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def test_mse_examples():
    assert mse_loss([1.0, 2.0], [1.0, 2.0]) == (0.0, pytest.approx(np.zeros(2)))
    loss, d = mse_loss([1.0], [0.0])
    assert loss == 1.0 and d.tolist() == [2.0]
    with pytest.raises(ValueError):
        mse_loss([1.0], [1.0, 2.0])


def test_mse_gradient_fd():
    prng = Prng(2)
    p, t = prng.uniform_array(-1, 1, (6, 3)), prng.uniform_array(-1, 1, (6, 3))
    _, d = mse_loss(p, t)
    np.testing.assert_allclose(d, fd_grad(lambda q: mse_loss(q, t)[0], p, 1e-6), atol=1e-7)


def test_bce_examples_and_gradient():
    t = np.array([0.0, 1.0, 1.0, 0.0])
    assert bce_loss(np.full(4, 0.5), t)[0] == pytest.approx(math.log(2), abs=1e-4)
    assert bce_loss(t.copy(), t)[0] <= 1e-6
    p = Prng(4).uniform_array(0.05, 0.95, 4)
    _, d = bce_loss(p, t)
    np.testing.assert_allclose(d, fd_grad(lambda q: bce_loss(q, t)[0], p, 1e-7), atol=1e-6)
    with pytest.raises(ValueError):
        bce_loss([0.5], [0.3])


def test_adam_fixed_point_and_first_step():
    p = [np.array([1.0, -2.0])]
    state = AdamState(0.1)
    for _ in range(10):
        adam_step(state, p, [np.zeros(2)])
    assert p[0].tolist() == [1.0, -2.0]
    q = [np.array([0.0])]
    adam_step(AdamState(0.1), q, [np.array([1.0])])
    # m_hat = v_hat = 1 at step one
    assert q[0][0] == pytest.approx(-0.1 / (1.0 + 1e-8), rel=1e-12)


def test_adam_converges_on_quadratic():
    p = [np.array([1.0])]
    state = AdamState(0.1)
    for _ in range(100):
        adam_step(state, p, [2.0 * p[0]])
    assert abs(p[0][0]) < 0.05


def test_adam_zero_lr_keeps_params_bit_identical():
    p = [Prng(1).uniform_array(-1, 1, 5)]
    ref = p[0].copy()
    state = AdamState(0.0)
    for i in range(50):
        adam_step(state, p, [Prng(i).uniform_array(-3, 3, 5)])
    assert np.array_equal(p[0], ref)


def test_adam_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        adam_step(AdamState(0.1), [np.zeros(1)], [np.array([np.nan])])


def test_psnr_examples():
    img = Prng(0).uniform_array(0, 1, (4, 4))
    assert psnr(img, img) == 99.0
    assert psnr(np.full(4, 0.1), np.zeros(4)) == pytest.approx(20.0)
    errs = [psnr(np.full(4, e), np.zeros(4)) for e in (0.01, 0.05, 0.2)]
    assert errs[0] > errs[1] > errs[2]
    assert psnr(np.full(4, 1.3), np.ones(4), clip=True) == 99.0


def test_lr_schedule():
    cfg = TrainConfig(iterations=11, learning_rate=1e-3, lr_schedule="exponential", final_ratio=0.1)
    assert cfg.lr_at(0) == pytest.approx(1e-3)
    assert cfg.lr_at(10) == pytest.approx(1e-4)
    with pytest.raises(ValueError):
        TrainConfig(iterations=0)


def test_single_pixel_memorized():
    task = ImageFitTask(np.array([[[0.25, 0.5, 0.75]]]))
    spec = NetworkSpec(2, 3, 8, 1)
    _, hist = train(task, spec, TrainConfig(iterations=200, learning_rate=1e-2, log_every=50))
    assert hist[-1].iteration == 199
    pred = task.predict(spec, _)
    assert float(np.mean((pred - task.image) ** 2)) < 1e-6


def test_training_deterministic_and_non_increasing():
    task = ImageFitTask(synthetic_image(16))
    spec = NetworkSpec(2, 3, 16, 1, num_splits=2)
    cfg = TrainConfig(iterations=600, learning_rate=1e-3, log_every=1)
    _, h1 = train(task, spec, cfg)
    _, h2 = train(task, spec, cfg)
    assert [(r.loss, r.metric) for r in h1] == [(r.loss, r.metric) for r in h2]
    losses = np.array([r.loss for r in h1])
    window = 100
    ok = [losses[i + window] <= losses[i] for i in range(len(losses) - window)]
    assert np.mean(ok) >= 0.95


def test_divergence_is_reported():
    class Bad:
        calls = 0

        def batch(self, it, prng):
            return np.zeros((1, 2)), np.zeros((1, 1))

        def loss(self, pred, target):
            self.calls += 1
            return (float("nan") if self.calls > 3 else 1.0), np.zeros_like(pred)

        def metric(self, spec, params):
            return 0.0

    with pytest.raises(TrainingDiverged) as err:
        train(Bad(), NetworkSpec(2, 1, 4, 1), TrainConfig(iterations=10))
    assert err.value.iteration == 3
    assert err.value.last_finite == 2


def test_history_csv(tmp_path):
    hist = [MetricRecord(0, 0.5, 12.25, 3.0), MetricRecord(10, 0.25, 15.0, 9.5)]
    write_history_csv(tmp_path / "h.csv", hist, include_wall=False)
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "iteration,loss,metric,wall_ms"
    assert lines[1] == "0,0.5,12.25,"
    write_history_csv(tmp_path / "w.csv", hist)
    assert (tmp_path / "w.csv").read_text().splitlines()[2] == "10,0.25,15,9.500"


def test_minibatch_uses_every_pixel_each_epoch():
    task = ImageFitTask(synthetic_image(8), batch_size=16)
    prng = Prng(0)
    seen = np.concatenate([task.batch(it, prng)[0] for it in range(4)])
    assert len(np.unique(seen, axis=0)) == 64
