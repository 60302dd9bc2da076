import math

import numpy as np
import pytest

from conftest import make_real

from flexsec import autodiff as ad
from flexsec import training as tr
from flexsec.autodiff import Tensor
from flexsec.channel import SimConfig, generate_many
from flexsec.gnn import ModelConfig, PairGNN
from flexsec.secrecy import LinkGains, Schedule, sum_secrecy


def test_loss_zero_power_is_zero():
    reals = generate_many(SimConfig(n_pairs=2, n_eves=2), 3)
    out = tr.loss(LinkGains(reals), Tensor(np.zeros((3, 2))), Tensor(np.full((3, 2, 2), 0.5)))
    assert float(out.data) == 0.0


def test_loss_single_link_value():
    # p |h|^2 / sigma^2 = e - 1 and a blind eavesdropper: one nat
    H = np.array([[0, 0], [math.sqrt(math.e - 1), 0]], complex)
    real = make_real(H, [[0.0], [0.0]], noise=1.0)
    out = tr.loss(LinkGains([real]), Tensor(np.ones((1, 1))), Tensor(np.array([[[1.0, 0.0]]])))
    assert float(out.data) == pytest.approx(-1.0, rel=1e-14)


def test_relaxed_schedule_layout():
    power = Tensor(np.array([[0.2, 0.7]]))
    direction = Tensor(np.array([[[0.9, 0.1], [0.3, 0.7]]]))
    t, p = tr.relaxed_schedule(power, direction)
    np.testing.assert_allclose(t.data, [[0.9, 0.1, 0.3, 0.7]])
    np.testing.assert_allclose(p.data, [[0.2, 0.2, 0.7, 0.7]])


def test_loss_gradient_matches_finite_differences():
    sim = SimConfig(n_pairs=2, n_eves=2)
    data = tr.Dataset(generate_many(sim, 4, seed=3), "csi")
    model = PairGNN(ModelConfig(n_eves=2, seed=1))
    model.fit_normalization(data.graphs)
    with ad.Tape() as tape:
        value = tr.batch_loss(model, data)
    tape.backward(value)
    rng = np.random.default_rng(0)
    worst = 0.0
    for name, prm in model.params.items():
        analytic = prm.grad.copy()
        for idx in [tuple(rng.integers(0, s) for s in prm.shape) for _ in range(3)]:
            old = prm.data[idx]
            h = 1e-6 * max(1.0, abs(old))
            prm.data[idx] = old + h
            up = float(tr.batch_loss(model, data).data)
            prm.data[idx] = old - h
            down = float(tr.batch_loss(model, data).data)
            prm.data[idx] = old
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - analytic[idx]) / max(abs(fd), abs(analytic[idx]), 1e-6))
    assert worst < 1e-4


def small_run(**kw):
    sim = SimConfig(n_pairs=2, n_eves=2, seed=11)
    cfg = tr.TrainConfig(n_train=64, batch_size=16, n_val=16, epochs=2, **kw)
    return tr.train(cfg, sim, "csi")


def test_smoke_training_history():
    model, hist = small_run()
    assert [h["epoch"] for h in hist] == [0, 1]
    for row in hist:
        assert np.isfinite(row["train_loss"]) and row["val_assr"] >= 0 and row["seconds"] > 0


def test_training_is_reproducible():
    m1, h1 = small_run(seed=4)
    m2, h2 = small_run(seed=4)
    assert [r["train_loss"] for r in h1] == [r["train_loss"] for r in h2]
    for k, v in m1.state().items():
        np.testing.assert_array_equal(v, m2.state()[k])


def test_best_validation_state_restored():
    sim = SimConfig(n_pairs=2, n_eves=2, seed=11)
    cfg = tr.TrainConfig(n_train=64, batch_size=16, n_val=32, epochs=4, early_stop_patience=4)
    datasets = tr.make_datasets(cfg, sim, "csi")
    model, hist = tr.train(cfg, sim, "csi", datasets=datasets)
    best = max(r["val_assr"] for r in hist)
    assert tr.evaluate_assr(model, datasets[1]) >= best - 1e-12


def test_early_stopping_after_patience(monkeypatch):
    # a flat validation curve never improves on the initial model
    monkeypatch.setattr(tr, "evaluate_assr", lambda model, data: 1.0)
    sim = SimConfig(n_pairs=1, n_eves=1, seed=2)
    cfg = tr.TrainConfig(n_train=32, batch_size=32, n_val=8, epochs=50, early_stop_patience=3)
    _, hist = tr.train(cfg, sim, "csi")
    assert len(hist) == 3


def test_evaluate_assr_matches_direct_average():
    sim = SimConfig(n_pairs=2, n_eves=2)
    reals = generate_many(sim, 5, seed=20)
    model = PairGNN(ModelConfig(n_eves=2))
    scheds = [model.infer(r) for r in reals]
    direct = np.mean([sum_secrecy(r, s) for r, s in zip(reals, scheds)])
    assert tr.evaluate_assr(model, reals) == pytest.approx(direct, rel=1e-12)
    assert tr.evaluate_assr(model, reals[:1]) == pytest.approx(sum_secrecy(reals[0], scheds[0]))
    assert tr.evaluate_assr(model, reals[::-1]) == pytest.approx(direct, rel=1e-12)
    with pytest.raises(ValueError):
        tr.evaluate_assr(model, [])


def test_hardened_schedule_feasible_after_training():
    model, _ = small_run()
    for r in generate_many(SimConfig(n_pairs=3, n_eves=2), 5, seed=99):
        s = model.infer(r)
        assert isinstance(s, Schedule)
        s.check(r.pmax_w, atol=0.0)


@pytest.mark.parametrize("kwargs", [dict(batch_size=0), dict(batch_size=20000), dict(lr=0.0)])
def test_invalid_train_config(kwargs):
    with pytest.raises(ValueError):
        tr.TrainConfig(**kwargs)
