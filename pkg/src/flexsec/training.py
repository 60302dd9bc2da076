"""Unsupervised training of :class:`PairGNN` on the relaxed secrecy objective."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .channel import SimConfig, generate_many
from .gnn import GraphBatch, ModelConfig, PairGNN
from .secrecy import LinkGains, relaxed_sum_secrecy_tensor, sum_secrecy

log = logging.getLogger(__name__)

VAL_SEED_OFFSET = 1_000_000_007


@dataclass
class TrainConfig:
    n_train: int = 10000
    batch_size: int = 128
    lr: float = 0.002
    weight_decay: float = 0.01
    epochs: int = 100
    early_stop_patience: int = 10
    seed: int = 0
    n_val: int = 1000

    def __post_init__(self):
        if min(self.n_train, self.batch_size, self.epochs, self.early_stop_patience, self.n_val) < 1:
            raise ValueError("training sizes must be positive")
        if self.batch_size > self.n_train:
            raise ValueError("batch_size cannot exceed n_train")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive and weight_decay non-negative")


class Dataset:
    """Realizations with precomputed graph features and link gains."""

    def __init__(self, reals, mode):
        if not reals:
            raise ValueError("empty dataset")
        self.reals = list(reals)
        self.graphs = GraphBatch(self.reals, mode)
        self.gains = LinkGains(self.reals)

    def __len__(self):
        return len(self.reals)

    def batch(self, idx):
        sub = object.__new__(Dataset)
        sub.reals = [self.reals[i] for i in idx]
        sub.graphs = self.graphs.subset(idx)
        sub.gains = self.gains.subset(idx)
        return sub


def relaxed_schedule(power, direction):
    """Per-user soft directions (B, 2N) and powers (B, 2N) from pair outputs."""
    B, N = power.shape
    t = direction.reshape(B, 2 * N)
    p = (power.reshape(B, N, 1) * np.ones((1, 1, 2))).reshape(B, 2 * N)
    return t, p


def loss(gains: LinkGains, power, direction):
    """Mean negative relaxed sum secrecy rate over the batch."""
    t, p = relaxed_schedule(power, direction)
    return -relaxed_sum_secrecy_tensor(gains, t, p).mean()


def batch_loss(model: PairGNN, data: Dataset):
    power, direction = model.forward(data.graphs)
    return loss(data.gains, power, direction)


def evaluate_assr(model: PairGNN, data):
    """Average clamped sum secrecy of the hardened GNN schedules."""
    reals = data.reals if isinstance(data, Dataset) else list(data)
    if not reals:
        raise ValueError("cannot evaluate ASSR on an empty dataset")
    scheds = model.infer_batch(reals)
    return float(np.mean([sum_secrecy(r, s) for r, s in zip(reals, scheds)]))


def make_datasets(cfg: TrainConfig, sim: SimConfig, mode):
    train = Dataset(generate_many(sim, cfg.n_train, seed=sim.seed), mode)
    val = Dataset(generate_many(sim, cfg.n_val, seed=sim.seed + VAL_SEED_OFFSET), mode)
    return train, val


def train(cfg: TrainConfig, sim: SimConfig, mode="csi", model_cfg: ModelConfig | None = None,
          model: PairGNN | None = None, datasets=None, start_epoch=0, on_epoch=None):
    """AdamW on the mean batch loss; returns the best-validation model and history.

    ``history`` holds one dict per epoch with keys ``epoch``, ``train_loss``,
    ``val_assr`` and ``seconds``. Passing ``model`` resumes from its weights.
    """
    if model is None:
        model_cfg = model_cfg or ModelConfig(mode=mode, n_eves=sim.n_eves,
                                             area_side_m=sim.area_side_m, seed=cfg.seed)
        model = PairGNN(replace(model_cfg, mode=mode))
    train_set, val_set = datasets or make_datasets(cfg, sim, mode)
    if model_cfg is not None or start_epoch == 0:
        model.fit_normalization(train_set.graphs)
    opt = ad.AdamW(model.trainable(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    # resumed runs draw fresh epoch orders rather than replaying epoch 0
    rng = np.random.default_rng([cfg.seed, start_epoch])

    best_val = evaluate_assr(model, val_set)
    best_state = {k: v.copy() for k, v in model.state().items()}
    history, stale = [], 0
    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order) - cfg.batch_size + 1, cfg.batch_size):
            batch = train_set.batch(order[start:start + cfg.batch_size])
            with ad.Tape() as tape:
                value = batch_loss(model, batch)
            tape.backward(value)
            opt.step()
            losses.append(float(value.data))
        val = evaluate_assr(model, val_set)
        row = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_assr": val,
               "seconds": time.perf_counter() - t0}
        history.append(row)
        log.info("epoch %d loss %.4f val ASSR %.4f", epoch, row["train_loss"], val)
        if on_epoch:
            on_epoch(row)
        if val > best_val:
            best_val, stale = val, 0
            best_state = {k: v.copy() for k, v in model.state().items()}
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    for name, arr in best_state.items():
        if name in model.params:
            model.params[name].data = arr
        else:
            model.buffers[name] = arr
    return model, history
