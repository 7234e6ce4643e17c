"""Training loop, evaluation metrics and the constant-mean baseline."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from rs4d.gyre import SensorDataset
from rs4d.model import ModelConfig, ParamTape, ShredModel, loss_last_t, parameter_norms

log = logging.getLogger(__name__)


class NonFiniteLoss(FloatingPointError):
    def __init__(self, epoch: int, norms: dict[str, float]):
        self.epoch = epoch
        self.norms = norms
        worst = sorted(norms.items(), key=lambda kv: -kv[1] if math.isfinite(kv[1]) else -math.inf)[:5]
        super().__init__(f"loss became non-finite in epoch {epoch}; largest parameter norms: {worst}")


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3
    ssm_lr: float = 1e-4
    seed: int = 0
    t_eval: int | None = None  # evaluated steps counted in the loss, default all


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_rmse: list[float] = field(default_factory=list)


def model_for(ds: SensorDataset, cfg: ModelConfig) -> ShredModel:
    cfg.input_dim = ds.feature_dim
    cfg.output_dim = ds.output_dim
    return ShredModel(cfg)


@torch.no_grad()
def predict(model: ShredModel, inputs: np.ndarray, eval_index: np.ndarray, batch_size: int = 64) -> np.ndarray:
    model.eval()
    idx = torch.as_tensor(eval_index, dtype=torch.long)
    out = []
    for i in range(0, inputs.shape[0], batch_size):
        out.append(model(torch.as_tensor(inputs[i : i + batch_size]), idx).numpy())
    return np.concatenate(out)


def rmse(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def constant_mean_rmse(ds: SensorDataset, split: str = "val") -> float:
    """RMSE of predicting the per-grid-point mean of the training targets."""
    mean = ds.splits["train"].targets.mean(axis=(0, 1))
    tg = ds.splits[split].targets
    return rmse(np.broadcast_to(mean, tg.shape), tg)


def train(model: ShredModel, ds: SensorDataset, cfg: TrainConfig, on_epoch=None) -> History:
    tape = ParamTape(model, lr=cfg.lr, ssm_lr=cfg.ssm_lr)
    train_split = ds.splits["train"]
    inputs = torch.as_tensor(train_split.inputs)
    targets = torch.as_tensor(train_split.targets)
    idx = torch.as_tensor(ds.eval_index, dtype=torch.long)
    t_eval = cfg.t_eval or len(ds.eval_index)
    rng = np.random.default_rng([cfg.seed, 7])
    hist = History()
    for epoch in range(cfg.epochs):
        model.train()
        order = rng.permutation(inputs.shape[0])
        total, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = torch.as_tensor(order[start : start + cfg.batch_size])
            pred = model(inputs[batch], idx)
            loss = loss_last_t(pred, targets[batch], t_eval)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(epoch, parameter_norms(model))
            tape.backward(loss)
            tape.adam_step()
            model.s4dc_update()
            total += float(loss.detach()) * len(batch)
            seen += len(batch)
        hist.train_loss.append(total / seen)
        val = ds.splits["val"]
        hist.val_rmse.append(rmse(predict(model, val.inputs, ds.eval_index), val.targets))
        log.info("epoch %d train_mse %.6f val_rmse %.6f", epoch + 1, hist.train_loss[-1], hist.val_rmse[-1])
        if on_epoch is not None:
            on_epoch(epoch, hist)
    return hist
