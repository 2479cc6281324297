"""Deep-seeded clustering: autoencoder pre-training followed by joint training.

The joint objective per batch is ``L = L_AE + L_cm`` where L_cm uses the
current centroids and memberships as constants.  After each epoch's batch
sweep the whole training set is re-embedded and memberships, then centroids,
are refreshed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autoencoder import AutoencoderModel, reconstruction_terms
from .clustering import (
    ClusterState,
    cmeans_centroids,
    cmeans_loss,
    cmeans_loss_tensor,
    cmeans_membership,
    seed_state,
)
from .config import TrainConfig
from .tensor import Tape, Tensor, add

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


class Adam:
    def __init__(self, params: list[Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class SGD:
    def __init__(self, params: list[Tensor], lr: float):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        for p in self.params:
            if p.grad is not None:
                p.data = p.data - self.lr * p.grad

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def make_optimizer(params: list[Tensor], lr: float, config: TrainConfig):
    if config.optimizer == "sgd":
        return SGD(params, lr)
    return Adam(params, lr, config.adam_beta1, config.adam_beta2, config.adam_eps)


@dataclass
class TrainedModel:
    model: AutoencoderModel
    clusters: ClusterState
    history: list[dict] = field(default_factory=list)
    config_fingerprint: str = ""
    events: list[str] = field(default_factory=list)

    @property
    def delta(self) -> int:
        return self.model.delta


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def _check_finite(value: float, phase: str, epoch: int) -> None:
    if not math.isfinite(value):
        raise NumericalError(f"non-finite loss ({value}) in {phase} epoch {epoch}")


def joint_loss(model: AutoencoderModel, windows: np.ndarray, centroids: np.ndarray,
               u: np.ndarray) -> tuple[Tensor, Tensor, Tensor]:
    """(L, L_AE, L_cm) for a batch; L_cm is normalized by the batch size."""
    z, l_ae = reconstruction_terms(model, windows)
    l_cm = cmeans_loss_tensor(z, centroids, u)
    return add(l_ae, l_cm), l_ae, l_cm


def pretrain(model: AutoencoderModel, windows: np.ndarray, config: TrainConfig,
             rng: np.random.Generator | None = None, history: list[dict] | None = None,
             on_epoch: Callable[[dict], None] | None = None) -> AutoencoderModel:
    """Minimize the reconstruction loss alone for ``config.pretrain_epochs`` epochs."""
    rng = rng or np.random.default_rng(config.rng_seed)
    params = model.parameters()
    opt = make_optimizer(params, config.lr_pretrain, config)
    for epoch in range(config.pretrain_epochs):
        losses = []
        for idx in _batches(len(windows), config.batch_size, rng):
            opt.zero_grad()
            with Tape() as tape:
                _, l_ae = reconstruction_terms(model, windows[idx])
            value = l_ae.item()
            _check_finite(value, "pretrain", epoch)
            tape.backward(l_ae)
            opt.step()
            losses.append(value)
        rec = {"phase": "pretrain", "epoch": epoch, "l_ae": float(np.mean(losses)),
               "l_cm": None, "loss": float(np.mean(losses))}
        if history is not None:
            history.append(rec)
        if on_epoch:
            on_epoch(rec)
    opt.zero_grad()
    return model


def train(model: AutoencoderModel, windows: np.ndarray, seeds, config: TrainConfig,
          n_classes: int | None = None, on_epoch: Callable[[dict], None] | None = None) -> TrainedModel:
    windows = np.asarray(windows, dtype=np.float64)
    seeds = np.asarray(seeds, dtype=np.int64)
    if seeds.shape[0] != windows.shape[0]:
        raise ValueError(f"{seeds.shape[0]} seed labels for {windows.shape[0]} windows")
    K = n_classes if n_classes is not None else int(seeds.max()) + 1
    rng = np.random.default_rng(config.rng_seed)
    history: list[dict] = []
    events: list[str] = []

    pretrain(model, windows, config, rng, history, on_epoch)

    z_all = model.embed(windows)
    state = seed_state(z_all, seeds, K, config.gamma)
    u_all, centroids = state.memberships, state.centroids

    params = model.parameters()
    opt = make_optimizer(params, config.lr_train, config)
    for epoch in range(config.epochs):
        ae_losses, cm_losses, totals = [], [], []
        for idx in _batches(len(windows), config.batch_size, rng):
            opt.zero_grad()
            with Tape() as tape:
                loss, l_ae, l_cm = joint_loss(model, windows[idx], centroids, u_all[idx])
            value = loss.item()
            _check_finite(value, "train", epoch)
            tape.backward(loss)
            opt.step()
            ae_losses.append(l_ae.item())
            cm_losses.append(l_cm.item())
            totals.append(value)

        z_all = model.embed(windows)
        u_all = cmeans_membership(z_all, centroids, config.gamma)
        centroids = cmeans_centroids(z_all, u_all, centroids, events)
        rec = {
            "phase": "train", "epoch": epoch,
            "l_ae": float(np.mean(ae_losses)), "l_cm": float(np.mean(cm_losses)),
            "loss": float(np.mean(totals)),
            "l_cm_full": cmeans_loss(z_all, centroids, u_all, normalize=False),
        }
        _check_finite(rec["l_cm_full"], "refresh", epoch)
        history.append(rec)
        if on_epoch:
            on_epoch(rec)
    opt.zero_grad()

    clusters = ClusterState(centroids, u_all, config.gamma, state.pseudo_labels)
    return TrainedModel(model, clusters, history, config.fingerprint(), events)


def predict(trained: TrainedModel, windows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Class ids and membership rows for (B, delta, 3) windows."""
    w = np.asarray(windows, dtype=np.float64)
    if w.ndim == 2:
        w = w[None]
    if w.shape[1] != trained.delta:
        raise ValueError(f"window length {w.shape[1]} does not match trained delta {trained.delta}")
    return trained.clusters.predict(trained.model.embed(w))


def fit(windows: np.ndarray, seeds, config: TrainConfig, n_classes: int | None = None,
        on_epoch: Callable[[dict], None] | None = None) -> TrainedModel:
    """Build a fresh model from ``config`` and train it."""
    model = AutoencoderModel(config.delta, config.embedding_dim, seed=config.rng_seed)
    return train(model, windows, seeds, config, n_classes, on_epoch)
