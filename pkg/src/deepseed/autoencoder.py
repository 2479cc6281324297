"""GRU sequence-to-sequence autoencoder built on :mod:`deepseed.tensor`.

Encoder: two GRU layers, each followed by layer normalization; the final
normalized hidden state of the second layer is the embedding ``z``.
Decoder: ``z`` is fed as the input at every step to two GRU layers (also
layer-normalized, zero initial state) and a linear layer maps each step back
to the three signal channels.
"""

from __future__ import annotations

from collections import OrderedDict
from pathlib import Path

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat,
    gru_cell,
    layer_norm,
    load_tensors,
    matmul,
    mul,
    reshape,
    save_tensors,
    scale,
    sqnorm,
    sub,
    transpose,
)

N_CHANNELS = 3
LN_EPS = 1e-5
MODEL_FORMAT = "deepseed-model/1"


class GruLayer:
    """Gate weights stored as (hidden, input) / (hidden, hidden) matrices."""

    GATES = ("u", "r", "c")

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator | None = None, prefix: str = ""):
        self.input_size = input_size
        self.hidden_size = hidden_size
        rng = rng or np.random.default_rng(0)
        kx, kh = 1.0 / np.sqrt(input_size), 1.0 / np.sqrt(hidden_size)
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        for g in self.GATES:
            self.params[f"W_{g}"] = Tensor(rng.uniform(-kx, kx, (hidden_size, input_size)), True, f"{prefix}W_{g}")
            self.params[f"U_{g}"] = Tensor(rng.uniform(-kh, kh, (hidden_size, hidden_size)), True, f"{prefix}U_{g}")
            self.params[f"b_{g}"] = Tensor(rng.uniform(-kh, kh, hidden_size), True, f"{prefix}b_{g}")

    def __getitem__(self, key: str) -> Tensor:
        return self.params[key]

    def fused(self) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """Gate weights stacked and transposed for :func:`gru_cell`.

        Built once per forward pass: input weights (in, 3H), biases (3H,),
        recurrent update/reset weights (H, 2H), recurrent candidate weights (H, H).
        """
        p = self.params
        w_in = transpose(concat([p["W_u"], p["W_r"], p["W_c"]], axis=0))
        bias = concat([p["b_u"], p["b_r"], p["b_c"]], axis=0)
        u_ur = transpose(concat([p["U_u"], p["U_r"]], axis=0))
        return w_in, bias, u_ur, transpose(p["U_c"])


def gru_step(layer: GruLayer, x: Tensor, h_prev: Tensor, fused: tuple | None = None,
             x_proj: Tensor | None = None) -> Tensor:
    """One GRU update on a batch of rows (or a single vector).

    u = sigmoid(W_u x + U_u h + b_u), r = sigmoid(W_r x + U_r h + b_r),
    c = tanh(W_c x + U_c (r * h) + b_c), h_new = (1 - u) * h + u * c.

    ``x_proj`` may carry the precomputed input projection (constant decoder input).
    """
    if x.data.ndim == 1:
        return reshape(gru_step(layer, reshape(x, (1, -1)), reshape(h_prev, (1, -1)), fused, x_proj), (-1,))
    if x.shape[1] != layer.input_size or h_prev.shape[1] != layer.hidden_size or x.shape[0] != h_prev.shape[0]:
        raise ShapeError("gru_step", x.shape, h_prev.shape,
                         detail=f"layer expects input {layer.input_size}, hidden {layer.hidden_size}")
    w_in, bias, u_ur, u_c = fused or layer.fused()
    if x_proj is None:
        x_proj = add(matmul(x, w_in), bias)
    return gru_cell(x_proj, h_prev, u_ur, u_c)


class Norm:
    def __init__(self, size: int, prefix: str = ""):
        self.gain = Tensor(np.ones(size), True, f"{prefix}gain")
        self.bias = Tensor(np.zeros(size), True, f"{prefix}bias")
        self.eps = LN_EPS

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class AutoencoderModel:
    def __init__(self, delta: int, embedding_dim: int = 30, n_channels: int = N_CHANNELS, seed: int = 0):
        self.delta = delta
        self.embedding_dim = embedding_dim
        self.n_channels = n_channels
        self.seed = seed
        rng = np.random.default_rng(seed)
        D = embedding_dim
        self.enc = [GruLayer(n_channels, D, rng, "enc0."), GruLayer(D, D, rng, "enc1.")]
        self.enc_norm = [Norm(D, "enc0.norm."), Norm(D, "enc1.norm.")]
        self.dec = [GruLayer(D, D, rng, "dec0."), GruLayer(D, D, rng, "dec1.")]
        self.dec_norm = [Norm(D, "dec0.norm."), Norm(D, "dec1.norm.")]
        k = 1.0 / np.sqrt(D)
        self.out_W = Tensor(rng.uniform(-k, k, (n_channels, D)), True, "out.W")
        self.out_b = Tensor(rng.uniform(-k, k, n_channels), True, "out.b")

    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        out: OrderedDict[str, Tensor] = OrderedDict()
        for tag, layers, norms in (("enc", self.enc, self.enc_norm), ("dec", self.dec, self.dec_norm)):
            for i, (layer, norm) in enumerate(zip(layers, norms)):
                for k, v in layer.params.items():
                    out[f"{tag}{i}.{k}"] = v
                out[f"{tag}{i}.norm.gain"] = norm.gain
                out[f"{tag}{i}.norm.bias"] = norm.bias
        out["out.W"] = self.out_W
        out["out.b"] = self.out_b
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        if set(state) != set(params):
            raise ValueError(f"parameter names differ: {sorted(set(state) ^ set(params))}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)

    def hyperparameters(self) -> dict:
        return {"delta": self.delta, "embedding_dim": self.embedding_dim,
                "n_channels": self.n_channels, "layers": 2, "seed": self.seed}

    # -- forward passes --------------------------------------------------------

    def _check_windows(self, windows: np.ndarray) -> np.ndarray:
        w = np.asarray(windows, dtype=np.float64)
        if w.ndim == 2:
            w = w[None]
        if w.ndim != 3 or w.shape[1] != self.delta or w.shape[2] != self.n_channels:
            raise ValueError(
                f"windows must be (batch, {self.delta}, {self.n_channels}), got {np.shape(windows)}"
            )
        if not np.all(np.isfinite(w)):
            raise ValueError("windows contain non-finite values")
        return w

    def encode(self, windows: np.ndarray) -> Tensor:
        """(B, delta, C) or (delta, C) array -> (B, D) embedding tensor."""
        w = self._check_windows(windows)
        B = w.shape[0]
        D = self.embedding_dim
        wts = [layer.fused() for layer in self.enc]
        h = [Tensor(np.zeros((B, D))), Tensor(np.zeros((B, D)))]
        out = None
        for t in range(w.shape[1]):
            xt = Tensor(w[:, t, :])
            h[0] = gru_step(self.enc[0], xt, h[0], wts[0])
            y0 = self.enc_norm[0](h[0])
            h[1] = gru_step(self.enc[1], y0, h[1], wts[1])
            out = h[1]
        return self.enc_norm[1](out)

    def decode(self, z: Tensor, delta: int | None = None) -> list[Tensor]:
        """Unroll the decoder for ``delta`` steps; returns one (B, C) tensor per step."""
        delta = self.delta if delta is None else delta
        if z.data.ndim != 2 or z.shape[1] != self.embedding_dim:
            raise ShapeError("decode", z.shape, detail=f"expected (batch, {self.embedding_dim})")
        B, D = z.shape
        wts = [layer.fused() for layer in self.dec]
        # z is the decoder input at every step, so its projection is computed once
        proj = add(matmul(z, wts[0][0]), wts[0][1])
        outW = transpose(self.out_W)
        h = [Tensor(np.zeros((B, D))), Tensor(np.zeros((B, D)))]
        outs = []
        for _ in range(delta):
            h[0] = gru_step(self.dec[0], z, h[0], wts[0], x_proj=proj)
            y0 = self.dec_norm[0](h[0])
            h[1] = gru_step(self.dec[1], y0, h[1], wts[1])
            y1 = self.dec_norm[1](h[1])
            outs.append(add(matmul(y1, outW), self.out_b))
        return outs

    def reconstruct(self, windows: np.ndarray) -> np.ndarray:
        w = self._check_windows(windows)
        steps = self.decode(self.encode(w), w.shape[1])
        return np.stack([s.data for s in steps], axis=1)

    def embed(self, windows: np.ndarray, batch_size: int = 512) -> np.ndarray:
        """Inference-only embeddings as a plain array, computed in chunks."""
        w = np.asarray(windows, dtype=np.float64)
        chunks = [self.encode(w[i:i + batch_size]).data for i in range(0, w.shape[0], batch_size)]
        return np.concatenate(chunks, axis=0) if chunks else np.zeros((0, self.embedding_dim))


def encode(model: AutoencoderModel, window: np.ndarray) -> np.ndarray:
    """Embedding of a single (delta, C) window, or a (B, delta, C) batch."""
    z = model.encode(window).data
    return z[0] if np.ndim(window) == 2 else z


def decode(model: AutoencoderModel, z: np.ndarray, delta: int | None = None) -> np.ndarray:
    zz = np.atleast_2d(np.asarray(z, dtype=np.float64))
    out = np.stack([s.data for s in model.decode(Tensor(zz), delta)], axis=1)
    return out[0] if np.ndim(z) == 1 else out


def reconstruction_terms(model: AutoencoderModel, windows: np.ndarray) -> tuple[Tensor, Tensor]:
    """Forward pass returning (embeddings, L_AE) for a batch.

    L_AE = 1/2 * mean over windows of the squared Frobenius error.
    """
    w = model._check_windows(windows)
    z = model.encode(w)
    steps = model.decode(z, w.shape[1])
    total_err = None
    for t, xhat in enumerate(steps):
        e = sqnorm(sub(xhat, Tensor(w[:, t, :])))
        total_err = e if total_err is None else add(total_err, e)
    return z, scale(total_err, 0.5 / w.shape[0])


def reconstruction_loss(model: AutoencoderModel, windows: np.ndarray) -> Tensor:
    return reconstruction_terms(model, windows)[1]


def reconstruction_error(x: np.ndarray, xhat: np.ndarray) -> float:
    """Plain-array L_AE for (B, delta, C) or a single (delta, C) window."""
    x = np.asarray(x, dtype=np.float64)
    xhat = np.asarray(xhat, dtype=np.float64)
    if x.ndim == 2:
        x, xhat = x[None], xhat[None]
    return 0.5 * float(((x - xhat) ** 2).sum()) / x.shape[0]


def save_model(model: AutoencoderModel, path: str | Path, meta: dict | None = None) -> None:
    info = {"model_format": MODEL_FORMAT, **model.hyperparameters(), **(meta or {})}
    save_tensors(path, model.state(), info)


def load_model(path: str | Path) -> tuple[AutoencoderModel, dict]:
    arrays, meta = load_tensors(path)
    if meta.get("model_format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a model checkpoint")
    model = AutoencoderModel(meta["delta"], meta["embedding_dim"], meta["n_channels"], meta.get("seed", 0))
    model.load_state(arrays)
    return model, meta
