"""Encoder-decoder Transformer over the history and the leader's future speeds."""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .base import Model, ModelConfig, ModelInput, ModelOutput

_NEG = -1e9


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def layer_norm(x: ad.Tensor, gain: ad.Tensor, bias: ad.Tensor, eps: float = 1e-5) -> ad.Tensor:
    mu = ad.mean(x, axis=-1, keepdims=True)
    d = x - mu
    var = ad.mean(d * d, axis=-1, keepdims=True)
    return d / ad.sqrt(var + eps) * gain + bias


def softmax(x: ad.Tensor) -> ad.Tensor:
    # The shift is a constant; it cancels in the ratio.
    e = ad.exp(x - x.data.max(axis=-1, keepdims=True))
    return e / ad.sum(e, axis=-1, keepdims=True)


def attention(p: dict, prefix: str, q_in: ad.Tensor, kv_in: ad.Tensor, heads: int,
              mask: np.ndarray | None = None) -> ad.Tensor:
    B, Lq, D = q_in.shape
    Lk = kv_in.shape[1]
    dh = D // heads

    def split(x, L):
        return ad.transpose(ad.reshape(x, (B, L, heads, dh)), (0, 2, 1, 3))   # [B, h, L, dh]

    q = split(ad.matmul(q_in, p[f"{prefix}.Wq"]), Lq)
    k = split(ad.matmul(kv_in, p[f"{prefix}.Wk"]), Lk)
    v = split(ad.matmul(kv_in, p[f"{prefix}.Wv"]), Lk)
    scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    if mask is not None:
        scores = scores + mask
    ctx = ad.matmul(softmax(scores), v)                                       # [B, h, Lq, dh]
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (B, Lq, D))
    return ad.matmul(ctx, p[f"{prefix}.Wo"]) + p[f"{prefix}.bo"]


def feed_forward(p: dict, prefix: str, x: ad.Tensor) -> ad.Tensor:
    h = ad.tanh(ad.matmul(x, p[f"{prefix}.W1"]) + p[f"{prefix}.b1"])
    return ad.matmul(h, p[f"{prefix}.W2"]) + p[f"{prefix}.b2"]


def _attn_shapes(prefix: str, d: int) -> dict:
    return {
        f"{prefix}.Wq": ((d, d), d), f"{prefix}.Wk": ((d, d), d),
        f"{prefix}.Wv": ((d, d), d), f"{prefix}.Wo": ((d, d), d),
        f"{prefix}.bo": ((d,), d),
    }


def _ff_shapes(prefix: str, d: int) -> dict:
    return {
        f"{prefix}.W1": ((d, 2 * d), d), f"{prefix}.b1": ((2 * d,), d),
        f"{prefix}.W2": ((2 * d, d), 2 * d), f"{prefix}.b2": ((d,), 2 * d),
    }


def _norm_shapes(prefix: str, d: int) -> dict:
    return {f"{prefix}.g": ((d,), d), f"{prefix}.b": ((d,), d)}


class TransformerModel(Model):
    """Post-norm encoder-decoder.

    The decoder sees only the leader's future speed (and psi), with a causal
    mask, and cross-attends to the encoded history. Layer-norm gains are
    stored as offsets from 1 so every parameter initialises near zero.
    """

    arch = "transformer"

    @classmethod
    def param_shapes(cls, config: ModelConfig) -> dict:
        d = config.d_model
        n_dec = 2 if config.conditioned else 1
        shapes = {
            "enc.embed.W": ((config.n_features, d), config.n_features), "enc.embed.b": ((d,), config.n_features),
            "dec.embed.W": ((n_dec, d), n_dec), "dec.embed.b": ((d,), n_dec),
            "out.W": ((d, 1), d), "out.b": ((1,), d),
        }
        for layer in range(config.layers):
            e, dd = f"enc{layer}", f"dec{layer}"
            shapes.update(_attn_shapes(f"{e}.self", d))
            shapes.update(_norm_shapes(f"{e}.ln1", d))
            shapes.update(_ff_shapes(f"{e}.ff", d))
            shapes.update(_norm_shapes(f"{e}.ln2", d))
            shapes.update(_attn_shapes(f"{dd}.self", d))
            shapes.update(_norm_shapes(f"{dd}.ln1", d))
            shapes.update(_attn_shapes(f"{dd}.cross", d))
            shapes.update(_norm_shapes(f"{dd}.ln2", d))
            shapes.update(_ff_shapes(f"{dd}.ff", d))
            shapes.update(_norm_shapes(f"{dd}.ln3", d))
        return shapes

    def _ln(self, x, prefix):
        return layer_norm(x, self.params[f"{prefix}.g"] + 1.0, self.params[f"{prefix}.b"])

    def forward(self, batch: ModelInput) -> ModelOutput:
        cfg, p, st = self.config, self.params, self.stats
        d, heads = cfg.d_model, cfg.heads
        B, H, _ = batch.history.shape
        P = batch.future_lv.shape[1]

        x = ad.matmul(ad.Tensor(batch.history), p["enc.embed.W"]) + p["enc.embed.b"] + positional_encoding(H, d)
        for layer in range(cfg.layers):
            e = f"enc{layer}"
            x = self._ln(x + attention(p, f"{e}.self", x, x, heads), f"{e}.ln1")
            x = self._ln(x + feed_forward(p, f"{e}.ff", x), f"{e}.ln2")

        lv_std = (batch.future_lv - st.mean[1]) / st.std[1]
        if cfg.conditioned:
            dec_in = np.stack([lv_std, np.repeat(batch.psi_std[:, None], P, axis=1)], axis=2)
        else:
            dec_in = lv_std[:, :, None]
        y = ad.matmul(ad.Tensor(dec_in), p["dec.embed.W"]) + p["dec.embed.b"] + positional_encoding(P, d)
        causal = np.triu(np.full((P, P), _NEG), k=1)
        for layer in range(cfg.layers):
            dd = f"dec{layer}"
            y = self._ln(y + attention(p, f"{dd}.self", y, y, heads, causal), f"{dd}.ln1")
            y = self._ln(y + attention(p, f"{dd}.cross", y, x, heads), f"{dd}.ln2")
            y = self._ln(y + feed_forward(p, f"{dd}.ff", y), f"{dd}.ln3")
        out = ad.matmul(y, p["out.W"]) + p["out.b"]                # [B, P, 1]
        speeds = self.destandardize_speed(ad.reshape(out, (B, P)))
        return ModelOutput(speeds=speeds)
