"""LSTM encoder-decoder, plus the fused LSTM cell shared with LSTM_IDM."""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .. import kernels
from ..errors import NonFiniteError
from .base import Model, ModelConfig, ModelInput, ModelOutput


def lstm_cell(z: ad.Tensor, state: ad.Tensor) -> ad.Tensor:
    """Fused LSTM cell.

    ``z`` holds the ``[B, 4n]`` gate pre-activations (input, forget, cell,
    output); ``state`` is ``[B, 2n]`` = ``[h | c]``. Returns the new state.
    """
    n = state.shape[1] // 2
    c_prev = np.ascontiguousarray(state.data[:, n:])
    h, c, gates, tanh_c = kernels.lstm_cell_forward(np.ascontiguousarray(z.data), c_prev)

    def vjp(g):
        dz, dc_prev = kernels.lstm_cell_backward(
            np.ascontiguousarray(g[:, :n]), np.ascontiguousarray(g[:, n:]), gates, c_prev, tanh_c)
        dstate = np.zeros_like(g)
        dstate[:, n:] = dc_prev
        return np.asarray(dz), dstate

    return ad.custom("lstm_cell", np.concatenate([h, c], axis=1), (z, state), vjp)


def lstm_cell_reference(z: ad.Tensor, state: ad.Tensor) -> ad.Tensor:
    """The same cell composed from primitive ops (test oracle)."""
    n = state.shape[1] // 2
    c_prev = state[:, n:]
    i = ad.sigmoid(z[:, :n])
    f = ad.sigmoid(z[:, n:2 * n])
    g = ad.tanh(z[:, 2 * n:3 * n])
    o = ad.sigmoid(z[:, 3 * n:])
    c = f * c_prev + i * g
    h = o * ad.tanh(c)
    return ad.concat([h, c], axis=1)


def encode(params: dict, prefix: str, x: np.ndarray, hidden: int) -> ad.Tensor:
    """Run an LSTM layer over ``x`` ``[B, T, F]`` and return the final ``[h | c]`` state."""
    B, T, F = x.shape
    Wx, Wh, b = params[f"{prefix}.Wx"], params[f"{prefix}.Wh"], params[f"{prefix}.b"]
    # Input projections for all steps in one product: [T, B, 4n].
    xt = np.ascontiguousarray(np.transpose(x, (1, 0, 2)))
    proj = ad.reshape(ad.matmul(ad.Tensor(xt.reshape(T * B, F)), Wx) + b, (T, B, 4 * hidden))
    state = ad.Tensor(np.zeros((B, 2 * hidden)))
    for t in range(T):
        if t == 0:
            z = proj[0]
        else:
            z = proj[t] + ad.matmul(state[:, :hidden], Wh)
        state = _checked(lstm_cell(z, state), t)
    return state


def _checked(state: ad.Tensor, step: int) -> ad.Tensor:
    if not np.isfinite(state.data).all():
        raise NonFiniteError("lstm_cell", f"step {step}")
    return state


def lstm_shapes(prefix: str, n_in: int, hidden: int) -> dict:
    return {
        f"{prefix}.Wx": ((n_in, 4 * hidden), n_in),
        f"{prefix}.Wh": ((hidden, 4 * hidden), hidden),
        f"{prefix}.b": ((4 * hidden,), hidden),
    }


class LSTMModel(Model):
    """Encoder LSTM over the history; decoder LSTM fed back its own speed.

    Decoder input at horizon step k: (previous predicted FV speed, leader
    speed at step k, psi), all standardised; psi only in the conditioned
    variant.
    """

    arch = "lstm"

    @classmethod
    def param_shapes(cls, config: ModelConfig) -> dict:
        n = config.hidden
        n_dec = 3 if config.conditioned else 2
        shapes = {}
        shapes.update(lstm_shapes("enc", config.n_features, n))
        shapes.update(lstm_shapes("dec", n_dec, n))
        shapes["out.W"] = ((n, 1), n)
        shapes["out.b"] = ((1,), n)
        return shapes

    def forward(self, batch: ModelInput) -> ModelOutput:
        cfg, p, st = self.config, self.params, self.stats
        n = cfg.hidden
        state = encode(p, "enc", batch.history, n)
        B, P = batch.future_lv.shape
        lv_std = (batch.future_lv - st.mean[1]) / st.std[1]
        if cfg.conditioned:
            const = np.stack([lv_std, np.repeat(batch.psi_std[:, None], P, axis=1)], axis=2)
        else:
            const = lv_std[:, :, None]
        Wd = p["dec.Wx"]
        # Constant part of the decoder input projection for all steps: [P, B, 4n].
        pre = ad.reshape(
            ad.matmul(ad.Tensor(np.ascontiguousarray(np.transpose(const, (1, 0, 2))).reshape(P * B, -1)), Wd[1:])
            + p["dec.b"], (P, B, 4 * n))
        prev = ad.Tensor(batch.history[:, -1, 2:3])
        w_prev = Wd[0:1]
        outs = []
        for k in range(P):
            z = pre[k] + ad.matmul(prev, w_prev) + ad.matmul(state[:, :n], p["dec.Wh"])
            state = _checked(lstm_cell(z, state), k)
            y_std = ad.matmul(state[:, :n], p["out.W"]) + p["out.b"]     # [B, 1]
            speed = self.destandardize_speed(y_std)
            outs.append(speed)
            prev = (speed - st.mean[2]) / st.std[2]
        speeds = ad.reshape(ad.concat(outs, axis=1), (B, P))
        return ModelOutput(speeds=speeds)
