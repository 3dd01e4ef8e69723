"""LSTM_IDM: an LSTM encoder estimates IDM parameters, which are then rolled
out against the leader's future speeds."""
from __future__ import annotations

from .. import autodiff as ad
from .base import Model, ModelConfig, ModelInput, ModelOutput
from .idm import idm_rollout, squash
from .lstm import encode, lstm_shapes


class LSTMIDMModel(Model):
    arch = "lstm_idm"

    @classmethod
    def param_shapes(cls, config: ModelConfig) -> dict:
        n = config.hidden
        shapes = lstm_shapes("enc", config.n_features, n)
        shapes["head.W"] = ((n, 6), n)
        shapes["head.b"] = ((6,), n)
        return shapes

    def idm_parameters(self, batch: ModelInput) -> ad.Tensor:
        n = self.config.hidden
        state = encode(self.params, "enc", batch.history, n)
        raw = ad.matmul(state[:, :n], self.params["head.W"]) + self.params["head.b"]
        return squash(raw)

    def forward(self, batch: ModelInput) -> ModelOutput:
        params = self.idm_parameters(batch)
        speeds, spacings, collided = idm_rollout(batch.v_fv0, batch.spacing0, batch.lv, params, self.config.dt)
        return ModelOutput(speeds=speeds, idm_params=params, spacings=spacings, collided=collided)
