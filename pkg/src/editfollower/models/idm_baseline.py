"""Calibrated IDM: one learnable parameter set shared by every window.

The conditioned variant shifts the raw (pre-squash) parameters linearly in
the standardised psi, which is the smallest change that lets a rule-based
follower respond to the courtesy command.
"""
from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .base import Model, ModelConfig, ModelInput, ModelOutput
from .idm import idm_rollout, squash


class IDMModel(Model):
    arch = "idm"

    @classmethod
    def param_shapes(cls, config: ModelConfig) -> dict:
        shapes = {"idm.raw": ((6,), 1)}
        if config.conditioned:
            shapes["idm.psi"] = ((1, 6), 1)
        return shapes

    def idm_parameters(self, batch: ModelInput) -> ad.Tensor:
        B = len(batch)
        raw = ad.reshape(self.params["idm.raw"], (1, 6)) + np.zeros((B, 6))   # broadcast to the batch
        if self.config.conditioned:
            raw = raw + ad.matmul(ad.Tensor(batch.psi_std.reshape(B, 1)), self.params["idm.psi"])
        return squash(raw)

    def forward(self, batch: ModelInput) -> ModelOutput:
        params = self.idm_parameters(batch)
        speeds, spacings, collided = idm_rollout(batch.v_fv0, batch.spacing0, batch.lv, params, self.config.dt)
        return ModelOutput(speeds=speeds, idm_params=params, spacings=spacings, collided=collided)
