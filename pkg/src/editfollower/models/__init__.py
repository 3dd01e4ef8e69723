"""Model zoo: IDM baseline, LSTM, LSTM_IDM and Transformer followers."""
from __future__ import annotations

from dataclasses import replace

from ..errors import ConfigError
from .base import (
    Model, ModelConfig, ModelInput, ModelOutput, Standardizer, build_input,
    load_checkpoint, save_checkpoint,
)
from .idm import IDMParams, equilibrium_spacing, idm_accel
from .idm_baseline import IDMModel
from .lstm import LSTMModel
from .lstm_idm import LSTMIDMModel
from .transformer import TransformerModel

ARCHITECTURES: dict[str, type[Model]] = {
    "idm": IDMModel,
    "lstm": LSTMModel,
    "lstm_idm": LSTMIDMModel,
    "transformer": TransformerModel,
}


def _model_class(arch: str) -> type[Model]:
    try:
        return ARCHITECTURES[arch]
    except KeyError:
        raise ConfigError(f"unknown architecture '{arch}' (valid: {', '.join(sorted(ARCHITECTURES))})") from None


def init_params(arch: str, seed: int, config: ModelConfig | None = None) -> dict:
    """Deterministic uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation."""
    cls = _model_class(arch)
    config = replace(config or ModelConfig(), arch=arch)
    return cls.initial_params(config, seed)


def build_model(
    config: ModelConfig,
    params: dict | None = None,
    stats: Standardizer | None = None,
    seed: int = 0,
) -> Model:
    cls = _model_class(config.arch)
    if params is None:
        params = cls.initial_params(config, seed)
    expected = cls.param_shapes(config)
    for name, (shape, _) in expected.items():
        if name not in params:
            raise ConfigError(f"missing parameter '{name}' for {config.arch}")
        if tuple(params[name].shape) != tuple(shape):
            raise ConfigError(f"parameter '{name}' has shape {params[name].shape}, expected {shape}")
    return cls(config, params, stats or Standardizer())


__all__ = [
    "ARCHITECTURES", "IDMModel", "IDMParams", "LSTMIDMModel", "LSTMModel", "Model", "ModelConfig",
    "ModelInput", "ModelOutput", "Standardizer", "TransformerModel", "build_input",
    "build_model", "equilibrium_spacing", "idm_accel", "init_params",
    "load_checkpoint", "save_checkpoint",
]
