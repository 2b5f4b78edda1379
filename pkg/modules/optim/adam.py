import logging
from typing import Dict, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from core.config import Config
from core.errors import ContractError, OptimizationError

logger = logging.getLogger("STRATA.Adam")

Params = Dict[str, np.ndarray]


class AdamState(BaseModel):
    """Moment estimates per named parameter block."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    m: Dict[str, np.ndarray] = {}
    v: Dict[str, np.ndarray] = {}
    step: int = Field(0, ge=0)
    lr: float = Field(Config.ADAM_LR, gt=0)
    beta1: float = Field(Config.ADAM_BETA1, ge=0, lt=1)
    beta2: float = Field(Config.ADAM_BETA2, ge=0, lt=1)
    epsilon: float = Field(Config.ADAM_EPS, gt=0)


def adam_step(params: Params, grads: Params, state: AdamState,
              lr: Union[None, float, Dict[str, float]] = None) -> Tuple[Params, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched.

    `lr` overrides the state's rate for this step, either globally or per block.
    """
    if set(params) != set(grads):
        raise ContractError(f"parameter blocks {sorted(params)} and gradient blocks {sorted(grads)} differ")
    for name, g in grads.items():
        g = np.asarray(g, dtype=float)
        if g.shape != np.shape(params[name]):
            raise ContractError(f"block '{name}': gradient shape {g.shape} != parameter shape {np.shape(params[name])}")
        if not np.all(np.isfinite(g)):
            raise OptimizationError(name, "non-finite gradient")

    t = state.step + 1
    if lr is None:
        rates = {name: state.lr for name in params}
    elif isinstance(lr, dict):
        rates = {name: lr.get(name, state.lr) for name in params}
    else:
        rates = {name: float(lr) for name in params}
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t

    new_params, new_m, new_v = {}, {}, {}
    for name in params:
        p = np.asarray(params[name], dtype=float)
        g = np.asarray(grads[name], dtype=float)
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[name] = p - rates[name] * m_hat / (np.sqrt(v_hat) + state.epsilon)
        new_m[name] = m
        new_v[name] = v

    return new_params, state.model_copy(update={"m": new_m, "v": new_v, "step": t})
