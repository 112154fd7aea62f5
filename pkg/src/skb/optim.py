"""Adam optimizer with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .tensor import Parameter, zero_grads


@dataclass
class AdamState:
    """Per-parameter moment estimates and hyperparameters."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_param(cls, param: Parameter, learning_rate: float = 1e-4, **kw) -> "AdamState":
        return cls(
            first_moment=np.zeros_like(param.data),
            second_moment=np.zeros_like(param.data),
            learning_rate=learning_rate,
            **kw,
        )


def adam_step(param: Parameter, state: AdamState) -> None:
    """One Adam update from ``param.grad``; increments ``state.step_count``."""
    g = param.grad
    state.step_count += 1
    t = state.step_count
    state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * (g * g)
    m_hat = state.first_moment / (1.0 - state.beta1**t)
    v_hat = state.second_moment / (1.0 - state.beta2**t)
    param.data = param.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


class Adam:
    """Steps a set of named parameters together."""

    def __init__(self, params: Iterable[Parameter], learning_rate: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        self.states = {
            p.name: AdamState.for_param(
                p, learning_rate=learning_rate, beta1=beta1, beta2=beta2, epsilon=epsilon
            )
            for p in self.params
        }

    def step(self):
        for p in self.params:
            adam_step(p, self.states[p.name])

    def zero_grads(self):
        zero_grads(self.params)

    # checkpoint plumbing -------------------------------------------------

    def export_state(self) -> tuple[dict[str, np.ndarray], dict[str, int]]:
        moments, steps = {}, {}
        for name, st in self.states.items():
            moments[f"adam.m.{name}"] = st.first_moment
            moments[f"adam.v.{name}"] = st.second_moment
            steps[name] = st.step_count
        return moments, steps

    def load_state(self, moments: dict[str, np.ndarray], steps: dict[str, int]):
        for name, st in self.states.items():
            m = moments.get(f"adam.m.{name}")
            v = moments.get(f"adam.v.{name}")
            if m is None or v is None:
                continue
            if m.shape != st.first_moment.shape:
                continue
            st.first_moment = m.astype(st.first_moment.dtype, copy=True)
            st.second_moment = v.astype(st.second_moment.dtype, copy=True)
            st.step_count = int(steps.get(name, st.step_count))
