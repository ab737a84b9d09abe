"""Leaky integrate-and-fire neurons with surrogate-gradient spiking.

Discrete dynamics per step::

    U = H + (I - (H - u_reset)) / tau
    S = heaviside(U - u_threshold)
    H' = U * (1 - S)

The continuous form ``tau dV/dt = -(V - V_reset) + I`` is what these
updates integrate with unit step; it is documentation only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import Module
from .tensor import Value, make_op


@dataclass(frozen=True)
class ATan:
    """Arctangent surrogate: primitive ``arctan(pi*alpha*x/2)/pi + 1/2``."""

    alpha: float = 2.0

    def grad(self, x):
        return self.alpha / (2.0 * (1.0 + (np.pi / 2.0 * self.alpha * x) ** 2))

    def primitive(self, x):
        return np.arctan(np.pi / 2.0 * self.alpha * x) / np.pi + 0.5


@dataclass(frozen=True)
class RectWindow:
    """Box surrogate with unit height on ``|x| <= width / 2``."""

    width: float = 1.0

    def grad(self, x):
        return (np.abs(x) <= self.width / 2.0).astype(np.float64)

    def primitive(self, x):
        return np.clip(x, -self.width / 2.0, self.width / 2.0) + 0.5


Surrogate = ATan | RectWindow


def surrogate_grad(x, surrogate: Surrogate):
    return surrogate.grad(x)


@dataclass(frozen=True)
class NeuronConfig:
    tau: float = 2.0
    u_threshold: float = 1.0
    u_reset: float = 0.0
    surrogate: Surrogate = field(default_factory=ATan)
    detach_reset: bool = True

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not self.u_threshold > self.u_reset:
            raise ConfigError(f"u_threshold {self.u_threshold} must exceed u_reset {self.u_reset}")


NEUROMORPHIC = NeuronConfig(tau=2.0, u_threshold=1.0, u_reset=0.0, surrogate=ATan(2.0))
IMAGENET = NeuronConfig(tau=4.0, u_threshold=0.5, u_reset=0.0, surrogate=RectWindow(1.0))


@dataclass
class NeuronState:
    hidden: Value

    @classmethod
    def rest(cls, shape: tuple, config: NeuronConfig) -> NeuronState:
        return cls(Value(np.full(shape, config.u_reset)))


def spike(x: Value, surrogate: Surrogate) -> Value:
    """Heaviside step (1 where x >= 0) whose backward uses the surrogate derivative."""
    xd = x.data
    return make_op((xd >= 0).astype(np.float64), (x,), lambda g: (g * surrogate.grad(xd),), "spike")


def lif_step(current: Value, state: NeuronState, config: NeuronConfig) -> tuple[Value, NeuronState]:
    """One explicit LIF update composed from differentiable primitives."""
    h = state.hidden
    if current.shape != h.shape:
        raise ShapeError(f"lif_step: input {current.shape} vs hidden state {h.shape}")
    u = h + (current - (h - config.u_reset)) * (1.0 / config.tau)
    s = spike(u - config.u_threshold, config.surrogate)
    gate = 1.0 - (s.detach() if config.detach_reset else s)
    return s, NeuronState(u * gate)


def run_sequence(inputs: Value, config: NeuronConfig, time_axis: int = 0) -> Value:
    """Run a fresh LIF population over ``time_axis``; returns binary spikes.

    Fused forward/backward through time: equivalent to chaining
    :func:`lif_step` but stores only U and S per step.
    """
    x = np.moveaxis(inputs.data, time_axis, 0)
    steps = x.shape[0]
    inv_tau = 1.0 / config.tau
    us = np.empty_like(x)
    ss = np.empty_like(x)
    h = np.full(x.shape[1:], config.u_reset)
    for t in range(steps):
        u = h + (x[t] - (h - config.u_reset)) * inv_tau
        s = (u >= config.u_threshold).astype(np.float64)
        us[t], ss[t] = u, s
        h = u * (1.0 - s)
    sur = config.surrogate
    detach = config.detach_reset

    def backward(g):
        g = np.moveaxis(g, time_axis, 0)
        gx = np.empty_like(g)
        gh = np.zeros(g.shape[1:])
        for t in range(steps - 1, -1, -1):
            sg = sur.grad(us[t] - config.u_threshold)
            dh_du = 1.0 - ss[t]
            if not detach:
                dh_du = dh_du - us[t] * sg
            gu = g[t] * sg + gh * dh_du
            gx[t] = gu * inv_tau
            gh = gu * (1.0 - inv_tau)
        return (np.moveaxis(gx, 0, time_axis),)

    return make_op(np.moveaxis(ss, 0, time_axis), (inputs,), backward, "lif")


class LIF(Module):
    """LIF layer over (B, T, ...) activations; state is reset for every call.

    With ``record`` set, the last emitted spike array is kept for firing
    rate statistics.
    """

    def __init__(self, config: NeuronConfig):
        super().__init__()
        self.config = config
        self.record = False
        self.last_spikes: np.ndarray | None = None

    def forward(self, x: Value) -> Value:
        s = run_sequence(x, self.config, time_axis=1)
        if self.record:
            self.last_spikes = s.data
        return s
