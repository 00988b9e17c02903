"""Adam with bias correction."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import OptimizerError


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


class Adam:
    """Adam over a name -> Tensor mapping.

    ``lr`` may be reassigned between steps (the training loop drives it from
    the learning-rate schedule).
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise OptimizerError(f"learning rate must be positive, got {lr}")
        self.params = dict(params)
        self.state = AdamState(lr, beta1, beta2, eps)
        for name, p in self.params.items():
            self.state.first_moment[name] = np.zeros_like(p.data)
            self.state.second_moment[name] = np.zeros_like(p.data)

    @property
    def lr(self):
        return self.state.learning_rate

    @lr.setter
    def lr(self, value):
        if value <= 0:
            raise OptimizerError(f"learning rate must be positive, got {value}")
        self.state.learning_rate = float(value)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        missing = [name for name, p in self.params.items() if p.grad is None]
        if missing:
            raise OptimizerError(f"no gradient for parameter(s): {', '.join(missing)}")
        st = self.state
        st.step_count += 1
        t = st.step_count
        bc1 = 1.0 - st.beta1**t
        bc2 = 1.0 - st.beta2**t
        for name, p in self.params.items():
            g = p.grad
            m = st.first_moment[name]
            v = st.second_moment[name]
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * g * g
            update = st.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + st.epsilon)
            p.data = (p.data - update).astype(p.dtype, copy=False)
