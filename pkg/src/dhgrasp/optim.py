import numpy as np


class Adam:
    """Adam on a flat parameter vector with optional per-entry learning rates."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = np.asarray(lr, dtype=np.float64)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params, grad):
        """Return the updated parameters (input is not modified)."""
        grad = np.asarray(grad, dtype=np.float64)
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self):
        return (None if self.m is None else self.m.copy(), None if self.v is None else self.v.copy(), self.t)

    def restore(self, state):
        m, v, t = state
        self.m = None if m is None else m.copy()
        self.v = None if v is None else v.copy()
        self.t = t
