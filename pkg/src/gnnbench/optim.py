"""Adam updates and the reduce-on-plateau learning rate schedule."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, Diverged

IMPROVE_TOL = 1e-6


class Adam:
    """Bias-corrected Adam over a fixed parameter list.

    Parameters with ``grad`` left at None are treated as zero-gradient. A
    non-finite gradient raises ``Diverged``: the caller records the run as a
    result rather than crashing.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        if not self.params:
            raise ConfigError("optimizer needs at least one parameter")
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.all(np.isfinite(g)):
                raise Diverged(f"non-finite gradient at step {self.t}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p.data -= self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_dict(self):
        return {
            "t": self.t,
            "lr": self.lr,
            "m": [m.copy() for m in self.m],
            "v": [v.copy() for v in self.v],
        }

    def load_state_dict(self, state):
        self.t = int(state["t"])
        self.lr = float(state["lr"])
        self.m = [np.array(m, dtype=np.float64) for m in state["m"]]
        self.v = [np.array(v, dtype=np.float64) for v in state["v"]]


class PlateauSchedule:
    """Halve the learning rate after ``patience`` epochs without improvement.

    Improvement means the validation loss drops below the best seen by more
    than an absolute tolerance. Training stops once the rate falls under
    ``min_lr``; the rate sequence is exactly init/2^j.
    """

    def __init__(self, lr, factor=0.5, patience=10, min_lr=1e-5):
        if not 0.0 < factor < 1.0:
            raise ConfigError("factor must be in (0, 1)")
        if patience < 1:
            raise ConfigError("patience must be at least 1")
        self.lr = float(lr)
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = np.inf
        self.since_improve = 0

    def step(self, val_loss):
        """Record one epoch's validation loss; returns (lr, stop)."""
        if val_loss < self.best - IMPROVE_TOL:
            self.best = float(val_loss)
            self.since_improve = 0
        else:
            self.since_improve += 1
            if self.since_improve >= self.patience:
                self.lr *= self.factor
                self.since_improve = 0
        return self.lr, self.lr < self.min_lr

    def state_dict(self):
        return {
            "lr": self.lr,
            "best": self.best,
            "since_improve": self.since_improve,
        }

    def load_state_dict(self, state):
        self.lr = float(state["lr"])
        self.best = float(state["best"])
        self.since_improve = int(state["since_improve"])
