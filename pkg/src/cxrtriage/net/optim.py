"""Nadam: Adam with Nesterov momentum and a time-varying schedule.

The step applies the momentum schedule mu_t = beta1 * (1 - 0.5 * 0.96^(t*psi))
and corrects the first moment with the cumulative product of past mu values,
so the lookahead term uses mu_{t+1} while the raw-gradient term uses the
current mu_t. State is immutable; each step returns fresh copies.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ShapeError


@dataclass(frozen=True)
class NadamConfig:
    learning_rate: float = 2e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    psi: float = 0.004

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, "
                             f"got {self.learning_rate}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")


@dataclass(frozen=True)
class OptimState:
    """Per-parameter first/second moments plus the momentum-schedule product."""

    hyper: NadamConfig
    t: int = 0
    mu_product: float = 1.0
    m: dict = field(default_factory=dict)
    n: dict = field(default_factory=dict)


def init_state(hyper=None):
    return OptimState(hyper=hyper if hyper is not None else NadamConfig())


def _mu(hyper, t):
    return hyper.beta1 * (1.0 - 0.5 * 0.96 ** (t * hyper.psi))


def nadam_step(params, grads, state):
    """One update over a {name: array} registry.

    Pure function: returns (new_params, new_state) without touching the
    inputs. Every parameter must have a gradient of the same shape; extra
    gradient entries are rejected.
    """
    hyper = state.hyper
    missing = set(params) - set(grads)
    if missing:
        raise ShapeError(f"no gradient for parameter {sorted(missing)[0]!r}")
    extra = set(grads) - set(params)
    if extra:
        raise ShapeError(f"gradient for unknown parameter {sorted(extra)[0]!r}")

    t = state.t + 1
    mu_t = _mu(hyper, t)
    mu_next = _mu(hyper, t + 1)
    mu_product = state.mu_product * mu_t
    beta2_t = hyper.beta2 ** t

    new_params = {}
    new_m = {}
    new_n = {}
    for name, value in params.items():
        value = np.asarray(value, dtype=np.float64)
        grad = np.asarray(grads[name], dtype=np.float64)
        if grad.shape != value.shape:
            raise ShapeError(
                f"{name}: gradient shape {grad.shape} does not match "
                f"parameter shape {value.shape}")
        m_prev = state.m.get(name, 0.0)
        n_prev = state.n.get(name, 0.0)
        m = hyper.beta1 * m_prev + (1.0 - hyper.beta1) * grad
        n = hyper.beta2 * n_prev + (1.0 - hyper.beta2) * grad * grad
        g_hat = grad / (1.0 - mu_product)
        m_hat = m / (1.0 - mu_product * mu_next)
        n_hat = n / (1.0 - beta2_t)
        m_bar = (1.0 - mu_t) * g_hat + mu_next * m_hat
        new_params[name] = value - hyper.learning_rate * m_bar / (
            np.sqrt(n_hat) + hyper.eps)
        new_m[name] = m
        new_n[name] = n
    return new_params, replace(state, t=t, mu_product=mu_product,
                               m=new_m, n=new_n)
