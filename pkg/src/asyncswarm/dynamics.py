"""Constant-speed unicycle discretised with forward Euler, dt = t_N / N.

The terminal time only enters through the step size, which makes it a
parameter of the discrete dynamics rather than an extra state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .model import ConfigurationError


@njit(cache=True, nogil=True)
def unicycle_step(x, u, theta, params):
    speed, n_steps = params
    dt = theta / n_steps
    out = np.empty(3)
    out[0] = x[0] + dt * speed * math.cos(x[2])
    out[1] = x[1] + dt * speed * math.sin(x[2])
    out[2] = x[2] + dt * u[0]
    return out


@njit(cache=True, nogil=True)
def _rollout(x0, controls, theta, params):
    n = controls.shape[0]
    out = np.empty((n + 1, x0.shape[0]))
    out[0] = x0
    for k in range(n):
        out[k + 1] = unicycle_step(out[k], controls[k], theta, params)
    return out


@dataclass(frozen=True)
class DynamicsDerivatives:
    f_x: np.ndarray  # (p, p)
    f_u: np.ndarray  # (p, q)
    f_theta: np.ndarray  # (p, 1)


@dataclass(frozen=True)
class UnicycleModel:
    speed: float = 30.0
    horizon_steps: int = 100
    omega_max: float = 0.5678

    state_dim = 3
    control_dim = 1

    def __post_init__(self):
        if not self.speed > 0:
            raise ConfigurationError("speed must be positive")
        if int(self.horizon_steps) != self.horizon_steps or self.horizon_steps < 2:
            raise ConfigurationError("horizon_steps must be an integer >= 2")
        if not self.omega_max > 0:
            raise ConfigurationError("omega_max must be positive")

    # jitted step function plus its parameter tuple, for use inside other kernels
    @property
    def step_kernel(self):
        return unicycle_step

    @property
    def kernel_params(self) -> tuple[float, float]:
        return (float(self.speed), float(self.horizon_steps))

    @staticmethod
    def _check(theta):
        if not theta > 0:
            raise ValueError(f"terminal time must be positive, got {theta}")

    def step(self, x, u, theta: float) -> np.ndarray:
        self._check(theta)
        x = np.asarray(x, dtype=float).reshape(3)
        u = np.asarray(u, dtype=float).reshape(1)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u)) and math.isfinite(theta)):
            raise FloatingPointError("non-finite input to dynamics step")
        return unicycle_step(x, u, float(theta), self.kernel_params)

    def derivatives(self, x, u, theta: float) -> DynamicsDerivatives:
        fx, fu, ft = self.derivatives_batch(
            np.asarray(x, dtype=float)[None, :], np.asarray(u, dtype=float).reshape(1, -1), theta
        )
        return DynamicsDerivatives(fx[0], fu[0], ft[0][:, None])

    def derivatives_batch(self, xs, us, theta: float):
        """Jacobians at every (x_k, u_k) pair.

        Shapes: f_x (K, 3, 3), f_u (K, 3, 1), f_theta (K, 3).
        """
        self._check(theta)
        xs = np.asarray(xs, dtype=float)
        us = np.asarray(us, dtype=float).reshape(len(xs), -1)
        n = self.horizon_steps
        dt = theta / n
        c, s = np.cos(xs[:, 2]), np.sin(xs[:, 2])
        k = len(xs)
        fx = np.broadcast_to(np.eye(3), (k, 3, 3)).copy()
        fx[:, 0, 2] = -dt * self.speed * s
        fx[:, 1, 2] = dt * self.speed * c
        fu = np.zeros((k, 3, 1))
        fu[:, 2, 0] = dt
        ft = np.stack([self.speed * c, self.speed * s, us[:, 0]], axis=1) / n
        return fx, fu, ft

    def rollout(self, x0, controls, theta: float) -> np.ndarray:
        controls = np.ascontiguousarray(controls, dtype=float).reshape(-1, self.control_dim)
        if len(controls) != self.horizon_steps:
            raise ValueError(f"expected {self.horizon_steps} controls, got {len(controls)}")
        self._check(theta)
        out = _rollout(np.asarray(x0, dtype=float).reshape(3), controls, float(theta), self.kernel_params)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("non-finite rollout")
        return out
