"""Shared oracles and small-instance builders for the test suite."""

from __future__ import annotations

import numpy as np

from asyncswarm.dynamics import UnicycleModel
from asyncswarm.model import Trajectory
from asyncswarm.pddp import AugmentedCostContext


def fd_grad(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_jac(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def fd_hess(f, x, h=1e-4):
    """Central second differences of a scalar function."""
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h
            ej[j] = h
            H[i, j] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h * h)
    return H


def rel_err(a, b, floor=1e-8):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), floor))


def random_instance(rng, n_steps=4, penalized=True, omega_max=5.0, speed=30.0):
    """Random small augmented subproblem with unsaturated controls."""
    model = UnicycleModel(speed, n_steps, omega_max)
    p, q = 3, 1
    x0 = np.array([rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-np.pi, np.pi)])
    controls = rng.uniform(-0.3, 0.3, size=(n_steps, q))
    theta = rng.uniform(2.0, 6.0)
    states = model.rollout(x0, controls, theta)
    target = states[-1] + rng.normal(scale=[20, 20, 0.5])
    ctx = AugmentedCostContext(
        target=target,
        W_N=np.diag(rng.uniform(0.5, 3.0, size=p)),
        R=np.array([[rng.uniform(0.5, 2.0)]]),
        W_s=np.diag(rng.uniform(0.0, 0.1, size=p)),
        x_tilde=states + rng.normal(scale=2.0, size=states.shape) if penalized else np.zeros_like(states),
        u_tilde=controls + rng.normal(scale=0.1, size=controls.shape) if penalized else np.zeros_like(controls),
        t_tilde=theta + rng.normal(scale=0.3) if penalized else 0.0,
        lam=rng.normal(scale=1.0, size=states.shape) if penalized else np.zeros_like(states),
        zeta=rng.normal(scale=0.1, size=controls.shape) if penalized else np.zeros_like(controls),
        nu=float(rng.normal(scale=1.0)) if penalized else 0.0,
        pen_x=rng.uniform(0.5, 3.0) if penalized else 0.0,
        pen_u=rng.uniform(0.1, 1.0) if penalized else 0.0,
        pen_t=rng.uniform(0.5, 3.0) if penalized else 0.0,
    )
    return model, Trajectory(states, controls, float(theta)), ctx
