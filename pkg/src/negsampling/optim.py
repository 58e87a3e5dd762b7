"""Adam with lazy (row-sparse) updates."""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np


@dataclass
class RowGrad:
    """Gradient touching only ``rows`` of a 2-D parameter. Rows may repeat."""
    rows: np.ndarray
    values: np.ndarray

    def coalesce(self) -> "RowGrad":
        rows, inv = np.unique(self.rows, return_inverse=True)
        vals = np.zeros((len(rows),) + self.values.shape[1:], dtype=np.float64)
        np.add.at(vals, inv, self.values)
        return RowGrad(rows, vals)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def merge_grads(parts) -> dict:
    """Sum a list of ``(name, grad)`` contributions into one grad per parameter."""
    rows, dense = {}, {}
    for name, g in parts:
        if isinstance(g, RowGrad):
            rows.setdefault(name, []).append(g)
        else:
            dense[name] = dense[name] + g if name in dense else np.array(g, dtype=np.float64)
    out = dict(dense)
    for name, gs in rows.items():
        rg = RowGrad(np.concatenate([g.rows for g in gs]), np.concatenate([g.values for g in gs])).coalesce()
        if name in out:
            out[name] = out[name].copy()
            np.add.at(out[name], rg.rows, rg.values)
        else:
            out[name] = rg
    return out


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """Bias-corrected Adam, in place on ``params``.

    Only touched entries move: a :class:`RowGrad` touches its rows; a dense
    gradient touches every leading-axis slice that has a nonzero entry.
    Untouched moments are not decayed.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p, dtype=np.float64)
            state.v[name] = np.zeros_like(p, dtype=np.float64)
        m, v = state.m[name], state.v[name]
        if isinstance(g, RowGrad):
            if g.values.shape[1:] != p.shape[1:]:
                raise ValueError(f"gradient shape {g.values.shape} does not match parameter {name} {p.shape}")
            g = g.coalesce()
            idx, gv = g.rows, g.values
        else:
            g = np.asarray(g, dtype=np.float64)
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
            if p.ndim == 0:
                if g == 0:
                    continue
                idx = ()
                gv = g
            else:
                idx = np.flatnonzero(np.any(g.reshape(len(g), -1) != 0, axis=1))
                gv = g[idx]
        if isinstance(idx, np.ndarray) and len(idx) == 0:
            continue
        m[idx] = b1 * m[idx] + (1 - b1) * gv
        v[idx] = b2 * v[idx] + (1 - b2) * gv * gv
        p[idx] -= lr * (m[idx] / c1) / (np.sqrt(v[idx] / c2) + state.eps)


class Adam:
    def __init__(self, params: dict, lr: float = 1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0:
            raise ValueError("learning rate must be nonnegative")
        self.params = params
        self.lr = lr
        self.state = AdamState(beta1=beta1, beta2=beta2, eps=eps)
        # held by parameter writes and by concurrent samplers reading the encoder
        self.lock = threading.RLock()

    def step(self, grads: dict) -> None:
        if self.lr == 0:
            return
        with self.lock:
            adam_step(self.params, grads, self.state, self.lr)
