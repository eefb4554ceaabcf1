"""Trainable parameter sets, Adam with coupled L2 decay, and checkpoints."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autodiff import Tensor, parameter

CHECKPOINT_SCHEMA = "r2gcn/checkpoint/v1"


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform init in +/- sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class ParamSet:
    """Named trainable tensors plus per-parameter Adam state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = parameter(np.array(values, dtype=np.float64))
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for name, t in self._params.items():
            out[name] = t.grad if t.grad is not None else np.zeros_like(t.data)
        return out

    def export_values(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(values)
        if missing:
            raise ValueError(f"missing parameters in checkpoint: {sorted(missing)}")
        for name, t in self._params.items():
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"parameter {name!r}: shape {arr.shape} vs expected {t.data.shape}"
                )
            t.data = arr.copy()


def adam_step(
    params: ParamSet,
    grads: dict[str, np.ndarray] | None = None,
    *,
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamSet:
    """One Adam update with bias correction.

    Weight decay is coupled L2: it is added to the gradient before the
    moment updates, matching the framework default of the model's era.
    """
    if grads is None:
        grads = params.gradients()
    params.step_count += 1
    t = params.step_count
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params._params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ValueError(
                f"gradient for {name!r}: shape {g.shape} vs parameter {p.data.shape}"
            )
        if weight_decay != 0.0:
            g = g + weight_decay * p.data
        m = params._m[name]
        v = params._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


def save_checkpoint(path: str | Path, values: dict[str, np.ndarray]) -> None:
    """Write parameters as JSON; float repr round-trips bit-exactly."""
    payload = {
        "schema": CHECKPOINT_SCHEMA,
        "params": {
            name: {"shape": list(arr.shape), "values": np.asarray(arr).ravel().tolist()}
            for name, arr in values.items()
        },
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"{path}: not a checkpoint file (schema {payload.get('schema')!r})")
    out = {}
    for name, entry in payload["params"].items():
        out[name] = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
    return out
