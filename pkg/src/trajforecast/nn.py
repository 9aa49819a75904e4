"""Parameter trees and small layer helpers shared by the forecasters.

Parameters live in nested dicts/lists of :class:`Tensor`.  ``flatten`` turns a
tree into dotted names (``"layers.0.W_ii"``), which is what the optimizer and
checkpoints key on.
"""
from __future__ import annotations

from typing import Any, Iterator

import numpy as np

from .autograd import Tensor, matmul

Params = dict[str, Any]


def uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> Tensor:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def zeros(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


def init_linear(rng: np.random.Generator, n_in: int, n_out: int, bias: bool = True, lead: tuple[int, ...] = ()) -> Params:
    p = {"W": uniform(rng, n_in, lead + (n_in, n_out))}
    if bias:
        p["b"] = zeros(lead + ((1,) if lead else ()) + (n_out,))
    return p


def linear(p: Params, x) -> Tensor:
    out = matmul(x, p["W"])
    return out + p["b"] if "b" in p else out


def _walk(tree, prefix: str) -> Iterator[tuple[str, Tensor]]:
    if isinstance(tree, Tensor):
        yield prefix, tree
    elif isinstance(tree, dict):
        for k in tree:
            yield from _walk(tree[k], f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(tree, (list, tuple)):
        for i, v in enumerate(tree):
            yield from _walk(v, f"{prefix}.{i}" if prefix else str(i))
    elif tree is None:
        return
    else:
        raise TypeError(f"unexpected parameter leaf {type(tree).__name__} at {prefix!r}")


def flatten(tree) -> dict[str, Tensor]:
    return dict(_walk(tree, ""))


def count_parameters(tree) -> int:
    return int(sum(t.size for t in flatten(tree).values()))


def load_flat(tree, values: dict[str, np.ndarray]) -> None:
    """Copy arrays into the matching tensors of ``tree`` (shapes must agree)."""
    flat = flatten(tree)
    missing = set(flat) - set(values)
    if missing:
        raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
    for name, t in flat.items():
        v = np.asarray(values[name], dtype=np.float64)
        if v.shape != t.shape:
            raise ValueError(f"parameter {name!r}: checkpoint shape {v.shape} != model shape {t.shape}")
        t.data = v.copy()


def set_constant(tree, value: float = 0.0) -> None:
    for t in flatten(tree).values():
        t.data = np.full(t.shape, float(value))
