"""Parameter containers: flat (name -> Tensor) traversal and init helpers."""

from __future__ import annotations

import dataclasses

import numpy as np

from .autodiff import Tensor, get_default_dtype


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> Tensor:
    """Truncated normal at +/- 2 std, the usual transformer projection init."""
    data = rng.normal(0.0, std, size=int(np.prod(shape)))
    bad = np.abs(data) > 2 * std
    while bad.any():
        data[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(data) > 2 * std
    return Tensor(data.reshape(shape).astype(get_default_dtype()), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=get_default_dtype()), requires_grad=True)


def ones(shape) -> Tensor:
    return Tensor(np.ones(shape, dtype=get_default_dtype()), requires_grad=True)


def iter_params(obj, prefix: str = ""):
    """Yield (name, Tensor) pairs from nested dataclasses / lists / dicts."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            yield from iter_params(getattr(obj, f.name),
                                   f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from iter_params(item, f"{prefix}.{i}")
    elif isinstance(obj, dict):
        for k, item in obj.items():
            yield from iter_params(item, f"{prefix}.{k}" if prefix else str(k))
    # non-Tensor leaves (ints, floats, configs) are not parameters


def named_parameters(obj) -> dict[str, Tensor]:
    return dict(iter_params(obj))


def zero_grads(obj) -> None:
    for _, t in iter_params(obj):
        t.zero_grad()
