"""Central finite-difference checks of tape gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autograd import Tape, Tensor, backward


@dataclass
class GradCheckReport:
    """Per-coordinate comparison of tape and finite-difference gradients.

    ``curvature`` holds the second differences ``(f(x+h) - 2 f(x) + f(x-h)) / h**2``;
    a value of order ``1/h`` means the step straddles a kink, where central
    differences are not a valid reference.
    """

    errors: dict[str, np.ndarray]
    analytic: dict[str, np.ndarray]
    numeric: dict[str, np.ndarray]
    curvature: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max((float(e.max()) for e in self.errors.values() if e.size), default=0.0)

    def worst(self) -> tuple[str, tuple[int, ...], float]:
        name = max(self.errors, key=lambda k: self.errors[k].max() if self.errors[k].size else -1)
        e = self.errors[name]
        idx = np.unravel_index(int(np.argmax(e)), e.shape)
        return name, tuple(int(i) for i in idx), float(e[idx])


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return np.abs(analytic - numeric) / denom


def gradient_check(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, Tensor],
    step: float = 1e-5,
    tolerance: float | None = None,
) -> GradCheckReport:
    """Compare tape gradients of scalar ``f(params)`` with central differences.

    Every coordinate of every parameter is perturbed by ``±step``.  Parameters
    are perturbed in place and restored.  If ``tolerance`` is given an
    ``AssertionError`` is raised when any coordinate exceeds it.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    for p in params.values():
        p.requires_grad = True
    with Tape() as tape:
        loss = f(params)
    grads = backward(tape, loss)
    analytic = {k: grads.get(p, np.zeros_like(p.data)) for k, p in params.items()}
    centre = float(loss.data)

    numeric: dict[str, np.ndarray] = {}
    curvature: dict[str, np.ndarray] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        est = np.empty_like(flat)
        second = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(f(params).data)
            flat[i] = orig - step
            lo = float(f(params).data)
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                idx = [int(j) for j in np.unravel_index(i, p.shape)]
                raise FloatingPointError(f"non-finite evaluation perturbing {name}{idx}")
            est[i] = (hi - lo) / (2.0 * step)
            second[i] = (hi - 2.0 * centre + lo) / step ** 2
        numeric[name] = est.reshape(p.shape)
        curvature[name] = second.reshape(p.shape)

    errors = {k: relative_error(analytic[k], numeric[k]) for k in params}
    report = GradCheckReport(errors, analytic, numeric, curvature)
    if tolerance is not None and report.max_error >= tolerance:
        name, idx, err = report.worst()
        raise AssertionError(
            f"gradient mismatch {err:.3e} >= {tolerance:.1e} at {name}{list(idx)}: "
            f"analytic={analytic[name][idx]:.6e} numeric={numeric[name][idx]:.6e}"
        )
    return report
