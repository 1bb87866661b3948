"""Central finite-difference checks for analytic gradients."""

from typing import Callable, Optional, Sequence

import numpy as np

from autodiff.tensor import Tape, Tensor, backward, no_grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
              max_points: Optional[int] = None, rng: Optional[np.random.Generator] = None,
              floor: float = 1e-8) -> float:
    """Largest relative error between backward() and central differences over ``inputs``.

    ``fn`` must rebuild the scalar loss from the current values of ``inputs``.
    With ``max_points`` only that many randomly chosen coordinates per input are checked.
    ``floor`` bounds the error denominator for inputs whose gradient is exactly zero.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for t in inputs:
        t.grad = np.zeros_like(t.value)
    with Tape() as tape:
        loss = fn()
    backward(loss, tape)

    worst = 0.0
    for t in inputs:
        flat = t.value.reshape(-1)
        coords = np.arange(flat.size)
        if max_points is not None and flat.size > max_points:
            coords = rng.choice(flat.size, size=max_points, replace=False)
        analytic = t.grad.reshape(-1)[coords]
        numeric = np.empty(len(coords))
        with no_grad():
            for j, c in enumerate(coords):
                original = flat[c]
                flat[c] = original + eps
                plus = fn().item()
                flat[c] = original - eps
                minus = fn().item()
                flat[c] = original
                numeric[j] = (plus - minus) / (2 * eps)
        worst = max(worst, relative_error(analytic, numeric, floor))
    return worst
