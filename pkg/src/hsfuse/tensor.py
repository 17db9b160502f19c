"""Dense fp64 vector/matrix primitives plus a finite-difference gradient checker.

Vectors are 1-D float64 numpy arrays, matrices 2-D row-major float64 arrays.
The `vec`/`mat` constructors validate shape and finiteness once; the math
helpers stay pure and raise readable dimension errors. Everything here is
double precision by design so gradient checks and oracle comparisons can use
tight tolerances.
"""

from collections.abc import Callable, Sequence

import numpy as np

from .errors import DimensionError, NumericError

Vec = np.ndarray
Mat = np.ndarray


def vec(values: Sequence[float] | np.ndarray) -> Vec:
    """Validate `values` as a finite fp64 vector of positive length."""
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"expected a 1-d vector, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionError("vector must have at least one entry")
    if not np.all(np.isfinite(arr)):
        raise NumericError("vector contains non-finite entries")
    return arr


def mat(values: Sequence[Sequence[float]] | np.ndarray) -> Mat:
    """Validate `values` as a finite fp64 matrix with positive dimensions."""
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DimensionError(f"matrix dimensions must be positive, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError("matrix contains non-finite entries")
    return arr


def affine(x: Vec, w: Mat, b: Vec) -> Vec:
    """y = W x + b."""
    if w.ndim != 2 or x.ndim != 1 or b.ndim != 1:
        raise DimensionError(
            f"affine expects (vec, mat, vec), got ndim ({x.ndim}, {w.ndim}, {b.ndim})"
        )
    if w.shape[1] != x.shape[0] or w.shape[0] != b.shape[0]:
        raise DimensionError(
            f"affine shape mismatch: W is {w.shape[0]}x{w.shape[1]}, "
            f"x has dim {x.shape[0]}, b has dim {b.shape[0]}"
        )
    return w @ x + b


def relu(x: Vec) -> Vec:
    """Elementwise max(0, x); the subgradient at 0 is taken as 0."""
    return np.maximum(x, 0.0)


def softmax(logits: Vec) -> Vec:
    """Stable softmax via max-subtraction; output sums to 1."""
    if logits.size < 1:
        raise DimensionError("softmax needs at least one logit")
    shifted = logits - np.max(logits)
    e = np.exp(shifted)
    return e / np.sum(e)


def finite_diff_grad(f: Callable[[Vec], float], x: Vec, eps: float = 1e-6) -> Vec:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    Used as the independent oracle for every analytic backward pass in the
    package; keep it dumb and obviously correct.
    """
    if eps <= 0:
        raise NumericError(f"eps must be positive, got {eps}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for j in range(x.size):
        bumped = x.copy()
        bumped[j] = x[j] + eps
        hi = f(bumped)
        bumped[j] = x[j] - eps
        lo = f(bumped)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"function evaluated to a non-finite value near coordinate {j}")
        grad[j] = (hi - lo) / (2.0 * eps)
    return grad
