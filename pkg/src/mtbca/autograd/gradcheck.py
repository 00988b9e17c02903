"""Central finite-difference gradient checking."""

import numpy as np

from .tensor import Tensor


def numerical_grad(fn, arrays, index, eps=1e-5, coords=None):
    """d fn / d arrays[index] by central differences; ``fn`` maps arrays to a float.

    ``coords`` restricts probing to those flat indices (others stay zero).
    """
    target = arrays[index]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size) if coords is None else coords:
        orig = flat[i]
        flat[i] = orig + eps
        plus = fn(*arrays)
        flat[i] = orig - eps
        minus = fn(*arrays)
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic, numeric):
    """Max-norm relative error ``max|a - n| / max(max|a|, max|n|)``."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(build, arrays, eps=1e-5, seed=0, max_coords=None):
    """Compare autograd and finite-difference gradients of a tensor-valued ``build``.

    ``build(*tensors)`` returns a Tensor; it is reduced to a scalar through a
    fixed random projection so every output element contributes. Returns the
    worst relative error over all inputs. With ``max_coords`` each input is
    probed at most at that many randomly chosen entries.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = build(*tensors)
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal(out.shape)
    (out * Tensor(proj)).sum().backward()

    def scalar(*arrs):
        return float((build(*[Tensor(a) for a in arrs]).data * proj).sum())

    worst = 0.0
    for i, t in enumerate(tensors):
        analytic = t.grad if t.grad is not None else np.zeros_like(arrays[i])
        coords = None
        if max_coords is not None and arrays[i].size > max_coords:
            coords = np.sort(rng.choice(arrays[i].size, max_coords, replace=False))
            mask = np.zeros(arrays[i].size, dtype=bool)
            mask[coords] = True
            analytic = np.where(mask.reshape(analytic.shape), analytic, 0.0)
        numeric = numerical_grad(scalar, arrays, i, eps, coords)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
