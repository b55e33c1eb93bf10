"""Finite-difference gradient oracle shared by the gradient tests."""
import numpy as np

from hypertrav.autograd import Tensor

H = 1e-4


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|); entries where both vanish below ``floor`` count as 0."""
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    scale = np.maximum(np.abs(a), np.abs(n))
    return np.where(scale < floor, 0.0, np.abs(a - n) / np.maximum(scale, floor))


def numeric_grad(fn, arrays: list[np.ndarray], index: int, h: float = H) -> np.ndarray:
    """Central differences of the scalar ``fn(arrays)`` w.r.t. ``arrays[index]``."""
    x = arrays[index]
    out = np.zeros_like(x)
    flat, gflat = x.reshape(-1), out.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = fn(arrays)
        flat[k] = orig - h
        down = fn(arrays)
        flat[k] = orig
        gflat[k] = (up - down) / (2 * h)
    return out


def check_gradients(build, arrays: list[np.ndarray], h: float = H) -> float:
    """Max elementwise relative error between backprop and central differences.

    ``build`` maps a list of Tensors to a scalar Tensor.
    """
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    build(tensors).backward()
    worst = 0.0

    def value(arrs):
        return build([Tensor(a) for a in arrs]).item()

    work = [a.copy() for a in arrays]
    for i, t in enumerate(tensors):
        g = t.grad if t.grad is not None else np.zeros_like(arrays[i])
        num = numeric_grad(value, work, i, h)
        worst = max(worst, float(rel_error(g, num).max(initial=0.0)))
    return worst


# a small world that builds and trains in seconds
TINY = {
    "seed": 3,
    "grid": {"size": [4.8, 4.8], "resolution": 0.3, "max_points": 16},
    "world": {"extent": [20.0, 20.0], "density": 40.0, "tilt_deg": 0.0, "n_rocks": 25,
              "n_low_bushes": 25, "n_high_bushes": 20, "n_trees": 8},
    "dataset": {"window": 20, "stride": 3, "n_train_scans": 8, "n_test_scans": 3},
    "train": {"epochs": 2, "batch_size": 4},
    "network": {"cell_feat_dim": 8, "encoder_hidden": 8, "recon_hidden": 8},
    "map": {"size": [4.8, 4.8], "resolution": 0.3},
}
