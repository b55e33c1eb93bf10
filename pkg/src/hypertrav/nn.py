"""Traversability network: pillar encoder, BEV backbone and the three heads."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import MissingGrad, ShapeMismatch
from .voxel import PillarTensor

GROUPS = ("bev", "encoder", "regression", "recon")


@dataclass(frozen=True)
class NetworkConfig:
    point_feat_dim: int = 7
    cell_feat_dim: int = 32
    latent_dim: int = 8
    encoder_hidden: int = 16
    recon_hidden: int = 16
    dropout_rate: float = 0.1
    backbone_convs: int = 2
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5
    dtype: str = "float32"

    def __post_init__(self):
        dims = (self.point_feat_dim, self.cell_feat_dim, self.latent_dim,
                self.encoder_hidden, self.recon_hidden)
        if min(dims) < 1:
            raise ValueError("layer widths must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.backbone_convs < 0:
            raise ValueError("backbone_convs must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class HeadOutput:
    z: Tensor  # (N, latent)
    t: Tensor  # (N, 1)
    u: Tensor  # (N, cell_feat)


class TravNet:
    """All learnable tensors plus batch-norm running statistics.

    Parameters are grouped as ``bev`` (pillar encoder and backbone),
    ``encoder``, ``regression`` and ``recon``.
    """

    def __init__(self, config: NetworkConfig = NetworkConfig(), seed: int = 0):
        self.config = config
        self.dtype = np.dtype(config.dtype)
        self.params: dict[str, Tensor] = {}
        self.groups: dict[str, str] = {}
        self.running: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.training = True
        self._rng = np.random.default_rng(seed)
        c = config
        self._linear("bev.point", c.point_feat_dim, c.cell_feat_dim, "bev")
        self._norm("bev.point_bn", c.cell_feat_dim, "bev")
        for k in range(c.backbone_convs):
            fan = 9 * c.cell_feat_dim
            self._add(f"bev.conv{k}.w", self._uniform((3, 3, c.cell_feat_dim, c.cell_feat_dim), fan), "bev")
            self._add(f"bev.conv{k}.b", np.zeros(c.cell_feat_dim), "bev")
            self._norm(f"bev.conv{k}_bn", c.cell_feat_dim, "bev")
        self._linear("enc.fc0", c.cell_feat_dim, c.encoder_hidden, "encoder")
        self._norm("enc.bn0", c.encoder_hidden, "encoder")
        self._linear("enc.fc1", c.encoder_hidden, c.latent_dim, "encoder")
        self._linear("reg.fc", c.latent_dim, 1, "regression")
        self._linear("rec.fc0", c.latent_dim, c.recon_hidden, "recon")
        self._norm("rec.bn0", c.recon_hidden, "recon")
        self._linear("rec.fc1", c.recon_hidden, c.cell_feat_dim, "recon")

    # -- construction -----------------------------------------------------------
    def _uniform(self, shape, fan_in) -> np.ndarray:
        bound = 1.0 / np.sqrt(fan_in)
        return self._rng.uniform(-bound, bound, size=shape)

    def _add(self, name: str, value: np.ndarray, group: str) -> None:
        self.params[name] = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True, name=name)
        self.groups[name] = group

    def _linear(self, name: str, n_in: int, n_out: int, group: str) -> None:
        self._add(f"{name}.w", self._uniform((n_in, n_out), n_in), group)
        self._add(f"{name}.b", np.zeros(n_out), group)

    def _norm(self, name: str, width: int, group: str) -> None:
        self._add(f"{name}.gamma", np.ones(width), group)
        self._add(f"{name}.beta", np.zeros(width), group)
        self.running[name] = (np.zeros(width, dtype=self.dtype), np.ones(width, dtype=self.dtype))

    def group_params(self, group: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if self.groups[k] == group}

    def train(self) -> TravNet:
        self.training = True
        return self

    def eval(self) -> TravNet:
        self.training = False
        return self

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -- layers -----------------------------------------------------------------
    def _dense(self, x: Tensor, name: str) -> Tensor:
        return ag.matmul(x, self.params[f"{name}.w"]) + self.params[f"{name}.b"]

    def _bn(self, x: Tensor, name: str) -> Tensor:
        gamma = self.params[f"{name}.gamma"]
        beta = self.params[f"{name}.beta"]
        rm, rv = self.running[name]
        if self.training and x.shape[0] > 0:
            out, mu, var = ag.batch_norm(x, gamma, beta, self.config.bn_eps)
            m = self.config.bn_momentum
            self.running[name] = ((m * rm + (1 - m) * mu).astype(self.dtype),
                                  (m * rv + (1 - m) * var).astype(self.dtype))
            return out
        scale = (1.0 / np.sqrt(rv + self.config.bn_eps)).astype(self.dtype)
        return (x - rm) * scale * gamma + beta

    def _dropout(self, x: Tensor, rng: np.random.Generator | None) -> Tensor:
        p = self.config.dropout_rate
        if not self.training or p == 0.0:
            return x
        rng = rng if rng is not None else self._rng
        mask = (rng.random(x.shape) >= p).astype(self.dtype) / (1.0 - p)
        return x * mask

    # -- forward ----------------------------------------------------------------
    def pillar_encoder_forward(self, pillars: list[PillarTensor] | PillarTensor) -> Tensor:
        """BEV feature map of shape (B, H, W, cell_feat_dim)."""
        if isinstance(pillars, PillarTensor):
            pillars = [pillars]
        if not pillars:
            raise ShapeMismatch("empty pillar batch")
        grid = pillars[0].grid
        h, w = grid.shape
        c = self.config.cell_feat_dim
        rows, cells = [], []
        for b, pt in enumerate(pillars):
            if pt.features.shape[-1] != self.config.point_feat_dim:
                raise ShapeMismatch(f"pillar feature dim {pt.features.shape[-1]} != {self.config.point_feat_dim}")
            if pt.grid.shape != (h, w):
                raise ShapeMismatch("pillar tensors in a batch must share grid dims")
            r, cell = pt.valid_rows()
            rows.append(r)
            cells.append(cell + b * h * w)
        rows = np.concatenate(rows).astype(self.dtype)
        cells = np.concatenate(cells)
        n_cells = len(pillars) * h * w

        x = self._bn(self._dense(Tensor(rows), "bev.point"), "bev.point_bn")
        starts = np.flatnonzero(np.r_[True, cells[1:] != cells[:-1]]) if cells.size else np.zeros(0, np.int64)
        pooled = ag.relu(ag.segment_max(x, starts))
        fmap = ag.scatter_rows(pooled, cells[starts], n_cells)
        fmap = fmap.reshape(len(pillars), h, w, c)
        for k in range(self.config.backbone_convs):
            y = ag.conv3x3(fmap, self.params[f"bev.conv{k}.w"], self.params[f"bev.conv{k}.b"])
            y = self._bn(y.reshape(n_cells, c), f"bev.conv{k}_bn")
            fmap = ag.relu(y).reshape(len(pillars), h, w, c)
        return fmap

    def encode(self, q: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        x = ag.relu(self._bn(self._dense(q, "enc.fc0"), "enc.bn0"))
        return self._dense(self._dropout(x, rng), "enc.fc1")

    def regress(self, z: Tensor) -> Tensor:
        return ag.sigmoid(self._dense(z, "reg.fc"))

    def reconstruct(self, z: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        x = ag.relu(self._bn(self._dense(z, "rec.fc0"), "rec.bn0"))
        return self._dense(self._dropout(x, rng), "rec.fc1")

    def head_forward(self, q: Tensor, rng: np.random.Generator | None = None) -> HeadOutput:
        c = self.config
        if q.data.ndim != 2 or q.shape[1] != c.cell_feat_dim:
            raise ShapeMismatch(f"head input {q.shape}, expected (N, {c.cell_feat_dim})")
        if q.shape[0] == 0:
            empty = lambda d: Tensor(np.zeros((0, d), dtype=self.dtype))  # noqa: E731
            return HeadOutput(empty(c.latent_dim), empty(1), empty(c.cell_feat_dim))
        z = self.encode(q, rng)
        return HeadOutput(z, self.regress(z), self.reconstruct(z, rng))

    # -- state ------------------------------------------------------------------
    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"param/{k}": v.data for k, v in self.params.items()}
        for k, (m, v) in self.running.items():
            out[f"bn/{k}/mean"] = m
            out[f"bn/{k}/var"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            arr = arrays[f"param/{k}"]
            if arr.shape != p.shape:
                raise ShapeMismatch(f"{k}: stored {arr.shape}, model {p.shape}")
            p.data = np.array(arr, dtype=self.dtype)
        for k in self.running:
            self.running[k] = (np.array(arrays[f"bn/{k}/mean"], dtype=self.dtype),
                               np.array(arrays[f"bn/{k}/var"], dtype=self.dtype))

    def copy_state(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.state_arrays().items()}


class Adam:
    """Adam with bias correction; clears gradients after each step."""

    def __init__(self, params: dict[str, Tensor], lr: float = 5e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        missing = [k for k, p in self.params.items() if p.grad is None]
        if missing:
            raise MissingGrad(f"no gradient for {', '.join(missing[:5])}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for k, p in self.params.items():
            g = p.grad
            m = self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            v = self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype)
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"adam/m/{k}"] = self.m[k]
            out[f"adam/v/{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step: int) -> None:
        for k in self.params:
            self.m[k] = np.array(arrays[f"adam/m/{k}"])
            self.v[k] = np.array(arrays[f"adam/v/{k}"])
        self.step_count = step
