"""RL-CSC network: feature extraction, convolutional LISTA, residual recovery.

    y   = relu(F1 * relu(F0 * I_y))
    z_0 = 0,  z_{k+1} = relu(W1 * y + S * z_k - theta)      (K times, S shared)
    R   = H * relu(W2 * z_K)
    I_x = I_y + R

``*`` is the same-size convolution from :mod:`rlcsc.tensor`.  ``theta`` is a
per-channel vector of shape (1, m_f, 1, 1).  Depth is K + 5.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, add, conv2d, relu, sub

LAYER_NAMES = ("F0", "F1", "W1", "S", "W2", "H", "theta")


@dataclass(frozen=True)
class ModelConfig:
    n_f: int = 128
    m_f: int = 256
    s: int = 3
    c_img: int = 1
    K: int = 25

    def __post_init__(self):
        for name in ("n_f", "m_f", "s", "c_img", "K"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.s % 2 == 0:
            raise ConfigError(f"kernel size must be odd, got {self.s}")

    def shapes(self) -> dict[str, tuple]:
        n, m, s, c = self.n_f, self.m_f, self.s, self.c_img
        return {
            "F0": (n, c, s, s),
            "F1": (n, n, s, s),
            "W1": (m, n, s, s),
            "S": (m, m, s, s),
            "W2": (n, m, s, s),
            "H": (c, n, s, s),
            "theta": (1, m, 1, 1),
        }


@dataclass(frozen=True)
class RlcscParams:
    F0: Tensor
    F1: Tensor
    W1: Tensor
    S: Tensor
    W2: Tensor
    H: Tensor
    theta: Tensor
    K: int

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        F0, F1, W1, S, W2, H = (getattr(self, n).shape for n in LAYER_NAMES[:6])
        chain = [
            ("F0.out", F0[0], "F1.in", F1[1]),
            ("F1.out", F1[0], "F1.in", F1[1]),
            ("F1.out", F1[0], "W1.in", W1[1]),
            ("W1.out", W1[0], "S.in", S[1]),
            ("S.out", S[0], "S.in", S[1]),
            ("S.out", S[0], "W2.in", W2[1]),
            ("W2.out", W2[0], "H.in", H[1]),
            ("H.out", H[0], "F0.in", F0[1]),
        ]
        for a, va, b, vb in chain:
            if va != vb:
                raise ShapeError(f"channel chain broken: {a}={va} but {b}={vb}")
        if self.theta.shape != (1, S[0], 1, 1):
            raise ShapeError(f"theta shape {self.theta.shape} != (1, {S[0]}, 1, 1)")

    @property
    def config(self) -> ModelConfig:
        n_f, c_img, s, _ = self.F0.shape
        return ModelConfig(n_f=n_f, m_f=self.W1.shape[0], s=s, c_img=c_img, K=self.K)

    def tensors(self) -> list[Tensor]:
        return [getattr(self, n) for n in LAYER_NAMES]

    def named(self) -> Iterator[tuple[str, Tensor]]:
        for n in LAYER_NAMES:
            yield n, getattr(self, n)

    def with_tensors(self, arrays, requires_grad: bool = False) -> "RlcscParams":
        """Copy with new tensor values, given in ``LAYER_NAMES`` order."""
        kw = {
            n: Tensor(a, requires_grad=requires_grad, name=n, dtype=getattr(self, n).dtype)
            for n, a in zip(LAYER_NAMES, arrays)
        }
        return replace(self, **kw)

    def trainable(self) -> "RlcscParams":
        return self.with_tensors([t.data for t in self.tensors()], requires_grad=True)

    def with_K(self, K: int) -> "RlcscParams":
        return replace(self, K=K)

    @classmethod
    def zeros(cls, cfg: ModelConfig, dtype=np.float32) -> "RlcscParams":
        kw = {n: Tensor(np.zeros(shp, dtype=dtype), name=n) for n, shp in cfg.shapes().items()}
        return cls(K=cfg.K, **kw)


def _check_channels(x: Tensor, want: int, what: str) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"{what}: expected NCHW tensor, got shape {x.shape}")
    if x.shape[1] != want:
        raise ShapeError(f"{what}: expected {want} channels, got {x.shape[1]}")


def extract_features(params: RlcscParams, I_y: Tensor) -> Tensor:
    _check_channels(I_y, params.F0.shape[1], "extract_features")
    return relu(conv2d(relu(conv2d(I_y, params.F0)), params.F1))


def lista_step(params: RlcscParams, Wy: Tensor, z: Tensor | None) -> Tensor:
    """One recursion given the hoisted ``W1 * y``; ``z=None`` stands for z = 0."""
    pre = Wy if z is None else add(Wy, conv2d(z, params.S))
    return relu(sub(pre, params.theta))


def conv_lista(params: RlcscParams, y: Tensor) -> Tensor:
    _check_channels(y, params.W1.shape[1], "conv_lista")
    Wy = conv2d(y, params.W1)
    z = None
    for _ in range(params.K):
        z = lista_step(params, Wy, z)
    return z


def recover_residual(params: RlcscParams, z: Tensor) -> Tensor:
    _check_channels(z, params.W2.shape[1], "recover_residual")
    return conv2d(relu(conv2d(z, params.W2)), params.H)


def residual(params: RlcscParams, I_y: Tensor) -> Tensor:
    return recover_residual(params, conv_lista(params, extract_features(params, I_y)))


def forward(params: RlcscParams, I_y: Tensor) -> Tensor:
    return add(I_y, residual(params, I_y))


def restore_y(params: RlcscParams, I_y: np.ndarray) -> np.ndarray:
    """Restore one interpolated (h, w) Y plane.

    The residual is computed in the parameters' dtype and added to the
    float64 input, so a model with zero weights returns ``I_y`` exactly.
    """
    x = Tensor(np.asarray(I_y)[None, None].astype(params.F0.dtype))
    return np.asarray(I_y, dtype=np.float64) + residual(params, x).data[0, 0].astype(np.float64)


def depth(params: RlcscParams | ModelConfig) -> int:
    return params.K + 5


def parameter_count(params: RlcscParams | ModelConfig, include_theta: bool = True) -> int:
    if isinstance(params, ModelConfig):
        shapes = params.shapes()
    else:
        shapes = {n: t.shape for n, t in params.named()}
    return sum(
        int(np.prod(shp)) for n, shp in shapes.items() if include_theta or n != "theta"
    )
