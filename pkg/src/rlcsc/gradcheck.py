"""Central finite-difference checks of tape gradients for the RL-CSC model."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import LAYER_NAMES, ModelConfig, RlcscParams, forward
from .rng import generator
from .tensor import Tape, Tensor, mse
from .trainer import he_init


def rel_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


@dataclass
class GradcheckResult:
    per_param: dict[str, float] = field(default_factory=dict)
    rejected: dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.per_param.values())


def random_problem(cfg: ModelConfig, seed: int = 0, size: int = 8):
    """64-bit He-initialised params with positive thresholds, an input and a target."""
    params = he_init(cfg, generator(seed, "gradcheck", "init"), dtype=np.float64)
    rng = generator(seed, "gradcheck", "data")
    theta = rng.uniform(0.0, 0.05, size=params.theta.shape)
    params = params.with_tensors([t.data for t in params.tensors()[:-1]] + [theta])
    I_y = Tensor(rng.uniform(0, 1, (1, cfg.c_img, size, size)))
    target = Tensor(rng.uniform(0, 1, (1, cfg.c_img, size, size)))
    return params, I_y, target


def _loss_and_pattern(params: RlcscParams, I_y: Tensor, target: Tensor) -> tuple[float, bytes]:
    """Loss plus the on/off pattern of every ReLU evaluated on the way."""
    p = params.trainable()
    with Tape() as tape:
        value = mse(forward(p, I_y), target).item()
    masks = [np.packbits(n.inputs[0].data > 0) for n in tape.nodes if n.tag == "relu"]
    return value, np.concatenate(masks).tobytes()


def check_model(cfg: ModelConfig, eps: float = 1e-5, seed: int = 0, entries: int = 12,
                directions: int = 2, size: int = 8) -> GradcheckResult:
    """Compare tape gradients with central differences for every parameter tensor.

    Each tensor is probed along ``directions`` random unit directions (which
    touch every entry at once) and at ``entries`` randomly chosen single
    entries.  The reported error for a tensor is the worst over all probes.

    A probe whose +eps and -eps evaluations switch any ReLU on or off spans a
    kink, where central differences do not approximate the derivative; such
    probes are redrawn (up to ``4 * (entries + directions)`` attempts) and
    counted in ``rejected``.  A tensor that runs out of attempts scores inf.
    """
    params, I_y, target = random_problem(cfg, seed, size)
    p = params.trainable()
    with Tape() as tape:
        value = mse(forward(p, I_y), target)
    grads = tape.gradient(value, p.tensors())
    rng = generator(seed, "gradcheck", "probe")
    base = [t.data for t in params.tensors()]

    def perturbed(i, delta):
        arrays = list(base)
        arrays[i] = base[i] + delta
        return params.with_tensors(arrays)

    result = GradcheckResult()
    for i, name in enumerate(LAYER_NAMES):
        g = grads[i]
        worst = 0.0
        need = {"dir": directions, "entry": min(entries, base[i].size)}
        budget = 4 * (entries + directions)
        rejected = 0
        while any(need.values()) and budget > 0:
            budget -= 1
            kind = "dir" if need["dir"] else "entry"
            if kind == "dir":
                v = rng.standard_normal(base[i].shape)
                v /= np.linalg.norm(v)
            else:
                v = np.zeros(base[i].size)
                v[rng.integers(base[i].size)] = 1.0
                v = v.reshape(base[i].shape)
            lp, pat_p = _loss_and_pattern(perturbed(i, eps * v), I_y, target)
            lm, pat_m = _loss_and_pattern(perturbed(i, -eps * v), I_y, target)
            if pat_p != pat_m:
                rejected += 1
                continue
            need[kind] -= 1
            num = (lp - lm) / (2 * eps)
            ana = float(np.sum(g * v))
            worst = max(worst, rel_error(ana, num))
        result.per_param[name] = worst if not any(need.values()) else float("inf")
        result.rejected[name] = rejected
    return result
