"""Finite-difference verification of the autodiff engine and the full estimator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import synth_generate
from .model import ModelConfig, OrcaModel
from .prompt import PromptTemplate
from .tensor import (Tensor, concat, finite_diff_at, gelu, layer_norm, precision, relu, sigmoid,
                     softmax, tanh)
from .training import loss_buoy, loss_phys, total_loss

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    worst: float
    checked: int
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(self.worst <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<24} worst_rel_err={self.worst:.3e} coords={self.checked}"


def relative_error(a, n, floor: float = 1e-5) -> np.ndarray:
    a, n = np.asarray(a, np.float64), np.asarray(n, np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _compare(name, analytic, f, x, idx, h) -> CheckResult:
    numeric = finite_diff_at(f, x, idx, h=h)
    err = relative_error(analytic.reshape(-1)[idx], numeric)
    return CheckResult(name, float(err.max()) if err.size else 0.0, len(idx))


# primitives: fn, operand shapes, positive operands
PRIMITIVES = {
    "add": (lambda a, b: a + b, [(3, 4), (4,)], False),
    "sub": (lambda a, b: a - b, [(2, 1, 3), (4, 3)], False),
    "mul": (lambda a, b: a * b, [(3, 4), (3, 1)], False),
    "div": (lambda a, b: a / b, [(3, 4), (3, 4)], True),
    "matmul": (lambda a, b: a @ b, [(2, 3, 4), (4, 5)], False),
    "sum_mean": (lambda a: a.sum(axis=1) + a.mean(axis=(0, 2), keepdims=True).sum(), [(3, 4, 2)], False),
    "index": (lambda a: a[np.array([0, 2, 0]), 1:], [(3, 4)], False),
    "relu": (relu, [(4, 5)], False),
    "sigmoid": (sigmoid, [(4, 5)], False),
    "tanh": (tanh, [(4, 5)], False),
    "gelu": (gelu, [(4, 5)], False),
    "softmax": (lambda a: softmax(a, axis=-1), [(3, 5)], False),
    "layer_norm": (layer_norm, [(3, 6), (6,), (6,)], False),
    "concat": (lambda a, b: concat([a, b], axis=1), [(2, 3), (2, 2)], False),
}


def check_primitives(seed: int = 0, h: float = 1e-6) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    with precision(np.float64):
        for name, (fn, shapes, positive) in PRIMITIVES.items():
            arrays = [rng.normal(size=s) for s in shapes]
            if positive:
                arrays = [np.abs(a) + 0.5 for a in arrays]
            weights = rng.normal(size=fn(*map(Tensor, arrays)).shape)
            worst, count = 0.0, 0
            for i in range(len(arrays)):
                def f(x, i=i):
                    args = [Tensor(a) for a in arrays]
                    args[i] = x
                    return (fn(*args) * weights).sum()

                ts = [Tensor(a, requires_grad=(j == i)) for j, a in enumerate(arrays)]
                (fn(*ts) * weights).sum().backward()
                r = _compare(name, ts[i].grad, f, arrays[i], np.arange(arrays[i].size), h)
                worst, count = max(worst, r.worst), count + r.checked
            out.append(CheckResult(f"op:{name}", worst, count))
    return out


# a short prompt keeps the token count of the tiny pipeline at 12
TINY_TEMPLATE = PromptTemplate(actor="You are", target="estimate waves", variant="light")


def tiny_pipeline(seed: int = 0, use_location: bool = True):
    """D=8, one layer, 4x4 grid, two buoys, eight steps; returns (model, data)."""
    data = synth_generate(seed, 4, 4, 8, 2, 2)
    cfg = ModelConfig(width=8, layers=1, heads=2, ffn_mult=2, max_tokens=16, soft_prompt_len=2,
                      patch_len=4, stride=4, window=8, prompt="light", use_location=use_location,
                      seed=seed, template=TINY_TEMPLATE)
    model = OrcaModel.for_dataset(cfg, data.dataset)
    # random head and biases so no gradient path is trivially zero
    rng = np.random.default_rng([seed, 7])
    for name in model.params.trainable_names():
        a = model.params[name]
        scale = 0.3 if name.startswith("head.") else 0.5
        model.params.arrays[name] = (a + rng.normal(0.0, scale, a.shape)).astype(a.dtype)
    return model, data


def check_pipeline(seed: int = 0, alpha: float = 0.3, samples: int = 24, h: float = 1e-6,
                   corrupt: str | None = None) -> list[CheckResult]:
    """Analytic vs central differences for each trainable array of the tiny model.

    Arrays with more than ``samples`` entries are checked on a random subset
    plus their largest-gradient coordinate.  ``corrupt`` names an array whose
    analytic gradient is perturbed before comparison (a fault-injection hook).
    """
    model, data = tiny_pipeline(seed)
    ds, ref = data.dataset, data.surrogate.values
    names = model.params.trainable_names()
    if corrupt is not None and corrupt not in names:
        raise KeyError(f"{corrupt!r} is not a trainable array")
    rng = np.random.default_rng([seed, 11])
    with precision(np.float64):
        base = model.params.astype(np.float64)

        def loss(t):
            y_hat = model.forward(ds.values, t)
            l1 = loss_buoy(ds.swh, y_hat, model.locations, ds.swh_mask)
            return total_loss(l1, loss_phys(ref, y_hat), alpha)

        t = base.bind(np.float64)
        loss(t).backward(inputs=[t[k] for k in names])
        results = []
        for name in names:
            g = np.array(t[name].grad, dtype=np.float64)
            if name == corrupt:
                g += 1e-2 * (1.0 + np.abs(g))
            x = base[name]
            if x.size <= samples:
                idx = np.arange(x.size)
            else:
                idx = np.unique(np.append(rng.choice(x.size, samples, replace=False), np.argmax(np.abs(g))))

            def f(v, name=name):
                tt = base.bind(np.float64)
                tt[name] = v
                return loss(tt)

            results.append(_compare(f"param:{name}", g, f, x, idx, h))
    return results


def run_all(seed: int = 0, corrupt: str | None = None) -> list[CheckResult]:
    return check_primitives(seed) + check_pipeline(seed, corrupt=corrupt)


def format_report(results: list[CheckResult]) -> str:
    failed = [r.name for r in results if not r.passed]
    lines = [r.line() for r in results]
    lines.append(f"{len(results) - len(failed)}/{len(results)} checks passed"
                 + (f"; failing: {', '.join(failed)}" if failed else ""))
    return "\n".join(lines)
