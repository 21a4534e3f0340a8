"""Finite-difference gradient checking and the self-check battery."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad

__all__ = ["numerical_gradient", "gradcheck", "GradCheckResult", "run_self_check", "CheckResult"]


def numerical_gradient(loss_fn: Callable[[], Tensor], leaf: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar loss w.r.t. one leaf tensor.

    loss_fn must rebuild the forward pass from the leaves on every call.
    """
    grad = np.zeros_like(leaf.data)
    flat = leaf.data.reshape(-1)
    gflat = grad.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            up = loss_fn().item()
            flat[i] = saved - h
            down = loss_fn().item()
            flat[i] = saved
            gflat[i] = (up - down) / (2.0 * h)
    return grad


@dataclass
class GradCheckResult:
    ok: bool
    max_rel_error: float
    worst_param: str = ""

    def __bool__(self) -> bool:
        return self.ok


def gradcheck(
    loss_fn: Callable[[], Tensor],
    leaves: Sequence[tuple[str, Tensor]] | Sequence[Tensor],
    h: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-7,
) -> GradCheckResult:
    """Compare reverse-mode gradients against central finite differences.

    An element fails when |analytic - numeric| exceeds both
    rtol * max(|analytic|, |numeric|) and atol. Run this in double precision;
    float32 forward noise swamps the h=1e-5 differences.
    """
    named = [lv if isinstance(lv, tuple) else (f"leaf{i}", lv) for i, lv in enumerate(leaves)]
    for _, leaf in named:
        leaf.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {name: np.array(leaf.grad, copy=True) for name, leaf in named}
    worst = 0.0
    worst_name = ""
    ok = True
    for name, leaf in named:
        numeric = numerical_gradient(loss_fn, leaf, h=h)
        a, n = analytic[name], numeric
        diff = np.abs(a - n)
        scale = np.maximum(np.abs(a), np.abs(n))
        rel = diff / np.maximum(scale, 1e-12)
        fail = (diff > atol) & (diff > rtol * scale)
        considered = rel[diff > atol]
        local = float(considered.max()) if considered.size else 0.0
        if local > worst:
            worst, worst_name = local, name
        if fail.any():
            ok = False
    return GradCheckResult(ok=ok, max_rel_error=worst, worst_param=worst_name)


# -- self-check battery -----------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


def _op_gradchecks(rng: np.random.Generator, trials: int) -> list[CheckResult]:
    from . import tensor as T

    def leaf(*shape):
        return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)

    def case_binary(op, sa, sb):
        a, b = leaf(*sa), leaf(*sb)
        return [a, b], lambda: T.tensor_sum(op(a, b))

    def case_unary(op, shape):
        a = leaf(*shape)
        return [a], lambda: T.tensor_sum(op(a) ** 2.0)

    builders: list[tuple[str, Callable[[], tuple]]] = [
        ("add", lambda: case_binary(T.add, (3, 4), (3, 4))),
        ("mul", lambda: case_binary(T.mul, (3, 4), (3, 4))),
        ("matmul", lambda: case_binary(T.matmul, (3, 4), (4, 2))),
        ("conv2d", lambda: case_binary(T.conv2d, (5, 5, 2), (3, 3, 2, 2))),
        ("relu", lambda: case_unary(T.relu, (4, 4))),
        ("sigmoid", lambda: case_unary(T.sigmoid, (4, 4))),
        ("softmax", lambda: case_unary(T.softmax, (4, 4))),
        ("upsample2x", lambda: case_unary(T.upsample2x, (3, 3, 2))),
        ("channel_avg", lambda: case_unary(T.channel_avg, (3, 3, 4))),
        ("channel_max", lambda: case_unary(T.channel_max, (3, 3, 4))),
    ]
    results = []
    for name, build in builders:
        ok = True
        worst = 0.0
        for _ in range(trials):
            leaves, fn = build()
            res = gradcheck(fn, leaves)
            worst = max(worst, res.max_rel_error)
            ok = ok and res.ok
        results.append(CheckResult(f"grad/{name}", ok, f"max rel err {worst:.2e}"))
    return results


def _algebra_checks(rng: np.random.Generator) -> list[CheckResult]:
    from .graph import adjacency, build_graph, init_reasoning_params, normalized_laplacian, srr

    results = []
    x = Tensor(rng.standard_normal((4, 4, 6)), dtype=np.float64)
    p = init_reasoning_params(6, rng, dtype=np.float64)
    adj = adjacency(build_graph(x, "spatial"), p)
    results.append(
        CheckResult("graph/adjacency_symmetric", bool(np.array_equal(adj.data, adj.data.T)))
    )
    results.append(CheckResult("graph/adjacency_nonneg", bool((adj.data >= 0).all())))
    lap = normalized_laplacian(adj)
    eigs = np.linalg.eigvalsh(lap.data)
    results.append(
        CheckResult(
            "graph/laplacian_spectrum",
            bool(eigs.min() >= -1e-8 and eigs.max() <= 2 + 1e-8),
            f"eig range [{eigs.min():.2e}, {eigs.max():.2e}]",
        )
    )
    perm = rng.permutation(16)
    flat = x.data.reshape(16, 6)
    x_perm = Tensor(flat[perm].reshape(4, 4, 6), dtype=np.float64)
    out = srr(x, p).data.reshape(16, 6)
    out_perm = srr(x_perm, p).data.reshape(16, 6)
    results.append(CheckResult("graph/srr_equivariance", bool(np.array_equal(out[perm], out_perm))))
    return results


def _attention_checks(rng: np.random.Generator) -> list[CheckResult]:
    from .attention import init_pma_params, pma

    x = Tensor(rng.standard_normal((8, 8, 4)), dtype=np.float64)
    p = init_pma_params(4, rng, dtype=np.float64)
    a = pma(x, p)
    in_range = bool((a.data > 0).all() and (a.data < 1).all())
    return [CheckResult("attention/map_in_open_unit_interval", in_range)]


def _loss_checks(rng: np.random.Generator) -> list[CheckResult]:
    from .network import balanced_bce_loss, bce_loss

    results = []
    s = Tensor(rng.uniform(0.01, 0.99, size=(6, 6)), dtype=np.float64)
    label = np.zeros((6, 6))
    label[:3] = 1.0  # exactly half foreground
    balanced = balanced_bce_loss(s, label).item()
    plain = bce_loss(s, label).item()
    results.append(
        CheckResult("loss/balanced_is_half_bce", balanced == 0.5 * plain, f"{balanced:.6f}")
    )
    all_bg = balanced_bce_loss(s, np.zeros((6, 6))).item()
    results.append(CheckResult("loss/all_background_fallback", np.isfinite(all_bg) and all_bg > 0))
    return results


def _metric_checks(rng: np.random.Generator) -> list[CheckResult]:
    from .metrics import e_measure, f_measure, mae, s_measure

    gt = (rng.uniform(size=(16, 16)) < 0.3).astype(np.float64)
    if gt.sum() == 0:
        gt[4, 4] = 1.0
    results = [
        CheckResult("metrics/mae_identity", mae(gt, gt) == 0.0),
        CheckResult("metrics/f_identity", abs(f_measure(gt, gt) - 1.0) < 1e-6),
        CheckResult("metrics/s_identity", abs(s_measure(gt, gt) - 1.0) < 1e-6),
        CheckResult("metrics/e_identity", abs(e_measure(gt, gt) - 1.0) < 1e-6),
    ]
    return results


def run_self_check(trials: int = 5, seed: int = 0) -> list[CheckResult]:
    """A fast version of the verification suites: gradients plus invariants."""
    rng = np.random.default_rng(seed)
    results: list[CheckResult] = []
    results.extend(_op_gradchecks(rng, trials))
    results.extend(_algebra_checks(rng))
    results.extend(_attention_checks(rng))
    results.extend(_loss_checks(rng))
    results.extend(_metric_checks(rng))
    return results
