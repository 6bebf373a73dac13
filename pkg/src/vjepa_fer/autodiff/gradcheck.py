"""Central finite-difference checks for the differentiable primitives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from vjepa_fer.autodiff import tensor as T
from vjepa_fer.autodiff.tensor import Tensor


def numerical_grads(fn: Callable[[], Tensor], tensors: list[Tensor], h: float = 1e-5,
                    coords: list[np.ndarray] | None = None) -> list[np.ndarray]:
    """Central differences of the scalar ``fn()`` w.r.t. each tensor, perturbing in place.

    ``coords`` optionally restricts each tensor to a subset of flat indices; the
    result then holds one entry per selected index.
    """
    grads = []
    with T.no_grad():
        for n, t in enumerate(tensors):
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size) if coords is None else coords[n]
            g = np.zeros(idx.size, dtype=np.float64)
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(fn().data)
                flat[i] = orig - h
                fm = float(fn().data)
                flat[i] = orig
                g[j] = (fp - fm) / (2.0 * h)
            grads.append(g.reshape(t.shape) if coords is None else g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)``; 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def grad_check(fn: Callable[[], Tensor], tensors: list[Tensor], h: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Largest relative error between backward() and finite differences over ``tensors``.

    With ``max_coords``, tensors larger than that are checked on a random subset
    of entries (drawn from ``rng``).
    """
    for t in tensors:
        t.grad = None
    loss = fn()
    T.backward(loss)
    coords = None
    if max_coords is not None:
        rng = rng or np.random.default_rng(0)
        coords = [np.arange(t.size) if t.size <= max_coords else np.sort(rng.choice(t.size, max_coords, replace=False))
                  for t in tensors]
    analytic = [t.grad.copy() if t.grad is not None else np.zeros(t.shape) for t in tensors]
    if coords is not None:
        analytic = [a.reshape(-1)[c] for a, c in zip(analytic, coords)]
    numeric = numerical_grads(fn, tensors, h, coords)
    # concatenate so a tensor whose gradient is tiny does not dominate the verdict
    a = np.concatenate([x.ravel() for x in analytic])
    n = np.concatenate([x.ravel() for x in numeric])
    return relative_error(a, n)


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    seeds: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def _leaf(rng, *shape, lo=None):
    arr = rng.standard_normal(shape)
    if lo is not None:
        arr = np.where(np.abs(arr) < lo, np.sign(arr + 1e-12) * lo, arr)
    return Tensor(arr, requires_grad=True, dtype=np.float64)


def _weighted(out: Tensor, rng) -> tuple[Tensor, Callable[[Tensor], Tensor]]:
    w = Tensor(rng.standard_normal(out.shape), dtype=np.float64)
    return w, lambda o: T.sum_all(T.mul(o, w))


def primitive_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    """One randomized (loss_fn, inputs) pair per primitive, all in float64.

    Non-scalar outputs are contracted against a fixed random weight so every
    output element carries a distinct upstream gradient.
    """
    cases = {}

    def wrap(name, build, inputs):
        with T.no_grad():
            probe = build()
        w = Tensor(rng.standard_normal(probe.shape), dtype=np.float64)
        if probe.size == 1:
            cases[name] = (build, inputs)
        else:
            cases[name] = (lambda: T.sum_all(T.mul(build(), w)), inputs)

    a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    wrap("add", lambda: T.add(a, b), [a, b])
    c, d = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    wrap("sub", lambda: T.sub(c, d), [c, d])
    e, f = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    wrap("mul", lambda: T.mul(e, f), [e, f])
    s = _leaf(rng, 5)
    wrap("scale", lambda: T.scale(s, -1.7), [s])
    g = _leaf(rng, 20)
    wrap("gelu", lambda: T.gelu(g), [g])
    ma, mb = _leaf(rng, 3, 5), _leaf(rng, 5, 2)
    wrap("matmul", lambda: T.matmul(ma, mb), [ma, mb])
    ba, bb = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 4, 3)
    wrap("bmm", lambda: T.bmm(ba, bb), [ba, bb])
    lx, lw, lb = _leaf(rng, 4, 3), _leaf(rng, 3, 5), _leaf(rng, 5)
    wrap("linear", lambda: T.linear(lx, lw, lb), [lx, lw, lb])
    sx = _leaf(rng, 3, 4)
    wrap("softmax", lambda: T.softmax(sx, axis=-1), [sx])
    sy = _leaf(rng, 3, 4)
    wrap("softmax_axis0", lambda: T.softmax(sy, axis=0), [sy])
    nx, ng, nb = _leaf(rng, 4, 6), _leaf(rng, 6), _leaf(rng, 6)
    wrap("layer_norm", lambda: T.layer_norm(nx, ng, nb, 1e-5), [nx, ng, nb])
    rx = _leaf(rng, 2, 6)
    wrap("reshape", lambda: T.reshape(rx, (3, 4)), [rx])
    px = _leaf(rng, 2, 3, 4)
    wrap("permute", lambda: T.permute(px, (2, 0, 1)), [px])
    tx = _leaf(rng, 5, 3)
    wrap("take_rows", lambda: T.take_rows(tx, [4, 0, 4, 2]), [tx])
    ca, cb = _leaf(rng, 2, 3), _leaf(rng, 4, 3)
    wrap("concat_rows", lambda: T.concat_rows([ca, cb]), [ca, cb])
    ex = _leaf(rng, 1, 4)
    wrap("expand_rows", lambda: T.expand_rows(ex, 3), [ex])
    mx = _leaf(rng, 5, 3)
    wrap("mean_rows", lambda: T.mean_rows(mx), [mx])
    sm = _leaf(rng, 3, 3)
    wrap("sum", lambda: T.sum_all(sm), [sm])
    # keep |pred - target| away from the kink at 0
    lp = _leaf(rng, 4, 5)
    lt = Tensor(lp.data + np.where(rng.random((4, 5)) < 0.5, -1.0, 1.0) * (0.1 + rng.random((4, 5))),
                dtype=np.float64)
    lmask = rng.random((4, 5)) < 0.6
    lmask[0, 0] = True
    wrap("l1_loss", lambda: T.l1_loss(lp, lt, lmask), [lp])
    cl = _leaf(rng, 6)
    lab = int(rng.integers(6))
    wrap("cross_entropy", lambda: T.cross_entropy(cl, lab), [cl])
    cbl = _leaf(rng, 3, 4)
    labs = rng.integers(4, size=3)
    wrap("cross_entropy_batch", lambda: T.cross_entropy(cbl, labs), [cbl])
    return cases


def run_primitive_suite(seeds: int = 20, h: float = 1e-5, tol: float = 1e-4) -> list[CheckResult]:
    worst: dict[str, float] = {}
    for seed in range(seeds):
        for name, (fn, inputs) in primitive_cases(np.random.default_rng(seed)).items():
            err = grad_check(fn, inputs, h)
            worst[name] = max(worst.get(name, 0.0), err)
    return [CheckResult(n, e, seeds, tol) for n, e in worst.items()]
