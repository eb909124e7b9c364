"""Central finite-difference gradient verification.

The checker compares analytic gradients from `tensor.backward` against
central differences with h = 1e-5 at randomly sampled coordinates, using
relative error |analytic - numeric| / max(1, |analytic|).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T

H = 1e-5
TOL = 1e-4


@dataclass
class GradCheckResult:
    name: str
    n_checked: int
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < TOL

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: {self.n_checked} coords, max rel err {self.max_rel_err:.3e}"


def check_gradients(
    name: str,
    loss_fn: Callable[[], T.Tensor],
    params: Sequence[T.Tensor],
    n_samples: int = 50,
    rng: np.random.Generator | None = None,
) -> GradCheckResult:
    """Check d(loss)/d(params) at `n_samples` random coordinates.

    `loss_fn` must be a pure function of the current parameter values
    (re-invoking it after perturbing a coordinate gives the perturbed
    loss). Samples are spread across all parameter tensors.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    T.backward(loss)

    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    n = min(n_samples, total)
    picks = rng.choice(total, size=n, replace=False)
    bounds = np.cumsum(sizes)

    max_err = 0.0
    for flat in picks:
        pi = int(np.searchsorted(bounds, flat, side="right"))
        ofs = int(flat - (bounds[pi - 1] if pi else 0))
        p = params[pi]
        analytic = 0.0 if p.grad is None else float(p.grad.reshape(-1)[ofs])
        orig = float(p.data.reshape(-1)[ofs])
        with T.no_grad():
            p.data.reshape(-1)[ofs] = orig + H
            hi = loss_fn().item()
            p.data.reshape(-1)[ofs] = orig - H
            lo = loss_fn().item()
            p.data.reshape(-1)[ofs] = orig
        numeric = (hi - lo) / (2 * H)
        err = abs(analytic - numeric) / max(1.0, abs(analytic))
        max_err = max(max_err, err)
    return GradCheckResult(name, n, max_err)


# ---------------------------------------------------------------------------
# Standard suites (the `gradcheck` CLI command)
# ---------------------------------------------------------------------------

def _suite_elementwise(n: int, rng) -> GradCheckResult:
    a = T.Tensor(rng.uniform(0.3, 1.5, size=(4, 5)), requires_grad=True)
    b = T.Tensor(rng.uniform(0.3, 1.5, size=(4, 5)), requires_grad=True)
    c = T.Tensor(rng.uniform(-1.0, 1.0, size=(5, 6)), requires_grad=True)

    def loss():
        x = T.mul(T.sigmoid(a), T.silu(b))
        x = T.add(x, T.sqrt(T.clamp(T.mul(a, b), 1e-3, 10.0)))
        y = T.matmul(x, c)
        y = T.softmax(y, axis=1)
        y = T.permute_axes(y, (1, 0))
        z = T.concat_channels(y, T.relu(y))
        m = T.mean_over(z, axes=(1,))
        mx = T.max_over(z, axes=(1,))
        w = T.add(T.expand(T.reshape(m, (z.shape[0], 1)), z.shape), z)
        lg = T.log(T.clamp(T.mul(w, w), 1e-4, 100.0))
        return T.add(T.sum_over(T.mul(lg, lg)), T.sum_over(T.mul(mx, mx)))

    return check_gradients("elementwise-suite", loss, [a, b, c], n, rng)


def _suite_conv(n: int, rng) -> GradCheckResult:
    x = T.Tensor(rng.normal(size=(2, 6, 6, 6)), requires_grad=True)
    w1 = T.Tensor(0.3 * rng.normal(size=(3, 2, 3, 3, 3)), requires_grad=True)
    b1 = T.Tensor(0.1 * rng.normal(size=(3,)), requires_grad=True)
    w2 = T.Tensor(0.3 * rng.normal(size=(2, 3, 2, 2, 2)), requires_grad=True)
    b2 = T.Tensor(0.1 * rng.normal(size=(2,)), requires_grad=True)

    def loss():
        y = T.conv3d(x, w1, b1, stride=1, padding=1)
        y = T.silu(y)
        y = T.conv3d(y, w2, b2, stride=2, padding=0)
        return T.sum_over(T.mul(y, y))

    return check_gradients("conv3d", loss, [x, w1, b1, w2, b2], n, rng)


def _suite_maxpool(n: int, rng) -> GradCheckResult:
    x = T.Tensor(rng.normal(size=(2, 4, 4, 4)), requires_grad=True)

    def loss():
        return T.sum_over(T.mul(T.maxpool3d(x, 2, 2), T.maxpool3d(x, 2, 2)))

    return check_gradients("maxpool3d", loss, [x], n, rng)


def _suite_kan(n: int, rng) -> GradCheckResult:
    from .bspline import SplineGrid
    from .kan import kan_forward, kan_network_init

    net = kan_network_init([4, 6, 4], SplineGrid(grid_size=5), np.random.default_rng(7))
    x = T.Tensor(rng.uniform(-0.9, 0.9, size=(3, 4)), requires_grad=True)

    def loss():
        y = kan_forward(x, net)
        return T.sum_over(T.mul(y, y))

    return check_gradients("kan-network", loss, [x] + net.parameters(), n, rng)


def _suite_kansc(n: int, rng) -> GradCheckResult:
    from .attention import kansc_forward, kansc_init
    from .backbone import FeatureMap
    from .bspline import SplineGrid

    params = kansc_init(4, np.random.default_rng(5), grid=SplineGrid(grid_size=5))
    x = T.Tensor(rng.normal(size=(4, 2, 2, 2)), requires_grad=True)

    def loss():
        y = kansc_forward(FeatureMap("axial", x), params).tensor
        return T.sum_over(T.mul(y, y))

    return check_gradients("kansc-attention", loss, [x] + params.parameters(), n, rng)


def _suite_head(n: int, rng) -> GradCheckResult:
    from .model import HeadParams, head_forward

    c, d, npos = 6, 4, 5
    head = HeadParams(
        T.Tensor(rng.normal(size=(d, c)), requires_grad=True),
        T.Tensor(rng.normal(size=(d,)), requires_grad=True),
        T.Tensor(rng.normal(size=(c, 2)), requires_grad=True),
    )
    f = T.Tensor(rng.normal(size=(c, npos)), requires_grad=True)

    def loss():
        out = head_forward(f, head)
        return T.add(
            T.sum_over(T.mul(out.global_logits, out.global_logits)),
            T.sum_over(T.mul(out.patch_weights, out.patch_weights)),
        )

    return check_gradients("fusion-head", loss, [f] + head.parameters(), n, rng)


def _suite_losses(n: int, rng) -> GradCheckResult:
    from .losses import ce_loss, slc_loss

    logits = T.Tensor(rng.normal(size=(15, 2)), requires_grad=True)
    weights_raw = T.Tensor(rng.normal(size=(15,)), requires_grad=True)
    probs_raw = T.Tensor(rng.normal(size=(8,)), requires_grad=True)
    labels = [0, 1, 1, 0, 1, 0, 0, 1]

    def loss():
        ce = ce_loss(T.sigmoid(probs_raw), labels)
        slc = slc_loss(T.sigmoid(weights_raw), logits, 1)
        return T.add(ce, slc)

    return check_gradients("losses", loss, [logits, weights_raw, probs_raw], n, rng)


def _suite_end_to_end(n: int, rng, dim: int = 32) -> GradCheckResult:
    from .losses import ce_loss, slc_loss
    from .model import ModelConfig, init_model, model_forward

    params = init_model(ModelConfig(), seed=11)
    vol = T.Tensor(rng.normal(size=(1, dim, dim, dim)))

    def loss():
        out = model_forward(vol, params)
        p1 = T.slice_channels(T.softmax(out.global_logits, axis=0), 1, 2)
        ce = ce_loss(p1, [1])
        slc = slc_loss(out.patch_weights, out.patch_logits, 1)
        return T.add(ce, T.mul(slc, 0.2))

    return check_gradients("end-to-end-model", loss, params.parameters(), n, rng)


def run_suites(scale: str = "tiny", seed: int = 0) -> list[GradCheckResult]:
    """Run every gradcheck suite; `scale` controls sample counts and the
    end-to-end input size."""
    if scale not in ("tiny", "small"):
        raise ValueError(f"unknown scale {scale!r}")
    n = 50 if scale == "tiny" else 100
    rng = np.random.default_rng(seed)
    results = [
        _suite_elementwise(n, rng),
        _suite_conv(n, rng),
        _suite_maxpool(n, rng),
        _suite_kan(n, rng),
        _suite_kansc(n, rng),
        _suite_head(n, rng),
        _suite_losses(n, rng),
        _suite_end_to_end(n, rng, dim=32 if scale == "tiny" else 64),
    ]
    return results
