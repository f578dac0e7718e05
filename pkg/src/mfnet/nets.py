"""Two-layer ReLU networks with frozen sign output layer and L-infinity projection.

f(x; W) = (1/sqrt(M)) * sum_m b_m * ReLU(x . W_m), with b_m in {-1, +1} fixed
at initialization and W clamped to the box ||W - W(0)||_inf <= R/sqrt(M).
The gradient in W is the feature map phi(x), rows (b_m/sqrt(M)) 1{x.W_m > 0} x;
the indicator is strict, so a pre-activation exactly at 0 contributes nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass
class TwoLayerNet:
    weights: np.ndarray        # (M, d) current parameters
    signs: np.ndarray          # (M,) in {-1.0, +1.0}, frozen
    init_weights: np.ndarray   # (M, d) frozen copy of W(0)
    radius: float              # R; box half-width is R/sqrt(M)

    @property
    def width(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def box_halfwidth(self) -> float:
        return self.radius / np.sqrt(self.width)

    def copy(self) -> "TwoLayerNet":
        return TwoLayerNet(
            weights=self.weights.copy(),
            signs=self.signs,
            init_weights=self.init_weights,
            radius=self.radius,
        )


def init_net(width: int, in_dim: int, rng: np.random.Generator, radius: float = 10.0) -> TwoLayerNet:
    """Rows of W(0) ~ Normal(0, I/d); signs uniform on {-1, +1}, then frozen."""
    if width < 1 or in_dim < 1:
        raise ValueError("width and in_dim must be >= 1")
    w0 = rng.normal(loc=0.0, scale=1.0 / np.sqrt(in_dim), size=(width, in_dim))
    signs = rng.choice(np.array([-1.0, 1.0]), size=width)
    return TwoLayerNet(
        weights=w0.copy(), signs=signs, init_weights=w0, radius=float(radius)
    )


def forward(net: TwoLayerNet, x: np.ndarray) -> float:
    if x.shape != (net.in_dim,):
        raise ValueError(f"input shape {x.shape} != ({net.in_dim},)")
    pre = net.weights @ x
    return float(net.signs @ np.maximum(pre, 0.0)) / np.sqrt(net.width)


def forward_many(net: TwoLayerNet, xs: np.ndarray) -> np.ndarray:
    """Vectorized forward over rows of xs, shape (n, d) -> (n,)."""
    pre = xs @ net.weights.T
    return (np.maximum(pre, 0.0) @ net.signs) / np.sqrt(net.width)


def feature_map(net: TwoLayerNet, x: np.ndarray) -> np.ndarray:
    """phi(x), shape (M, d); satisfies forward(net, x) == sum(phi * W)."""
    if x.shape != (net.in_dim,):
        raise ValueError(f"input shape {x.shape} != ({net.in_dim},)")
    pre = net.weights @ x
    gate = net.signs * (pre > 0.0)
    return np.outer(gate, x) / np.sqrt(net.width)


def expected_feature(
    net: TwoLayerNet, xs: np.ndarray, probs: np.ndarray
) -> np.ndarray:
    """sum_c probs[c] * phi(xs[c]), computed in one pass; shape (M, d)."""
    pre = xs @ net.weights.T                      # (C, M)
    gates = (pre > 0.0) * net.signs               # (C, M)
    weighted = gates * probs[:, None]             # (C, M)
    return (weighted.T @ xs) / np.sqrt(net.width)


def centered_feature(
    net: TwoLayerNet, x: np.ndarray, candidate_xs: np.ndarray, candidate_probs: np.ndarray
) -> np.ndarray:
    """phi(x) minus the exact candidate-averaged feature, shape (M, d)."""
    return feature_map(net, x) - expected_feature(net, candidate_xs, candidate_probs)


def project_ball(net: TwoLayerNet, proposed: np.ndarray) -> TwoLayerNet:
    """Clamp `proposed` into the box around W(0); exact Euclidean projection.

    Per-coordinate clamping minimizes the L2 distance over an L-infinity box,
    so no other projection step is needed.
    """
    if proposed.shape != net.weights.shape:
        raise ValueError("shape mismatch in projection")
    half = net.box_halfwidth
    clamped = np.clip(proposed, net.init_weights - half, net.init_weights + half)
    return TwoLayerNet(
        weights=clamped, signs=net.signs, init_weights=net.init_weights, radius=net.radius
    )


def clamp_into_ball_(net: TwoLayerNet) -> None:
    """In-place box clamp of net.weights (training hot path)."""
    half = net.box_halfwidth
    np.clip(
        net.weights, net.init_weights - half, net.init_weights + half, out=net.weights
    )


def encode_window(mu_props: Sequence, h_rows: Sequence[Sequence]) -> np.ndarray:
    """Canonical net input for a window: mu entries, then flattened h rows.

    The h block is divided by sqrt(window size) and the whole vector by
    sqrt(2), which keeps the l2 norm at most 1 (each half is at most
    1/sqrt(2)): the mu entries sum to <= 1, and each h row is a pmf or zero.
    """
    w = len(mu_props)
    if w == 0:
        raise ValueError("empty window")
    mu_part = np.asarray([float(v) for v in mu_props])
    h_part = np.asarray([float(v) for row in h_rows for v in row])
    if len(h_rows) != w:
        raise ValueError("h rows must match window size")
    vec = np.concatenate([mu_part, h_part / np.sqrt(w)])
    return vec / np.sqrt(2.0)


def window_input_dim(window_size: int, n_actions: int) -> int:
    return window_size * (1 + n_actions)
