"""Attention blocks: channel/spatial reweighting (CBAM), a non-local block
whose similarity is a Gaussian kernel over pairwise feature distances, and the
cascaded multi-round group attention that combines the two.

All blocks preserve input shape. Blocks optionally report their attention maps
through a :class:`MapSink` so training tools can export them as images.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .layers import (
    Conv2d,
    Linear,
    Module,
    channel_max,
    channel_mean,
    global_avg_pool,
    global_max_pool,
)
from .tensor import (
    ConfigError,
    DimensionError,
    Tensor,
    UsageError,
    add,
    apply_op,
    concat,
    div,
    exp,
    group_split,
    matmul,
    mul,
    neg,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    sum_,
    transpose,
)


class MapSink:
    """Collects named attention maps (as plain arrays) during a forward pass."""

    def __init__(self):
        self.maps: dict[str, np.ndarray] = {}

    def add(self, name: str, data: np.ndarray) -> None:
        self.maps[name] = np.array(data)


# ---------------------------------------------------------------------------
# Gaussian kernel similarity

def gaussian_similarity(q: Tensor, kv: Tensor, sigma: Tensor) -> Tensor:
    """exp(-||q - kv||^2 / (2 sigma^2)) for two equal-length vectors.

    Symmetric in its arguments, equals 1 exactly when q == kv, and decays
    monotonically with distance.
    """
    if q.data.shape != kv.data.shape:
        raise DimensionError(f"similarity inputs differ in shape: {q.data.shape} vs {kv.data.shape}")
    if float(sigma.data) <= 0:
        raise ConfigError("sigma must be positive")
    d = q - kv
    sq = sum_(mul(d, d))
    return exp(neg(div(sq, scale(mul(sigma, sigma), 2.0))))


def pairwise_sqdist(q: Tensor, k: Tensor) -> Tensor:
    """Squared distances between all row pairs: (b,P,c) x (b,Q,c) -> (b,P,Q).

    Uses the ||q||^2 + ||k||^2 - 2 q.k expansion; results are clamped at zero
    because rounding in the expansion can produce tiny negative values.
    """
    qd, kd = q.data, k.data
    if qd.ndim != 3 or kd.ndim != 3 or qd.shape[0] != kd.shape[0] or qd.shape[2] != kd.shape[2]:
        raise DimensionError(f"pairwise_sqdist expects (b,P,c)/(b,Q,c), got {qd.shape} vs {kd.shape}")
    qq = (qd * qd).sum(axis=2)[:, :, None]
    kk = (kd * kd).sum(axis=2)[:, None, :]
    raw = qq + kk - 2.0 * np.matmul(qd, kd.swapaxes(1, 2))
    # rounding in the expansion leaves +/- ulp residue on identical rows;
    # force those to exactly zero so self-similarity is exactly 1
    equal_rows = np.all(qd[:, :, None, :] == kd[:, None, :, :], axis=3)
    out = np.maximum(raw, 0.0)
    out[equal_rows] = 0.0
    mask = out > 0.0

    def back(g):
        gm = g * mask
        dq = 2.0 * (gm.sum(axis=2)[:, :, None] * qd - np.matmul(gm, kd))
        dk = 2.0 * (gm.sum(axis=1)[:, :, None] * kd - np.matmul(gm.swapaxes(1, 2), qd))
        return dq, dk

    return apply_op((q, k), out, back)


def gaussian_attention_matrix(f_q: Tensor, f_k: Tensor, sigma: Tensor) -> Tensor:
    """Attention weights A[(i,j),(m,n)] = exp(-||q_ij - k_mn||^2 / 2 sigma^2).

    f_q, f_k are (b, c, h, w) feature maps sharing the channel count; the
    output is (b, h_q*w_q, h_k*w_k) with entries in (0, 1].
    """
    if float(sigma.data) <= 0:
        raise ConfigError("sigma must be positive")
    if f_q.data.shape[1] != f_k.data.shape[1]:
        raise DimensionError("query/key channel counts differ")
    b, c, hq, wq = f_q.data.shape
    hk, wk = f_k.data.shape[2], f_k.data.shape[3]
    qrows = transpose(reshape(f_q, (b, c, hq * wq)), (0, 2, 1))
    krows = transpose(reshape(f_k, (b, c, hk * wk)), (0, 2, 1))
    dist = pairwise_sqdist(qrows, krows)
    return exp(neg(div(dist, scale(mul(sigma, sigma), 2.0))))


# ---------------------------------------------------------------------------
# CBAM

class ChannelAttention(Module):
    """sigmoid(MLP(avgpool F) + MLP(maxpool F)), one weight per channel.

    The two pooling paths share the MLP. Hidden width is channels / ratio
    (at least 1)."""

    def __init__(self, channels: int, ratio: int = 4, rng: Optional[np.random.Generator] = None):
        hidden = max(1, channels // ratio)
        self.channels = channels
        self.fc1 = Linear(channels, hidden, rng=rng)
        self.fc2 = Linear(hidden, channels, rng=rng)

    def _mlp(self, pooled: Tensor) -> Tensor:
        b, c = pooled.data.shape[0], pooled.data.shape[1]
        flat = reshape(pooled, (b, c))
        return self.fc2(relu(self.fc1(flat)))

    def __call__(self, x: Tensor, sink: Optional[MapSink] = None, name: str = "") -> Tensor:
        b, c = x.data.shape[0], x.data.shape[1]
        logits = add(self._mlp(global_avg_pool(x)), self._mlp(global_max_pool(x)))
        gate = reshape(sigmoid(logits), (b, c, 1, 1))
        if sink is not None:
            sink.add(f"{name}channel_map", gate.data)
        return gate


class SpatialAttention(Module):
    """sigmoid(conv7x7(cat(mean_c F, max_c F))): one weight per spatial site."""

    def __init__(self, kernel: int = 7, rng: Optional[np.random.Generator] = None):
        self.conv = Conv2d(2, 1, kernel, stride=1, padding=kernel // 2, rng=rng)

    def __call__(self, x: Tensor, sink: Optional[MapSink] = None, name: str = "") -> Tensor:
        stacked = concat([channel_mean(x), channel_max(x)], 1)
        gate = sigmoid(self.conv(stacked))
        if sink is not None:
            sink.add(f"{name}spatial_map", gate.data)
        return gate


class Cbam(Module):
    """Channel-then-spatial gating; output shape equals input shape."""

    def __init__(self, channels: int, ratio: int = 4, spatial_kernel: int = 7, rng: Optional[np.random.Generator] = None):
        self.channel = ChannelAttention(channels, ratio, rng=rng)
        self.spatial = SpatialAttention(spatial_kernel, rng=rng)

    def __call__(self, x: Tensor, sink: Optional[MapSink] = None, name: str = "") -> Tensor:
        refined = mul(x, self.channel(x, sink, name))
        return mul(refined, self.spatial(refined, sink, name))


# ---------------------------------------------------------------------------
# Gaussian non-local block

class GaussianNonLocal(Module):
    """Non-local attention with Gaussian-kernel similarity and residual output.

    1x1 convs produce queries/keys (channels/2 wide) and values (full width);
    softmax over key positions turns each query row into a distribution.
    """

    def __init__(
        self,
        channels: int,
        sigma: float = 1.0,
        learnable_sigma: bool = False,
        rng: Optional[np.random.Generator] = None,
    ):
        if sigma <= 0:
            raise ConfigError("sigma must be positive")
        inner = max(1, channels // 2)
        self.channels = channels
        self.conv_q = Conv2d(channels, inner, 1, rng=rng)
        self.conv_k = Conv2d(channels, inner, 1, rng=rng)
        self.conv_v = Conv2d(channels, channels, 1, rng=rng)
        self.sigma = Tensor(np.asarray(float(sigma)), requires_grad=learnable_sigma)

    def __call__(self, x: Tensor, sink: Optional[MapSink] = None, name: str = "") -> Tensor:
        b, c, h, w = x.data.shape
        if c != self.channels:
            raise DimensionError(f"expected {self.channels} channels, got {c}")
        weights = gaussian_attention_matrix(self.conv_q(x), self.conv_k(x), self.sigma)
        rows = softmax(weights, axis=2)
        if sink is not None:
            sink.add(f"{name}attention_rows", rows.data)
        values = transpose(reshape(self.conv_v(x), (b, c, h * w)), (0, 2, 1))
        attended = transpose(matmul(rows, values), (0, 2, 1))
        return add(x, reshape(attended, (b, c, h, w)))


# ---------------------------------------------------------------------------
# cascaded group attention

class GroupStep(Module):
    """One group's slice of a round: conv_sub, CBAM + Gaussian non-local over
    the (possibly state-concatenated) input, then a tail conv back to d."""

    def __init__(self, d: int, first: bool, sigma: float, learnable_sigma: bool, ratio: int, rng):
        width = d if first else 2 * d
        self.first = first
        self.conv_sub = Conv2d(d, d, 1, rng=rng)
        self.cbam = Cbam(width, ratio, rng=rng)
        self.nonlocal_ = GaussianNonLocal(width, sigma, learnable_sigma, rng=rng)
        self.conv_tail = Conv2d(2 * width, d, 1, rng=rng)


class CascadeAttention(Module):
    """Multi-round grouped attention over channel groups.

    Each round splits the input into ``groups`` channel groups; group i sees
    its conv_sub output concatenated with the previous group's state, runs
    CBAM and the Gaussian non-local block in parallel, and compresses back to
    the group width. Round outputs are concatenated and fused with the round
    input to seed the next round. Every group and round owns its own
    parameters. The final round's concatenated output (same channel count as
    the input) is the block output.
    """

    def __init__(
        self,
        channels: int,
        groups: int,
        rounds: int,
        sigma: float = 1.0,
        learnable_sigma: bool = False,
        ratio: int = 4,
        rng: Optional[np.random.Generator] = None,
    ):
        if groups < 1 or channels % groups != 0:
            raise ConfigError(f"channels {channels} not divisible by groups {groups}")
        if rounds < 1:
            raise ConfigError("rounds must be >= 1")
        d = channels // groups
        self.channels = channels
        self.groups = groups
        self.rounds = rounds
        self.steps = [
            [GroupStep(d, i == 0, sigma, learnable_sigma, ratio, rng) for i in range(groups)]
            for _ in range(rounds)
        ]
        self.fusions = [Conv2d(2 * channels, channels, 1, rng=rng) for _ in range(rounds - 1)]

    def group_step(
        self,
        i: int,
        x_sub: Tensor,
        z_prev: Optional[Tensor],
        round_index: int = 0,
        sink: Optional[MapSink] = None,
        tag: str = "",
    ) -> Tensor:
        """Run group i of a round on its conv_sub output and threaded state."""
        if (i == 0) != (z_prev is None):
            raise UsageError("z_prev must be given exactly for groups after the first")
        step = self.steps[round_index][i]
        t = x_sub if z_prev is None else concat([z_prev, x_sub], 1)
        name = f"{tag}round{round_index}.group{i}."
        a = step.cbam(t, sink, name)
        b = step.nonlocal_(t, sink, name)
        return step.conv_tail(concat([a, b], 1))

    def __call__(self, x: Tensor, sink: Optional[MapSink] = None, tag: str = "") -> Tensor:
        if x.data.ndim != 4 or x.data.shape[1] != self.channels:
            raise DimensionError(f"expected (b,{self.channels},h,w), got {x.data.shape}")
        current = x
        z_all = None
        for j in range(self.rounds):
            if j > 0:
                current = self.fusions[j - 1](concat([z_all, current], 1))
            parts = group_split(current, self.groups)
            z = None
            zs = []
            for i in range(self.groups):
                x_sub = self.steps[j][i].conv_sub(parts[i])
                z = self.group_step(i, x_sub, z, j, sink, tag)
                zs.append(z)
            z_all = concat(zs, 1)
        return z_all
