"""Selective state-space core with a sequential reference and a parallel scan.

Shapes used throughout: inputs ``x`` are (..., T, E) for E channels, each
channel carries an N-dimensional diagonal state. The recurrence per channel is

    h_t = exp(dt_t * A) * h_{t-1} + (expm1(dt_t * A) / A) * B_t * x_t
    y_t = <C_t, h_t> + D * x_t

with B_t, C_t and dt_t computed from x_t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn


class SsmWeights(NamedTuple):
    A: torch.Tensor  # (E, N), strictly negative
    W_B: torch.Tensor  # (N, E)
    W_C: torch.Tensor  # (N, E)
    W_delta: torch.Tensor  # (E, E)
    b_delta: torch.Tensor  # (E,)
    D: torch.Tensor  # (E,)


@dataclass
class ScanStats:
    """Counts applications of the affine combine; pass one in to instrument a scan."""

    combines: int = 0


def discretize(A: torch.Tensor, B: torch.Tensor, delta: torch.Tensor):
    """Zero-order hold for a diagonal state matrix.

    ``A`` is (E, N), ``B`` is (..., N) and ``delta`` is (..., E). Returns
    (A_bar, B_bar), both (..., E, N).
    """
    if not torch.all(delta > 0):
        raise ValueError("time step must be strictly positive")
    if torch.any(A == 0):
        raise ValueError("state matrix diagonal must be non-zero")
    dA = delta.unsqueeze(-1) * A
    A_bar = torch.exp(dA)
    # (dA)^-1 (e^dA - 1) dt B == expm1(dA) / A * B for diagonal A.
    B_bar = torch.expm1(dA) / A * B.unsqueeze(-2)
    return A_bar, B_bar


def selective_params(x: torch.Tensor, w: SsmWeights):
    """Input-dependent (B, C, delta) for inputs shaped (..., E)."""
    if x.shape[-1] != w.W_B.shape[1]:
        raise ValueError(f"input width {x.shape[-1]} does not match weights ({w.W_B.shape[1]})")
    B = x @ w.W_B.T
    C = x @ w.W_C.T
    delta = F.softplus(x @ w.W_delta.T + w.b_delta)
    return B, C, delta


def _coefficients(x: torch.Tensor, w: SsmWeights):
    B, C, delta = selective_params(x, w)
    A_bar, B_bar = discretize(w.A, B, delta)
    return A_bar, B_bar * x.unsqueeze(-1), C


def _raise_nonfinite(y: torch.Tensor, what: str = "output"):
    bad = ~torch.isfinite(y)
    if bad.any():
        t = int(bad.movedim(-2, 0).reshape(y.shape[-2], -1).any(dim=1).nonzero()[0])
        raise FloatingPointError(f"non-finite scan {what} at position {t}")


def scan_sequential(x: torch.Tensor, w: SsmWeights, stats: ScanStats | None = None) -> torch.Tensor:
    """Reference left-to-right recurrence, one step per position."""
    if x.shape[-2] < 1:
        raise ValueError("sequence must have at least one position")
    _raise_nonfinite(x, "input")
    a, b, C = _coefficients(x, w)
    h = torch.zeros_like(b[..., 0, :, :])
    ys = []
    for t in range(x.shape[-2]):
        h = a[..., t, :, :] * h + b[..., t, :, :]
        ys.append((h * C[..., t, None, :]).sum(-1))
        if stats is not None:
            stats.combines += 1
    y = torch.stack(ys, dim=-2) + w.D * x
    _raise_nonfinite(y)
    return y


def compose(later, earlier):
    """Compose affine maps h -> a h + b; ``earlier`` is applied first."""
    a2, b2 = later
    a1, b1 = earlier
    return a2 * a1, a2 * b1 + b2


def prefix_states(a: torch.Tensor, b: torch.Tensor, stats: ScanStats | None = None) -> torch.Tensor:
    """Inclusive scan of h_t = a_t h_{t-1} + b_t from h_0 = 0 along dim 0.

    Work-efficient up-sweep / down-sweep: the up-sweep reduces adjacent pairs
    level by level (an odd tail element is carried up unchanged); the
    down-sweep hands each node the state entering its span. The tree shape
    depends only on the length, so results are schedule independent.
    """
    levels = [(a, b)]
    while a.shape[0] > 1:
        n = a.shape[0]
        m = n - n % 2
        pa, pb = compose((a[1:m:2], b[1:m:2]), (a[0:m:2], b[0:m:2]))
        if n % 2:
            pa = torch.cat([pa, a[-1:]])
            pb = torch.cat([pb, b[-1:]])
        if stats is not None:
            stats.combines += m // 2
        a, b = pa, pb
        levels.append((a, b))

    # State entering the root span is h_0 = 0.
    enter = torch.zeros_like(b)
    for a, b in reversed(levels[:-1]):
        n = a.shape[0]
        m = n - n % 2
        left = enter[: m // 2]
        right = a[0:m:2] * left + b[0:m:2]
        if stats is not None:
            stats.combines += m // 2
        nxt = torch.stack([left, right], dim=1).reshape(m, *b.shape[1:])
        if n % 2:
            nxt = torch.cat([nxt, enter[-1:]])
        enter = nxt
    if stats is not None:
        stats.combines += a.shape[0]
    return a * enter + b


class SelectiveScan(torch.autograd.Function):
    """Fused discretize + scan + readout with time on the leading axis.

    Inputs: x, delta (T, batch, E); A (E, N); B, C (T, batch, N); D (E,).
    The backward pass is the adjoint recurrence lam_t = dL/dh_t + a_{t+1} lam_{t+1},
    evaluated with :func:`prefix_states` on the reversed sequence. Only the
    states h are kept between passes.
    """

    @staticmethod
    def forward(ctx, x, delta, A, B, C, D):
        dA = delta.unsqueeze(-1) * A
        coef = torch.expm1(dA) / A
        h = prefix_states(torch.exp(dA), coef * B.unsqueeze(-2) * x.unsqueeze(-1))
        ctx.save_for_backward(x, delta, A, B, C, D, h)
        return (h * C.unsqueeze(-2)).sum(-1) + D * x

    @staticmethod
    def backward(ctx, gy):
        x, delta, A, B, C, D, h = ctx.saved_tensors
        dA = delta.unsqueeze(-1) * A
        a = torch.exp(dA)
        coef = torch.expm1(dA) / A
        gh = gy.unsqueeze(-1) * C.unsqueeze(-2)
        a_next = torch.cat([a[1:], torch.zeros_like(a[:1])])
        lam = prefix_states(a_next.flip(0), gh.flip(0)).flip(0)
        h_prev = torch.cat([torch.zeros_like(h[:1]), h[:-1]])
        ga = lam * h_prev
        lbx = lam * B.unsqueeze(-2) * x.unsqueeze(-1)
        # d a/d delta = A a, d coef/d delta = a; d a/d A = delta a, d coef/d A = (delta a - coef) / A
        g_delta = (a * (ga * A + lbx)).sum(-1)
        dd = delta.unsqueeze(-1)
        g_A = (dd * a * (ga + lbx / A) - lbx * coef / A).sum((0, 1))
        lc = lam * coef
        g_B = (lc * x.unsqueeze(-1)).sum(-2)
        g_x = (lc * B.unsqueeze(-2)).sum(-1) + D * gy
        g_C = (gy.unsqueeze(-1) * h).sum(-2)
        g_D = (gy * x).sum((0, 1))
        return g_x, g_delta, g_A, g_B, g_C, g_D


def scan_parallel(x: torch.Tensor, w: SsmWeights, stats: ScanStats | None = None) -> torch.Tensor:
    """Same outputs as :func:`scan_sequential`, computed with :func:`prefix_states`.

    With ``stats`` given the scan runs unfused so combine counts are recorded.
    """
    if x.shape[-2] < 1:
        raise ValueError("sequence must have at least one position")
    _raise_nonfinite(x, "input")
    B, C, delta = selective_params(x, w)
    if not torch.all(delta > 0):
        raise ValueError("time step must be strictly positive")
    if torch.any(w.A == 0):
        raise ValueError("state matrix diagonal must be non-zero")

    def time_first(t):
        return t.reshape(-1, *t.shape[-2:]).transpose(0, 1).contiguous()

    xt = time_first(x)
    if stats is None:
        y = SelectiveScan.apply(xt, time_first(delta), w.A, time_first(B), time_first(C), w.D)
    else:
        A_bar, B_bar = discretize(w.A, time_first(B), time_first(delta))
        h = prefix_states(A_bar, B_bar * xt.unsqueeze(-1), stats)
        y = (h * time_first(C).unsqueeze(-2)).sum(-1) + w.D * xt
    y = y.transpose(0, 1).reshape(x.shape)
    _raise_nonfinite(y)
    return y


def inverse_softplus(y: torch.Tensor) -> torch.Tensor:
    return y + torch.log(-torch.expm1(-y))


class SelectiveSSM(nn.Module):
    """Learnable selective SSM over E channels with N states each."""

    def __init__(self, width: int, state_size: int = 16, dt_min: float = 1e-3,
                 dt_max: float = 1e-1, scan: str = "parallel"):
        super().__init__()
        if scan not in ("parallel", "sequential"):
            raise ValueError(f"unknown scan {scan!r}")
        self.width = width
        self.state_size = state_size
        self.scan = scan
        A = torch.arange(1, state_size + 1, dtype=torch.float32).repeat(width, 1)
        self.A_log = nn.Parameter(torch.log(A))
        self.W_B = nn.Parameter(torch.empty(state_size, width))
        self.W_C = nn.Parameter(torch.empty(state_size, width))
        self.W_delta = nn.Parameter(torch.empty(width, width))
        self.b_delta = nn.Parameter(torch.empty(width))
        self.D = nn.Parameter(torch.ones(width))
        bound = 1.0 / math.sqrt(width)
        nn.init.uniform_(self.W_B, -bound, bound)
        nn.init.uniform_(self.W_C, -bound, bound)
        nn.init.uniform_(self.W_delta, -0.1 * bound, 0.1 * bound)
        dt = torch.exp(torch.empty(width).uniform_(math.log(dt_min), math.log(dt_max)))
        with torch.no_grad():
            self.b_delta.copy_(inverse_softplus(dt))

    @property
    def weights(self) -> SsmWeights:
        return SsmWeights(-torch.exp(self.A_log), self.W_B, self.W_C, self.W_delta, self.b_delta, self.D)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        fn = scan_parallel if self.scan == "parallel" else scan_sequential
        return fn(x, self.weights)
