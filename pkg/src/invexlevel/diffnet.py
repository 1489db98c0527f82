"""Float64 network primitives: strict ICNN, monotone scalar head, masked
autoregressive bijection, and a plain MLP for baselines.

All modules hold torch float64 parameters and never touch the global RNG:
every randomised constructor takes an explicit ``torch.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import torch
import torch.nn.functional as F
from torch import nn

Tensor = torch.Tensor

DTYPE = torch.float64


def require_finite(x: Tensor, name: str = "input") -> Tensor:
    """Reject NaN/Inf at the public entry points."""
    if not torch.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite entries")
    return x


def as_batch(x, dim: int, name: str = "x") -> tuple[Tensor, bool]:
    """Coerce to a finite [B, dim] float64 tensor.

    Returns the batch and a flag telling whether the input was a single
    point (so callers can squeeze the result back).
    """
    t = torch.as_tensor(x, dtype=DTYPE)
    single = t.ndim == 1
    if single:
        t = t.unsqueeze(0)
    if t.ndim != 2 or t.shape[1] != dim:
        raise ValueError(f"{name} must have shape [{dim}] or [B, {dim}], got {tuple(t.shape)}")
    require_finite(t, name)
    return t, single


def reparam_positive(raw):
    """Map an unconstrained real to a strictly positive one via softplus."""
    if isinstance(raw, torch.Tensor):
        return F.softplus(raw)
    return float(F.softplus(torch.as_tensor(raw, dtype=DTYPE)))


def reparam_positive_inverse(value):
    """Inverse of reparam_positive, stable for small and large values."""
    t = torch.as_tensor(value, dtype=DTYPE)
    if (t <= 0).any():
        raise ValueError("reparam_positive_inverse needs a positive value")
    out = torch.where(t > 20.0, t + torch.log1p(-torch.exp(-t)), torch.log(torch.expm1(t)))
    if isinstance(value, torch.Tensor):
        return out
    return float(out)


def _uniform_param(shape, bound: float, generator: torch.Generator) -> nn.Parameter:
    t = torch.empty(*shape, dtype=DTYPE)
    with torch.no_grad():
        t.uniform_(-bound, bound, generator=generator)
    return nn.Parameter(t)


class Icnn(nn.Module):
    """Input-convex network, strictly convex in z by construction.

    Hidden recursion c_{i+1} = softplus(W_i^c c_i + W_i^z z + b_i) with the
    hidden-to-hidden weights kept strictly positive through a softplus
    reparameterisation, plus a final affine layer (positive weight on the
    last hidden vector, free weight on z).
    """

    def __init__(self, input_dim: int, widths: Sequence[int] = (512, 512, 512, 512), *,
                 generator: torch.Generator):
        super().__init__()
        if input_dim < 1 or any(w < 1 for w in widths) or len(widths) < 1:
            raise ValueError("input_dim and all widths must be positive")
        self.input_dim = input_dim
        self.widths = tuple(int(w) for w in widths)

        def positive_raw(shape, fan):
            # effective entries start around 1/fan with some spread
            u = torch.empty(*shape, dtype=DTYPE)
            with torch.no_grad():
                u.uniform_(0.5 / fan, 1.5 / fan, generator=generator)
            return nn.Parameter(reparam_positive_inverse(u))

        d = input_dim
        ws = self.widths
        self.wz = nn.ParameterList()
        self.bias = nn.ParameterList()
        self.raw_wc = nn.ParameterList()  # one per layer after the first, plus output
        self.wz.append(_uniform_param((ws[0], d), 1.0 / math.sqrt(d), generator))
        self.bias.append(_uniform_param((ws[0],), 1.0 / math.sqrt(d), generator))
        for i in range(1, len(ws)):
            fan = ws[i - 1] + d
            self.raw_wc.append(positive_raw((ws[i], ws[i - 1]), ws[i - 1]))
            self.wz.append(_uniform_param((ws[i], d), 1.0 / math.sqrt(fan), generator))
            self.bias.append(_uniform_param((ws[i],), 1.0 / math.sqrt(fan), generator))
        fan = ws[-1] + d
        self.raw_wc.append(positive_raw((1, ws[-1]), ws[-1]))
        self.wz_out = _uniform_param((1, d), 1.0 / math.sqrt(fan), generator)
        self.b_out = _uniform_param((1,), 1.0 / math.sqrt(fan), generator)

    def forward(self, z: Tensor) -> Tensor:
        c = F.softplus(z @ self.wz[0].t() + self.bias[0])
        for i in range(1, len(self.widths)):
            pre = c @ F.softplus(self.raw_wc[i - 1]).t() + z @ self.wz[i].t() + self.bias[i]
            c = F.softplus(pre)
        out = c @ F.softplus(self.raw_wc[-1]).t() + z @ self.wz_out.t() + self.b_out
        return out.squeeze(-1)


class MonotoneHead(nn.Module):
    """Strictly increasing scalar map g(t) = a*t + b*tanh(t), a, b > 0."""

    def __init__(self, a: float = 1.0, b: float = 1.0):
        super().__init__()
        self.raw_a = nn.Parameter(torch.as_tensor(reparam_positive_inverse(a), dtype=DTYPE))
        self.raw_b = nn.Parameter(torch.as_tensor(reparam_positive_inverse(b), dtype=DTYPE))

    @property
    def a(self) -> Tensor:
        return reparam_positive(self.raw_a)

    @property
    def b(self) -> Tensor:
        return reparam_positive(self.raw_b)

    def forward(self, t: Tensor) -> Tensor:
        return self.a * t + self.b * torch.tanh(t)


def _made_masks(dim: int, hidden: int) -> tuple[Tensor, Tensor]:
    """Binary masks making a one-hidden-layer net autoregressive.

    Output unit j may depend on inputs strictly before j, so the first
    coordinate's conditioner is a pure bias.
    """
    deg_in = torch.arange(1, dim + 1)
    if dim > 1:
        deg_hid = torch.arange(hidden) % (dim - 1) + 1
    else:
        deg_hid = torch.zeros(hidden, dtype=torch.long)
    deg_out = torch.arange(1, dim + 1).repeat(2)  # shift block then log-scale block
    mask_in = (deg_hid.unsqueeze(1) >= deg_in.unsqueeze(0)).to(DTYPE)
    mask_out = (deg_out.unsqueeze(1) > deg_hid.unsqueeze(0)).to(DTYPE)
    return mask_in, mask_out


class MaskedLinear(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, mask: Tensor, *,
                 generator: torch.Generator, zero_init: bool = False):
        super().__init__()
        if zero_init:
            self.weight = nn.Parameter(torch.zeros(out_dim, in_dim, dtype=DTYPE))
            self.bias = nn.Parameter(torch.zeros(out_dim, dtype=DTYPE))
        else:
            bound = 1.0 / math.sqrt(in_dim)
            self.weight = _uniform_param((out_dim, in_dim), bound, generator)
            self.bias = _uniform_param((out_dim,), bound, generator)
        self.register_buffer("mask", mask.to(DTYPE))

    def forward(self, x: Tensor) -> Tensor:
        return x @ (self.weight * self.mask).t() + self.bias


class FlowLayer(nn.Module):
    """One affine autoregressive step followed by a dimension reversal.

    z_j = x_j * exp(s_j(x_<j)) + mu_j(x_<j), with (mu, s) from a masked
    one-hidden-layer ELU conditioner whose output starts at zero, so the
    layer is the identity (up to the reversal) at initialisation.
    """

    def __init__(self, dim: int, hidden: int = 128, *, generator: torch.Generator):
        super().__init__()
        self.dim = dim
        mask_in, mask_out = _made_masks(dim, hidden)
        self.lin1 = MaskedLinear(dim, hidden, mask_in, generator=generator)
        self.lin2 = MaskedLinear(hidden, 2 * dim, mask_out, generator=generator, zero_init=True)

    def _conditioner(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = F.elu(self.lin1(x))
        out = self.lin2(h)
        return out[:, :self.dim], out[:, self.dim:]

    def forward(self, x: Tensor) -> Tensor:
        mu, s = self._conditioner(x)
        z = x * torch.exp(s) + mu
        return z.flip(-1)

    def inverse(self, z: Tensor) -> Tensor:
        # solve coordinates in order; mu_j, s_j only read x_<j, so the
        # not-yet-solved columns can stay zero during the sweep
        y = z.flip(-1)
        x = torch.zeros_like(y)
        for j in range(self.dim):
            mu, s = self._conditioner(x)
            xj = (y[:, j:j + 1] - mu[:, j:j + 1]) * torch.exp(-s[:, j:j + 1])
            x = torch.cat([x[:, :j], xj, torch.zeros_like(y[:, j + 1:])], dim=1)
        return x


class AutoregressiveFlow(nn.Module):
    """Stack of K FlowLayers, K even so the reversals cancel and the
    zero-initialised flow is exactly the identity map."""

    def __init__(self, dim: int, n_layers: int = 4, hidden: int = 128, *,
                 generator: torch.Generator):
        super().__init__()
        if n_layers % 2 != 0 or n_layers < 2:
            raise ValueError("n_layers must be even and >= 2")
        self.dim = dim
        self.layers = nn.ModuleList(
            FlowLayer(dim, hidden, generator=generator) for _ in range(n_layers))

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def inverse(self, z: Tensor) -> Tensor:
        for layer in reversed(self.layers):
            z = layer.inverse(z)
        return z


class Mlp(nn.Module):
    """Plain fully-connected net; the last layer is linear."""

    ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
        "relu": torch.relu,
        "elu": F.elu,
        "softplus": F.softplus,
        "tanh": torch.tanh,
    }

    def __init__(self, sizes: Sequence[int], activation: str = "relu", *,
                 generator: torch.Generator):
        super().__init__()
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if activation not in self.ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.activation = activation
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            self.weights.append(_uniform_param((fan_out, fan_in), bound, generator))
            self.biases.append(_uniform_param((fan_out,), bound, generator))

    def forward(self, x: Tensor) -> Tensor:
        act = self.ACTIVATIONS[self.activation]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w.t() + b
            if i < len(self.weights) - 1:
                x = act(x)
        return x


# Functional entry points with input validation.

def icnn_forward(icnn: Icnn, z) -> Tensor:
    batch, single = as_batch(z, icnn.input_dim, "z")
    out = icnn(batch)
    return out[0] if single else out


def monotone_forward(head: MonotoneHead, t) -> Tensor:
    tt = torch.as_tensor(t, dtype=DTYPE)
    require_finite(tt, "t")
    return head(tt)


def flow_forward(flow: AutoregressiveFlow, x) -> Tensor:
    batch, single = as_batch(x, flow.dim, "x")
    out = flow(batch)
    return out[0] if single else out


def flow_inverse(flow: AutoregressiveFlow, z) -> Tensor:
    batch, single = as_batch(z, flow.dim, "z")
    out = flow.inverse(batch)
    return out[0] if single else out


@dataclass
class GradResult:
    """Value and reverse-mode gradients for each requested input."""
    value: Tensor
    gradients: tuple[Tensor, ...]


def backward(fn: Callable[..., Tensor], inputs, cotangent: Tensor | None = None) -> GradResult:
    """Reverse-mode gradients of fn at the given inputs.

    fn must map the inputs to a tensor; the cotangent defaults to ones
    (plain gradient for scalar outputs, sum-of-outputs pullback otherwise).
    """
    single = isinstance(inputs, torch.Tensor)
    xs = (inputs,) if single else tuple(inputs)
    leaves = []
    for x in xs:
        t = torch.as_tensor(x, dtype=DTYPE)
        require_finite(t, "input")
        leaves.append(t.detach().clone().requires_grad_(True))
    value = fn(*leaves)
    cot = torch.ones_like(value) if cotangent is None else cotangent
    grads = torch.autograd.grad(value, leaves, grad_outputs=cot)
    return GradResult(value=value.detach(), gradients=tuple(g.detach() for g in grads))
