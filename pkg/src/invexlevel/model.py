"""Property models and training.

Two model kinds share one interface: the invex model (autoregressive-flow
encoder whose decoder is its exact inverse, convex-plus-monotone property
decoder) and the cycle-consistency baseline (separate MLP encoder/decoder,
MLP property decoder). Both train under the same VAE objective; the cycle
penalty only does work for the baseline, since an exact-inverse decoder
makes it identically zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .diffnet import (
    DTYPE,
    AutoregressiveFlow,
    Icnn,
    MonotoneHead,
    Mlp,
    Tensor,
    as_batch,
    reparam_positive,
    reparam_positive_inverse,
    require_finite,
)

# architecture defaults, shared with the config snapshot test
INVEX_FLOW_LAYERS = 4
INVEX_FLOW_HIDDEN = 128
INVEX_FLOW_ACTIVATION = "elu"
INVEX_ICNN_WIDTHS = (512, 512, 512, 512)
INVEX_ICNN_ACTIVATION = "softplus"
BASELINE_HIDDEN = (1024, 1024)
BASELINE_PROPERTY_HIDDEN = (512, 512)
BASELINE_ACTIVATION = "relu"
SIGMA_INIT = 0.1

MODEL_KINDS = ("invex", "cycle-baseline")


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass
class LabelledDataset:
    """Inputs X [n, d] with scalar properties y [n]."""

    X: Tensor
    y: Tensor

    def __post_init__(self):
        self.X = torch.as_tensor(self.X, dtype=DTYPE)
        self.y = torch.as_tensor(self.y, dtype=DTYPE).reshape(-1)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X must be [n, d] with one y per row")
        if self.X.shape[0] == 0:
            raise ValueError("dataset is empty")
        require_finite(self.X, "X")
        require_finite(self.y, "y")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def take(self, idx: Tensor) -> "LabelledDataset":
        return LabelledDataset(self.X[idx], self.y[idx])


@dataclass
class TrainConfig:
    """Optimiser and objective settings; defaults follow the experiment setup."""

    lr: float = 1e-4
    batch_size: int = 250
    epochs: int = 2000
    beta0: float = 1.0
    anneal_factor: float = 0.99
    anneal_period: int = 30
    gamma: float = 0.01
    seed: int = 0
    z_box: tuple[float, float] = (-3.0, 3.0)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.beta0 < 0 or self.gamma < 0:
            raise ValueError("beta0 and gamma must be non-negative")
        if self.batch_size < 1 or self.epochs < 0 or self.anneal_period < 1:
            raise ValueError("invalid batch_size/epochs/anneal_period")
        if not self.z_box[0] < self.z_box[1]:
            raise ValueError("z_box must be an increasing pair")

    def beta_at(self, epoch: int) -> float:
        return self.beta0 * self.anneal_factor ** (epoch // self.anneal_period)


class _ScaledModel(nn.Module):
    """Shared plumbing: trainable noise scales and target de-standardisation."""

    def __init__(self):
        super().__init__()
        raw = reparam_positive_inverse(SIGMA_INIT)
        self.raw_sigma_z = nn.Parameter(torch.tensor(raw, dtype=DTYPE))
        self.raw_sigma_x = nn.Parameter(torch.tensor(raw, dtype=DTYPE))
        self.raw_sigma_y = nn.Parameter(torch.tensor(raw, dtype=DTYPE))
        self.register_buffer("y_mean", torch.tensor(0.0, dtype=DTYPE))
        self.register_buffer("y_stdev", torch.tensor(1.0, dtype=DTYPE))

    @property
    def sigma_z(self) -> Tensor:
        return reparam_positive(self.raw_sigma_z)

    @property
    def sigma_x(self) -> Tensor:
        return reparam_positive(self.raw_sigma_x)

    @property
    def sigma_y(self) -> Tensor:
        return reparam_positive(self.raw_sigma_y)

    def set_target_stats(self, dataset: LabelledDataset) -> None:
        mean = dataset.y.mean()
        stdev = dataset.y.std(unbiased=False)
        if float(stdev) < 1e-12:  # constant targets: keep the identity map
            stdev = torch.tensor(1.0, dtype=DTYPE)
        with torch.no_grad():
            self.y_mean.copy_(mean)
            self.y_stdev.copy_(stdev)

    def property_latent(self, z: Tensor) -> Tensor:
        """Property prediction at latent z, in original target units."""
        return self.y_mean + self.y_stdev * self.property_latent_raw(z)

    def property_value(self, x: Tensor) -> Tensor:
        return self.property_latent(self.encode_mean(x))


class InvexModel(_ScaledModel):
    """F(x) = g(f(h(x))): bijective flow encoder h, strictly convex f,
    strictly increasing g. Decoding is the exact flow inverse."""

    kind = "invex"
    exact_inverse = True

    def __init__(self, input_dim: int, *, flow_layers: int = INVEX_FLOW_LAYERS,
                 flow_hidden: int = INVEX_FLOW_HIDDEN,
                 icnn_widths=INVEX_ICNN_WIDTHS, generator: torch.Generator):
        super().__init__()
        self.input_dim = input_dim
        self.latent_dim = input_dim
        self.flow_layers = flow_layers
        self.flow_hidden = flow_hidden
        self.icnn_widths = tuple(icnn_widths)
        self.flow = AutoregressiveFlow(input_dim, flow_layers, flow_hidden,
                                       generator=generator)
        self.icnn = Icnn(input_dim, self.icnn_widths, generator=generator)
        self.head = MonotoneHead()

    def encode_mean(self, x: Tensor) -> Tensor:
        return self.flow(x)

    def decode_mean(self, z: Tensor) -> Tensor:
        return self.flow.inverse(z)

    def property_latent_raw(self, z: Tensor) -> Tensor:
        return self.head(self.icnn(z))

    def forward(self, x: Tensor) -> Tensor:
        return self.property_value(x)


class CycleVae(_ScaledModel):
    """Baseline with free-form encoder/decoder MLPs; the decoder only
    approximates the encoder inverse, which the cycle loss penalises."""

    kind = "cycle-baseline"
    exact_inverse = False

    def __init__(self, input_dim: int, latent_dim: int | None = None, *,
                 hidden=BASELINE_HIDDEN, property_hidden=BASELINE_PROPERTY_HIDDEN,
                 generator: torch.Generator):
        super().__init__()
        self.input_dim = input_dim
        self.latent_dim = input_dim if latent_dim is None else latent_dim
        self.hidden = tuple(hidden)
        self.property_hidden = tuple(property_hidden)
        hidden, property_hidden = self.hidden, self.property_hidden
        act = BASELINE_ACTIVATION
        self.encoder = Mlp([input_dim, *hidden, self.latent_dim], act, generator=generator)
        self.decoder = Mlp([self.latent_dim, *hidden, input_dim], act, generator=generator)
        self.property_net = Mlp([self.latent_dim, *property_hidden, 1], act,
                                generator=generator)

    def encode_mean(self, x: Tensor) -> Tensor:
        return self.encoder(x)

    def decode_mean(self, z: Tensor) -> Tensor:
        return self.decoder(z)

    def property_latent_raw(self, z: Tensor) -> Tensor:
        return self.property_net(z).squeeze(-1)

    def forward(self, x: Tensor) -> Tensor:
        return self.property_value(x)


def build_model(kind: str, input_dim: int, *, latent_dim: int | None = None,
                generator: torch.Generator):
    if kind == "invex":
        if latent_dim not in (None, input_dim):
            raise ValueError("invex model requires latent_dim == input_dim")
        return InvexModel(input_dim, generator=generator)
    if kind == "cycle-baseline":
        return CycleVae(input_dim, latent_dim, generator=generator)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


def invex_property(model, x) -> Tensor:
    """F(x) in original target units; deterministic."""
    batch, single = as_batch(x, model.input_dim, "x")
    out = model.property_value(batch)
    return out[0] if single else out


def encode_sample(model, x, noise: Tensor | None = None, *,
                  generator: torch.Generator | None = None) -> Tensor:
    """Reparameterised posterior sample z = mu_z(x) + sigma_z * eps."""
    batch, single = as_batch(x, model.input_dim, "x")
    mu = model.encode_mean(batch)
    if noise is None:
        if generator is None:
            raise ValueError("provide noise or a generator")
        noise = torch.randn(mu.shape, dtype=DTYPE, generator=generator)
    else:
        noise = torch.as_tensor(noise, dtype=DTYPE).reshape(mu.shape)
    z = mu + model.sigma_z * noise
    return z[0] if single else z


@dataclass
class LossBreakdown:
    total: Tensor
    nll_x: Tensor
    nll_y: Tensor
    kl: Tensor
    cycle: Tensor
    beta: float


_LOG_2PI = math.log(2.0 * math.pi)


def _vae_terms(model, X: Tensor, y_std: Tensor,
               noise: Tensor | None) -> tuple[Tensor, Tensor, Tensor]:
    mu_z = model.encode_mean(X)
    z = mu_z if noise is None else mu_z + model.sigma_z * noise
    x_hat = model.decode_mean(z)
    y_hat = model.property_latent_raw(z)
    d = X.shape[1]
    var_x = model.sigma_x ** 2
    var_y = model.sigma_y ** 2
    nll_x = (0.5 * ((X - x_hat) ** 2).sum(dim=1) / var_x
             + 0.5 * d * (_LOG_2PI + torch.log(var_x))).mean()
    nll_y = (0.5 * (y_std - y_hat) ** 2 / var_y
             + 0.5 * (_LOG_2PI + torch.log(var_y))).mean()
    var_z = model.sigma_z ** 2
    kl = 0.5 * ((mu_z ** 2).sum(dim=1) + model.latent_dim * (var_z - 1.0 - torch.log(var_z))).mean()
    return nll_x, nll_y, kl


def vae_loss(model, batch: LabelledDataset, *, beta: float = 1.0,
             noise: Tensor | None = None,
             generator: torch.Generator | None = None) -> LossBreakdown:
    """Gaussian reconstruction and property NLLs plus beta-weighted KL.

    noise=None evaluates at the posterior mean; pass noise or a generator
    for the reparameterised stochastic estimate.
    """
    y_std = (batch.y - model.y_mean) / model.y_stdev
    if noise is None and generator is not None:
        noise = torch.randn(batch.n, model.latent_dim, dtype=DTYPE, generator=generator)
    nll_x, nll_y, kl = _vae_terms(model, batch.X, y_std, noise)
    zero = torch.zeros((), dtype=DTYPE)
    total = nll_x + nll_y + beta * kl
    return LossBreakdown(total=total, nll_x=nll_x, nll_y=nll_y, kl=kl,
                         cycle=zero, beta=beta)


def cycle_loss(model, batch: LabelledDataset, z_tilde: Tensor) -> Tensor:
    """Property disagreement after one encode/decode round trip, for both
    data-anchored latents and free draws z_tilde; mean over the batch."""
    z = model.encode_mean(batch.X)
    y = model.property_latent_raw(z)
    y_cycled = model.property_latent_raw(model.encode_mean(model.decode_mean(z)))
    z_tilde = torch.as_tensor(z_tilde, dtype=DTYPE)
    y_t = model.property_latent_raw(z_tilde)
    y_t_cycled = model.property_latent_raw(model.encode_mean(model.decode_mean(z_tilde)))
    return (y - y_cycled).abs().mean() + (y_t - y_t_cycled).abs().mean()


def _draw_z_tilde(n: int, dim: int, box: tuple[float, float],
                  generator: torch.Generator) -> Tensor:
    lo, hi = box
    return lo + (hi - lo) * torch.rand(n, dim, dtype=DTYPE, generator=generator)


def total_loss(model, batch: LabelledDataset, config: TrainConfig, *, epoch: int = 0,
               noise: Tensor | None = None, z_tilde: Tensor | None = None,
               generator: torch.Generator | None = None) -> LossBreakdown:
    """L = L_VAE + gamma * L_cycle with the epoch's annealed beta."""
    beta = config.beta_at(epoch)
    out = vae_loss(model, batch, beta=beta, noise=noise, generator=generator)
    if config.gamma == 0.0 or model.exact_inverse:
        # exact-inverse decoders make the cycle identically zero in the
        # parameters, so there is nothing to optimise or report
        return out
    if z_tilde is None:
        if generator is None:
            raise ValueError("cycle loss needs z_tilde or a generator")
        z_tilde = _draw_z_tilde(batch.n, model.latent_dim, config.z_box, generator)
    cyc = cycle_loss(model, batch, z_tilde)
    return LossBreakdown(total=out.total + config.gamma * cyc, nll_x=out.nll_x,
                         nll_y=out.nll_y, kl=out.kl, cycle=cyc, beta=beta)


@dataclass
class TrainRow:
    epoch: int
    total: float
    nll_x: float
    nll_y: float
    kl: float
    cycle: float
    beta: float


@dataclass
class TrainReport:
    """Per-epoch loss curve, exportable as CSV."""

    rows: list[TrainRow] = field(default_factory=list)

    HEADER = "epoch,total,nll_x,nll_y,kl,cycle,beta"

    def csv_text(self) -> str:
        lines = [self.HEADER]
        for r in self.rows:
            vals = (r.total, r.nll_x, r.nll_y, r.kl, r.cycle, r.beta)
            lines.append(f"{r.epoch}," + ",".join(f"{v:.17g}" for v in vals))
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.csv_text())


@dataclass
class TrainResult:
    model: object
    report: TrainReport


def train(model_or_kind, dataset: LabelledDataset, config: TrainConfig) -> TrainResult:
    """Adam training with seeded shuffling and per-epoch beta annealing.

    Accepts a model kind name or a pre-built model; target statistics are
    (re)set from the dataset either way. Divergence (non-finite loss)
    aborts with TrainingDiverged.
    """
    gen = torch.Generator().manual_seed(config.seed)
    if isinstance(model_or_kind, str):
        model = build_model(model_or_kind, dataset.dim, generator=gen)
    else:
        model = model_or_kind
    model.set_target_stats(dataset)
    y_std = (dataset.y - model.y_mean) / model.y_stdev

    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    use_cycle = config.gamma > 0.0 and not model.exact_inverse
    report = TrainReport()
    n = dataset.n
    for epoch in range(config.epochs):
        beta = config.beta_at(epoch)
        perm = torch.randperm(n, generator=gen)
        sums = [0.0] * 5  # total, nll_x, nll_y, kl, cycle
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            X = dataset.X[idx]
            yb = y_std[idx]
            b = X.shape[0]
            noise = torch.randn(b, model.latent_dim, dtype=DTYPE, generator=gen)
            nll_x, nll_y, kl = _vae_terms(model, X, yb, noise)
            loss = nll_x + nll_y + beta * kl
            cyc_val = 0.0
            if use_cycle:
                z_tilde = _draw_z_tilde(b, model.latent_dim, config.z_box, gen)
                cyc = cycle_loss(model, LabelledDataset(X, yb), z_tilde)
                loss = loss + config.gamma * cyc
                cyc_val = float(cyc.detach())
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch start {start}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            batch_vals = (float(loss.detach()), float(nll_x.detach()),
                          float(nll_y.detach()), float(kl.detach()), cyc_val)
            for i, v in enumerate(batch_vals):
                sums[i] += v * b
        report.rows.append(TrainRow(epoch, *(s / n for s in sums), beta))
    return TrainResult(model=model, report=report)
