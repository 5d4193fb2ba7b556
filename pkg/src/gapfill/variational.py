"""Variational gap filling with a trainable prior and an unrolled solver.

The reconstruction ``x`` of observations ``y`` (observed on ``omega``)
minimises::

    U(x) = lam1 * sum_omega (x - y)**2 + lam2 * sum_ocean (x - phi(x))**2

where ``phi`` is a prior operator. States are (B, T, H, W) float64 tensors;
land pixels are excluded from both sums and forced to zero.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import warnings

import numpy as np
import torch
from torch import nn

from ._nn import as_mask, as_tensor, conv_st
from .errors import Diverged, InvalidSpec, ShapeMismatch
from .field import GappyField, NormStats, denormalize, normalize

logger = logging.getLogger(__name__)

PRIOR_KINDS = ("zero", "diffusion", "convnet")
UPDATES = ("plain", "momentum", "learned")


# ---------------------------------------------------------------- priors


class Prior(nn.Module):
    """Maps a (B, T, H, W) state to a state of the same shape; land maps to 0."""

    kind = "base"

    def forward(self, x: torch.Tensor, ocean: torch.Tensor) -> torch.Tensor:
        if x.dim() == 3:
            return self.apply_batched(x[None], ocean)[0]
        return self.apply_batched(x, ocean)

    def apply_batched(self, x: torch.Tensor, ocean: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def config(self) -> dict:
        return {"kind": self.kind}


class ZeroPrior(Prior):
    kind = "zero"

    def apply_batched(self, x, ocean):
        # keeps a graph edge to x so vector-Jacobian products are defined
        return x * 0.0


class DiffusionPrior(Prior):
    """One explicit diffusion step ``x + nu * lap_xy(x) + nu_t * lap_t(x)``.

    ``nu = nu_t = 0`` is the identity on ocean pixels.
    """

    kind = "diffusion"

    def __init__(self, nu: float = 0.2, nu_t: float | None = None):
        super().__init__()
        self.nu = nn.Parameter(torch.tensor(float(nu), dtype=torch.float64))
        self.nu_t = nn.Parameter(torch.tensor(float(nu if nu_t is None else nu_t), dtype=torch.float64))

    def config(self) -> dict:
        return {"kind": self.kind}

    def kernel(self) -> torch.Tensor:
        w = torch.zeros(1, 1, 3, 3, 3, dtype=torch.float64)
        lap_s = w.clone()
        lap_s[0, 0, 1] = torch.tensor([[0.0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=torch.float64)
        lap_t = w.clone()
        lap_t[0, 0, 0, 1, 1] = 1.0
        lap_t[0, 0, 2, 1, 1] = 1.0
        lap_t[0, 0, 1, 1, 1] = -2.0
        ident = w.clone()
        ident[0, 0, 1, 1, 1] = 1.0
        return ident + self.nu * lap_s + self.nu_t * lap_t

    def apply_batched(self, x, ocean):
        return conv_st(x.unsqueeze(1), self.kernel(), ocean).squeeze(1)


class ConvPrior(Prior):
    """Two-layer convolutional prior with a bilinear branch.

    ``phi(x) = W2 * tanh(W1 * x + (W3 * x) . (W4 * x))`` where ``*`` is a
    space-time convolution with kernel ``kt x k x k`` (``kt = 1`` gives
    frame-wise 2-D kernels) and ``.`` is the elementwise product. The tanh
    wraps the bilinear branch too, which bounds ``phi`` and its Jacobian and
    keeps the unrolled solver from blowing up during training.
    """

    kind = "convnet"

    def __init__(self, channels: int = 8, k: int = 3, kt: int = 3, seed: int = 0):
        super().__init__()
        if k % 2 == 0 or kt % 2 == 0:
            raise InvalidSpec("prior kernel sizes must be odd")
        self.channels, self.k, self.kt = channels, k, kt
        g = torch.Generator().manual_seed(seed)
        fan = kt * k * k

        def init(o, i, scale):
            return nn.Parameter(torch.randn(o, i, kt, k, k, generator=g, dtype=torch.float64) * scale)

        self.w1 = init(channels, 1, 1.0 / math.sqrt(fan))
        # small output layer: phi starts close to 0 so the first unrolled steps are stable
        self.w2 = init(1, channels, 0.1 / math.sqrt(fan * channels))
        self.w3 = init(channels, 1, 0.5 / math.sqrt(fan))
        self.w4 = init(channels, 1, 0.5 / math.sqrt(fan))

    def config(self) -> dict:
        return {"kind": self.kind, "channels": self.channels, "k": self.k, "kt": self.kt}

    def apply_batched(self, x, ocean):
        x = x.unsqueeze(1)
        h = torch.tanh(conv_st(x, self.w1, ocean) + conv_st(x, self.w3, ocean) * conv_st(x, self.w4, ocean))
        return conv_st(h, self.w2, ocean).squeeze(1)


def make_prior(kind: str = "convnet", **kw) -> Prior:
    if kind == "zero":
        return ZeroPrior()
    if kind == "diffusion":
        return DiffusionPrior(**kw)
    if kind == "convnet":
        return ConvPrior(**kw)
    raise InvalidSpec(f"unknown prior kind {kind!r}; expected one of {PRIOR_KINDS}")


# ---------------------------------------------------------------- cost


def _check(x, y, omega):
    if x.shape != y.shape or omega.shape != y.shape:
        raise ShapeMismatch(f"state {tuple(x.shape)}, observations {tuple(y.shape)}, mask {tuple(omega.shape)}")


def cost_t(x, y, omega, ocean, prior: Prior, lam1, lam2) -> torch.Tensor:
    """Variational cost per batch item (shape (B,) for 4-D input)."""
    _check(x, y, omega)
    zero = torch.zeros((), dtype=x.dtype)
    fit = torch.where(omega, x - torch.where(omega, y, zero), zero)
    reg = (x - prior(x, ocean)) * ocean
    dims = tuple(range(x.dim() - 3, x.dim()))
    return lam1 * (fit * fit).sum(dims) + lam2 * (reg * reg).sum(dims)


def grad_cost_t(x, y, omega, ocean, prior: Prior, lam1, lam2, create_graph: bool = False) -> torch.Tensor:
    """``2 lam1 1_omega (x - y) + 2 lam2 J^T (x - phi(x))`` with ``J = I - Dphi(x)``.

    ``J^T r`` is evaluated as ``r - vjp(phi, r)``. With ``create_graph`` the
    result stays differentiable in ``x`` and in the prior parameters, which
    is what unrolled training needs.
    """
    _check(x, y, omega)
    zero = torch.zeros((), dtype=x.dtype)
    with torch.enable_grad():
        xg = x if x.requires_grad else x.detach().requires_grad_(True)
        phi = prior(xg, ocean)
        r = (xg - phi) * ocean
        (dphi_t_r,) = torch.autograd.grad(phi, xg, r, create_graph=create_graph)
    fit = torch.where(omega, x - torch.where(omega, y, zero), zero)
    jt_r = (r - dphi_t_r) * ocean
    if not create_graph:
        jt_r = jt_r.detach()
    return 2.0 * lam1 * fit + 2.0 * lam2 * jt_r


# ---------------------------------------------------------------- solver


@dataclasses.dataclass(frozen=True)
class SolverSpec:
    """Unrolled solver settings.

    ``update='learned'`` runs ``x <- x - (g + T(h))`` with ``g = alpha_k * grad U``
    and ``h`` the hidden state of a convolutional gated unit fed with ``g``;
    ``alpha_k`` starts at ``alpha`` and is trained per iteration, ``T`` is a
    1x1 linear map initialised at zero. ``init='obs-fill'`` starts from the
    observations with gaps at zero.
    """

    lambda1: float = 1.0
    lambda2: float = 1.0
    K: int = 10
    update: str = "learned"
    alpha: float = 0.2
    beta: float = 0.9
    hidden: int = 8
    k: int = 3
    kt: int = 3
    init: str = "obs-fill"
    train_lambdas: bool = True

    def __post_init__(self):
        if self.K < 1:
            raise InvalidSpec(f"K must be >= 1, got {self.K}")
        if self.update not in UPDATES:
            raise InvalidSpec(f"unknown update {self.update!r}")
        if self.update in ("plain", "momentum") and not self.alpha > 0:
            raise InvalidSpec("alpha must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0 or (self.lambda1 == 0 and self.lambda2 == 0):
            raise InvalidSpec("lambda1, lambda2 must be >= 0 and not both zero")
        if self.init not in ("obs-fill", "zero-fill"):
            raise InvalidSpec(f"unknown init {self.init!r}")

    @classmethod
    def from_dict(cls, d: dict) -> SolverSpec:
        return cls(**d)


class Solver(nn.Module):
    """Trainable state of a :class:`SolverSpec`: weights, gains and gated unit."""

    def __init__(self, spec: SolverSpec, seed: int = 0):
        super().__init__()
        self.spec = spec
        # lambdas live in log space so training keeps them nonnegative; an
        # exact zero is kept as a fixed zero
        self.log_lam1 = nn.Parameter(torch.tensor(math.log(spec.lambda1) if spec.lambda1 > 0 else 0.0, dtype=torch.float64),
                                     requires_grad=spec.train_lambdas and spec.lambda1 > 0)
        self.log_lam2 = nn.Parameter(torch.tensor(math.log(spec.lambda2) if spec.lambda2 > 0 else 0.0, dtype=torch.float64),
                                     requires_grad=spec.train_lambdas and spec.lambda2 > 0)
        if spec.update == "learned":
            g = torch.Generator().manual_seed(seed + 1)
            c, k, kt = spec.hidden, spec.k, spec.kt
            fan = (1 + c) * kt * k * k
            self.gains = nn.Parameter(torch.full((spec.K,), float(spec.alpha), dtype=torch.float64))
            self.w_gate = nn.Parameter(torch.randn(c, 1 + c, kt, k, k, generator=g, dtype=torch.float64) / math.sqrt(fan))
            self.b_gate = nn.Parameter(torch.zeros(c, dtype=torch.float64))
            self.w_cand = nn.Parameter(torch.randn(c, 1 + c, kt, k, k, generator=g, dtype=torch.float64) / math.sqrt(fan))
            self.w_out = nn.Parameter(torch.zeros(1, c, 1, 1, 1, dtype=torch.float64))

    @property
    def lam1(self) -> torch.Tensor:
        return self.log_lam1.exp() if self.spec.lambda1 > 0 else torch.zeros((), dtype=torch.float64)

    @property
    def lam2(self) -> torch.Tensor:
        return self.log_lam2.exp() if self.spec.lambda2 > 0 else torch.zeros((), dtype=torch.float64)

    def learned_step(self, g: torch.Tensor, h: torch.Tensor, ocean: torch.Tensor):
        inp = torch.cat([g.unsqueeze(1), h], dim=1)
        z = torch.sigmoid(conv_st(inp, self.w_gate, ocean) + self.b_gate.view(1, -1, 1, 1, 1))
        cand = torch.tanh(conv_st(inp, self.w_cand, ocean))
        h = (1.0 - z) * h + z * cand
        step = g + conv_st(h, self.w_out, ocean).squeeze(1)
        return step, h


def solve_t(y, omega, ocean, prior: Prior, solver: Solver, differentiable: bool = False) -> torch.Tensor:
    """Run ``spec.K`` solver iterations on (B, T, H, W) tensors."""
    spec = solver.spec
    zero = torch.zeros((), dtype=torch.float64)
    ocean_f = ocean.to(torch.float64)
    if spec.init == "obs-fill":
        x = torch.where(omega, y, zero) * ocean_f
    else:
        x = torch.zeros_like(y)
    lam1, lam2 = solver.lam1, solver.lam2
    if not differentiable:
        lam1, lam2 = lam1.detach(), lam2.detach()
    velocity = torch.zeros_like(x)
    h = None
    if spec.update == "learned":
        B, T, H, W = x.shape
        h = torch.zeros(B, spec.hidden, T, H, W, dtype=torch.float64)
    for k in range(spec.K):
        grad = grad_cost_t(x, y, omega, ocean_f, prior, lam1, lam2, create_graph=differentiable)
        if spec.update == "plain":
            x = x - spec.alpha * grad
        elif spec.update == "momentum":
            velocity = spec.beta * velocity + spec.alpha * grad
            x = x - velocity
        else:
            step, h = solver.learned_step(solver.gains[k] * grad, h, ocean_f)
            x = x - step
        if not differentiable:
            x = x.detach()
            if h is not None:
                h = h.detach()
        if not torch.isfinite(x).all():
            raise Diverged(f"solver state became non-finite at iteration {k}", iteration=k)
    return x * ocean_f


class VariationalModel(nn.Module):
    """A prior together with its solver; ``forward`` reconstructs a batch."""

    family = "variational"

    def __init__(self, prior: Prior, solver: Solver):
        super().__init__()
        self.prior = prior
        self.solver = solver

    def forward(self, y, omega, ocean, differentiable: bool = True):
        return solve_t(y, omega, ocean, self.prior, self.solver, differentiable=differentiable)

    def reconstruct(self, y: np.ndarray, omega: np.ndarray, ocean: np.ndarray) -> np.ndarray:
        """Gap-free (T, H, W) state for one normalized sequence."""
        with torch.no_grad():
            for p in self.parameters():
                p.requires_grad_(False)
            try:
                x = self.forward(as_tensor(y)[None], as_mask(omega)[None], as_mask(ocean), differentiable=False)
            finally:
                for name, p in self.named_parameters():
                    p.requires_grad_(_trainable(self, name))
        return x[0].numpy()

    def config(self) -> dict:
        return {"prior": self.prior.config(), "solver": dataclasses.asdict(self.solver.spec)}


def _trainable(model: VariationalModel, name: str) -> bool:
    spec = model.solver.spec
    if name == "solver.log_lam1":
        return spec.train_lambdas and spec.lambda1 > 0
    if name == "solver.log_lam2":
        return spec.train_lambdas and spec.lambda2 > 0
    return True


def build_model(prior: Prior | dict | None = None, spec: SolverSpec | dict | None = None, seed: int = 0) -> VariationalModel:
    if prior is None or isinstance(prior, dict):
        kw = dict(prior or {"kind": "convnet"})
        kind = kw.pop("kind", "convnet")
        if kind == "convnet":
            kw.setdefault("seed", seed)
        prior = make_prior(kind, **kw)
    if spec is None or isinstance(spec, dict):
        spec = SolverSpec(**(spec or {}))
    return VariationalModel(prior, Solver(spec, seed=seed))


# ---------------------------------------------------------------- field-level API


def _field_tensors(y: GappyField):
    return (as_tensor(y.filled(0.0)), as_mask(y.valid), as_tensor(y.ocean.astype(np.float64)))


def cost(x, y: GappyField, prior: Prior, lam1: float, lam2: float) -> float:
    """Variational cost of state ``x`` (T, H, W) against observations ``y``."""
    yt, om, oc = _field_tensors(y)
    xt = as_tensor(x)
    if xt.shape != yt.shape:
        raise ShapeMismatch(f"state shape {tuple(xt.shape)} != observation shape {tuple(yt.shape)}")
    with torch.no_grad():
        return float(cost_t(xt, yt, om, oc, prior, lam1, lam2))


def grad_cost(x, y: GappyField, prior: Prior, lam1: float, lam2: float) -> np.ndarray:
    yt, om, oc = _field_tensors(y)
    xt = as_tensor(x)
    if xt.shape != yt.shape:
        raise ShapeMismatch(f"state shape {tuple(xt.shape)} != observation shape {tuple(yt.shape)}")
    return grad_cost_t(xt, yt, om, oc, prior, lam1, lam2).numpy()


def solve(y: GappyField, prior: Prior, spec: SolverSpec | Solver) -> np.ndarray:
    """Gap-free state (T, H, W) for observations ``y`` (normalized space)."""
    if not y.valid.any():
        raise InvalidSpec("observations have no valid pixel")
    solver = spec if isinstance(spec, Solver) else Solver(spec)
    return VariationalModel(prior, solver).reconstruct(y.filled(0.0), y.valid, y.ocean)


UNNORMALIZED_MEAN = 5.0


def check_normalized(field: GappyField) -> None:
    v = field.values[field.valid]
    if v.size and abs(float(v.mean())) > UNNORMALIZED_MEAN:
        warnings.warn(f"mean of normalized values is {v.mean():.3g}; input looks unnormalized "
                      "or normalized with foreign statistics", RuntimeWarning)


def infer(y: GappyField, model, stats: NormStats) -> GappyField:
    """Normalize ``y`` with its own ``stats``, reconstruct, and map back.

    Works for any model exposing ``reconstruct(values, valid, ocean)``; the
    model parameters are never modified.
    """
    yn = normalize(y, stats)
    check_normalized(yn)
    x = model.reconstruct(yn.filled(0.0), yn.valid, yn.ocean)
    ocean = np.broadcast_to(y.ocean, y.shape)
    out = y.replace(values=np.where(ocean, x, np.nan), valid=ocean)
    return denormalize(out, stats)
