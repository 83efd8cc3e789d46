"""Glow-style conditional bijection on R^D with exact log-determinants.

Each block maps ``x`` through

    actnorm   y = x / sigma + mu
    linear    y = P L (U + diag(exp(log_s))) x
    coupling  y1 = x1,  y2 = exp(log s) * x2 + b,  (log s, b) = NN(x1, context)

in that order. ``x1`` is the first ceil(D/2) coordinates. The coupling
scale is soft-clamped to |log s| < 8 so ``exp`` can never overflow and the
block stays invertible in floating point.

Parameter file layout (JSON, ``"format": "dexgrasp-flow"``)::

    {"format": "dexgrasp-flow", "version": 1, "dim": D, "context_dim": C,
     "blocks": [{"mu": [D], "sigma": [D], "perm": [[D x D]],
                 "lower": [[D x D]], "upper": [[D x D]], "log_s": [D],
                 "conditioner": {"w1": [[H x (D1 + C)]], "b1": [H],
                                 "w2": [[2 D2 x H]], "b2": [2 D2]}}, ...]}

``lower`` is read below its diagonal only and ``upper`` above its diagonal
only; D1 = ceil(D/2) and D2 = D - D1. The first D2 outputs of the
conditioner are the raw log-scales, the last D2 the shifts.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import lu, solve_triangular

from .errors import InvalidInputError, SchemaError

LOG_SCALE_LIMIT = 8.0
DEFAULT_BLOCKS = 21
DEFAULT_HIDDEN = 64
FORMAT = "dexgrasp-flow"
FORMAT_VERSION = 1
_LOG_2PI = np.log(2.0 * np.pi)


def split_sizes(dim):
    d1 = (dim + 1) // 2
    return d1, dim - d1


def clamp_log_scale(raw):
    return LOG_SCALE_LIMIT * np.tanh(raw / LOG_SCALE_LIMIT)


@dataclass(frozen=True)
class Conditioner:
    """Two-layer map ``W2 tanh(W1 [x1, context] + b1) + b2``."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def __call__(self, x1, context):
        h = np.tanh(np.concatenate([x1, context], axis=1) @ self.w1.T + self.b1)
        out = h @ self.w2.T + self.b2
        k = out.shape[1] // 2
        return out[:, :k], out[:, k:]

    @classmethod
    def zeros(cls, d1, d2, context_dim=0, hidden=DEFAULT_HIDDEN):
        return cls(np.zeros((hidden, d1 + context_dim)), np.zeros(hidden), np.zeros((2 * d2, hidden)),
                   np.zeros(2 * d2))

    @classmethod
    def random(cls, d1, d2, context_dim, rng, hidden=DEFAULT_HIDDEN, scale=0.5):
        fan_in = max(d1 + context_dim, 1)
        return cls(rng.standard_normal((hidden, d1 + context_dim)) / np.sqrt(fan_in),
                   0.1 * rng.standard_normal(hidden),
                   scale * rng.standard_normal((2 * d2, hidden)) / np.sqrt(hidden),
                   0.1 * scale * rng.standard_normal(2 * d2))

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("w1", "b1", "w2", "b2")}

    @classmethod
    def from_dict(cls, d, d1, d2, context_dim):
        w1 = np.array(d["w1"], dtype=float).reshape(-1, d1 + context_dim)
        b1 = np.array(d["b1"], dtype=float).reshape(-1)
        w2 = np.array(d["w2"], dtype=float).reshape(2 * d2, -1)
        b2 = np.array(d["b2"], dtype=float).reshape(-1)
        if b1.shape[0] != w1.shape[0] or w2.shape[1] != w1.shape[0] or b2.shape[0] != 2 * d2:
            raise SchemaError("conditioner tensor shapes are inconsistent")
        return cls(w1, b1, w2, b2)


@dataclass(frozen=True)
class FlowBlock:
    mu: np.ndarray
    sigma: np.ndarray
    perm: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    log_s: np.ndarray
    conditioner: object

    def __post_init__(self):
        d = self.mu.shape[0]
        for name in ("sigma", "log_s"):
            if getattr(self, name).shape != (d,):
                raise InvalidInputError(f"{name} must have length {d}")
        for name in ("perm", "lower", "upper"):
            if getattr(self, name).shape != (d, d):
                raise InvalidInputError(f"{name} must be {d}x{d}")
        if not np.all(self.sigma > 0):
            raise InvalidInputError("actnorm sigma must be positive")
        if np.abs(self.perm @ self.perm.T - np.eye(d)).max() > 1e-9:
            raise InvalidInputError("perm must be orthogonal")
        # keep only the meaningful triangles so W = P L (U + S) is exact
        object.__setattr__(self, "lower", np.tril(self.lower, -1) + np.eye(d))
        object.__setattr__(self, "upper", np.triu(self.upper, 1))

    @property
    def dim(self):
        return self.mu.shape[0]

    def weight(self):
        return self.perm @ self.lower @ (self.upper + np.diag(np.exp(self.log_s)))

    def _coupling(self, x1, context):
        ls, b = self.conditioner(x1, context)
        return clamp_log_scale(np.asarray(ls, dtype=float)), np.asarray(b, dtype=float)

    def forward(self, x, context):
        d1, _ = split_sizes(self.dim)
        y = x / self.sigma + self.mu
        y = y @ self.weight().T
        ls, b = self._coupling(y[:, :d1], context)
        y = np.concatenate([y[:, :d1], np.exp(ls) * y[:, d1:] + b], axis=1)
        logdet = -np.log(self.sigma).sum() + self.log_s.sum() + ls.sum(axis=1)
        return y, logdet

    def inverse(self, y, context):
        d1, _ = split_sizes(self.dim)
        ls, b = self._coupling(y[:, :d1], context)
        x = np.concatenate([y[:, :d1], (y[:, d1:] - b) * np.exp(-ls)], axis=1)
        # W^-1 through the factors: P^T, then unit-lower, then upper solves
        v = x @ self.perm
        v = solve_triangular(self.lower, v.T, lower=True, unit_diagonal=True)
        v = solve_triangular(self.upper + np.diag(np.exp(self.log_s)), v, lower=False).T
        x = (v - self.mu) * self.sigma
        logdet = np.log(self.sigma).sum() - self.log_s.sum() - ls.sum(axis=1)
        return x, logdet


@dataclass(frozen=True)
class FlowStack:
    blocks: tuple
    dim: int
    context_dim: int = 0

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if any(b.dim != self.dim for b in self.blocks):
            raise InvalidInputError("every block must have the stack dimension")

    def __len__(self):
        return len(self.blocks)


def _batch(stack, x, context):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != stack.dim:
        raise InvalidInputError(f"expected vectors of dimension {stack.dim}, got shape {np.shape(x)}")
    if context is None:
        context = np.zeros(stack.context_dim)
    c = np.atleast_2d(np.asarray(context, dtype=float))
    if c.shape[1] != stack.context_dim:
        raise InvalidInputError(f"expected context of dimension {stack.context_dim}, got {c.shape[1]}")
    c = np.broadcast_to(c, (x.shape[0], stack.context_dim))
    return x, c, single


def forward(stack, x, context=None):
    """Data to latent: ``(z, logdet)``; accepts one vector or a batch of rows."""
    x, c, single = _batch(stack, x, context)
    total = np.zeros(x.shape[0])
    for block in stack.blocks:
        x, ld = block.forward(x, c)
        total += ld
    return (x[0], float(total[0])) if single else (x, total)


def inverse(stack, z, context=None):
    """Latent to data: ``(x, logdet)`` with ``logdet`` of the inverse map."""
    z, c, single = _batch(stack, z, context)
    total = np.zeros(z.shape[0])
    for block in reversed(stack.blocks):
        z, ld = block.inverse(z, c)
        total += ld
    return (z[0], float(total[0])) if single else (z, total)


def log_prob(stack, x, context=None):
    """Log density of ``x`` under the flow with a standard-normal base."""
    z, logdet = forward(stack, x, context)
    z2 = np.atleast_2d(z)
    lp = -0.5 * (z2 ** 2).sum(axis=1) - 0.5 * stack.dim * _LOG_2PI + np.atleast_1d(logdet)
    return float(lp[0]) if np.ndim(z) == 1 else lp


def sample(stack, context=None, rng_seed=0, n=1):
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    z = np.random.default_rng(rng_seed).standard_normal((n, stack.dim))
    return inverse(stack, z, context)[0]


# ---------------------------------------------------------------- construction


def identity_block(dim, context_dim=0, hidden=DEFAULT_HIDDEN):
    d1, d2 = split_sizes(dim)
    return FlowBlock(np.zeros(dim), np.ones(dim), np.eye(dim), np.eye(dim), np.zeros((dim, dim)), np.zeros(dim),
                     Conditioner.zeros(d1, d2, context_dim, hidden))


def identity_stack(dim, n_blocks=DEFAULT_BLOCKS, context_dim=0):
    _check_dim(dim, n_blocks)
    return FlowStack([identity_block(dim, context_dim) for _ in range(n_blocks)], dim, context_dim)


def _check_dim(dim, n_blocks):
    if dim < 1 or n_blocks < 0:
        raise InvalidInputError("dimension must be >= 1 and block count >= 0")


def random_orthogonal(dim, rng):
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def random_stack(dim, n_blocks=DEFAULT_BLOCKS, context_dim=0, rng_seed=0, scale=0.1, hidden=DEFAULT_HIDDEN):
    """Randomly initialised stack; ``scale`` sets how far each block is from a rotation.

    As in Glow the linear part starts as the LU factors of a random rotation
    (row signs folded in so that S > 0), so deep stacks stay well conditioned.
    """
    _check_dim(dim, n_blocks)
    rng = np.random.default_rng(rng_seed)
    d1, d2 = split_sizes(dim)
    blocks = []
    for _ in range(n_blocks):
        P, L, U = lu(random_orthogonal(dim, rng))
        U = U * np.sign(np.diag(U))
        blocks.append(FlowBlock(
            scale * rng.standard_normal(dim),
            np.exp(scale * rng.standard_normal(dim)),
            P, L, U, np.log(np.abs(np.diag(U))),
            Conditioner.random(d1, d2, context_dim, rng, hidden, scale)))
    return FlowStack(blocks, dim, context_dim)


def grasp_flow(n_joints, context_dim=0, rng_seed=0, n_blocks=DEFAULT_BLOCKS):
    """Untrained stack over (translation, joint angles), D = 3 + K."""
    return random_stack(3 + n_joints, n_blocks, context_dim, rng_seed)


# ---------------------------------------------------------------- files


def stack_to_dict(stack):
    blocks = []
    for b in stack.blocks:
        if not isinstance(b.conditioner, Conditioner):
            raise InvalidInputError("only the built-in conditioner can be serialised")
        blocks.append({"mu": b.mu.tolist(), "sigma": b.sigma.tolist(), "perm": b.perm.tolist(),
                       "lower": b.lower.tolist(), "upper": b.upper.tolist(), "log_s": b.log_s.tolist(),
                       "conditioner": b.conditioner.to_dict()})
    return {"format": FORMAT, "version": FORMAT_VERSION, "dim": stack.dim, "context_dim": stack.context_dim,
            "blocks": blocks}


def stack_from_dict(d):
    if d.get("format") != FORMAT:
        raise SchemaError("not a flow parameter file")
    if int(d.get("version", 0)) > FORMAT_VERSION:
        raise SchemaError(f"flow file version {d['version']} is newer than supported {FORMAT_VERSION}")
    dim, cdim = int(d["dim"]), int(d.get("context_dim", 0))
    d1, d2 = split_sizes(dim)
    blocks = []
    try:
        for b in d["blocks"]:
            blocks.append(FlowBlock(*(np.array(b[k], dtype=float) for k in
                                      ("mu", "sigma", "perm", "lower", "upper", "log_s")),
                                    Conditioner.from_dict(b["conditioner"], d1, d2, cdim)))
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"malformed flow block: {exc}") from exc
    return FlowStack(blocks, dim, cdim)


def save_stack(stack, path):
    Path(path).write_text(json.dumps(stack_to_dict(stack), sort_keys=True) + "\n")


def load_stack(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"flow file not found: {path}")
    try:
        return stack_from_dict(json.loads(path.read_text()))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
