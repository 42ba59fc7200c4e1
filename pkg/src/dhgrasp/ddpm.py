"""Diffusion over affordance directions and contact masks.

Denoiser contract: ``denoiser(x_t, t, cond)`` returns predicted noise with the
shape of ``x_t``; ``cond`` is ``None`` for the unconditional branch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hand_model import N_PARTS
from .losses import loss_ddpm
from .optim import Adam

N_ROWS = 2 * N_PARTS  # right parts then left parts
STATE_DIM = 4 * N_ROWS


class DdpmError(RuntimeError):
    pass


@dataclass(frozen=True)
class DdpmSchedule:
    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64).reshape(-1)
        if len(b) == 0 or np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("betas must lie strictly inside (0, 1)")
        if np.any(np.diff(b) <= 0):
            raise ValueError("betas must be strictly increasing")
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "alphas", 1.0 - b)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - b))

    @classmethod
    def linear(cls, T=1000, beta_start=1e-4, beta_end=0.02) -> DdpmSchedule:
        if T < 2:
            raise ValueError("need at least two diffusion steps")
        return cls(np.linspace(beta_start, beta_end, T))

    @property
    def T(self) -> int:
        return len(self.betas)

    def beta(self, t) -> float:
        return float(self.betas[t - 1])

    def alpha(self, t) -> float:
        return float(self.alphas[t - 1])

    def alpha_bar(self, t) -> float:
        """Cumulative product up to step ``t``; 1 at ``t = 0``."""
        if not 0 <= t <= self.T:
            raise ValueError(f"t={t} outside [0, {self.T}]")
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def to_dict(self):
        return {"T": self.T, "betas": self.betas.tolist()}


@dataclass
class AffordanceState:
    D: np.ndarray  # (2B, 3)
    M: np.ndarray  # (2B,)

    def __post_init__(self):
        self.D = np.asarray(self.D, dtype=np.float64).reshape(-1, 3)
        self.M = np.asarray(self.M, dtype=np.float64).reshape(-1)
        if len(self.D) != len(self.M):
            raise ValueError("D and M must have one row per hand part")
        if not (np.all(np.isfinite(self.D)) and np.all(np.isfinite(self.M))):
            raise ValueError("state has non-finite entries")

    def to_vector(self):
        return np.concatenate([self.D.ravel(), self.M])

    @classmethod
    def from_vector(cls, v) -> AffordanceState:
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        n = len(v) // 4
        return cls(v[: 3 * n].reshape(n, 3), v[3 * n :])

    def hand(self, chirality):
        s = slice(0, N_PARTS) if chirality == "right" else slice(N_PARTS, 2 * N_PARTS)
        return self.D[s], self.M[s]

    def to_dict(self):
        return {"D": self.D.tolist(), "M": self.M.tolist()}


def finalize_state(x) -> AffordanceState:
    """Binarise M at 0.5, zero D rows with M = 0, normalise the rest."""
    st = x if isinstance(x, AffordanceState) else AffordanceState.from_vector(x)
    m = (st.M >= 0.5).astype(np.float64)
    n = np.linalg.norm(st.D, axis=1)
    m[n < 1e-12] = 0.0
    d = np.where(m[:, None] > 0, st.D / np.where(n > 0, n, 1.0)[:, None], 0.0)
    return AffordanceState(d, m)


def _vec(x):
    return x.to_vector() if isinstance(x, AffordanceState) else np.asarray(x, dtype=np.float64)


def forward_noise(x0, t, eps, schedule: DdpmSchedule):
    """sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, applied to the whole state.

    ``eps`` may carry leading batch axes (many draws for one clean state).
    """
    ab = schedule.alpha_bar(t)
    x, e = _vec(x0), _vec(eps)
    if e.shape[e.ndim - x.ndim :] != x.shape:
        raise ValueError(f"noise shape {e.shape} does not match state {x.shape}")
    out = np.sqrt(ab) * x + np.sqrt(1.0 - ab) * e
    return AffordanceState.from_vector(out) if isinstance(x0, AffordanceState) and out.ndim == 1 else out


def invert_noise(xt, t, eps, schedule: DdpmSchedule):
    ab = schedule.alpha_bar(t)
    return (_vec(xt) - np.sqrt(1.0 - ab) * _vec(eps)) / np.sqrt(ab)


def guidance_combine(eps_uncond, eps_cond, s):
    u, c = np.asarray(eps_uncond, dtype=np.float64), np.asarray(eps_cond, dtype=np.float64)
    if u.shape != c.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {c.shape}")
    return u + s * (c - u)


def reverse_sample(denoiser, schedule: DdpmSchedule, cond=None, s=2.0, seed=0, shape=(STATE_DIM,), postprocess=True):
    """Ancestral sampling from T down to 1 with classifier-free guidance.

    Random draws, all from ``default_rng(seed)`` in this order: x_T, then one
    standard normal per step for t = T..2. Variance is beta_t. With ``s == 0``
    or no conditioning only the unconditional branch is called.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    for t in range(schedule.T, 0, -1):
        eps = np.asarray(denoiser(x, t, None), dtype=np.float64)
        if cond is not None and s != 0:
            eps = guidance_combine(eps, denoiser(x, t, cond), s)
        if eps.shape != x.shape or not np.all(np.isfinite(eps)):
            raise DdpmError(f"denoiser returned invalid noise at step t={t}")
        ab, a, b = schedule.alpha_bar(t), schedule.alpha(t), schedule.beta(t)
        x = (x - b / np.sqrt(1.0 - ab) * eps) / np.sqrt(a)
        if t > 1:
            x = x + np.sqrt(b) * rng.standard_normal(shape)
    if not postprocess:
        return x
    if x.ndim == 1:
        return finalize_state(x)
    return [finalize_state(row) for row in x.reshape(-1, shape[-1])]


# --------------------------------------------------------------------------
# toy denoiser (tests and CLI demos only)


def timestep_features(t, T, n_freq=4):
    t = np.atleast_1d(np.asarray(t, dtype=np.float64)) / T
    k = 2.0 ** np.arange(n_freq) * np.pi
    return np.concatenate([np.sin(t[:, None] * k), np.cos(t[:, None] * k)], axis=1)


class ToyDenoiser:
    """Two-layer tanh perceptron over [x_t, time features, cond, has-cond]."""

    def __init__(self, state_dim=STATE_DIM, cond_dim=0, hidden=64, T=1000, seed=0, n_freq=4):
        rng = np.random.default_rng(seed)
        self.state_dim, self.cond_dim, self.hidden, self.T, self.n_freq = state_dim, cond_dim, hidden, T, n_freq
        n_in = state_dim + 2 * n_freq + cond_dim + 1
        self.W1 = rng.normal(scale=1.0 / np.sqrt(n_in), size=(n_in, hidden))
        self.b1 = np.zeros(hidden)
        self.W2 = rng.normal(scale=1.0 / np.sqrt(hidden), size=(hidden, state_dim))
        self.b2 = np.zeros(state_dim)

    # flat parameter view for the optimiser
    def get_params(self):
        return np.concatenate([self.W1.ravel(), self.b1, self.W2.ravel(), self.b2])

    def set_params(self, p):
        i = 0
        for name in ("W1", "b1", "W2", "b2"):
            a = getattr(self, name)
            setattr(self, name, p[i : i + a.size].reshape(a.shape).copy())
            i += a.size

    def save(self, path):
        meta = np.array([self.state_dim, self.cond_dim, self.hidden, self.T, self.n_freq])
        with open(path, "wb") as fh:
            np.savez(fh, meta=meta, W1=self.W1, b1=self.b1, W2=self.W2, b2=self.b2)

    @classmethod
    def load(cls, path) -> ToyDenoiser:
        with np.load(path) as z:
            state_dim, cond_dim, hidden, T, n_freq = (int(v) for v in z["meta"])
            model = cls(state_dim, cond_dim, hidden, T, 0, n_freq)
            for name in ("W1", "b1", "W2", "b2"):
                if z[name].shape != getattr(model, name).shape:
                    raise ValueError(f"denoiser file: {name} has shape {z[name].shape}")
                setattr(model, name, z[name].astype(np.float64))
        return model

    def _inputs(self, x, t, cond):
        x = np.atleast_2d(x)
        n = len(x)
        tf = timestep_features(np.broadcast_to(t, (n,)), self.T, self.n_freq)
        if cond is None:
            c = np.zeros((n, self.cond_dim))
            flag = np.zeros((n, 1))
        else:
            c = np.broadcast_to(np.asarray(cond, dtype=np.float64).reshape(-1, self.cond_dim), (n, self.cond_dim))
            flag = np.ones((n, 1))
        return np.hstack([x, tf, c, flag])

    def forward(self, x, t, cond=None):
        z = self._inputs(x, t, cond)
        h = np.tanh(z @ self.W1 + self.b1)
        return h @ self.W2 + self.b2, (z, h)

    def __call__(self, x, t, cond=None):
        out, _ = self.forward(x, t, cond)
        return out.reshape(np.shape(x))

    def backward(self, cache, g_out):
        """Parameter gradient (flat) given dL/d(output)."""
        z, h = cache
        g_out = np.atleast_2d(g_out)
        gW2 = h.T @ g_out
        gb2 = g_out.sum(axis=0)
        gh = g_out @ self.W2.T * (1 - h * h)
        gW1 = z.T @ gh
        gb1 = gh.sum(axis=0)
        return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])


def drop_conditions(n, rng, p=0.1):
    """Boolean mask of samples whose conditioning is dropped."""
    return rng.random(n) < p


def train_toy(model: ToyDenoiser, x0, cond, schedule: DdpmSchedule, steps=500, batch=64, lr=1e-3, p_drop=0.1, seed=0, lambda_mask=1.0):
    """Fit ``model`` to predict forward noise; returns the loss history."""
    rng = np.random.default_rng(seed)
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    cond = None if cond is None else np.atleast_2d(np.asarray(cond, dtype=np.float64))
    opt = Adam(lr)
    p = model.get_params()
    n_dir = 3 * (x0.shape[1] // 4)
    hist = []
    for _ in range(steps):
        idx = rng.integers(0, len(x0), batch)
        t = rng.integers(1, schedule.T + 1, batch)
        eps = rng.standard_normal((batch, x0.shape[1]))
        ab = schedule.alpha_bars[t - 1][:, None]
        xt = np.sqrt(ab) * x0[idx] + np.sqrt(1 - ab) * eps
        drop = drop_conditions(batch, rng, p_drop)
        z_parts = []
        for i in range(batch):
            c = None if cond is None or drop[i] else cond[idx[i]]
            z_parts.append(model._inputs(xt[i], t[i], c))
        z = np.vstack(z_parts)
        h = np.tanh(z @ model.W1 + model.b1)
        out = h @ model.W2 + model.b2
        val, gd, gm = loss_ddpm(eps[:, :n_dir], out[:, :n_dir], eps[:, n_dir:], out[:, n_dir:], lambda_mask, grad=True)
        g = np.hstack([gd, gm]) / batch
        p = opt.step(p, model.backward((z, h), g))
        model.set_params(p)
        hist.append(val / batch)
    return hist
