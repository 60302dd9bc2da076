"""SINRs, secrecy rates and the sum secrecy objective.

Everything here is 0-based: users ``2n`` and ``2n + 1`` form a pair and the
directed link into receiver ``n`` comes from ``partner(n) = n ^ 1``. Rates are
in nats. ``t`` is the transmit indicator (binary, or fractional for the
relaxed objective) and ``p`` the per-user power in watts.

Two evaluation paths exist. The numpy functions evaluate one realization and
serve as the reference metric. :class:`LinkGains` with
:func:`relaxed_rates_tensor` evaluates a batch of realizations on the autodiff
tape so optimizers can differentiate the relaxed objective.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import spd_solve_array

LN2 = np.log(2.0)


def pair_partner(n):
    """Partner of user ``n`` in 1-based numbering: m = 2 (n mod 2) + n - 1."""
    if n < 1:
        raise IndexError(f"user index {n} out of range (1-based)")
    return 2 * (n % 2) + n - 1


def partners(n_users):
    return np.arange(n_users) ^ 1


@dataclass
class Schedule:
    """Binary transmit directions ``t`` and powers ``p`` for all 2N users."""

    t: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.p = np.asarray(self.p, dtype=float)

    def check(self, pmax, atol=0.0):
        """Raise ``ValueError`` unless the box, pairing and binary constraints hold."""
        t, p = self.t, self.p
        if t.shape != p.shape or t.ndim != 1 or t.size % 2:
            raise ValueError("t and p must be vectors of equal even length")
        if not np.all((t == 0) | (t == 1)):
            raise ValueError("t must be binary")
        if not np.all(t + t[partners(t.size)] == 1):
            raise ValueError("exactly one user per pair must transmit")
        if np.any(p < -atol) or np.any(p > pmax + atol):
            raise ValueError("power outside [0, P_max]")
        if np.any(p[t == 0] != 0):
            raise ValueError("receivers must have zero power")
        return True

    @classmethod
    def from_pairs(cls, first_transmits, pair_power):
        """Build from per-pair choices: ``first_transmits[n]`` picks user 2n."""
        first = np.asarray(first_transmits, dtype=bool)
        t = np.empty(2 * first.size)
        t[0::2] = first
        t[1::2] = ~first
        p = np.repeat(np.asarray(pair_power, dtype=float), 2) * t
        return cls(t, p)


@dataclass
class RelaxedSchedule:
    """Fractional directions with ``t_m + t_n = 1`` per pair."""

    t: np.ndarray
    p: np.ndarray


def _interference_mask(n_users):
    mask = np.ones((n_users, n_users))
    idx = np.arange(n_users)
    mask[idx, idx] = 0.0
    mask[idx, idx ^ 1] = 0.0
    return mask


def flexd_sinrs(real, t, p):
    """Legitimate SINR at every user acting as receiver of its partner."""
    n_users = real.H.shape[0]
    part = partners(n_users)
    w = np.asarray(t, dtype=float) * np.asarray(p, dtype=float)
    gain = np.abs(real.H) ** 2
    signal = gain[np.arange(n_users), part] * w[part]
    interference = (gain * _interference_mask(n_users)) @ w
    return signal / (real.noise_w + interference)


def flexd_sinr(real, s, n):
    return float(flexd_sinrs(real, s.t, s.p)[n])


def eve_covariances(real, t, p):
    """Per-transmitter eavesdropper noise-plus-interference matrices (2N, K, K)."""
    n_users, k = real.G.shape
    w = np.asarray(t, dtype=float) * np.asarray(p, dtype=float)
    weights = _interference_mask(n_users) * w[None, :]
    outer = real.G[:, :, None] * np.conj(real.G[:, None, :])
    cov = np.einsum("mj,jkl->mkl", weights, outer)
    cov += real.noise_w * np.eye(k)[None]
    return cov


def _hpd_solve(A, b, rtol=1e-12):
    x = spd_solve_array(A, b)
    resid = np.linalg.norm(A @ x[..., None] - b[..., None], axis=(-2, -1))
    scale = np.linalg.norm(A, axis=(-2, -1)) * np.linalg.norm(x, axis=-1) + np.linalg.norm(b, axis=-1)
    bad = resid > rtol * scale
    if np.any(bad):
        x[bad] = np.linalg.solve(A[bad], b[bad][..., None])[..., 0]
    return x


def eve_sinrs(real, t, p):
    """MMSE SINR of each user's signal at the coordinated eavesdroppers."""
    w = np.asarray(t, dtype=float) * np.asarray(p, dtype=float)
    cov = eve_covariances(real, t, p)
    x = _hpd_solve(cov, real.G)
    q = np.einsum("mk,mk->m", np.conj(real.G), x).real
    return w * np.maximum(q, 0.0)


def eve_sinr(real, s, m):
    return float(eve_sinrs(real, s.t, s.p)[m])


def secrecy_rate(gamma_f, gamma_e):
    return max(0.0, float(np.log1p(gamma_f) - np.log1p(gamma_e)))


def link_rates(real, t, p, clamp=True):
    """Secrecy rate of every directed link ``partner(n) -> n``, indexed by receiver."""
    gf = flexd_sinrs(real, t, p)
    ge = eve_sinrs(real, t, p)
    r = np.log1p(gf) - np.log1p(ge[partners(len(gf))])
    return np.maximum(r, 0.0) if clamp else r


def sum_secrecy(real, s):
    return float(link_rates(real, s.t, s.p, clamp=True).sum())


def relaxed_sum_secrecy(real, s):
    return float(link_rates(real, s.t, s.p, clamp=False).sum())


# -- batched differentiable path ---------------------------------------------

def real_rep(C):
    """Real 2K x 2K representation [[Re, -Im], [Im, Re]] of complex K x K matrices."""
    top = np.concatenate([C.real, -C.imag], axis=-1)
    bot = np.concatenate([C.imag, C.real], axis=-1)
    return np.concatenate([top, bot], axis=-2)


class LinkGains:
    """Noise-normalized channel constants for a batch of same-size realizations."""

    def __init__(self, reals):
        reals = list(reals)
        H = np.stack([r.H / np.sqrt(r.noise_w) for r in reals])
        G = np.stack([r.G / np.sqrt(r.noise_w) for r in reals])
        b, n_users, k = G.shape
        self.n_users, self.n_eves, self.batch = n_users, k, b
        self.part = partners(n_users)
        gain = np.abs(H) ** 2
        self.signal_gain = gain[:, np.arange(n_users), self.part]
        self.interf_gain = gain * _interference_mask(n_users)
        self.eve_mask = _interference_mask(n_users)
        self.eve_vec = np.concatenate([G.real, G.imag], axis=-1)
        outer = G[..., :, None] * np.conj(G[..., None, :])
        self.eve_outer = real_rep(outer).reshape(b, n_users, 4 * k * k)
        self.eye = np.eye(2 * k)

    def subset(self, idx):
        out = object.__new__(LinkGains)
        out.__dict__.update(self.__dict__)
        for name in ("signal_gain", "interf_gain", "eve_vec", "eve_outer"):
            setattr(out, name, getattr(self, name)[idx])
        out.batch = len(out.signal_gain)
        return out


def relaxed_rates_tensor(lg: LinkGains, t, p):
    """Clamp-free link rates (B, 2N) as a Tensor; ``t``, ``p`` are (B, 2N) Tensors."""
    b, n, k = lg.batch, lg.n_users, lg.n_eves
    w = t * p
    signal = w.take(lg.part, axis=1) * lg.signal_gain
    interf = (lg.interf_gain @ w.reshape(b, n, 1)).reshape(b, n)
    gamma_f = signal / (interf + 1.0)
    weights = w.reshape(b, 1, n) * lg.eve_mask
    cov = (weights @ lg.eve_outer).reshape(b, n, 2 * k, 2 * k) + lg.eye
    x = ad.solve_spd(cov, ad.Tensor(lg.eve_vec))
    q = (x * lg.eve_vec).sum(axis=-1)
    gamma_e = w * q
    return ad.log1p(gamma_f) - ad.log1p(gamma_e).take(lg.part, axis=1)


def relaxed_value_and_grad(lg: LinkGains, t, p, need_grad=True):
    """Relaxed sum secrecy (B,) and its gradient w.r.t. ``p`` (B, 2N), plain numpy.

    Same quantity as :func:`relaxed_sum_secrecy_tensor` without building a
    tape; the solver calls this thousands of times per instance.
    """
    b, n, k = lg.batch, lg.n_users, lg.n_eves
    t = np.broadcast_to(np.asarray(t, dtype=float), (b, n))
    w = t * np.asarray(p, dtype=float)
    denom = 1.0 + np.einsum("bnj,bj->bn", lg.interf_gain, w)
    gamma_f = w[:, lg.part] * lg.signal_gain / denom
    outer = lg.eve_outer.reshape(b, n, 2 * k, 2 * k)
    cov = np.einsum("bmj,bjxy->bmxy", w[:, None, :] * lg.eve_mask, outer) + lg.eye
    # tiny systems: one LU call is cheaper than Cholesky plus two triangular solves
    x = np.linalg.solve(cov, lg.eve_vec[..., None])[..., 0]
    q = np.einsum("bmx,bmx->bm", x, lg.eve_vec)
    gamma_e = w * q
    value = (np.log1p(gamma_f) - np.log1p(gamma_e)).sum(axis=1)
    if not need_grad:
        return value, None

    # d/dw_j of sum_n log1p(gamma_f[n])
    a = 1.0 / (1.0 + gamma_f)
    grad = np.zeros((b, n))
    np.add.at(grad, (slice(None), lg.part), a * lg.signal_gain / denom)
    grad -= np.einsum("bn,bnj->bj", a * gamma_f / denom, lg.interf_gain)
    # d/dw_j of -sum_m log1p(gamma_e[m]), with dq_m/dw_j = -mask[m, j] x_m' O_j x_m
    c = 1.0 / (1.0 + gamma_e)
    quad = np.einsum("bmx,bjxy,bmy->bmj", x, outer, x) * lg.eve_mask
    grad -= c * q
    grad += np.einsum("bm,bmj->bj", c * w, quad)
    return value, grad * t


def relaxed_sum_secrecy_tensor(lg: LinkGains, t, p):
    """Per-realization relaxed sum secrecy, shape (B,)."""
    return relaxed_rates_tensor(lg, t, p).sum(axis=1)
