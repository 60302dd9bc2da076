"""Block-coordinate solver for sum secrecy maximization and the two baselines.

The power block is projected gradient ascent with backtracking on the relaxed
(clamp-free) objective, with gradients from the autodiff tape. The direction
block is a greedy best-single-flip search on the clamped objective.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .secrecy import (LinkGains, Schedule, link_rates, partners, relaxed_value_and_grad,
                      sum_secrecy)


@dataclass
class SolverConfig:
    max_outer_iters: int = 50
    rel_tol: float = 1e-4
    power_step_iters: int = 100
    line_search_shrink: float = 0.5
    initial_step: float | None = None  # watts; None means P_max / 10
    power_tol: float = 1e-7

    def __post_init__(self):
        if self.max_outer_iters < 1 or self.power_step_iters < 1:
            raise ValueError("iteration counts must be positive")
        if not 0 < self.rel_tol < 1:
            raise ValueError("rel_tol must lie in (0, 1)")
        if not 0 < self.line_search_shrink < 1:
            raise ValueError("line_search_shrink must lie in (0, 1)")
        if self.initial_step is not None and self.initial_step <= 0:
            raise ValueError("initial_step must be positive")


@dataclass
class SolveResult:
    schedule: Schedule
    objective: float
    trace: list = field(default_factory=list)


def _relaxed(lg, t, p):
    return float(relaxed_value_and_grad(lg, t[None], p[None], need_grad=False)[0][0])


def _relaxed_grad(lg, t, p):
    f, g = relaxed_value_and_grad(lg, t[None], p[None])
    return float(f[0]), g[0]


def optimize_power(real, t, cfg: SolverConfig | None = None, p0=None, lg=None):
    """Projected gradient ascent on the relaxed objective with directions fixed.

    Each accepted iterate strictly increases the relaxed objective; the loop
    stops on stall (no step size down to 1e-12 P_max improves) or when the
    relative gain drops below ``cfg.power_tol``.
    """
    cfg = cfg or SolverConfig()
    t = np.asarray(t, dtype=float)
    pmax = real.pmax_w
    lg = lg or LinkGains([real])
    p = pmax * t if p0 is None else np.clip(np.asarray(p0, dtype=float), 0.0, pmax) * t
    step = pmax / 10.0 if cfg.initial_step is None else cfg.initial_step
    f, g = _relaxed_grad(lg, t, p)
    for _ in range(cfg.power_step_iters):
        g = g * t
        # drop components pushing against an active bound
        g[(p >= pmax) & (g > 0)] = 0.0
        g[(p <= 0.0) & (g < 0)] = 0.0
        gmax = np.max(np.abs(g))
        if gmax == 0.0:
            break
        direction = g / gmax
        while step > 1e-12 * pmax:
            cand = np.clip(p + step * direction, 0.0, pmax)
            f_cand = _relaxed(lg, t, cand)
            if f_cand > f:
                break
            step *= cfg.line_search_shrink
        else:
            break
        gain = f_cand - f
        p = cand
        f_cand, g = _relaxed_grad(lg, t, p)
        f_old, f = f, f_cand
        step = min(step * 2.0, pmax)
        if gain <= cfg.power_tol * max(abs(f_old), 1e-12):
            break
    return p * t


def _t_from_first(first):
    t = np.empty(2 * len(first))
    t[0::2] = first
    t[1::2] = 1.0 - np.asarray(first, dtype=float)
    return t


def max_power_direction(real):
    """Per pair, the user with the stronger desired-link channel transmits."""
    H = np.abs(real.H)
    n = H.shape[0] // 2
    # |h_{2n+1, 2n}| is the link 2n -> 2n+1
    fwd = H[2 * np.arange(n) + 1, 2 * np.arange(n)]
    bwd = H[2 * np.arange(n), 2 * np.arange(n) + 1]
    return _t_from_first((fwd >= bwd).astype(float))


def optimize_direction(real, p, t0=None):
    """Greedy best-single-flip search over pair directions.

    Pair power ``p[2n] + p[2n+1]`` follows the pair's transmitter across flips.
    Returns a 1-flip locally optimal binary direction vector.
    """
    p = np.asarray(p, dtype=float)
    pair_power = p.reshape(-1, 2).sum(axis=1)
    t = max_power_direction(real) if t0 is None else np.asarray(t0, dtype=float).copy()
    first = t[0::2].copy()

    def value(first_):
        tt = _t_from_first(first_)
        return float(link_rates(real, tt, np.repeat(pair_power, 2) * tt).sum())

    best = value(first)
    while True:
        cand_val, cand_idx = best, -1
        for n in range(len(first)):
            first[n] = 1.0 - first[n]
            v = value(first)
            first[n] = 1.0 - first[n]
            if v > cand_val:
                cand_val, cand_idx = v, n
        if cand_idx < 0:
            break
        first[cand_idx] = 1.0 - first[cand_idx]
        best = cand_val
    return _t_from_first(first)


def _powers_for(t, p):
    return np.repeat(np.asarray(p).reshape(-1, 2).sum(axis=1), 2) * t


def solve(real, cfg: SolverConfig | None = None, t0=None):
    """Alternate power and direction blocks until the working point settles.

    Each start begins at full power on its directions. With ``t0`` given that
    is the only start; otherwise the Max-Power directions are tried first and
    the fixed HD directions second, since a pair silenced by the power block
    can no longer be moved by single flips. The working point follows every
    block; the returned schedule is the best seen under the clamped sum
    secrecy rate and ``trace`` holds that best-so-far value after each outer
    iteration, so it is nondecreasing. Convergence is judged on the relaxed
    objective, which keeps moving where the clamped one is flat at zero.
    """
    cfg = cfg or SolverConfig()
    lg = LinkGains([real])
    if t0 is None:
        starts = [max_power_direction(real), hd_direction(real.n_pairs)]
    else:
        starts = [np.asarray(t0, dtype=float)]
    best_s, best, trace = None, -np.inf, []

    def offer(t_, p_):
        nonlocal best, best_s
        v = sum_secrecy(real, Schedule(t_, p_))
        if v > best:
            best, best_s = v, Schedule(t_.copy(), p_.copy())

    for t in starts:
        p = real.pmax_w * t
        offer(t, p)
        trace.append(best)
        f_work = _relaxed(lg, t, p)
        for _ in range(cfg.max_outer_iters):
            p = optimize_power(real, t, cfg, p0=p, lg=lg)
            offer(t, p)
            t_new = optimize_direction(real, p, t0=t)
            moved = not np.array_equal(t_new, t)
            t, p = t_new, _powers_for(t_new, p)
            offer(t, p)
            trace.append(best)
            f_new = _relaxed(lg, t, p)
            settled = abs(f_new - f_work) <= cfg.rel_tol * max(abs(f_work), 1e-12)
            f_work = f_new
            if settled and not moved:
                break
    return SolveResult(best_s, best, trace)


def hd_direction(n_pairs):
    return _t_from_first(np.ones(n_pairs))


def baseline_hd(real, cfg: SolverConfig | None = None):
    """Fixed directions (user 2n transmits in every pair), optimized powers."""
    t = hd_direction(real.n_pairs)
    return Schedule(t, optimize_power(real, t, cfg))


def baseline_max_power(real):
    t = max_power_direction(real)
    return Schedule(t, real.pmax_w * t)
