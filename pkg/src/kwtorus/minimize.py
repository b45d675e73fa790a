"""Subcritical minimization of J_{alpha, 8 pi (1 - eps)}, continuation in eps,
and the blow-up bookkeeping (c_eps, x_eps, lambda_eps, r_eps)."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .fields import SpectralField, admissible_mask, periodic_patch, quadratic_peak, trig_eval
from .functional import (
    EIGHT_PI,
    FunctionalParams,
    admissible,
    energy_identity_gap,
    evaluate,
    weak_bound_check,
)

log = logging.getLogger(__name__)


# -- peak location ---------------------------------------------------------------

class Peak(NamedTuple):
    point: tuple[float, float]
    value: float
    degenerate: bool


def argmax_refine(u: SpectralField, newton_steps: int = 4) -> Peak:
    """Grid argmax refined by a 3x3 quadratic fit, then polished with Newton
    steps on the trigonometric interpolant."""
    geom = u.geom
    vals = u.values
    if np.ptp(vals) <= 1e-14 * max(1.0, np.abs(vals).max()):
        return Peak((0.0, 0.0), float(vals.max()), True)
    i, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
    di, dj, fitted, ok = quadratic_peak(periodic_patch(vals, i, j))
    dx, dy = geom.Lx / geom.N, geom.Ly / geom.N
    pt = np.array([geom.x[i] + di * dx, geom.y[j] + dj * dy])
    if not ok:
        return Peak(geom.wrap(pt), float(vals[i, j]), True)
    anchor = np.array([geom.x[i], geom.y[j]])
    hat = u.hat
    for _ in range(newton_steps):
        q = pt[None, :]
        g = np.array([trig_eval(geom, hat, q, (1, 0))[0], trig_eval(geom, hat, q, (0, 1))[0]])
        H = np.array([[trig_eval(geom, hat, q, (2, 0))[0], trig_eval(geom, hat, q, (1, 1))[0]],
                      [0.0, trig_eval(geom, hat, q, (0, 2))[0]]])
        H[1, 0] = H[0, 1]
        if not (H[0, 0] < 0 and np.linalg.det(H) > 0):
            break
        step = np.linalg.solve(H, g)
        trial = pt - step
        if abs(trial[0] - anchor[0]) > dx or abs(trial[1] - anchor[1]) > dy:
            break
        pt = trial
        if np.hypot(*step) < 1e-15 * max(geom.Lx, geom.Ly):
            break
    value = float(trig_eval(geom, hat, pt[None, :])[0])
    if value < fitted - 1e-12 * max(1.0, abs(fitted)):
        value = max(value, float(vals[i, j]))
    return Peak(geom.wrap(pt), value, False)


# -- solver --------------------------------------------------------------------------

@dataclass(frozen=True)
class MinimizeOptions:
    tol: float = 1e-9
    max_iter: int = 20000
    armijo: float = 1e-4
    max_backtracks: int = 50
    step_min: float = 1e-3
    step_max: float = 1e3
    bubble_seed: Optional[bool] = None  # None: only for peaked (bump) weights
    bubble_scale: Optional[float] = None


@dataclass(frozen=True, eq=False)
class MinimizeResult:
    u: SpectralField = dc_field(repr=False)
    J: float
    mass: float
    log_mass: float
    c: float
    x: tuple[float, float]
    el_residual: float
    grad_norm: float
    iterations: int
    eps: float
    converged: bool
    status: str
    energy_gap: float
    weak_bound_ok: bool
    J_critical_min: float
    findings: tuple[str, ...] = ()

    def summary(self) -> dict:
        return {
            "eps": self.eps, "J": self.J, "mass": self.mass, "log_mass": self.log_mass,
            "c": self.c, "x": list(self.x), "residual": self.el_residual,
            "grad_norm": self.grad_norm, "iterations": self.iterations,
            "converged": self.converged, "status": self.status,
            "energy_gap": self.energy_gap, "weak_bound_ok": self.weak_bound_ok,
        }


class _Metric:
    """Inner products in fft2 space with the ``(lambda_k - alpha)^{-1}`` preconditioner."""

    def __init__(self, p: FunctionalParams):
        geom = p.geom
        keep = admissible_mask(geom, p.ell)
        shifted = geom.eigenvalues - p.alpha
        if np.any(shifted[keep] <= 0):
            raise ValueError(f"alpha={p.alpha} is not below lambda_(ell+1); the problem is not coercive")
        self.P = np.where(keep, 1.0 / np.where(keep, shifted, 1.0), 0.0)
        self.scale = geom.volume / geom.N**4

    def dot(self, a, b) -> float:
        return float(np.sum((np.conj(a) * b).real) * self.scale)

    def pdot(self, a, b) -> float:
        return float(np.sum((np.conj(a) * b).real * self.P) * self.scale)

    def pinv_dot(self, a, b) -> float:
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(self.P > 0, 1.0 / self.P, 0.0)
        return float(np.sum((np.conj(a) * b).real * w) * self.scale)


def _descend(p: FunctionalParams, u0: SpectralField, opts: MinimizeOptions):
    geom = p.geom
    metric = _Metric(p)
    u = admissible(u0, p)
    ev = evaluate(u, p)
    crit_beta = EIGHT_PI - p.beta
    J_crit_min = ev.J - crit_beta * ev.log_mass
    tau = 1.0
    status = "max_iter"
    it = 0
    prev_u_hat = prev_g_hat = None
    while True:
        g_hat = ev.grad.hat
        gP = math.sqrt(max(metric.pdot(g_hat, g_hat), 0.0))
        gL2 = ev.grad.l2_norm()
        if max(gP, gL2) <= opts.tol:
            status = "converged"
            break
        if it >= opts.max_iter:
            break
        if prev_u_hat is not None:
            s = u.hat - prev_u_hat
            y = g_hat - prev_g_hat
            sy = metric.dot(s, y)
            tau = 1.0 if sy <= 0 else min(max(metric.pinv_dot(s, s) / sy, opts.step_min), opts.step_max)
        d_hat = -metric.P * g_hat
        slope = metric.dot(g_hat, d_hat)
        step = tau
        accepted = False
        for _ in range(opts.max_backtracks):
            trial = SpectralField(geom, np.fft.ifft2(u.hat + step * d_hat).real, mean_zero=True)
            tev = evaluate(trial, p)
            if tev.J <= ev.J + opts.armijo * step * slope:
                accepted = True
                break
            noise = 1e-14 * max(1.0, abs(ev.J))
            if tev.J <= ev.J + noise:
                tP = math.sqrt(max(metric.pdot(tev.grad.hat, tev.grad.hat), 0.0))
                if tP < gP:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            status = "stalled"
            break
        assert tev.J <= ev.J + 1e-14 * max(1.0, abs(ev.J)), "descent step increased J"
        prev_u_hat, prev_g_hat = u.hat, g_hat
        u, ev = trial, tev
        J_crit_min = min(J_crit_min, ev.J - crit_beta * ev.log_mass)
        it += 1
    return u, ev, it, status, J_crit_min


def bubble_seed_field(p: FunctionalParams, scale: Optional[float] = None) -> SpectralField:
    from .asymptotics import bubble_seed

    h = p.weight
    return admissible(bubble_seed(p.geom, h.argmax, scale), p)


def minimize_subcritical(p: FunctionalParams, init: Optional[SpectralField] = None,
                         opts: MinimizeOptions = MinimizeOptions()) -> MinimizeResult:
    if p.eps is None or not p.eps > 0:
        raise ValueError("minimize_subcritical needs eps > 0")
    if not p.is_coercive():
        raise ValueError(f"alpha={p.alpha} must stay below lambda_{p.ell + 1}={p.alpha_ceiling():.6g}")
    geom = p.geom
    if init is None:
        init = SpectralField(geom, np.zeros((geom.N, geom.N)), mean_zero=True)
    runs = [_descend(p, init, opts)]
    use_seed = opts.bubble_seed if opts.bubble_seed is not None else (p.weight.kind == "bump" and p.weight.a > 0)
    if use_seed:
        runs.append(_descend(p, bubble_seed_field(p, opts.bubble_scale), opts))
    # prefer converged runs, then lower J
    u, ev, it, status, J_crit_min = min(runs, key=lambda r: (r[3] != "converged", r[1].J))
    J_crit_min = min(r[4] for r in runs)
    peak = argmax_refine(u)
    resid = ev.grad.l2_norm()
    metric = _Metric(p)
    gP = math.sqrt(max(metric.pdot(ev.grad.hat, ev.grad.hat), 0.0))
    converged = status == "converged" and abs(u.integral()) <= 1e-12
    gap = energy_identity_gap(u, p)
    mass = math.exp(ev.log_mass) if ev.log_mass < 709 else math.inf
    findings = []
    floor = 1e-6 * p.weight.integral()
    if not mass > floor:
        findings.append(f"mass {mass:.3e} fell below the positive floor {floor:.3e}")
    bound_ok = weak_bound_check(ev.J, p)
    if converged and not bound_ok:
        findings.append(f"J={ev.J:.6g} exceeds the weak upper bound")
    for msg in findings:
        log.warning(msg)
    return MinimizeResult(u, float(ev.J), mass, float(ev.log_mass), peak.value, peak.point,
                          resid, gP, it, float(p.eps), converged, status, gap, bound_ok,
                          float(J_crit_min), tuple(findings))


# -- continuation ------------------------------------------------------------------

def blowup_scale(log_mass: float, eps: float, h_at_x: float, c: float) -> float:
    """``sqrt(lambda / (8 pi (1 - eps) h(x))) e^{-c/2}`` evaluated in log form."""
    return math.exp(0.5 * (log_mass - math.log(EIGHT_PI * (1.0 - eps) * h_at_x) - c))


@dataclass(frozen=True)
class VerdictRule:
    bounded_spread: float = 0.5
    window: int = 3
    ratio_band: tuple[float, float] = (0.5, 2.0)


@dataclass(frozen=True, eq=False)
class ContinuationReport:
    records: list
    results: list = dc_field(repr=False)
    r_eps: list
    growth: list
    verdict: str
    rule: VerdictRule

    def rows(self) -> list[dict]:
        out = []
        for rec, r in zip(self.records, self.r_eps):
            row = dict(rec)
            row["r_eps"] = r
            out.append(row)
        return out


def classify(cs: Sequence[float], eps: Sequence[float], rule: VerdictRule = VerdictRule()):
    """Heuristic verdict and growth rates ``dc / dlog(1/eps)``."""
    growth = []
    for k in range(1, len(cs)):
        dlog = math.log(eps[k - 1] / eps[k])
        growth.append((cs[k] - cs[k - 1]) / dlog)
    w = rule.window
    if len(cs) < w:
        return "inconclusive", growth
    tail = np.asarray(cs[-w:])
    if np.ptp(tail) < rule.bounded_spread:
        return "bounded", growth
    g_tail = growth[-(w - 1):]
    if all(g > 0 for g in g_tail):
        ratios = [g_tail[k] / g_tail[k - 1] for k in range(1, len(g_tail))]
        lo, hi = rule.ratio_band
        if all(lo <= q <= hi for q in ratios):
            return "blowup-consistent", growth
    return "inconclusive", growth


def continuation_sweep(p: FunctionalParams, eps_schedule: Sequence[float],
                       init: Optional[SpectralField] = None,
                       opts: MinimizeOptions = MinimizeOptions(),
                       rule: VerdictRule = VerdictRule()) -> ContinuationReport:
    eps_schedule = [float(e) for e in eps_schedule]
    if not eps_schedule or any(e <= 0 for e in eps_schedule):
        raise ValueError("eps schedule must be non-empty and positive")
    if any(b >= a for a, b in zip(eps_schedule, eps_schedule[1:])):
        raise ValueError("eps schedule must be strictly decreasing")
    records, results, r_list = [], [], []
    current = init
    for eps in eps_schedule:
        q = FunctionalParams.subcritical(p.alpha, eps, p.weight, p.ell)
        res = minimize_subcritical(q, current, opts)
        if not res.converged:
            log.warning("eps=%g did not converge (%s)", eps, res.status)
        r = blowup_scale(res.log_mass, eps, p.weight.at(res.x), res.c)
        rec = res.summary()
        rec["h_x"] = p.weight.at(res.x)
        records.append(rec)
        results.append(res)
        r_list.append(r)
        current = res.u
    verdict, growth = classify([r["c"] for r in records], eps_schedule, rule)
    return ContinuationReport(records, results, r_list, growth, verdict, rule)


def recompute_r_eps(record: dict) -> float:
    return blowup_scale(record["log_mass"], record["eps"], record["h_x"], record["c"])
