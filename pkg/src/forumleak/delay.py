"""Post-to-message delay distribution and its two-exponential fit.

The fitted curve is ``g(x) = a1*exp(-b1*x) + a2*exp(-b2*x) + c`` over bin
centres ``x`` in hours, with densities in messages/hour. ``c`` is the
post-independent background; :func:`evaluate_f` drops it.
"""

from __future__ import annotations

import bisect
import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from forumleak import FitError
from forumleak.model import HOUR, ForumDataset

PARAM_NAMES = ("a1", "b1", "a2", "b2", "c")
START_FAST_RATES = (0.5, 2.0, 8.0)
START_SLOW_RATES = (0.01, 0.05, 0.2)
MIN_NONEMPTY_BINS = 6
# a component below this fraction of the peak density everywhere is dropped
INACTIVE_FRACTION = 1e-9
# components whose rates agree this closely are merged into one
MERGE_RTOL = 1e-5
# log-parameter box that keeps exp() finite
_LOG_LO, _LOG_HI = -60.0, 40.0


@dataclass(frozen=True)
class DelaySample:
    post_id: str
    recipient_id: str
    tau: int  # seconds


def compute_delays(dataset: ForumDataset, window=None) -> list:
    """Pair every thread-starting post with each later message to its creator.

    A message following several posts by the same user is paired with each
    of them. Only strictly positive delays are kept.
    """
    inbox = dataset.inbox
    out = []
    for post in dataset.thread_starts():
        if window is not None and not window.contains(post.ts):
            continue
        stamps = inbox.get(post.author_id)
        if not stamps:
            continue
        i = bisect.bisect_right(stamps, post.ts)
        for t in stamps[i:]:
            if window is not None and not window.contains(t):
                continue
            out.append(DelaySample(post.post_id, post.author_id, t - post.ts))
    return out


@dataclass
class DelayHistogram:
    bin_edges: np.ndarray  # seconds
    counts: np.ndarray
    method: str
    param: float  # bin width in seconds (naive) or target items per bin (balanced)
    too_sparse: bool = False

    @property
    def widths_hours(self) -> np.ndarray:
        return np.diff(self.bin_edges) / HOUR

    @property
    def densities(self) -> np.ndarray:
        return self.counts / self.widths_hours

    @property
    def centers_hours(self) -> np.ndarray:
        return (self.bin_edges[:-1] + self.bin_edges[1:]) / (2 * HOUR)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_start", "bin_end", "count", "density"])
            for lo, hi, n, d in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts, self.densities):
                w.writerow([repr(float(lo)), repr(float(hi)), int(n), repr(float(d))])


def _as_taus(samples) -> np.ndarray:
    return np.asarray([s.tau if isinstance(s, DelaySample) else s for s in samples], dtype=float)


def histogram(samples, method: str = "balanced", tau_max: float = 15 * HOUR, *,
              bin_width: float = 900.0, avg_per_bin: float = 4.0) -> DelayHistogram:
    """Bin delays (seconds) over ``(0, tau_max]``.

    ``naive`` uses fixed ``bin_width`` seconds; the last bin is clipped at
    ``tau_max``. ``balanced`` uses ``ceil(N / avg_per_bin)`` equal bins where
    ``N`` counts samples inside the range, so bins hold ``avg_per_bin`` items
    on average.
    """
    taus = _as_taus(samples)
    taus = taus[(taus > 0) & (taus <= tau_max)]
    sparse = False
    if method == "naive":
        if bin_width <= 0:
            raise ValueError("bin_width must be positive")
        nbins = max(1, math.ceil(tau_max / bin_width - 1e-9))
        edges = bin_width * np.arange(nbins + 1, dtype=float)
        edges[-1] = min(edges[-1], tau_max)
        param = float(bin_width)
    elif method == "balanced":
        if avg_per_bin <= 0:
            raise ValueError("avg_per_bin must be positive")
        n = len(taus)
        if n == 0:
            raise FitError("balanced binning needs at least one sample")
        if avg_per_bin > n:
            sparse = True
        nbins = max(1, math.ceil(n / avg_per_bin))
        edges = (tau_max / nbins) * np.arange(nbins + 1, dtype=float)
        edges[-1] = tau_max
        param = float(avg_per_bin)
    else:
        raise ValueError(f"unknown binning method {method!r}")
    # bins are (lo, hi]
    idx = np.searchsorted(edges, taus, side="left") - 1
    counts = np.bincount(np.clip(idx, 0, len(edges) - 2), minlength=len(edges) - 1).astype(float)
    return DelayHistogram(edges, counts, method, param, sparse)


@dataclass
class DelayModel:
    a1: float
    b1: float
    a2: float
    b2: float
    c: float
    tau_max_hours: float
    r_squared: float
    method: str = "balanced"
    bin_param: float = 0.0
    n_bins: int = 0
    n_samples: int = 0
    iterations: int = 0
    converged: bool = True
    seed: int = 0
    tau_max_stable: Optional[bool] = None
    extra: dict = field(default_factory=dict)

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([self.a1, self.b1, self.a2, self.b2, self.c])

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "DelayModel":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)

    @classmethod
    def load(cls, path) -> "DelayModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def evaluate_f(model: DelayModel, tau_hours):
    """Post-related message density at delay ``tau_hours``; the background ``c`` is excluded."""
    t = np.asarray(tau_hours, dtype=float)
    if np.any(t < 0):
        raise ValueError("delay must be non-negative")
    val = model.a1 * np.exp(-model.b1 * t) + model.a2 * np.exp(-model.b2 * t)
    return float(val) if np.ndim(val) == 0 else val


def _curve(p: np.ndarray, x: np.ndarray) -> tuple:
    a1, b1, a2, b2, c = p
    e1 = np.exp(-b1 * x)
    e2 = np.exp(-b2 * x)
    g = a1 * e1 + a2 * e2 + c
    # derivatives with respect to the log parameters
    J = np.empty((x.size, 5))
    J[:, 0] = a1 * e1
    J[:, 1] = -a1 * b1 * x * e1
    J[:, 2] = a2 * e2
    J[:, 3] = -a2 * b2 * x * e2
    J[:, 4] = c
    return g, J


def _bounds(x: np.ndarray) -> tuple:
    """Box on log-parameters. Rates are capped at one e-fold per first bin
    centre: a faster component only fits the first bin's noise and has no
    finite optimum."""
    lo = np.full(5, _LOG_LO)
    hi = np.full(5, _LOG_HI)
    x0 = float(x.min())
    if x0 > 0:
        hi[1] = hi[3] = math.log(1.0 / x0)
    return lo, hi


def levenberg_marquardt(x: np.ndarray, y: np.ndarray, theta0: np.ndarray, max_iter: int = 500,
                        xtol: float = 1e-12, ftol: float = 1e-15) -> tuple:
    """Minimise ``sum((g(x; exp(theta)) - y)**2)`` over log-parameters ``theta``.

    Marquardt diagonal scaling with Nielsen's damping update; steps are
    projected onto the parameter box. Returns
    ``(theta, ss_res, iterations, converged)``.
    """
    lo, hi = _bounds(x)
    theta = np.clip(np.asarray(theta0, dtype=float), lo, hi)
    g, J = _curve(np.exp(theta), x)
    r = g - y
    cost = r @ r
    mu, nu = 1e-3, 2.0
    for it in range(1, max_iter + 1):
        A = J.T @ J
        grad = J.T @ r
        diag = np.diag(A).copy()
        floor = 1e-12 * diag.max() if diag.max() > 0 else 1e-300
        diag = np.maximum(diag, floor)
        if np.abs(grad).max() <= 1e-14 * max(cost, 1e-300) ** 0.5 * np.sqrt(diag.max()):
            return theta, cost, it, True
        try:
            step = np.linalg.solve(A + mu * np.diag(diag), -grad)
        except np.linalg.LinAlgError:
            mu *= nu
            nu *= 2
            continue
        new_theta = np.clip(theta + step, lo, hi)
        g_new, J_new = _curve(np.exp(new_theta), x)
        r_new = g_new - y
        new_cost = r_new @ r_new
        h = new_theta - theta
        predicted = -(2.0 * h @ grad + h @ A @ h)
        rho = (cost - new_cost) / predicted if predicted > 0 else -1.0
        if rho > 0 and np.isfinite(new_cost):
            small_step = np.abs(new_theta - theta).max() < xtol
            small_gain = (cost - new_cost) <= ftol * cost
            theta, J, r, cost = new_theta, J_new, r_new, new_cost
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            if small_step or small_gain:
                return theta, cost, it, True
        else:
            if np.abs(h).max() < xtol:
                return theta, cost, it, True
            mu *= nu
            nu *= 2.0
            if mu > 1e30:
                return theta, cost, it, False
    return theta, cost, max_iter, False


def _starts(x: np.ndarray, y: np.ndarray) -> list:
    n = len(y)
    tail = y[max(0, n - max(1, n // 10)):]
    tiny = 1e-12 * max(np.abs(y).max(), 1e-300)
    c0 = max(float(np.median(tail)), tiny)
    a_total = max(float(y[0]) - c0, tiny)
    a2_0 = max(float(np.mean(y[n // 2:])) - c0, 0.05 * a_total)
    a1_0 = max(a_total - a2_0, 0.5 * a_total)
    out = []
    for b1 in START_FAST_RATES:
        for b2 in START_SLOW_RATES:
            out.append(np.log([a1_0, b1, a2_0, b2, c0]))
    return out


def _canonical(p: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple:
    """Order components fast-first and zero out a component that contributes
    nothing over the fitted range.

    An inactive component's rate is unidentifiable; it is pinned to a tenth
    of the active rate so repeated fits stay comparable.
    """
    a1, b1, a2, b2, c = (float(v) for v in p)
    if b2 > b1:
        a1, b1, a2, b2 = a2, b2, a1, b1
    cutoff = INACTIVE_FRACTION * float(np.abs(y).max())
    x0 = float(x.min())
    dead1 = a1 * math.exp(-b1 * x0) < cutoff
    dead2 = a2 * math.exp(-b2 * x0) < cutoff
    if not (dead1 or dead2) and abs(b1 - b2) <= MERGE_RTOL * b1:
        a1, b1 = a1 + a2, (a1 * b1 + a2 * b2) / (a1 + a2)
        dead2 = True
    if dead1 and not dead2:
        a1, b1 = a2, b2
        dead2 = True
    if dead2:
        a2, b2 = 0.0, b1 / 10.0
    if dead1 and a1 * math.exp(-b1 * x0) < cutoff:
        a1 = 0.0
    return a1, b1, a2, b2, c


def fit(hist: DelayHistogram, seed: int = 0, max_iter: int = 500) -> DelayModel:
    """Least-squares fit of the two-exponential curve plus constant to bin densities.

    Runs Levenberg-Marquardt from a fixed grid of starting rates and keeps the
    lowest residual sum of squares (earliest start on ties). The faster
    component is reported first.
    """
    x = hist.centers_hours
    y = hist.densities.astype(float)
    if np.count_nonzero(hist.counts) < MIN_NONEMPTY_BINS:
        raise FitError(f"need at least {MIN_NONEMPTY_BINS} non-empty bins, got {np.count_nonzero(hist.counts)}")
    if not np.any(y > 0):
        raise FitError("all densities are zero")
    # fit on peak-normalised densities so the log-parameter box is scale free
    scale = float(y.max())
    yn = y / scale
    best = None
    total_iter = 0
    any_converged = False
    for theta0 in _starts(x, yn):
        theta, ss, it, ok = levenberg_marquardt(x, yn, theta0, max_iter=max_iter)
        total_iter += it
        any_converged |= ok
        if best is None or ss < best[1]:
            best = (theta, ss)
    a1, b1, a2, b2, c = _canonical(np.exp(best[0]), x, yn)
    a1, a2, c = a1 * scale, a2 * scale, c * scale
    resid = y - (a1 * np.exp(-b1 * x) + a2 * np.exp(-b2 * x) + c)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    ss_res = float(resid @ resid)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else float("-inf"))
    return DelayModel(
        a1=float(a1), b1=float(b1), a2=float(a2), b2=float(b2), c=float(c),
        tau_max_hours=float(hist.bin_edges[-1] / HOUR),
        r_squared=r2,
        method=hist.method,
        bin_param=hist.param,
        n_bins=len(hist.counts),
        n_samples=int(hist.counts.sum()),
        iterations=total_iter,
        converged=any_converged,
        seed=seed,
    )


@dataclass
class TauMaxSelection:
    tau_max_hours: float
    stable: Optional[bool]  # None when only one candidate was given
    model: DelayModel
    fits: dict
    max_changes: dict


def normalized_coefficients(model: DelayModel, hist: DelayHistogram) -> np.ndarray:
    peak = float(hist.densities.max())
    return np.array([model.a1 / peak, model.b1, model.a2 / peak, model.b2, model.c / peak])


def select_tau_max(samples, method: str = "balanced", candidates: Sequence[float] = (5, 10, 15, 20, 30, 40),
                   tol: float = 1e-3, seed: int = 0, **hist_kw) -> TauMaxSelection:
    """Pick the first candidate ``tau_max`` (hours) whose fitted coefficients move
    by less than ``tol`` when refitted at the next candidate.

    Densities are divided by the histogram peak before comparison; rates are
    compared in 1/hour. When no candidate is stable the largest one is
    returned with ``stable=False``.
    """
    cands = [float(c) for c in candidates]
    if not cands:
        raise ValueError("no tau_max candidates")
    if any(b <= a for a, b in zip(cands, cands[1:])):
        raise ValueError("tau_max candidates must be increasing")
    taus = _as_taus(samples)

    def fit_at(hours):
        h = histogram(taus, method, hours * HOUR, **hist_kw)
        return fit(h, seed=seed), h

    fits, changes = {}, {}
    prev = fit_at(cands[0])
    fits[cands[0]] = prev[0]
    if len(cands) == 1:
        m = prev[0]
        m.tau_max_stable = None
        return TauMaxSelection(cands[0], None, m, fits, changes)
    for here, nxt in zip(cands, cands[1:]):
        cur = fit_at(nxt)
        fits[nxt] = cur[0]
        diff = np.abs(normalized_coefficients(*prev) - normalized_coefficients(*cur))
        changes[here] = float(diff.max())
        if np.all(diff < tol):
            m = prev[0]
            m.tau_max_stable = True
            return TauMaxSelection(here, True, m, fits, changes)
        prev = cur
    m = prev[0]
    m.tau_max_stable = False
    return TauMaxSelection(cands[-1], False, m, fits, changes)
