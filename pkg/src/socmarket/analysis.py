"""Statistics extracted from run records.

Covers the observables of the critical market state: rescaled stationary
profits, the deflation rate, the activity signal and its avalanches,
log-binned distributions with least-squares exponent fits (plus a discrete
MLE cross-check), loser-jump distance statistics with the two-branch
power-law fit, and the size/duration scaling relation.

Mean-field branching-process exponents tau_S = 3/2 and tau_T = 2 are kept
as reference constants for comparison; the market model is expected to
deviate from them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import optimize, special, stats

from .errors import FitDomainError, StatisticsWarning

MFBP_TAU_S = 1.5
MFBP_TAU_T = 2.0


# ----------------------------------------------------------------------
# profit rescaling and deflation

def rescale_profits(profits, mean_price):
    """Divide profits by the instantaneous mean price.

    Profits are degree-1 homogeneous in prices, so this removes the global
    deflation trend exactly and leaves a stationary series.  Accepts a
    (T,) series or a (T, N) stream.
    """
    s = np.asarray(profits, dtype=np.float64)
    mp = np.asarray(mean_price, dtype=np.float64)
    if np.any(mp <= 0.0):
        raise ValueError("mean price must be strictly positive")
    if s.ndim == 2:
        return s / mp[:, None]
    return s / mp


def fit_decay_rate(series, smooth_window=1):
    """Exponential decay rate of a one-signed series.

    Smooths with a moving average (which leaves a pure exponential's
    log-slope unchanged), requires a single sign afterwards, then fits
    log|series| against time.  Returns k > 0 for decaying input.
    """
    s = np.asarray(series, dtype=np.float64)
    if smooth_window > 1:
        if smooth_window > s.size:
            raise FitDomainError("smoothing window longer than the series")
        kernel = np.full(smooth_window, 1.0 / smooth_window)
        s = np.convolve(s, kernel, mode="valid")
    if np.all(s > 0.0):
        pass
    elif np.all(s < 0.0):
        s = -s
    else:
        raise FitDomainError("series changes sign after smoothing")
    if s.size < 3:
        raise FitDomainError("too few points for a decay fit")
    t = np.arange(s.size)
    res = stats.linregress(t, np.log(s))
    return -float(res.slope)


def predicted_decay_rate(n_agents, eta_max):
    """Leading-order deflation rate: <eta> / [N (1 - <eta>)] with
    <eta> = eta_max / 2 for the uniform cut draw."""
    eta_mean = 0.5 * eta_max
    return eta_mean / (n_agents * (1.0 - eta_mean))


def rescale_profits_detrended(profits, mean_price, transient_steps=0):
    """Alternative stationarizer: divide by the fitted exponential trend of
    the mean price instead of the instantaneous mean.

    Anchored at the start of the post-transient window.  Thresholds are
    specific to the rescaling mode; the instantaneous-mean mode is the
    primary one.
    """
    mp = np.asarray(mean_price, dtype=np.float64)
    k = fit_decay_rate(mp[transient_steps:])
    t = np.arange(mp.size) - transient_steps
    trend = mp[transient_steps] * np.exp(-k * t)
    s = np.asarray(profits, dtype=np.float64)
    if s.ndim == 2:
        return s / trend[:, None]
    return s / trend


# ----------------------------------------------------------------------
# activity and avalanches

def activity_signal(rescaled_profits, f0):
    """Number of agents with rescaled profit below f0 at each step."""
    s = np.asarray(rescaled_profits)
    if s.ndim != 2:
        raise ValueError("expected a (steps, agents) profit stream")
    return np.count_nonzero(s < f0, axis=1).astype(np.int64)


class AvalancheEvent(NamedTuple):
    size: int
    duration: int


def extract_avalanches(y):
    """Maximal nonzero segments of the activity signal.

    Size is the summed activity over the segment, duration its length.
    Partial segments touching either end of the signal are discarded.
    """
    y = np.asarray(y)
    if y.size == 0:
        return []
    active = y > 0
    flips = np.diff(active.astype(np.int8))
    starts = np.flatnonzero(flips == 1) + 1
    ends = np.flatnonzero(flips == -1) + 1
    if active[0] and ends.size:
        ends = ends[1:]  # leading segment has no observed start
    if active[-1] and starts.size:
        starts = starts[:-1]  # trailing segment has no observed end
    n = min(starts.size, ends.size)
    starts, ends = starts[:n], ends[:n]
    csum = np.concatenate([[0], np.cumsum(y, dtype=np.int64)])
    sizes = csum[ends] - csum[starts]
    durations = ends - starts
    return [AvalancheEvent(int(s), int(t)) for s, t in zip(sizes, durations)]


# ----------------------------------------------------------------------
# log binning and power-law fits

@dataclass
class BinnedDistribution:
    """Log-binned density: bin r covers the integers [2^r, 2^(r+1) - 1],
    its representative x is the average of the two bounds, and the density
    is count / (total * width)."""
    bin_lo: np.ndarray
    bin_hi: np.ndarray
    x: np.ndarray
    density: np.ndarray
    counts: np.ndarray
    total: int

    @property
    def widths(self):
        return self.bin_hi - self.bin_lo + 1


def log_bin(values):
    """Bin positive integers into doubling bins [2^r, 2^(r+1) - 1]."""
    v = np.asarray(values)
    if v.size == 0:
        raise FitDomainError("nothing to bin")
    if np.any(v < 1):
        raise FitDomainError("log binning needs values >= 1")
    n_bins = int(np.floor(np.log2(v.max()))) + 1
    edges = 2 ** np.arange(n_bins + 1)
    counts, _ = np.histogram(v, bins=edges)
    lo = edges[:-1]
    hi = edges[1:] - 1
    widths = (hi - lo + 1).astype(np.float64)
    total = int(v.size)
    density = counts / (total * widths)
    x = (lo + hi) / 2.0
    return BinnedDistribution(bin_lo=lo, bin_hi=hi, x=x, density=density,
                              counts=counts, total=total)


@dataclass
class PowerLawFit:
    """Least-squares exponent tau of P(x) ~ x^(-tau) on log-binned data."""
    exponent: float
    stderr: float
    fit_range: tuple
    n_points: int
    r_squared: float
    intercept: float

    def __str__(self):
        return (f"tau = {self.exponent:.3f} +/- {self.stderr:.3f} "
                f"on [{self.fit_range[0]:g}, {self.fit_range[1]:g}] "
                f"({self.n_points} bins, R^2 = {self.r_squared:.3f})")


def fit_power_law(dist, fit_range=(10.0, 1000.0), min_points=3):
    """Fit log density against log x over bins whose representative x lies
    in fit_range.  The exponent is reported positive for decaying data."""
    lo, hi = fit_range
    sel = (dist.x >= lo) & (dist.x <= hi) & (dist.density > 0.0)
    n = int(np.count_nonzero(sel))
    if n < min_points:
        raise FitDomainError(
            f"need at least {min_points} nonzero bins in [{lo:g}, {hi:g}], found {n}")
    lx = np.log(dist.x[sel])
    ly = np.log(dist.density[sel])
    res = stats.linregress(lx, ly)
    stderr = float(res.stderr) if np.isfinite(res.stderr) else 0.0
    return PowerLawFit(exponent=-float(res.slope), stderr=stderr,
                       fit_range=(float(lo), float(hi)), n_points=n,
                       r_squared=float(res.rvalue) ** 2,
                       intercept=float(res.intercept))


def fit_power_law_mle(values, x_min=1):
    """Discrete maximum-likelihood exponent (zeta normalization).

    Cross-check for the least-squares fit; reference-exponent comparisons
    use the least-squares path.
    """
    v = np.asarray(values, dtype=np.float64)
    v = v[v >= x_min]
    if v.size < 10:
        raise FitDomainError("too few samples for an MLE fit")
    mean_log = float(np.mean(np.log(v / x_min)))

    def log_zeta(a):
        return np.log(special.zeta(a, x_min))

    h = 1e-5

    def objective(a):
        return (log_zeta(a + h) - log_zeta(a - h)) / (2 * h) + mean_log

    alpha = optimize.brentq(objective, 1.01, 20.0, xtol=1e-8)
    # observed-information standard error
    d2 = (log_zeta(alpha + h) - 2 * log_zeta(alpha) + log_zeta(alpha - h)) / h ** 2
    stderr = 1.0 / np.sqrt(v.size * d2)
    return float(alpha), float(stderr)


def sample_discrete_power_law(tau, n_samples, rng, x_min=1, x_max=10 ** 6):
    """Inverse-transform samples from P(x) ~ x^(-tau) on [x_min, x_max]."""
    xs = np.arange(x_min, x_max + 1, dtype=np.float64)
    cdf = np.cumsum(xs ** -tau)
    cdf /= cdf[-1]
    u = np.random.default_rng(rng).random(n_samples)
    return x_min + np.searchsorted(cdf, u)


# ----------------------------------------------------------------------
# avalanche exponents and critical-threshold location

# the duration cutoff sits well below the size cutoff (S grows like
# T^gamma with gamma ~ 1.4), so durations get their own default window
DEFAULT_SIZE_RANGE = (10.0, 1000.0)
DEFAULT_DURATION_RANGE = (10.0, 100.0)


@dataclass
class AvalancheExponents:
    tau_s: PowerLawFit
    tau_t: PowerLawFit
    gamma: GammaFit
    relation_residual: float
    relation_stderr: float
    n_events: int


def avalanche_exponents(events, size_range=DEFAULT_SIZE_RANGE,
                        duration_range=DEFAULT_DURATION_RANGE,
                        min_events=1000):
    """Size and duration exponents, gamma, and the scaling-relation check
    for one set of avalanche events."""
    if len(events) < min_events:
        raise FitDomainError(f"need {min_events} events, got {len(events)}")
    sizes = np.array([e.size for e in events])
    durations = np.array([e.duration for e in events])
    tau_s = fit_power_law(log_bin(sizes), size_range)
    tau_t = fit_power_law(log_bin(durations), duration_range)
    gamma = gamma_st(events, min_events=min_events)
    resid, comb = scaling_relation_residual(tau_s, tau_t, gamma)
    return AvalancheExponents(tau_s=tau_s, tau_t=tau_t, gamma=gamma,
                              relation_residual=resid, relation_stderr=comb,
                              n_events=len(events))


def track_activity(sim, thresholds):
    """Step a fresh Simulation to completion, counting agents below each
    rescaled-profit threshold at every step (pre-cut state, matching the
    activity column of RunRecord).  Returns an (steps, n_thresholds) array.
    """
    thr = np.atleast_1d(np.asarray(thresholds, dtype=np.float64))
    cfg = sim.config
    eng = sim.engine
    out = np.zeros((cfg.total_steps - sim.t, thr.size), dtype=np.int32)
    k = 0
    while sim.t < cfg.total_steps:
        mp = eng.psum / eng.n
        out[k] = np.count_nonzero(eng.profit[:, None] < thr[None, :] * mp, axis=0)
        sim.step()
        k += 1
    return out


# the critical threshold sits at a topology-dependent depth, but always at
# the scale of a single price cut's profit shift, <eta> = eta_max/2; this
# grid brackets the critical point on every topology studied
THRESHOLD_GRID_UNITS = (0.75, 0.82, 0.88, 0.94, 1.0, 1.06, 1.13, 1.2)


@dataclass
class ThresholdScanEntry:
    f0: float
    n_events: int
    mean_activity: float
    zero_fraction: float
    tau_s: Optional[PowerLawFit]
    note: str = ""


@dataclass
class ThresholdScan:
    entries: list
    activity: np.ndarray  # (post-transient steps, n_thresholds)
    best: Optional[int]

    @property
    def best_entry(self):
        return None if self.best is None else self.entries[self.best]


def threshold_scan(net, wts, config, f0_grid=None, engine="incremental",
                   size_range=DEFAULT_SIZE_RANGE, min_events=1000):
    """Locate the critical activity threshold.

    Runs once while tracking activity on a grid of thresholds, then picks
    the threshold whose avalanche-size distribution is closest to a pure
    power law (highest R^2 of the least-squares fit) among thresholds with
    enough events and a quiescent fraction.  Below the critical point the
    distribution bends steep and short; above it, quiescence disappears.
    """
    from .dynamics import Simulation

    if f0_grid is None:
        f0_grid = -0.5 * config.eta_max * np.asarray(THRESHOLD_GRID_UNITS)
    f0_grid = np.asarray(f0_grid, dtype=np.float64)
    sim = Simulation(net, wts, config, engine=engine)
    counts = track_activity(sim, f0_grid)[config.transient_steps:]
    entries = []
    for k, f0 in enumerate(f0_grid):
        y = counts[:, k]
        events = extract_avalanches(y)
        entry = ThresholdScanEntry(
            f0=float(f0), n_events=len(events),
            mean_activity=float(y.mean()),
            zero_fraction=float(np.mean(y == 0)), tau_s=None)
        if len(events) < min_events:
            entry.note = "too few events"
        elif entry.zero_fraction < 1e-3:
            entry.note = "no quiescence"
        else:
            sizes = np.array([e.size for e in events])
            try:
                entry.tau_s = fit_power_law(log_bin(sizes), size_range)
            except FitDomainError as exc:
                entry.note = str(exc)
        entries.append(entry)
    eligible = [k for k, e in enumerate(entries) if e.tau_s is not None]
    best = max(eligible, key=lambda k: entries[k].tau_s.r_squared, default=None)
    return ThresholdScan(entries=entries, activity=counts, best=best)


# ----------------------------------------------------------------------
# loser-jump statistics

@dataclass
class JumpStats:
    """Distances between consecutive losers and their two-branch fits.

    The distance law has a short branch P(xi) ~ xi^(-pi1) for xi <= L/2 and
    a reflected branch P(xi) ~ |L - xi|^(-pi2) beyond, the latter produced
    by unwrapped distances of near-boundary pairs.
    """
    distances: np.ndarray
    extent: float
    mode: str
    metric: str
    cumulative_x: np.ndarray
    cumulative_f: np.ndarray
    pi1: Optional[PowerLawFit]
    pi2: Optional[PowerLawFit]

    @property
    def n_jumps(self):
        return len(self.distances)


def _fit_branch(samples, fit_range, support_hi, min_points):
    """Log-binned density fit of one distance branch.  Distances are
    rounded to integers first, which merges the near-degenerate lattice
    norms and smooths the annulus-count oscillations.  Bins truncated by
    the branch support (hi beyond support_hi) are excluded, since their
    density estimate misses part of the bin."""
    v = np.rint(samples).astype(np.int64)
    v = v[v >= 1]
    if v.size == 0:
        raise FitDomainError("no samples in the branch")
    dist = log_bin(v)
    hi = min(fit_range[1], support_hi)
    complete = dist.bin_hi <= hi
    if not complete.any():
        raise FitDomainError("no complete bins within the branch support")
    upper = float(dist.x[complete][-1])
    return fit_power_law(dist, (fit_range[0], min(fit_range[1], upper)),
                         min_points=min_points)


def jump_distances(record, mode="raw", metric="norm"):
    """Distances between consecutive loser positions (post-transient)."""
    pos = record.post(record.positions).astype(np.float64)
    if pos.ndim == 1:
        pos = pos[:, None]
    ext = np.asarray(record.extents, dtype=np.float64)
    d = np.abs(np.diff(pos, axis=0))
    if mode == "min_image":
        d = np.minimum(d, ext - d)
    elif mode != "raw":
        raise ValueError(f"unknown distance mode {mode!r}")
    if metric == "norm":
        return np.sqrt(np.sum(d * d, axis=1))
    if metric == "component":
        return d[:, 0]
    raise ValueError(f"unknown distance metric {metric!r}")


def loser_jump_stats(record, mode="raw", metric="norm", pi1_range=None,
                     pi2_range=None, min_jumps=1000, min_points=3):
    """Jump-distance distribution with the two-branch power-law fit.

    pi1 is fitted on distances xi in [1, L/2]; pi2 on u = |L - xi| for the
    samples with xi > L/2.  Zero jumps (repeated loser) are excluded from
    the fits.  Fit failures leave the corresponding fit as None.
    """
    xi = jump_distances(record, mode=mode, metric=metric)
    if xi.size < min_jumps:
        warnings.warn(f"only {xi.size} jumps, statistics will be poor",
                      StatisticsWarning, stacklevel=2)
    L = float(record.extents[0])
    order = np.sort(xi)
    cum_x, counts = np.unique(order, return_counts=True)
    cum_f = np.cumsum(counts) / xi.size

    half = L / 2.0
    if pi1_range is None:
        pi1_range = (1.0, half)
    if pi2_range is None:
        pi2_range = (1.0, half)
    near = xi[(xi >= 1.0) & (xi <= half)]
    far = np.abs(L - xi[xi > half])
    far = far[far >= 1.0]

    pi1 = pi2 = None
    if near.size:
        try:
            pi1 = _fit_branch(near, pi1_range, half, min_points)
        except FitDomainError:
            pass
    if far.size:
        try:
            pi2 = _fit_branch(far, pi2_range, half, min_points)
        except FitDomainError:
            pass
    return JumpStats(distances=xi, extent=L, mode=mode, metric=metric,
                     cumulative_x=cum_x, cumulative_f=cum_f, pi1=pi1, pi2=pi2)


# ----------------------------------------------------------------------
# size/duration scaling

@dataclass
class GammaFit:
    gamma: float
    stderr: float
    n_events: int
    n_points: int


def gamma_st(events, min_events=1000, min_count=3, t_range=None):
    """Exponent of <S> ~ T^gamma from the per-duration mean sizes."""
    if len(events) < min_events:
        raise FitDomainError(f"need at least {min_events} events, got {len(events)}")
    S = np.asarray([e.size for e in events], dtype=np.float64)
    T = np.asarray([e.duration for e in events], dtype=np.float64)
    ts, inverse, counts = np.unique(T, return_inverse=True, return_counts=True)
    mean_s = np.bincount(inverse, weights=S) / counts
    sel = counts >= min_count
    if t_range is not None:
        sel &= (ts >= t_range[0]) & (ts <= t_range[1])
    if np.count_nonzero(sel) < 3:
        raise FitDomainError("too few populated duration bins")
    res = stats.linregress(np.log(ts[sel]), np.log(mean_s[sel]))
    stderr = float(res.stderr) if np.isfinite(res.stderr) else 0.0
    return GammaFit(gamma=float(res.slope), stderr=stderr,
                    n_events=len(events), n_points=int(np.count_nonzero(sel)))


def scaling_relation_residual(tau_s, tau_t, gamma_fit):
    """Residual of tau_S = 1 + (tau_T - 1)/gamma and its propagated error.

    Accepts the PowerLawFit objects for sizes and durations plus a
    GammaFit; returns (residual, combined standard error).
    """
    g = gamma_fit.gamma
    resid = abs(tau_s.exponent - 1.0 - (tau_t.exponent - 1.0) / g)
    combined = np.sqrt(
        tau_s.stderr ** 2
        + (tau_t.stderr / g) ** 2
        + ((tau_t.exponent - 1.0) * gamma_fit.stderr / g ** 2) ** 2)
    return float(resid), float(combined)


# ----------------------------------------------------------------------
# threshold calibration

def stationary_profit_quantile(sim, q, n_snapshots=200):
    """Quantile of the stationary rescaled per-agent profit distribution.

    Steps the given fresh Simulation through its configured run, sampling
    the rescaled profit vector on a regular post-transient stride.  Used to
    resolve quantile-specified activity thresholds; deterministic for a
    fixed config.
    """
    cfg = sim.config
    span = cfg.total_steps - cfg.transient_steps
    stride = max(1, span // n_snapshots)
    samples = []
    eng = sim.engine
    while sim.t < cfg.total_steps:
        sim.step()
        # after the step, eng.profit is the state the NEXT step will see;
        # pair it with the next step's mean price
        t = sim.t
        if (cfg.transient_steps <= t < cfg.total_steps
                and (t - cfg.transient_steps) % stride == 0):
            samples.append(eng.profit / (eng.psum / eng.n))
    return float(np.quantile(np.concatenate(samples), q))
