"""Long-term statistics over stored sessions.

Temperature-to-frequency regression, Gaussian-mixture modelling of peak
displacements (event-triggered traffic separates into vehicle-class
clusters), and cross-girder comparison reports with an equivalent-neutral-
axis divergence flag. Read-only over the record store, safe to run while
ingestion continues.
"""

from dataclasses import dataclass, field

import numpy as np

from spanmon.errors import DomainError, FitError

FN_HIST_LO_HZ = 1.0
FN_HIST_HI_HZ = 20.0
FN_HIST_BIN_HZ = 0.01
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class RegressionFit:
    slope: float
    intercept: float
    r2: float
    n: int


def linfit(x, y):
    """Ordinary least squares y = slope * x + intercept (closed form)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DomainError("x and y must be 1-D and the same length")
    n = x.size
    if n < 2:
        raise DomainError("need at least two points")
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    if sxx == 0.0:
        raise DomainError("x values are degenerate (all equal)")
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = ym - slope * xm
    resid = y - (slope * x + intercept)
    sst = float(np.sum((y - ym) ** 2))
    r2 = 0.0 if sst == 0.0 else 1.0 - float(np.sum(resid**2)) / sst
    return RegressionFit(slope=slope, intercept=float(intercept), r2=float(r2), n=n)


def max_displacement(u_fused):
    """Peak absolute displacement of a fused series, in mm."""
    u = np.asarray(u_fused, dtype=np.float64)
    if u.size == 0:
        raise DomainError("empty series has no peak")
    return float(np.max(np.abs(u)))


@dataclass(frozen=True)
class GmmFit:
    """Gaussian mixture fit; components sorted by mean for determinism."""

    k: int
    weights: np.ndarray
    means: np.ndarray  # (k, dims)
    covariances: np.ndarray  # (k, dims, dims)
    loglik: float
    iterations: int
    loglik_history: tuple = ()

    @property
    def variances(self):
        """Per-component variances (diagonal), convenient for 1-D fits."""
        return np.array([np.diag(c) for c in self.covariances])

    def to_dict(self):
        return {
            "k": self.k,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "loglik": self.loglik,
            "iterations": self.iterations,
        }


def _log_gauss_pdf(x, mean, cov):
    d = x.shape[1]
    chol = np.linalg.cholesky(cov)
    diff = x - mean
    # Solve L z = diff^T, so the Mahalanobis term is |z|^2.
    z = np.linalg.solve(chol, diff.T)
    maha = np.sum(z * z, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (d * np.log(2.0 * np.pi) + logdet + maha)


def _quantile_init(x, k):
    # Deterministic: component j centred at quantile (j + 0.5) / k of every
    # coordinate, shared covariance from the pooled sample.
    qs = (np.arange(k) + 0.5) / k
    means = np.quantile(x, qs, axis=0)
    cov = np.cov(x.T).reshape(x.shape[1], x.shape[1]) / max(k, 1)
    cov = cov + np.eye(x.shape[1]) * max(VARIANCE_FLOOR, 1e-8 * np.trace(cov))
    covs = np.array([cov.copy() for _ in range(k)])
    weights = np.full(k, 1.0 / k)
    return weights, means, covs


def gmm_fit(samples, k=2, seed=None, max_iter=500, tol=1e-8):
    """Fit a k-component Gaussian mixture by expectation maximization.

    Initialization is deterministic (quantile-centred components); passing a
    seed instead draws the initial means from the data at random, which is
    the restart mode for robustness studies. The log-likelihood is asserted
    non-decreasing at every iteration. Components whose variance collapses
    are re-spread once; a second collapse raises FitError.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if k < 1:
        raise DomainError("k must be >= 1")
    if n < 10 * k:
        raise DomainError(f"need at least {10 * k} samples for k={k}")

    if seed is None:
        weights, means, covs = _quantile_init(x, k)
    else:
        rng = np.random.default_rng(seed)
        idx = rng.choice(n, size=k, replace=False)
        means = x[idx].copy()
        weights, _, covs = _quantile_init(x, k)

    respread_done = False
    prev_ll = -np.inf
    ll = prev_ll
    history = []
    it = 0
    while it < max_iter:
        it += 1
        # E step.
        log_resp = np.empty((k, n))
        for j in range(k):
            log_resp[j] = np.log(weights[j]) + _log_gauss_pdf(x, means[j], covs[j])
        log_norm = np.logaddexp.reduce(log_resp, axis=0)
        ll = float(np.sum(log_norm))
        if ll + 1e-10 * abs(ll) < prev_ll:
            raise FitError(f"EM log-likelihood decreased at iteration {it}")
        history.append(ll)
        converged = prev_ll > -np.inf and abs(ll - prev_ll) <= tol * abs(prev_ll)
        prev_ll = ll
        if converged:
            break
        resp = np.exp(log_resp - log_norm)
        # M step.
        nk = resp.sum(axis=1)
        weights = nk / n
        collapsed = False
        for j in range(k):
            if nk[j] <= 0:
                collapsed = True
                break
            means[j] = resp[j] @ x / nk[j]
            diff = x - means[j]
            cov = (resp[j][:, None] * diff).T @ diff / nk[j]
            if np.any(np.diag(cov) < VARIANCE_FLOOR):
                collapsed = True
                break
            covs[j] = cov + np.eye(d) * VARIANCE_FLOOR
        if collapsed:
            if respread_done:
                raise FitError("mixture variance collapsed")
            respread_done = True
            weights, means, covs = _quantile_init(x, k)
            jitter = np.std(x, axis=0) * 1e-3 + 1e-9
            means = means + jitter * np.linspace(-1.0, 1.0, k)[:, None]
            prev_ll = -np.inf
            history.clear()
            continue

    order = np.argsort(means[:, 0])
    return GmmFit(
        k=k,
        weights=np.asarray(weights)[order],
        means=np.asarray(means)[order],
        covariances=np.asarray(covs)[order],
        loglik=ll,
        iterations=it,
        loglik_history=tuple(history),
    )


# --------------------------------------------------------------------------
# Cross-girder comparison


@dataclass
class NodeStats:
    node: str
    sessions: int = 0
    f_n_mode_hz: float = None
    ena_mean_mm: float = None
    ena_std_mm: float = None
    temp_freq_fit: RegressionFit = None
    peak_gmm: GmmFit = None
    peaks_mm: list = field(default_factory=list)

    def to_dict(self):
        return {
            "node": self.node,
            "sessions": self.sessions,
            "f_n_mode_hz": self.f_n_mode_hz,
            "ena_mean_mm": self.ena_mean_mm,
            "ena_std_mm": self.ena_std_mm,
            "temp_freq_fit": None
            if self.temp_freq_fit is None
            else self.temp_freq_fit.__dict__,
            "peak_gmm": None if self.peak_gmm is None else self.peak_gmm.to_dict(),
            "peaks_mm": self.peaks_mm,
        }


@dataclass
class ComparisonReport:
    node_a: NodeStats
    node_b: NodeStats
    ena_rel_diff: float = None
    ena_divergence_flag: bool = False
    ena_threshold: float = 0.10
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {
            "node_a": self.node_a.to_dict(),
            "node_b": self.node_b.to_dict(),
            "ena_rel_diff": self.ena_rel_diff,
            "ena_divergence_flag": self.ena_divergence_flag,
            "ena_threshold": self.ena_threshold,
            "warnings": self.warnings,
        }


def fn_histogram_mode(freqs):
    """Histogram mode of natural frequencies on a 0.01 Hz grid (1-20 Hz)."""
    f = np.asarray(freqs, dtype=np.float64)
    f = f[(f >= FN_HIST_LO_HZ) & (f <= FN_HIST_HI_HZ)]
    if f.size == 0:
        return None
    n_bins = int(round((FN_HIST_HI_HZ - FN_HIST_LO_HZ) / FN_HIST_BIN_HZ))
    edges = FN_HIST_LO_HZ + FN_HIST_BIN_HZ * np.arange(n_bins + 1)
    counts, _ = np.histogram(f, bins=edges)
    i = int(np.argmax(counts))
    # Bins are labelled by their left edge on the 0.01 Hz grid.
    return round(float(edges[i]), 2)


def _collect_node(store, node, window=None, gmm_k=2, warnings=None):
    stats = NodeStats(node=node)
    analysis, temps = {}, {}
    for table in store.tables():
        if not table.endswith("_info"):
            continue
        for row in store.rows(table):
            if row.get("node") != node:
                continue
            t0 = row.get("t0_ms", 0)
            if window is not None and not (window[0] <= t0 <= window[1]):
                continue
            if row.get("kind") == "analysis" and row.get("error") is None:
                analysis[row["session"]] = row
            elif row.get("kind") == "state":
                temps[row["session"]] = row.get("temperature_c")
    stats.sessions = len(analysis)
    if not analysis:
        if warnings is not None:
            warnings.append(f"no analyzed sessions for node {node} in window")
        return stats
    fns = [r["f_n_hz"] for r in analysis.values() if r.get("f_n_hz") is not None]
    enas = [r["ena_mm"] for r in analysis.values() if r.get("ena_mm") is not None]
    stats.peaks_mm = [r["peak_mm"] for r in analysis.values() if r.get("peak_mm") is not None]
    stats.f_n_mode_hz = fn_histogram_mode(fns)
    if enas:
        stats.ena_mean_mm = float(np.mean(enas))
        stats.ena_std_mm = float(np.std(enas))
    pairs = [
        (temps[s], analysis[s]["f_n_hz"])
        for s in analysis
        if temps.get(s) is not None and analysis[s].get("f_n_hz") is not None
    ]
    if len(pairs) >= 2 and len({p[0] for p in pairs}) > 1:
        stats.temp_freq_fit = linfit([p[0] for p in pairs], [p[1] for p in pairs])
    elif warnings is not None:
        warnings.append(f"not enough temperature spread for a regression on {node}")
    if len(stats.peaks_mm) >= 10 * gmm_k:
        try:
            stats.peak_gmm = gmm_fit(stats.peaks_mm, k=gmm_k)
        except (DomainError, FitError) as exc:
            if warnings is not None:
                warnings.append(f"gmm fit failed for {node}: {exc}")
    elif warnings is not None:
        warnings.append(f"too few peaks for a {gmm_k}-component mixture on {node}")
    return stats


def girder_report(store, node_a, node_b, window=None, ena_threshold=0.10, gmm_k=2):
    """Compare two girders' nodes over a time window.

    Produces per-node frequency histogram modes, ENA statistics, the
    temperature-frequency regression, and peak-displacement mixtures; flags
    ENA divergence beyond ``ena_threshold`` (relative to the pair mean).
    Missing data produces warnings, not failures.
    """
    warnings = []
    a = _collect_node(store, node_a, window, gmm_k, warnings)
    b = _collect_node(store, node_b, window, gmm_k, warnings)
    report = ComparisonReport(node_a=a, node_b=b, ena_threshold=ena_threshold, warnings=warnings)
    if a.ena_mean_mm is not None and b.ena_mean_mm is not None:
        mean = 0.5 * (a.ena_mean_mm + b.ena_mean_mm)
        report.ena_rel_diff = abs(a.ena_mean_mm - b.ena_mean_mm) / mean
        report.ena_divergence_flag = report.ena_rel_diff > ena_threshold
    else:
        warnings.append("ENA comparison unavailable (missing analyses)")
    return report
