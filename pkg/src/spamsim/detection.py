"""Photon-count model for population detection of the fluorescing manifold.

A detection window integrates camera counts for ``total_duration`` seconds.
Counts are Poisson around a mean that interpolates linearly between the dark
and bright rates with the fraction of the window the ion spent fluorescing,
plus Gaussian read noise, rounded to an integer.  The camera offset is assumed
to be subtracted upstream, so the configured means are net counts and sampled
values may come out negative.  A state is called bright when its counts
strictly exceed the threshold; ties count as dark.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .states import Manifold, StateLabel, WRONG_GROUND

if TYPE_CHECKING:  # structural only; avoids a module cycle
    from .channels import DecayChannel


class ThresholdSeparationError(ValueError):
    """Histograms too entangled to place a threshold between them."""


@dataclass(frozen=True)
class DetectionModel:
    """Count statistics and timing of one population detection window."""

    mean_bright: float
    mean_dark: float
    read_noise_sigma: float
    exposure: float = 400e-6
    total_duration: float = 458.6e-6
    threshold: int = 0

    def __post_init__(self) -> None:
        if self.mean_bright < 0 or self.mean_dark < 0:
            raise ValueError("count means must be non-negative")
        if self.read_noise_sigma < 0:
            raise ValueError("read noise sigma must be non-negative")
        if not 0 < self.exposure <= self.total_duration:
            raise ValueError("need 0 < exposure <= total_duration")


@dataclass(frozen=True)
class CountHistogram:
    """Integer count histogram, one bin per count value."""

    bin_lows: tuple[int, ...]
    frequencies: tuple[int, ...]
    label: str = "unlabeled"

    def __post_init__(self) -> None:
        if len(self.bin_lows) != len(self.frequencies):
            raise ValueError("bin_lows and frequencies must have equal length")
        if any(f < 0 for f in self.frequencies):
            raise ValueError("frequencies must be non-negative")
        if sum(self.frequencies) <= 0:
            raise ValueError("histogram must contain at least one sample")
        if list(self.bin_lows) != sorted(set(self.bin_lows)):
            raise ValueError("bin_lows must be strictly increasing")

    @property
    def total(self) -> int:
        return int(sum(self.frequencies))

    def moments(self) -> tuple[float, float]:
        """Weighted mean and population standard deviation of the counts."""
        values = np.asarray(self.bin_lows, dtype=float)
        weights = np.asarray(self.frequencies, dtype=float)
        mean = float(np.average(values, weights=weights))
        var = float(np.average((values - mean) ** 2, weights=weights))
        return mean, math.sqrt(var)

    @classmethod
    def from_samples(cls, counts: Iterable[int], label: str = "unlabeled") -> "CountHistogram":
        values, freqs = np.unique(np.asarray(list(counts), dtype=int), return_counts=True)
        return cls(tuple(int(v) for v in values), tuple(int(f) for f in freqs), label)


def write_histogram_csv(hist: CountHistogram, path: str) -> None:
    """Two-column CSV: bin_low, frequency."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["bin_low", "frequency"])
        for low, freq in zip(hist.bin_lows, hist.frequencies):
            writer.writerow([low, freq])


def read_histogram_csv(path: str, label: str = "unlabeled") -> CountHistogram:
    bins: list[int] = []
    freqs: list[int] = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        for row in reader:
            if not row or row[0].strip() == "bin_low":
                continue
            bins.append(int(float(row[0])))
            freqs.append(int(float(row[1])))
    if not bins:
        raise ValueError(f"no histogram rows in {path}")
    order = np.argsort(bins)
    return CountHistogram(
        tuple(bins[i] for i in order), tuple(freqs[i] for i in order), label
    )


# =========================================================================
# Sampling and classification
# =========================================================================

def sample_counts(
    fluorescing_fraction: float, model: DetectionModel, rng: np.random.Generator
) -> int:
    """Draw one integer count value for a window with the given bright fraction."""
    if not 0.0 <= fluorescing_fraction <= 1.0:
        raise ValueError(f"fluorescing fraction must be in [0, 1], got {fluorescing_fraction}")
    lam = fluorescing_fraction * model.mean_bright + (1.0 - fluorescing_fraction) * model.mean_dark
    counts = float(rng.poisson(lam))
    if model.read_noise_sigma > 0:
        counts += rng.normal(0.0, model.read_noise_sigma)
    return int(np.rint(counts))


def classify(counts: float, threshold: float) -> bool:
    """True means bright.  Strict comparison: a tie with the threshold is dark."""
    return counts > threshold


def detect(
    state: StateLabel,
    model: DetectionModel,
    decay: "DecayChannel | None",
    rng: np.random.Generator,
) -> tuple[bool, StateLabel]:
    """Run one detection window on a definite state.

    Manifold-A population and ``WrongGround`` fluoresce for the full window.
    A B-state may decay partway through; the counts then mix the dark and
    bright rates in proportion to the time spent on each side, and the
    post-window state is ``WrongGround``.  ``Lost`` never fluoresces.
    Returns ``(bright, post_state)``.
    """
    post = state
    if state.fluoresces():
        fraction = 1.0
    elif state.in_manifold(Manifold.B) and decay is not None and not math.isinf(decay.lifetime):
        t_d = model.total_duration
        p_window = -math.expm1(-t_d / decay.lifetime)
        if rng.random() < p_window:
            instant = -decay.lifetime * math.log1p(-rng.random() * p_window)
            instant = min(instant, t_d)
            fraction = (t_d - instant) / t_d
            post = WRONG_GROUND
        else:
            fraction = 0.0
    else:
        fraction = 0.0
    counts = sample_counts(fraction, model, rng)
    return classify(counts, model.threshold), post


# =========================================================================
# Threshold calibration
# =========================================================================

@dataclass(frozen=True)
class CalibrationResult:
    threshold: int
    crossing: float
    dark_fit: tuple[float, float]
    bright_fit: tuple[float, float]
    method: str


def equal_density_crossing(
    mu_low: float, sigma_low: float, mu_high: float, sigma_high: float
) -> float:
    """Where two Gaussian densities cross, restricted to between the means.

    Solves sigma_high^2 (x - mu_low)^2 - sigma_low^2 (x - mu_high)^2
    = 2 sigma_low^2 sigma_high^2 ln(sigma_high / sigma_low).
    """
    if mu_low > mu_high:
        mu_low, mu_high = mu_high, mu_low
        sigma_low, sigma_high = sigma_high, sigma_low
    if sigma_low <= 0 and sigma_high <= 0:
        return 0.5 * (mu_low + mu_high)
    a = sigma_high**2 - sigma_low**2
    b = -2.0 * (sigma_high**2 * mu_low - sigma_low**2 * mu_high)
    c = (
        sigma_high**2 * mu_low**2
        - sigma_low**2 * mu_high**2
        - 2.0 * (sigma_low * sigma_high) ** 2 * math.log(sigma_high / max(sigma_low, 1e-300))
    )
    if abs(a) < 1e-12 * max(sigma_low, sigma_high) ** 2:
        return -c / b
    disc = b * b - 4.0 * a * c
    if disc < 0:
        raise ThresholdSeparationError("densities do not cross between the means")
    roots = ((-b - math.sqrt(disc)) / (2 * a), (-b + math.sqrt(disc)) / (2 * a))
    inside = [r for r in roots if mu_low <= r <= mu_high]
    if not inside:
        raise ThresholdSeparationError("densities do not cross between the means")
    return inside[0]


def _fit_gaussian(hist: CountHistogram, method: str) -> tuple[float, float]:
    mean, std = hist.moments()
    if method == "moments":
        return mean, std
    if method != "least-squares":
        raise ValueError(f"unknown calibration method {method!r}")
    from scipy.optimize import curve_fit

    values = np.asarray(hist.bin_lows, dtype=float)
    freqs = np.asarray(hist.frequencies, dtype=float)

    def gaussian(x, amplitude, mu, sigma):
        return amplitude * np.exp(-0.5 * ((x - mu) / sigma) ** 2)

    p0 = (float(freqs.max()), mean, max(std, 0.5))
    params, _ = curve_fit(gaussian, values, freqs, p0=p0, maxfev=20000)
    return float(params[1]), abs(float(params[2]))


def calibrate_threshold(
    hist_a: CountHistogram, hist_b: CountHistogram, method: str = "moments"
) -> CalibrationResult:
    """Fit one Gaussian per histogram and put the threshold at their crossing.

    The histogram with the lower fitted mean is treated as dark, so the result
    does not depend on argument order.  Raises
    :class:`ThresholdSeparationError` when the fitted means are closer than
    one combined standard deviation.
    """
    fit_a = _fit_gaussian(hist_a, method)
    fit_b = _fit_gaussian(hist_b, method)
    (dark, bright) = sorted((fit_a, fit_b), key=lambda fit: fit[0])
    separation = bright[0] - dark[0]
    if separation <= 0 or separation < dark[1] + bright[1]:
        raise ThresholdSeparationError(
            "histograms are not separable: fitted means "
            f"{dark[0]:.2f} and {bright[0]:.2f} are closer than one combined sigma"
        )
    crossing = equal_density_crossing(dark[0], dark[1], bright[0], bright[1])
    return CalibrationResult(
        threshold=int(round(crossing)),
        crossing=crossing,
        dark_fit=dark,
        bright_fit=bright,
        method=method,
    )


def optimal_threshold(
    dark_density, bright_density, candidates: Sequence[int]
) -> tuple[int, float]:
    """Brute-force integer threshold minimizing the equal-prior misclassification.

    ``dark_density(t)`` and ``bright_density(t)`` must return the probabilities
    P(counts > t) and P(counts <= t) respectively.
    """
    best_thr, best_p = None, math.inf
    for thr in candidates:
        p = 0.5 * dark_density(thr) + 0.5 * bright_density(thr)
        if p < best_p:
            best_thr, best_p = thr, p
    return int(best_thr), float(best_p)


# =========================================================================
# Exact misclassification rates of the count model
# =========================================================================

def optical_error_rates(model: DetectionModel) -> tuple[float, float]:
    """Exact per-window misread probabilities ``(bright_error, dark_error)``.

    ``bright_error`` is the probability that a fully fluorescing state reads
    dark, ``dark_error`` that a fully dark state reads bright, both under the
    configured Poisson-plus-read-noise counts and threshold.
    """
    from scipy import stats

    def misread(lam: float, below: bool) -> float:
        hi = int(lam + 14.0 * math.sqrt(lam + 1.0)) + 10
        ks = np.arange(0, hi + 1)
        pmf = stats.poisson.pmf(ks, lam)
        sigma = model.read_noise_sigma
        if sigma > 0:
            # round(k + g) <= threshold  <=>  g < threshold + 0.5 - k
            p_below = stats.norm.cdf((model.threshold + 0.5 - ks) / sigma)
        else:
            p_below = (ks <= model.threshold).astype(float)
        total_below = float(np.sum(pmf * p_below))
        return total_below if below else 1.0 - total_below

    bright_error = misread(model.mean_bright, below=True)
    dark_error = misread(model.mean_dark, below=False)
    return bright_error, dark_error
