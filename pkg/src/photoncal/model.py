"""Photon-number and photocount statistics of twin-beam fields with noise.

The field model: a paired (signal/idler) component whose photon-pair number
follows a multimode thermal (negative-binomial) distribution shared by both
arms, plus an independent multimode thermal noise field per arm.  Detection
is per-photon binomial thinning at efficiency ``eta`` followed by Poissonian
dark events.  Everything here is a pure function of its arguments.

Index convention: in all joint matrices axis 0 is the signal count ``c_s``
and axis 1 the idler count ``c_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammaln

from .errors import InvalidParameterError, TruncationError

# Internal tail threshold for photon-number cutoffs.  Kept well below the
# 1e-10 detect_pmf guarantee so stacked truncations stay inside it.
_TAIL_EPS = 1e-14
# Hard cap on internal photon-number support; reached only for absurd means,
# where the distribution cannot be represented to the guaranteed accuracy.
_N_CAP = 4096


@dataclass(frozen=True)
class TwinBeamParams:
    """Parameters of the paired + noise field model and its detection chain.

    Means are photons per mode, so the total mean of a component is
    ``modes * mean``.  Mode counts are real-valued (effective mode numbers
    from fits are rarely integers).
    """

    pair_modes: float = 1.0
    pair_mean: float = 0.0
    noise_modes_s: float = 1.0
    noise_mean_s: float = 0.0
    noise_modes_i: float = 1.0
    noise_mean_i: float = 0.0
    eta_s: float = 1.0
    eta_i: float = 1.0
    dark_s: float = 0.0
    dark_i: float = 0.0

    def __post_init__(self):
        for name in ("pair_modes", "noise_modes_s", "noise_modes_i"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be > 0")
        for name in ("pair_mean", "noise_mean_s", "noise_mean_i", "dark_s", "dark_i"):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"{name} must be >= 0")
        for name in ("eta_s", "eta_i"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidParameterError(f"{name} must lie in [0, 1]")

    def swapped(self) -> "TwinBeamParams":
        """Return the same field with signal and idler arms exchanged."""
        return replace(
            self,
            noise_modes_s=self.noise_modes_i,
            noise_mean_s=self.noise_mean_i,
            noise_modes_i=self.noise_modes_s,
            noise_mean_i=self.noise_mean_s,
            eta_s=self.eta_i,
            eta_i=self.eta_s,
            dark_s=self.dark_i,
            dark_i=self.dark_s,
        )

    def _arm(self, which: str) -> tuple[float, float, float, float]:
        if which == "s":
            return (self.eta_s, self.noise_modes_s, self.noise_mean_s, self.dark_s)
        return (self.eta_i, self.noise_modes_i, self.noise_mean_i, self.dark_i)


@dataclass
class JointHistogram:
    """Empirical joint photocount histogram ``counts[c_s, c_i]``.

    ``counts`` must sum to ``n_frames``; ``clamped`` records how many frames
    had a count clipped into the top bin during accumulation.
    """

    counts: np.ndarray
    n_frames: int
    clamped: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2:
            raise InvalidParameterError("counts must be a 2D matrix")
        if self.n_frames <= 0:
            raise InvalidParameterError("n_frames must be positive")
        if np.any(self.counts < 0):
            raise InvalidParameterError("counts must be non-negative")
        if int(self.counts.sum()) != int(self.n_frames):
            raise InvalidParameterError("counts must sum to n_frames")

    @property
    def c_max(self) -> int:
        return self.counts.shape[0] - 1

    @property
    def frequencies(self) -> np.ndarray:
        """Relative frequencies f(c_s, c_i); sums to 1 exactly."""
        return self.counts / float(self.n_frames)


@dataclass
class JointDistribution:
    """Model joint photocount probabilities ``probs[c_s, c_i]`` up to c_max."""

    probs: np.ndarray
    c_max: int

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.shape != (self.c_max + 1, self.c_max + 1):
            raise InvalidParameterError("probs must be (c_max+1) x (c_max+1)")
        if np.any(self.probs < 0.0) or np.any(self.probs > 1.0):
            raise InvalidParameterError("probabilities must lie in [0, 1]")
        total = float(self.probs.sum())
        if not (1.0 - 1e-9 <= total <= 1.0 + 1e-12):
            raise InvalidParameterError(f"total mass {total} outside [1-1e-9, 1]")

    @property
    def signal_marginal(self) -> np.ndarray:
        return self.probs.sum(axis=1)

    @property
    def idler_marginal(self) -> np.ndarray:
        return self.probs.sum(axis=0)


def multimode_thermal_pmf(modes, mean_per_mode, n):
    """Negative-binomial (Mandel-Rice) photon-number probability.

    P(n) = Gamma(n+M) / (n! Gamma(M)) * (B/(1+B))^n * (1+B)^(-M)
    for M = ``modes`` thermal modes with ``mean_per_mode`` = B photons each.
    Evaluated in log space; M may be any positive real.

    ``n`` may be a scalar or an integer array; the return matches its shape.
    """
    if not modes > 0:
        raise InvalidParameterError("modes must be > 0")
    if mean_per_mode < 0:
        raise InvalidParameterError("mean_per_mode must be >= 0")
    n_arr = np.asarray(n)
    if np.any(n_arr < 0):
        raise InvalidParameterError("n must be non-negative")
    if mean_per_mode == 0.0:
        out = np.where(n_arr == 0, 1.0, 0.0)
        return float(out) if np.isscalar(n) else out
    log_p = (
        gammaln(n_arr + modes)
        - gammaln(n_arr + 1.0)
        - gammaln(modes)
        + n_arr * (np.log(mean_per_mode) - np.log1p(mean_per_mode))
        - modes * np.log1p(mean_per_mode)
    )
    out = np.exp(log_p)
    return float(out) if np.isscalar(n) else out


def _thermal_vector(modes, mean_per_mode, tail_eps=_TAIL_EPS):
    """Multimode thermal pmf over 0..N with dropped tail mass < tail_eps."""
    n_max = 16
    while True:
        pmf = multimode_thermal_pmf(modes, mean_per_mode, np.arange(n_max + 1))
        if 1.0 - pmf.sum() < tail_eps:
            return pmf
        if n_max >= _N_CAP:
            raise TruncationError(
                f"thermal field with modes={modes}, mean={mean_per_mode} "
                f"needs support beyond {_N_CAP} photons"
            )
        n_max *= 2


def _binomial_loss_matrix(eta, n_max, k_max):
    """Matrix L[k, n] = P(Binomial(n, eta) = k) for n <= n_max, k <= k_max."""
    n = np.arange(n_max + 1)
    k = np.arange(k_max + 1)[:, None]
    if eta == 0.0:
        out = np.zeros((k_max + 1, n_max + 1))
        out[0, :] = 1.0
        return out
    if eta == 1.0:
        out = np.zeros((k_max + 1, n_max + 1))
        d = np.arange(min(n_max, k_max) + 1)
        out[d, d] = 1.0
        return out
    with np.errstate(divide="ignore", invalid="ignore"):
        log_l = (
            gammaln(n + 1.0)
            - gammaln(k + 1.0)
            - gammaln(n - k + 1.0)
            + k * np.log(eta)
            + (n - k) * np.log1p(-eta)
        )
    out = np.exp(log_l)
    out[k > n] = 0.0
    return out


def _poisson_vector(mean, tail_eps=_TAIL_EPS):
    """Poisson pmf over 0..K with dropped tail mass < tail_eps."""
    if mean == 0.0:
        return np.ones(1)
    k_max = max(8, int(mean) + 8)
    while True:
        k = np.arange(k_max + 1)
        pmf = np.exp(k * np.log(mean) - mean - gammaln(k + 1.0))
        if 1.0 - pmf.sum() < tail_eps:
            return pmf
        if k_max >= 1 << 20:
            raise TruncationError(f"Poisson mean {mean} is beyond representable support")
        k_max *= 2


def detect_pmf(photon_pmf, eta, dark_mean=0.0):
    """Distribution of detected counts for a given photon-number pmf.

    Detection is binomial thinning at ``eta`` convolved with Poissonian dark
    events of mean ``dark_mean``.  The returned array is long enough that the
    dropped tail mass is below 1e-10.
    """
    if not 0.0 <= eta <= 1.0:
        raise InvalidParameterError("eta must lie in [0, 1]")
    if dark_mean < 0:
        raise InvalidParameterError("dark_mean must be >= 0")
    pmf = np.asarray(photon_pmf, dtype=float)
    if pmf.ndim != 1 or pmf.size == 0:
        raise InvalidParameterError("photon_pmf must be a non-empty 1D array")
    n_max = pmf.size - 1
    thinned = _binomial_loss_matrix(eta, n_max, n_max) @ pmf
    if dark_mean == 0.0:
        return thinned
    dark = _poisson_vector(dark_mean, tail_eps=0.5e-10)
    return np.convolve(thinned, dark)


def _fold(vec, c_max):
    """Clamp a count distribution into 0..c_max; mass beyond folds into c_max."""
    out = np.zeros(c_max + 1)
    m = min(vec.size, c_max)
    out[:m] = vec[:m]
    if vec.size > c_max:
        out[c_max] = vec[c_max:].sum()
    return out


def _folded_loss_matrix(eta, n_max, c_max):
    """Loss matrix with the top row folded: L[c_max, n] = P(Bin(n, eta) >= c_max)."""
    loss = _binomial_loss_matrix(eta, n_max, c_max)
    loss[c_max] = np.clip(1.0 - loss[:c_max].sum(axis=0), 0.0, 1.0)
    return loss


def _folded_shift_matrix(kernel, c_max):
    """Convolution-then-clamp along one axis, as a matrix acting on that axis.

    T[r, u] = kernel[r - u] for r < c_max; the bottom row accumulates every
    shift landing at or beyond c_max.  ``kernel`` must already be folded.
    """
    t = np.zeros((c_max + 1, c_max + 1))
    for u in range(c_max + 1):
        t[u:c_max, u] = kernel[: c_max - u]
        t[c_max, u] = kernel[c_max - u :].sum()
    return t


def _detected_noise(eta, modes, mean, dark):
    return detect_pmf(_thermal_vector(modes, mean), eta, dark)


def joint_photocount_dist(params: TwinBeamParams, c_max: int) -> JointDistribution:
    """Analytic joint photocount distribution p(c_s, c_i) on a 0..c_max window.

    Pair photons are perfectly number-correlated before losses: a shared pair
    number n is thinned independently by each arm's efficiency.  Each arm then
    adds its detected noise field and dark counts by convolution.  Counts
    beyond c_max are clamped into the boundary bin, matching the histogram
    accumulation rule, so the window always carries the full mass.

    Raises TruncationError when the distribution cannot be computed to the
    1 - 1e-9 mass guarantee (internal support cap reached).
    """
    if c_max < 1:
        raise InvalidParameterError("c_max must be >= 1")

    arm_s, arm_i = params._arm("s"), params._arm("i")
    flip = arm_s > arm_i  # canonical arm order makes arm swap an exact transpose
    a, b = (arm_i, arm_s) if flip else (arm_s, arm_i)

    pair = _thermal_vector(params.pair_modes, params.pair_mean)
    n_max = pair.size - 1
    loss_a = _folded_loss_matrix(a[0], n_max, c_max)
    loss_b = _folded_loss_matrix(b[0], n_max, c_max)
    pair_joint = (loss_a * pair) @ loss_b.T

    noise_a = _fold(_detected_noise(*a), c_max)
    noise_b = _fold(_detected_noise(*b), c_max)
    joint = (
        _folded_shift_matrix(noise_a, c_max)
        @ pair_joint
        @ _folded_shift_matrix(noise_b, c_max).T
    )

    if arm_s == arm_i:
        joint = (joint + joint.T) / 2.0
    elif flip:
        joint = joint.T

    mass = float(joint.sum())
    if mass < 1.0 - 1e-9:
        raise TruncationError(
            f"window c_max={c_max} holds only {mass:.12f} of the probability mass"
        )
    return JointDistribution(probs=np.minimum(joint, 1.0), c_max=c_max)


def _joint_weights(joint):
    """Weight matrix of a JointHistogram, JointDistribution or plain array."""
    if isinstance(joint, JointHistogram):
        return joint.counts.astype(float)
    if isinstance(joint, JointDistribution):
        return joint.probs
    w = np.asarray(joint, dtype=float)
    if w.ndim != 2:
        raise InvalidParameterError("joint weights must form a 2D matrix")
    return w


def klyshko_efficiency(joint) -> tuple[float, float]:
    """Pair-calibration efficiency estimates (eta_s, eta_i) from count moments.

    eta_i = <c_s c_i> / <c_s> and eta_s = <c_s c_i> / <c_i>, the coincidence
    rate over the heralding arm's mean.  Exact only for strictly paired
    fields; for multi-pair, noisy or dark-count-laden fields the count-moment
    form is biased and may exceed 1 -- values are reported as-is.

    Accepts a JointHistogram, a JointDistribution, or a raw weight matrix.
    """
    w = _joint_weights(joint)
    total = w.sum()
    if total <= 0:
        raise InvalidParameterError("empty histogram")
    c_s = np.arange(w.shape[0], dtype=float)
    c_i = np.arange(w.shape[1], dtype=float)
    mean_s = (w.sum(axis=1) @ c_s) / total
    mean_i = (w.sum(axis=0) @ c_i) / total
    if mean_s == 0.0 or mean_i == 0.0:
        raise InvalidParameterError("zero marginal: one arm never fired")
    cross = (c_s @ w @ c_i) / total
    return cross / mean_i, cross / mean_s


def sample_photocounts(params: TwinBeamParams, n_samples: int, seed) -> np.ndarray:
    """Monte Carlo sampler of joint photocounts; the model's independent oracle.

    Draws pair numbers as a gamma-mixed Poisson (exactly the multimode thermal
    law for real mode counts), thins each arm binomially, adds thermal noise
    and Poisson darks.  Returns an (n_samples, 2) int array of (c_s, c_i).

    ``seed`` may be anything np.random.default_rng accepts, including an
    existing Generator.
    """
    if n_samples < 1:
        raise InvalidParameterError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)

    def thermal_counts(modes, mean):
        if mean == 0.0:
            return np.zeros(n_samples, dtype=np.int64)
        lam = rng.gamma(shape=modes, scale=mean, size=n_samples)
        return rng.poisson(lam)

    pairs = thermal_counts(params.pair_modes, params.pair_mean)
    c_s = rng.binomial(pairs, params.eta_s) + rng.binomial(
        thermal_counts(params.noise_modes_s, params.noise_mean_s), params.eta_s
    )
    c_i = rng.binomial(pairs, params.eta_i) + rng.binomial(
        thermal_counts(params.noise_modes_i, params.noise_mean_i), params.eta_i
    )
    if params.dark_s > 0:
        c_s = c_s + rng.poisson(params.dark_s, size=n_samples)
    if params.dark_i > 0:
        c_i = c_i + rng.poisson(params.dark_i, size=n_samples)
    return np.column_stack([c_s, c_i])
