"""Shared statistical helpers for the test suite."""

import numpy as np
from scipy.stats import chisquare


def pooled_chisquare_pvalue(observed, probs, min_expected=5.0):
    """Chi-square goodness-of-fit p-value with low-expectation cells pooled.

    ``observed`` are counts and ``probs`` the model cell probabilities of the
    same shape; cells with expected count below ``min_expected`` are merged
    into one pooled bin.
    """
    observed = np.asarray(observed, dtype=float).ravel()
    probs = np.asarray(probs, dtype=float).ravel()
    probs = probs / probs.sum()
    n = observed.sum()
    expected = probs * n
    keep = expected >= min_expected
    obs = list(observed[keep])
    exp = list(expected[keep])
    if np.any(~keep):
        obs.append(observed[~keep].sum())
        exp.append(expected[~keep].sum())
    return chisquare(obs, exp).pvalue
