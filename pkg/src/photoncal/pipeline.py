"""Raw-frame processing: background statistics, thresholding, event
clustering, and joint photocount histogram accumulation.

The chain follows the usual intensified-camera reduction: subtract the mean
background frame, mark pixels exceeding k background-noise standard
deviations (per pixel, which also corrects response inhomogeneities), group
marked pixels into connected components, and count events per detection
region and frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InvalidParameterError
from .model import JointHistogram
from .simulate import Rect

_STRUCTURE_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCTURE_8 = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class DetectionEvent:
    """One clustered detection event."""

    centroid_x: float
    centroid_y: float
    pixel_count: int
    total_adu: float
    region_label: str  # "signal", "idler", "full", or "outside"


@dataclass
class PipelineConfig:
    """Processing parameters plus the background statistics they rely on.

    ``background_mean`` and ``background_sigma`` are per-pixel grids from
    :func:`average_background` (scalars broadcast).  When the two detection
    regions are set, events are labeled by centroid membership; with no
    regions every event is labeled "full".
    """

    background_mean: np.ndarray | float
    background_sigma: np.ndarray | float
    threshold_k: float = 3.0
    connectivity: int = 8
    min_pixels: int = 1
    signal_region: Rect | None = None
    idler_region: Rect | None = None

    def __post_init__(self):
        if not self.threshold_k > 0:
            raise InvalidParameterError("threshold_k must be > 0")
        if self.min_pixels < 1:
            raise InvalidParameterError("min_pixels must be >= 1")
        if self.connectivity not in (4, 8):
            raise InvalidParameterError("connectivity must be 4 or 8")
        for name in ("signal_region", "idler_region"):
            region = getattr(self, name)
            if region is not None and not isinstance(region, Rect):
                setattr(self, name, Rect(*region))

    @property
    def structure(self) -> np.ndarray:
        return _STRUCTURE_8 if self.connectivity == 8 else _STRUCTURE_4

    def label_of(self, x: float, y: float) -> str:
        if self.signal_region is None and self.idler_region is None:
            return "full"
        if self.signal_region is not None and self.signal_region.contains(x, y):
            return "signal"
        if self.idler_region is not None and self.idler_region.contains(x, y):
            return "idler"
        return "outside"


def average_background(frames) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel sample mean and sample standard deviation of a frame stream.

    Accumulates relative to the first frame so the variance sums do not
    cancel catastrophically at high baselines.
    """
    offset = None
    total = total_sq = None
    n = 0
    for frame in frames:
        f = np.asarray(frame, dtype=np.float64)
        if offset is None:
            offset = f
            total = np.zeros_like(f)
            total_sq = np.zeros_like(f)
        elif f.shape != offset.shape:
            raise InvalidParameterError("frames must share one shape")
        d = f - offset
        total += d
        total_sq += d * d
        n += 1
    if n < 2:
        raise InvalidParameterError("background averaging needs at least 2 frames")
    mean = offset + total / n
    var = (total_sq - total * total / n) / (n - 1)
    return mean, np.sqrt(np.clip(var, 0.0, None))


def threshold_frame(frame, cfg: PipelineConfig) -> np.ndarray:
    """Boolean mask of pixels exceeding mean + k * sigma of the background."""
    if cfg.background_mean is None or cfg.background_sigma is None:
        raise InvalidParameterError("background statistics are missing")
    excess = np.asarray(frame, dtype=np.float64) - cfg.background_mean
    return excess > cfg.threshold_k * np.asarray(cfg.background_sigma, dtype=np.float64)


def cluster_events(mask, frame, cfg: PipelineConfig) -> list[DetectionEvent]:
    """Group marked pixels into events and locate them.

    Components smaller than min_pixels are dropped.  Centroids are weighted
    by background-subtracted ADU; the region label follows the centroid.
    """
    mask = np.asarray(mask, dtype=bool)
    frame = np.asarray(frame)
    if mask.shape != frame.shape:
        raise InvalidParameterError("mask and frame dimensions differ")
    labels, n_components = ndimage.label(mask, structure=cfg.structure)
    if n_components == 0:
        return []
    flat = labels.ravel()
    weights = (np.asarray(frame, dtype=np.float64) - cfg.background_mean).ravel()
    h, w = frame.shape
    yy, xx = np.divmod(np.arange(h * w), w)
    sizes = np.bincount(flat, minlength=n_components + 1)
    adu = np.bincount(flat, weights=weights, minlength=n_components + 1)
    wx = np.bincount(flat, weights=weights * xx, minlength=n_components + 1)
    wy = np.bincount(flat, weights=weights * yy, minlength=n_components + 1)
    events = []
    for comp in range(1, n_components + 1):
        if sizes[comp] < cfg.min_pixels:
            continue
        cx = wx[comp] / adu[comp]
        cy = wy[comp] / adu[comp]
        events.append(
            DetectionEvent(
                centroid_x=float(cx),
                centroid_y=float(cy),
                pixel_count=int(sizes[comp]),
                total_adu=float(adu[comp]),
                region_label=cfg.label_of(cx, cy),
            )
        )
    return events


def frame_events(frames, cfg: PipelineConfig):
    """Threshold and cluster a frame stream; yields one event list per frame."""
    for frame in frames:
        yield cluster_events(threshold_frame(frame, cfg), frame, cfg)


def pair_counts(frames, cfg: PipelineConfig) -> np.ndarray:
    """Per-frame (c_s, c_i) event counts as an (n_frames, 2) int array."""
    counts = [
        (
            sum(e.region_label == "signal" for e in events),
            sum(e.region_label == "idler" for e in events),
        )
        for events in frame_events(frames, cfg)
    ]
    return np.asarray(counts, dtype=np.int64).reshape(-1, 2)


def full_counts(frames, cfg: PipelineConfig) -> np.ndarray:
    """Per-frame full-sensor event counts (events labeled "outside" excluded)."""
    return np.asarray(
        [
            sum(e.region_label in ("full", "signal", "idler") for e in events)
            for events in frame_events(frames, cfg)
        ],
        dtype=np.int64,
    )


def accumulate_histogram(event_counts, c_max: int) -> JointHistogram:
    """Build the joint histogram from per-frame (c_s, c_i) counts.

    Counts above c_max are clamped into the c_max bin; the number of clamped
    values is recorded so no frame is ever dropped.
    """
    counts = np.asarray(event_counts, dtype=np.int64)
    if counts.size == 0:
        raise InvalidParameterError("no event counts to accumulate")
    if counts.ndim != 2 or counts.shape[1] != 2:
        raise InvalidParameterError("event counts must be (n_frames, 2)")
    if c_max < 1:
        raise InvalidParameterError("c_max must be >= 1")
    if np.any(counts < 0):
        raise InvalidParameterError("event counts must be non-negative")
    clamped = int(np.count_nonzero(counts > c_max))
    clipped = np.minimum(counts, c_max)
    hist = np.zeros((c_max + 1, c_max + 1), dtype=np.int64)
    np.add.at(hist, (clipped[:, 0], clipped[:, 1]), 1)
    return JointHistogram(counts=hist, n_frames=counts.shape[0], clamped=clamped)


def merge_histograms(*hists: JointHistogram) -> JointHistogram:
    """Associative, commutative merge of partial histograms."""
    if not hists:
        raise InvalidParameterError("nothing to merge")
    shape = hists[0].counts.shape
    if any(h.counts.shape != shape for h in hists):
        raise InvalidParameterError("histogram shapes differ")
    return JointHistogram(
        counts=np.sum([h.counts for h in hists], axis=0),
        n_frames=sum(h.n_frames for h in hists),
        clamped=sum(h.clamped for h in hists),
    )


def accumulated_image(frames) -> np.ndarray:
    """Sum of a frame stream as float64, for flat-field inspection."""
    total = None
    for frame in frames:
        f = np.asarray(frame, dtype=np.float64)
        total = f if total is None else total + f
    if total is None:
        raise InvalidParameterError("no frames to accumulate")
    return total


# ---------------------------------------------------------------------------
# Histogram TSV format.

def write_histogram_tsv(path, hist: JointHistogram) -> None:
    """Write a joint histogram as TSV with `# key=value` header lines."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# frames={hist.n_frames}\n")
        fh.write(f"# cmax={hist.c_max}\n")
        fh.write(f"# clamped={hist.clamped}\n")
        for c_s in range(hist.c_max + 1):
            for c_i in range(hist.c_max + 1):
                fh.write(f"{c_s}\t{c_i}\t{hist.counts[c_s, c_i]}\n")


def read_histogram_tsv(path) -> JointHistogram:
    meta = {}
    cells = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line.lstrip("# ").partition("=")
                meta[key.strip()] = value.strip()
                continue
            c_s, c_i, count = line.split("\t")
            cells.append((int(c_s), int(c_i), int(count)))
    if "frames" not in meta or "cmax" not in meta:
        raise InvalidParameterError("histogram TSV lacks frames/cmax headers")
    c_max = int(meta["cmax"])
    counts = np.zeros((c_max + 1, c_max + 1), dtype=np.int64)
    for c_s, c_i, count in cells:
        if not (0 <= c_s <= c_max and 0 <= c_i <= c_max):
            raise InvalidParameterError("histogram cell outside declared c_max")
        counts[c_s, c_i] += count
    return JointHistogram(
        counts=counts,
        n_frames=int(meta["frames"]),
        clamped=int(meta.get("clamped", 0)),
    )
