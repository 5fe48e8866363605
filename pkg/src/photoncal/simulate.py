"""Seeded Monte Carlo simulation of intensified-camera frames.

Two illumination modes: twin-beam pair fields landing in two disjoint sensor
regions, and a flat-field photon source covering the whole sensor.  Every
detected photon and dark event is rendered as a Gaussian blob with a
log-normal pulse height on top of a Gaussian readout floor.

Frame k of a run is generated from an RNG derived only from (seed, k), so
sequences are reproducible frame-by-frame and in any generation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError
from .model import TwinBeamParams

CONTAINER_MAGIC = b"PCFRAMS1"


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel rectangle; x is the column axis, y the row axis."""

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidParameterError("region must have positive size")

    @property
    def x1(self) -> int:
        return self.x0 + self.width

    @property
    def y1(self) -> int:
        return self.y0 + self.height

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1

    def overlaps(self, other: "Rect") -> bool:
        return not (
            self.x1 <= other.x0
            or other.x1 <= self.x0
            or self.y1 <= other.y0
            or other.y1 <= self.y0
        )


@dataclass
class CameraConfig:
    """Sensor geometry and noise description of the simulated camera.

    ``qe_map`` is the camera's own detection probability: a scalar, a
    (height, width) array, or None for an ideal photocathode.  In pair mode
    the arm efficiencies from TwinBeamParams multiply it; in source mode it
    is the whole efficiency model.
    """

    width: int
    height: int
    signal_region: Rect | None = None
    idler_region: Rect | None = None
    baseline: float = 100.0
    readout_sigma: float = 3.0
    event_amplitude_mean: float = 600.0
    event_amplitude_sigma: float = 200.0
    psf_radius: float = 1.0
    dark_event_rate: float = 0.0
    qe_map: float | np.ndarray | None = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidParameterError("sensor must have positive size")
        if not self.readout_sigma > 0:
            raise InvalidParameterError("readout_sigma must be > 0")
        if not self.event_amplitude_mean > 0:
            raise InvalidParameterError("event_amplitude_mean must be > 0")
        if self.event_amplitude_sigma < 0 or self.psf_radius < 0:
            raise InvalidParameterError("amplitude sigma and psf_radius must be >= 0")
        if self.dark_event_rate < 0:
            raise InvalidParameterError("dark_event_rate must be >= 0")
        sensor = Rect(0, 0, self.width, self.height)
        for name in ("signal_region", "idler_region"):
            region = getattr(self, name)
            if region is None:
                continue
            if not isinstance(region, Rect):
                region = Rect(*region)
                setattr(self, name, region)
            if not (
                0 <= region.x0
                and region.x1 <= self.width
                and 0 <= region.y0
                and region.y1 <= self.height
            ):
                raise InvalidParameterError(f"{name} must lie within the sensor")
        if (
            self.signal_region is not None
            and self.idler_region is not None
            and self.signal_region.overlaps(self.idler_region)
        ):
            raise InvalidParameterError("signal and idler regions must be disjoint")
        if isinstance(self.qe_map, np.ndarray):
            if self.qe_map.shape != (self.height, self.width):
                raise InvalidParameterError("qe_map must be (height, width)")
            if np.any(self.qe_map < 0) or np.any(self.qe_map > 1):
                raise InvalidParameterError("qe_map values must lie in [0, 1]")
        elif self.qe_map is not None and not 0.0 <= float(self.qe_map) <= 1.0:
            raise InvalidParameterError("qe_map scalar must lie in [0, 1]")

    def qe_at(self, x, y) -> np.ndarray:
        """Detection probability at (possibly arrays of) pixel positions."""
        if self.qe_map is None:
            return np.ones_like(np.asarray(x, dtype=float))
        if isinstance(self.qe_map, np.ndarray):
            ix = np.clip(np.asarray(x, dtype=int), 0, self.width - 1)
            iy = np.clip(np.asarray(y, dtype=int), 0, self.height - 1)
            return self.qe_map[iy, ix]
        return np.full(np.asarray(x, dtype=float).shape, float(self.qe_map))


@dataclass
class PairFrameTruth:
    """Ground truth of one simulated pair-mode frame."""

    signal_detected: int = 0
    idler_detected: int = 0
    signal_dark: int = 0
    idler_dark: int = 0
    events: list = field(default_factory=list)

    @property
    def signal_count(self) -> int:
        return self.signal_detected + self.signal_dark

    @property
    def idler_count(self) -> int:
        return self.idler_detected + self.idler_dark


@dataclass
class SourceFrameTruth:
    """Ground truth of one simulated source-mode frame."""

    detected: int = 0
    dark: int = 0
    events: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return self.detected + self.dark


def frame_rng(seed: int, index: int) -> np.random.Generator:
    """RNG for frame ``index``; depends only on (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _sample_amplitudes(rng, n, mean, sigma):
    if n == 0:
        return np.empty(0)
    if sigma == 0.0:
        return np.full(n, mean)
    s2 = math.log1p((sigma / mean) ** 2)
    mu = math.log(mean) - s2 / 2.0
    return rng.lognormal(mu, math.sqrt(s2), size=n)


def _thermal_count(rng, modes, mean):
    if mean == 0.0:
        return 0
    return int(rng.poisson(rng.gamma(modes, mean)))


def render_frame(cam: CameraConfig, events, rng: np.random.Generator) -> np.ndarray:
    """Render point events onto a noisy frame.

    ``events`` is an iterable of (x, y, amplitude).  Each event deposits a
    Gaussian footprint of width psf_radius truncated at 3 radii, normalized
    over the full footprint, so its on-sensor pixels sum to the amplitude
    (minus any part falling off the sensor edge).
    """
    canvas = rng.normal(cam.baseline, cam.readout_sigma, size=(cam.height, cam.width))
    r = cam.psf_radius
    for x, y, amplitude in events:
        if r == 0.0:
            ix, iy = int(round(x)), int(round(y))
            if 0 <= ix < cam.width and 0 <= iy < cam.height:
                canvas[iy, ix] += amplitude
            continue
        reach = int(math.ceil(3.0 * r))
        cx, cy = int(math.floor(x)), int(math.floor(y))
        gx = np.arange(cx - reach, cx + reach + 1)
        gy = np.arange(cy - reach, cy + reach + 1)
        d2 = (gx[None, :] - x) ** 2 + (gy[:, None] - y) ** 2
        w = np.exp(-d2 / (2.0 * r * r))
        w[d2 > (3.0 * r) ** 2] = 0.0
        w *= amplitude / w.sum()
        x_lo, x_hi = max(0, gx[0]), min(cam.width, gx[-1] + 1)
        y_lo, y_hi = max(0, gy[0]), min(cam.height, gy[-1] + 1)
        if x_lo >= x_hi or y_lo >= y_hi:
            continue
        canvas[y_lo:y_hi, x_lo:x_hi] += w[
            y_lo - gy[0] : y_hi - gy[0], x_lo - gx[0] : x_hi - gx[0]
        ]
    return np.clip(np.rint(canvas), 0, 65535).astype(np.uint16)


def _uniform_positions(rng, region: Rect, n):
    x = rng.uniform(region.x0, region.x1, size=n)
    y = rng.uniform(region.y0, region.y1, size=n)
    return x, y


def _detect_in_region(rng, cam, region, n_photons, eta):
    """Land photons uniformly in a region and thin by eta x qe(pixel)."""
    x, y = _uniform_positions(rng, region, n_photons)
    keep = rng.random(n_photons) < eta * cam.qe_at(x, y)
    return x[keep], y[keep]


def simulate_pair_frames(
    params: TwinBeamParams,
    cam: CameraConfig,
    n_frames: int,
    seed: int,
    start: int = 0,
    with_truth: bool = False,
):
    """Generate twin-beam frames; yields arrays (or (frame, truth) pairs).

    Per frame: a shared pair number and per-arm noise numbers are drawn from
    the multimode thermal laws, every photon lands uniformly in its arm's
    region and survives with probability eta_arm x qe(pixel), Poisson dark
    events are added per region, and everything is rendered.
    """
    if cam.signal_region is None or cam.idler_region is None:
        raise InvalidParameterError("pair simulation needs both detection regions")
    if n_frames < 1:
        raise InvalidParameterError("n_frames must be >= 1")
    for k in range(start, start + n_frames):
        rng = frame_rng(seed, k)
        n_pairs = _thermal_count(rng, params.pair_modes, params.pair_mean)
        n_noise_s = _thermal_count(rng, params.noise_modes_s, params.noise_mean_s)
        n_noise_i = _thermal_count(rng, params.noise_modes_i, params.noise_mean_i)
        truth = PairFrameTruth()
        events = []
        for region, n_photons, eta, dark_mean, arm in (
            (cam.signal_region, n_pairs + n_noise_s, params.eta_s, params.dark_s, "s"),
            (cam.idler_region, n_pairs + n_noise_i, params.eta_i, params.dark_i, "i"),
        ):
            px, py = _detect_in_region(rng, cam, region, n_photons, eta)
            n_dark = int(rng.poisson(dark_mean)) if dark_mean > 0 else 0
            dx, dy = _uniform_positions(rng, region, n_dark)
            x = np.concatenate([px, dx])
            y = np.concatenate([py, dy])
            amp = _sample_amplitudes(
                rng, x.size, cam.event_amplitude_mean, cam.event_amplitude_sigma
            )
            events.extend(zip(x, y, amp))
            if arm == "s":
                truth.signal_detected, truth.signal_dark = px.size, n_dark
            else:
                truth.idler_detected, truth.idler_dark = px.size, n_dark
        truth.events = events
        frame = render_frame(cam, events, rng)
        yield (frame, truth) if with_truth else frame


def simulate_source_frames(
    flux_per_frame: float,
    cam: CameraConfig,
    n_frames: int,
    seed: int,
    start: int = 0,
    with_truth: bool = False,
):
    """Generate flat-field source frames; yields arrays (or (frame, truth)).

    ``flux_per_frame`` is the mean photon number reaching the sensor plane
    per frame; photons land uniformly over the full sensor and are detected
    with probability qe(pixel).  Dark events follow cam.dark_event_rate.
    """
    if flux_per_frame < 0:
        raise InvalidParameterError("flux_per_frame must be >= 0")
    if n_frames < 1:
        raise InvalidParameterError("n_frames must be >= 1")
    sensor = Rect(0, 0, cam.width, cam.height)
    for k in range(start, start + n_frames):
        rng = frame_rng(seed, k)
        n_photons = int(rng.poisson(flux_per_frame)) if flux_per_frame > 0 else 0
        px, py = _detect_in_region(rng, cam, sensor, n_photons, 1.0)
        n_dark = int(rng.poisson(cam.dark_event_rate)) if cam.dark_event_rate > 0 else 0
        dx, dy = _uniform_positions(rng, sensor, n_dark)
        x = np.concatenate([px, dx])
        y = np.concatenate([py, dy])
        amp = _sample_amplitudes(
            rng, x.size, cam.event_amplitude_mean, cam.event_amplitude_sigma
        )
        events = list(zip(x, y, amp))
        frame = render_frame(cam, events, rng)
        if with_truth:
            yield frame, SourceFrameTruth(detected=px.size, dark=n_dark, events=events)
        else:
            yield frame


# ---------------------------------------------------------------------------
# File formats: 16-bit binary PGM per frame, and a multi-frame container.

def write_pgm(path, frame: np.ndarray) -> None:
    """Write one frame as binary PGM (P5, maxval 65535, big-endian samples)."""
    frame = np.asarray(frame, dtype=np.uint16)
    h, w = frame.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(frame.astype(">u2").tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        nl = data.index(b"\n", pos)
        line = data[pos : nl]
        pos = nl + 1
        line = line.split(b"#", 1)[0]
        fields.extend(line.split())
    if fields[0] != b"P5":
        raise InvalidParameterError("not a binary PGM file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 65535:
        raise InvalidParameterError("expected a 16-bit PGM (maxval 65535)")
    values = np.frombuffer(data[pos : pos + 2 * w * h], dtype=">u2")
    return values.reshape(h, w).astype(np.uint16)


def write_frame_container(path, frames, width: int, height: int, n_frames: int) -> None:
    """Write frames to the multi-frame container.

    Layout: 8-byte magic "PCFRAMS1"; four little-endian uint32 (frame count,
    width, height, reserved=0); then each frame's samples as little-endian
    uint16, row-major.
    """
    header = np.array([n_frames, width, height, 0], dtype="<u4")
    written = 0
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        fh.write(header.tobytes())
        for frame in frames:
            frame = np.asarray(frame, dtype=np.uint16)
            if frame.shape != (height, width):
                raise InvalidParameterError("frame shape does not match container header")
            fh.write(frame.astype("<u2").tobytes())
            written += 1
    if written != n_frames:
        raise InvalidParameterError(f"expected {n_frames} frames, got {written}")


def read_container_header(path) -> tuple[int, int, int]:
    """Return (n_frames, width, height) of a frame container."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CONTAINER_MAGIC:
            raise InvalidParameterError("not a frame container (bad magic)")
        header = np.frombuffer(fh.read(16), dtype="<u4")
    return int(header[0]), int(header[1]), int(header[2])


def read_frame_container(path):
    """Yield frames from a container one at a time."""
    n_frames, width, height = read_container_header(path)
    frame_bytes = 2 * width * height
    with open(path, "rb") as fh:
        fh.seek(24)
        for _ in range(n_frames):
            buf = fh.read(frame_bytes)
            if len(buf) != frame_bytes:
                raise InvalidParameterError("truncated frame container")
            yield np.frombuffer(buf, dtype="<u2").reshape(height, width).astype(np.uint16)
