"""Synthetic extracellular recordings, spike detection/alignment and dataset I/O.

Sequences follow the usual synthetic-benchmark recipe: a few spike templates
fire as refractory Poisson processes on top of a background made of many
small, randomly placed spike shapes plus white noise. The noise level ``sigma``
is the standard deviation of that background relative to a template peak
of 1.

Spikes are aligned so that the sample with the largest absolute value sits at
index ``D // 3`` of a ``D``-sample window.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import container

DEFAULT_RATE = 24_000.0
REFRACTORY_S = 2e-3
MAD_SCALE = 0.6745
THRESHOLD_FACTOR = 5.0
# background mixture: share of background variance carried by spike fragments
FRAGMENT_SHARE = 0.8
FRAGMENT_UNITS = 20
FRAGMENT_EVENTS_HZ = 1500.0

DATASET_MAGIC = b"SPKD"
DATASET_VERSION = 1


def peak_offset(spike_len: int) -> int:
    return spike_len // 3


@dataclass
class SpikeTemplate:
    waveform: np.ndarray  # (channels, D), peak |value| == 1 at D // 3
    id: int = 0

    def __post_init__(self):
        w = np.atleast_2d(np.asarray(self.waveform, dtype=np.float64))
        if not np.isfinite(w).all():
            raise ValueError("template must be finite")
        self.waveform = w

    @property
    def channels(self) -> int:
        return self.waveform.shape[0]

    @property
    def length(self) -> int:
        return self.waveform.shape[1]


def dog_waveform(
    spike_len: int,
    widths: Sequence[float] = (2.0, 6.0),
    amps: Sequence[float] = (-1.0, 0.4),
    lags: Sequence[float] = (0.0, 6.0),
) -> np.ndarray:
    """Sum of Gaussian lobes (difference of Gaussians) in samples.

    Lobe ``i`` has amplitude ``amps[i]``, width ``widths[i]`` and is centred
    ``lags[i]`` samples after the alignment index. The result is scaled so
    the largest magnitude is exactly 1 and lands on the alignment index.
    """
    t = np.arange(spike_len, dtype=np.float64) - peak_offset(spike_len)
    w = np.zeros(spike_len)
    for a, s, lag in zip(amps, widths, lags):
        w += a * np.exp(-0.5 * ((t - lag) / s) ** 2)
    k = int(np.argmax(np.abs(w)))
    w = np.roll(w, peak_offset(spike_len) - k)
    return w / np.abs(w).max()


def standard_templates(n: int, spike_len: int = 64, seed: int = 0, channels: int = 1) -> list[SpikeTemplate]:
    """``n`` distinct biphasic/triphasic templates.

    With ``channels > 1`` every channel gets the same shape at a different,
    random gain, as seen by a tetrode; the largest gain is 1.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        scale = spike_len / 64.0
        if i % 2 == 0:
            amps = (-1.0, rng.uniform(0.25, 0.5))
            widths = (rng.uniform(1.5, 3.5) * scale, rng.uniform(4.0, 8.0) * scale)
            lags = (0.0, rng.uniform(5.0, 10.0) * scale)
        else:
            amps = (rng.uniform(0.2, 0.4), -1.0, rng.uniform(0.3, 0.6))
            widths = (rng.uniform(1.5, 3.0) * scale, rng.uniform(1.5, 3.0) * scale, rng.uniform(3.0, 7.0) * scale)
            lags = (-rng.uniform(3.0, 6.0) * scale, 0.0, rng.uniform(4.0, 9.0) * scale)
        shape = dog_waveform(spike_len, widths, amps, lags)
        gains = np.ones(channels) if channels == 1 else rng.uniform(0.2, 1.0, size=channels)
        if channels > 1:
            gains /= gains.max()
        out.append(SpikeTemplate(gains[:, None] * shape[None, :], id=i))
    return out


def load_templates(path, spike_len: int | None = None) -> list[SpikeTemplate]:
    """Read user templates from ``.npy`` (units x [channels x] D) or CSV (one per row)."""
    path = Path(path)
    arr = np.load(path) if path.suffix == ".npy" else np.loadtxt(path, delimiter=",", ndmin=2)
    if arr.ndim == 2:
        arr = arr[:, None, :]
    if spike_len is not None and arr.shape[-1] != spike_len:
        raise ValueError(f"templates have {arr.shape[-1]} samples, expected {spike_len}")
    out = []
    for i, w in enumerate(arr):
        k = int(np.argmax(np.abs(w).max(axis=0)))
        w = np.roll(w, peak_offset(w.shape[-1]) - k, axis=-1)
        out.append(SpikeTemplate(w / np.abs(w).max(), id=i))
    return out


@dataclass
class SpikeSequence:
    templates: list[SpikeTemplate]
    times: np.ndarray  # peak sample of each spike, sorted
    labels: np.ndarray
    amplitudes: np.ndarray
    noise: np.ndarray  # (channels, T) background
    sample_rate: float = DEFAULT_RATE
    sigma: float = 0.0
    _signal: np.ndarray | None = field(default=None, repr=False)

    @property
    def signal(self) -> np.ndarray:
        if self._signal is None:
            self._signal = render(self.templates, self.times, self.labels, self.amplitudes, self.noise)
        return self._signal

    @property
    def spike_len(self) -> int:
        return self.templates[0].length

    @property
    def duration(self) -> float:
        return self.noise.shape[1] / self.sample_rate


def render(templates, times, labels, amplitudes, background) -> np.ndarray:
    out = np.array(background, dtype=np.float64, copy=True)
    d = templates[0].length
    off = peak_offset(d)
    for t, lab, a in zip(times, labels, amplitudes):
        out[:, t - off : t - off + d] += a * templates[lab].waveform
    return out


def _renewal_times(rate: float, dead: int, n_samples: int, rng) -> np.ndarray:
    """Refractory Poisson train: ISI = dead time + exponential, mean 1/rate.

    ``rate`` is in events per sample and ``dead`` in samples.
    """
    if rate <= 0:
        return np.zeros(0, dtype=np.int64)
    mean_isi = 1.0 / rate
    free = mean_isi - dead
    if free <= 0:
        raise ValueError(f"rate {rate} incompatible with dead time of {dead} samples")
    n_draw = int(n_samples / mean_isi * 1.2) + 20
    t = []
    now = rng.exponential(mean_isi)
    while now < n_samples:
        isi = dead + rng.exponential(free, size=n_draw)
        seq = now + np.cumsum(isi)
        t.append(seq[seq < n_samples])
        now = seq[-1]
    t = np.concatenate(t) if t else np.zeros(0)
    return np.floor(t).astype(np.int64)


def _background(channels: int, n_samples: int, spike_len: int, sigma: float, sample_rate: float, rng) -> np.ndarray:
    if sigma == 0:
        return np.zeros((channels, n_samples))
    pool = standard_templates(FRAGMENT_UNITS, spike_len, seed=int(rng.integers(1 << 31)))
    frag = np.zeros((channels, n_samples + 2 * spike_len))
    n_events = rng.poisson(FRAGMENT_EVENTS_HZ * n_samples / sample_rate)
    starts = rng.integers(0, n_samples + spike_len, size=n_events)
    which = rng.integers(0, FRAGMENT_UNITS, size=n_events)
    amps = rng.uniform(-1.0, 1.0, size=(n_events, channels))
    for s, u, a in zip(starts, which, amps):
        frag[:, s : s + spike_len] += a[:, None] * pool[u].waveform[0][None, :]
    frag = frag[:, spike_len : spike_len + n_samples]
    frag /= max(frag.std(), 1e-12)
    white = rng.standard_normal((channels, n_samples))
    return sigma * (np.sqrt(FRAGMENT_SHARE) * frag + np.sqrt(1.0 - FRAGMENT_SHARE) * white)


def generate(
    templates: Sequence[SpikeTemplate],
    sigma: float,
    rates: float | Sequence[float],
    duration: float,
    seed: int = 0,
    sample_rate: float = DEFAULT_RATE,
    refractory: float = REFRACTORY_S,
    isolate: bool = True,
    amplitude_jitter: float = 0.0,
) -> SpikeSequence:
    """Synthesize a recording with ground truth.

    ``isolate`` drops spikes whose windows would overlap an earlier spike of
    any unit, so ground-truth windows contain exactly one template each. This
    thins multi-unit rates; single-unit trains keep their requested rate
    because the dead time already covers the window.
    """
    if not templates:
        raise ValueError("need at least one template")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    templates = list(templates)
    channels, d = templates[0].waveform.shape
    rng = np.random.default_rng(seed)
    n_samples = int(round(duration * sample_rate))
    rates = np.broadcast_to(np.asarray(rates, dtype=np.float64), (len(templates),))
    dead = int(round(refractory * sample_rate))
    if isolate:
        dead = max(dead, d)
    times, labels = [], []
    for u, r in enumerate(rates):
        t = _renewal_times(float(r) / sample_rate, dead, n_samples, rng)
        times.append(t)
        labels.append(np.full(len(t), u))
    times = np.concatenate(times)
    labels = np.concatenate(labels)
    order = np.argsort(times, kind="stable")
    times, labels = times[order], labels[order]
    off = peak_offset(d)
    keep = (times - off >= 0) & (times - off + d <= n_samples)
    times, labels = times[keep], labels[keep]
    if isolate and len(times):
        ok = np.ones(len(times), dtype=bool)
        last = -(10**12)
        for i, t in enumerate(times):
            if t - last < d:
                ok[i] = False
            else:
                last = t
        times, labels = times[ok], labels[ok]
    amps = 1.0 + amplitude_jitter * rng.standard_normal(len(times)) if amplitude_jitter else np.ones(len(times))
    noise = _background(channels, n_samples, d, sigma, sample_rate, rng)
    return SpikeSequence(templates, times, labels, amps, noise, sample_rate, sigma)


# ---------------------------------------------------------------------------
# detection and extraction


def detection_threshold(signal: np.ndarray) -> np.ndarray:
    """Per-channel amplitude threshold ``5 * median(|x| / 0.6745)``."""
    x = np.atleast_2d(signal)
    return THRESHOLD_FACTOR * np.median(np.abs(x) / MAD_SCALE, axis=1)


def detect(signal: np.ndarray, spike_len: int, threshold: np.ndarray | float | None = None) -> np.ndarray:
    """Sample indexes where ``|x|`` first crosses the threshold on any channel.

    After each detection the detector is blind for ``spike_len // 2`` samples.
    """
    x = np.atleast_2d(signal)
    if x.shape[1] == 0:
        raise ValueError("empty signal")
    thr = detection_threshold(x) if threshold is None else np.broadcast_to(np.asarray(threshold, float), (x.shape[0],))
    above = (np.abs(x) > thr[:, None]).any(axis=0)
    onsets = np.flatnonzero(above & ~np.concatenate(([False], above[:-1])))
    dead = spike_len // 2
    out = []
    last = -(10**12)
    for t in onsets:
        if t - last >= dead:
            out.append(t)
            last = t
    return np.asarray(out, dtype=np.int64)


@dataclass
class SpikeBatch:
    spikes: np.ndarray  # (N, M_spk, D) float32
    labels: np.ndarray  # (N,) or (N, M_spk); -1 when unknown
    timestamps: np.ndarray  # (N,) peak sample, or (N, M_spk) for grouped batches
    channel_map: np.ndarray  # (N, M_spk) physical channel feeding each port
    sample_rate: float = DEFAULT_RATE
    clean: np.ndarray | None = None  # aligned counterparts for denoising targets
    overlapped: np.ndarray | None = None
    shifts: np.ndarray | None = None
    source_index: np.ndarray | None = None
    dropped: int = 0

    def __post_init__(self):
        self.spikes = np.asarray(self.spikes, dtype=np.float32)
        if self.spikes.ndim != 3:
            raise ValueError(f"spikes must be (N, M_spk, D), got {self.spikes.shape}")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.channel_map = np.asarray(self.channel_map, dtype=np.int64)
        if self.clean is not None:
            self.clean = np.asarray(self.clean, dtype=np.float32)

    def __len__(self) -> int:
        return len(self.spikes)

    @property
    def m_spk(self) -> int:
        return self.spikes.shape[1]

    @property
    def spike_len(self) -> int:
        return self.spikes.shape[2]

    def subset(self, idx) -> SpikeBatch:
        idx = np.asarray(idx)
        return replace(
            self,
            spikes=self.spikes[idx],
            labels=self.labels[idx],
            timestamps=self.timestamps[idx],
            channel_map=self.channel_map[idx],
            clean=None if self.clean is None else self.clean[idx],
            overlapped=None if self.overlapped is None else self.overlapped[idx],
            shifts=None if self.shifts is None else self.shifts[idx],
            source_index=None if self.source_index is None else self.source_index[idx],
        )


def _windows(x: np.ndarray, starts: np.ndarray, d: int) -> np.ndarray:
    idx = starts[:, None] + np.arange(d)[None, :]
    return x[:, idx].transpose(1, 0, 2)


def extract_align(signal: np.ndarray, timestamps: np.ndarray, spike_len: int, sample_rate: float = DEFAULT_RATE) -> SpikeBatch:
    """Cut ``spike_len`` windows with the largest |peak| at ``spike_len // 3``.

    The peak is searched from ``D/8`` samples before to ``D/4`` samples after
    each timestamp (covering threshold crossings on the rising edge). Events
    whose window would leave the signal are dropped and counted.
    """
    x = np.atleast_2d(np.asarray(signal, dtype=np.float64))
    n = x.shape[1]
    d = spike_len
    off = peak_offset(d)
    back, fwd = d // 8, d // 4
    peaks, labels_idx = [], []
    mag = np.abs(x).max(axis=0)
    for i, t in enumerate(np.asarray(timestamps, dtype=np.int64)):
        lo, hi = t - back, t + fwd + 1
        if lo < 0 or hi > n:
            continue
        p = lo + int(np.argmax(mag[lo:hi]))
        if p - off < 0 or p - off + d > n:
            continue
        peaks.append(p)
        labels_idx.append(i)
    peaks = np.asarray(peaks, dtype=np.int64)
    dropped = len(timestamps) - len(peaks)
    spikes = _windows(x, peaks - off, d) if len(peaks) else np.zeros((0, x.shape[0], d))
    cmap = np.tile(np.arange(x.shape[0]), (len(peaks), 1))
    return SpikeBatch(
        spikes,
        np.full(len(peaks), -1),
        peaks,
        cmap,
        sample_rate,
        source_index=np.asarray(labels_idx, dtype=np.int64),
        dropped=dropped,
    )


def ground_truth_batch(seq: SpikeSequence) -> SpikeBatch:
    """Windows cut directly at the ground-truth peak times, with labels."""
    d = seq.spike_len
    off = peak_offset(d)
    spikes = _windows(seq.signal, seq.times - off, d)
    cmap = np.tile(np.arange(seq.signal.shape[0]), (len(seq.times), 1))
    return SpikeBatch(spikes, seq.labels.copy(), seq.times.copy(), cmap, seq.sample_rate)


def group_channels(batches: Sequence[SpikeBatch]) -> SpikeBatch:
    """Stack single-channel batches into one multi-port batch.

    The i-th group holds the i-th spike of every batch; batch ``c`` feeds
    port ``c`` (and is recorded as physical channel ``c``).
    """
    n = min(len(b) for b in batches)
    spikes = np.concatenate([b.spikes[:n, :1] for b in batches], axis=1)
    labels = np.stack([b.labels[:n] for b in batches], axis=1)
    times = np.stack([b.timestamps[:n] for b in batches], axis=1)
    cmap = np.tile(np.arange(len(batches)), (n, 1))
    return SpikeBatch(spikes, labels, times, cmap, batches[0].sample_rate)


# ---------------------------------------------------------------------------
# robustness transforms


def jitter(batch: SpikeBatch, width: int, seed: int, signal: np.ndarray) -> SpikeBatch:
    """Re-cut each spike at an integer shift uniform on ``[-width/2, width/2]``.

    ``signal`` is the recording the batch was cut from. The aligned windows
    are kept as ``clean`` targets.
    """
    if width < 0 or width % 2:
        raise ValueError("jitter width must be a non-negative even number")
    if batch.timestamps.ndim != 1:
        raise ValueError("jitter needs a batch cut from a single recording")
    x = np.atleast_2d(np.asarray(signal, dtype=np.float64))
    d = batch.spike_len
    rng = np.random.default_rng(seed)
    shifts = rng.integers(-width // 2, width // 2 + 1, size=len(batch)) if width else np.zeros(len(batch), int)
    starts = batch.timestamps - peak_offset(d) + shifts
    if len(starts) and (starts.min() < 0 or starts.max() + d > x.shape[1]):
        raise ValueError("jitter width exceeds the signal margins")
    spikes = _windows(x, starts, d) if len(starts) else batch.spikes
    return replace(batch, spikes=spikes, clean=batch.spikes.copy(), shifts=shifts)


def drift(seq: SpikeSequence, schedule: Callable[[np.ndarray], np.ndarray]) -> SpikeSequence:
    """Scale each spike's amplitude by ``schedule(time_in_seconds)``."""
    scale = np.asarray(schedule(seq.times / seq.sample_rate), dtype=np.float64)
    return replace(seq, amplitudes=seq.amplitudes * scale, _signal=None)


def linear_schedule(start: float, end: float, duration: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda t: start + (end - start) * np.clip(np.asarray(t) / duration, 0.0, 1.0)


def first_last_split(batch: SpikeBatch, n_first: int = 500, n_last: int = 200) -> tuple[SpikeBatch, SpikeBatch]:
    """Train on the earliest ``n_first`` spikes, test on the latest ``n_last``."""
    if n_first + n_last > len(batch):
        raise ValueError("not enough spikes for the requested split")
    order = np.argsort(batch.timestamps if batch.timestamps.ndim == 1 else batch.timestamps[:, 0], kind="stable")
    return batch.subset(order[:n_first]), batch.subset(order[-n_last:])


def overlap(batch: SpikeBatch, fraction: float, seed: int, templates: Sequence[SpikeTemplate]) -> SpikeBatch:
    """Add a second template (lag within +-D/4, amplitude 0.5-1.0) to a fraction of spikes."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    rng = np.random.default_rng(seed)
    n, _, d = batch.spikes.shape
    flags = rng.random(n) < fraction
    spikes = batch.spikes.astype(np.float64)
    q = d // 4
    for i in np.flatnonzero(flags):
        tmpl = templates[int(rng.integers(len(templates)))].waveform
        lag = int(rng.integers(-q, q + 1))
        amp = rng.uniform(0.5, 1.0)
        spikes[i] += amp * _shift(tmpl, lag)
    return replace(batch, spikes=spikes, overlapped=flags, clean=batch.spikes.copy())


def _shift(w: np.ndarray, lag: int) -> np.ndarray:
    out = np.zeros_like(w)
    if lag >= 0:
        out[:, lag:] = w[:, : w.shape[1] - lag]
    else:
        out[:, :lag] = w[:, -lag:]
    return out


def shuffle_channels(batch: SpikeBatch, seed: int) -> SpikeBatch:
    """Randomly permute the port assignment of every spike group."""
    rng = np.random.default_rng(seed)
    n, m, _ = batch.spikes.shape
    perm = np.stack([rng.permutation(m) for _ in range(n)]) if n else np.zeros((0, m), int)
    rows = np.arange(n)[:, None]
    return replace(
        batch,
        spikes=batch.spikes[rows, perm],
        channel_map=batch.channel_map[rows, perm],
        labels=batch.labels[rows, perm] if batch.labels.ndim == 2 else batch.labels,
        timestamps=batch.timestamps[rows, perm] if batch.timestamps.ndim == 2 else batch.timestamps,
        clean=None if batch.clean is None else batch.clean[rows, perm],
    )


def preserve_channels(batch: SpikeBatch) -> SpikeBatch:
    """Put every spike back on the port matching its physical channel order."""
    n = len(batch)
    perm = np.argsort(batch.channel_map, axis=1, kind="stable")
    rows = np.arange(n)[:, None]
    return replace(
        batch,
        spikes=batch.spikes[rows, perm],
        channel_map=batch.channel_map[rows, perm],
        labels=batch.labels[rows, perm] if batch.labels.ndim == 2 else batch.labels,
        timestamps=batch.timestamps[rows, perm] if batch.timestamps.ndim == 2 else batch.timestamps,
        clean=None if batch.clean is None else batch.clean[rows, perm],
    )


# ---------------------------------------------------------------------------
# file I/O

_HEADER = "IIIdBBB"  # n, ports, D, sample_rate, labels_ndim, ts_ndim, has_clean


def dataset_bytes(batch: SpikeBatch) -> bytes:
    n, m, d = batch.spikes.shape
    parts = [
        struct.pack(
            "<" + _HEADER, n, m, d, batch.sample_rate, batch.labels.ndim, batch.timestamps.ndim, int(batch.clean is not None)
        ),
        batch.spikes.astype("<f4").tobytes(),
        batch.labels.astype("<i8").tobytes(),
        batch.timestamps.astype("<i8").tobytes(),
        batch.channel_map.astype("<i4").tobytes(),
    ]
    if batch.clean is not None:
        parts.append(batch.clean.astype("<f4").tobytes())
    return container.frame(DATASET_MAGIC, DATASET_VERSION, b"".join(parts))


def save_dataset(batch: SpikeBatch, path) -> None:
    Path(path).write_bytes(dataset_bytes(batch))


def load_dataset(path, spike_len: int | None = None) -> SpikeBatch:
    _, body = container.unframe(Path(path).read_bytes(), DATASET_MAGIC, (DATASET_VERSION,))
    r = container.Reader(body)
    n, m, d, rate, lab_nd, ts_nd, has_clean = r.unpack(_HEADER)
    if spike_len is not None and d != spike_len:
        raise container.FormatError(f"dataset has D={d}, expected {spike_len}")
    spikes = np.frombuffer(r.take(4 * n * m * d), "<f4").reshape(n, m, d)
    lab_shape = (n,) if lab_nd == 1 else (n, m)
    ts_shape = (n,) if ts_nd == 1 else (n, m)
    labels = np.frombuffer(r.take(8 * int(np.prod(lab_shape))), "<i8").reshape(lab_shape)
    times = np.frombuffer(r.take(8 * int(np.prod(ts_shape))), "<i8").reshape(ts_shape)
    cmap = np.frombuffer(r.take(4 * n * m), "<i4").reshape(n, m)
    clean = np.frombuffer(r.take(4 * n * m * d), "<f4").reshape(n, m, d) if has_clean else None
    if not r.done():
        raise container.FormatError("trailing bytes in dataset")
    return SpikeBatch(spikes.copy(), labels.copy(), times.copy(), cmap.copy(), rate, clean=None if clean is None else clean.copy())


def export_csv(batch: SpikeBatch, path) -> None:
    """One row per (spike, port): index, port, channel, label, timestamp, samples."""
    n, m, d = batch.spikes.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["spike", "port", "channel", "label", "timestamp"] + [f"s{i}" for i in range(d)])
        for i in range(n):
            for p in range(m):
                lab = batch.labels[i, p] if batch.labels.ndim == 2 else batch.labels[i]
                ts = batch.timestamps[i, p] if batch.timestamps.ndim == 2 else batch.timestamps[i]
                w.writerow(
                    [i, p, int(batch.channel_map[i, p]), int(lab), int(ts)]
                    + [f"{v:.9g}" for v in batch.spikes[i, p]]
                )


def import_csv(path, sample_rate: float = DEFAULT_RATE) -> SpikeBatch:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 5
        for row in reader:
            rows.append(row)
    if not rows:
        return SpikeBatch(np.zeros((0, 1, d)), np.zeros(0), np.zeros(0), np.zeros((0, 1)), sample_rate)
    n = max(int(r[0]) for r in rows) + 1
    m = max(int(r[1]) for r in rows) + 1
    spikes = np.zeros((n, m, d), dtype=np.float32)
    cmap = np.zeros((n, m), dtype=np.int64)
    labels = np.zeros((n, m), dtype=np.int64)
    times = np.zeros((n, m), dtype=np.int64)
    for r in rows:
        i, p = int(r[0]), int(r[1])
        cmap[i, p], labels[i, p], times[i, p] = int(r[2]), int(r[3]), int(r[4])
        spikes[i, p] = np.asarray(r[5:], dtype=np.float64)
    if m == 1 or (labels == labels[:, :1]).all():
        labels = labels[:, 0]
    if m == 1 or (times == times[:, :1]).all():
        times = times[:, 0]
    return SpikeBatch(spikes, labels, times, cmap, sample_rate)
