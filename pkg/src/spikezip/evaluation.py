"""Metrics and experiment drivers.

Covers reconstruction quality (SNDR), rate-quality sweeps of the CAE against
the transform baselines, codeword usage, clustering-based spike sorting
accuracy, and train/test generalization tables.
"""

from __future__ import annotations

import csv
import itertools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import baselines, data, entropy
from . import model as cae

SNDR_CAP_DB = 300.0
DEFAULT_RESTARTS = 50
DEFAULT_REPEATS = 5
THREADS_ENV = "SPIKEZIP_THREADS"


def sndr(x, x_hat) -> float:
    """``20 log10(||x|| / ||x - x_hat||)`` over the whole batch, capped at 300 dB."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    signal = np.linalg.norm(x)
    if signal == 0:
        raise ValueError("reference signal is all zero")
    err = np.linalg.norm(x - x_hat)
    if err == 0:
        return SNDR_CAP_DB
    return min(SNDR_CAP_DB, 20.0 * math.log10(signal / err))


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


# ---------------------------------------------------------------------------
# rate-quality sweeps


@dataclass(frozen=True)
class MethodSpec:
    """One point of a sweep grid.

    ``param`` is the number of kept coefficients for the baselines; the CAE
    is described by ``config`` instead.
    """

    method: str
    param: int = 0
    config: cae.CaeConfig | None = None

    def __post_init__(self):
        if self.method not in ("cae", "pca", "dct", "dwt"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.method == "cae" and self.config is None:
            raise ValueError("cae points need a config")
        if self.method != "cae" and self.param < 1:
            raise ValueError("baseline points need param >= 1")

    @property
    def label(self) -> str:
        if self.method == "cae":
            c = self.config
            return f"cae(K={c.codebook_size},mspk={c.m_spk},nfeat={c.n_feat})"
        return f"{self.method}(m={self.param})"


@dataclass
class RateQualityPoint:
    method: str
    label: str
    cr: float
    sndr_db: float
    sndr_std: float
    config_digest: str
    repeat_cr: tuple[float, ...]
    repeat_sndr: tuple[float, ...]

    @property
    def repeats(self) -> int:
        return len(self.repeat_sndr)


def half_split(n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random 50/50 partition of ``range(n)``."""
    order = np.random.default_rng(seed).permutation(n)
    return np.sort(order[: n // 2]), np.sort(order[n // 2 :])


def fit_cae(config: cae.CaeConfig, train_spikes, epochs: int, seed: int = 0, batch_size: int = 48, clean=None) -> cae.CaeModel:
    model = cae.build(config, seed=seed)
    cae.train(model, train_spikes, epochs, batch_size=batch_size, seed=seed, clean=clean)
    return model


def evaluate_cae(model: cae.CaeModel, spikes) -> tuple[float, float, np.ndarray]:
    """(CR from measured index entropy, SNDR, indexes) on spikes in physical units."""
    recon, idx = cae.reconstruct(model, spikes)
    h = entropy.entropy(entropy.SymbolHistogram.from_indexes(idx, model.config.codebook_size))
    # a single-symbol stream still costs one bit per index once coded
    cr = entropy.config_compression_ratio(model.config, max(h, 1.0 / idx.size))
    return cr, sndr(spikes, recon), idx


def baseline_point(method: str, m: int, train, test, bit_depth: int = 16) -> tuple[float, float]:
    if method == "pca":
        basis = baselines.pca_fit(train, m)
        _, recon, cr = baselines.pca_codec(basis, test)
    elif method == "dct":
        _, recon, cr = baselines.dct_codec(test, m)
    elif method == "dwt":
        _, _, recon, cr = baselines.dwt_codec(test, m, bit_depth=bit_depth)
    else:
        raise ValueError(f"unknown baseline {method!r}")
    return cr, sndr(test, recon)


def _run_task(args) -> tuple[float, float]:
    spec, spikes, repeat, seed, epochs, batch_size, bit_depth = args
    train_idx, test_idx = half_split(len(spikes), seed + repeat)
    train, test = spikes[train_idx], spikes[test_idx]
    if spec.method == "cae":
        model = fit_cae(spec.config, train, epochs, seed=seed * 1000 + repeat, batch_size=batch_size)
        cr, value, _ = evaluate_cae(model, test)
        return cr, value
    return baseline_point(spec.method, spec.param, train, test, bit_depth)


def sweep(
    spikes,
    grid: Sequence[MethodSpec],
    repeats: int = DEFAULT_REPEATS,
    seed: int = 0,
    epochs: int = 100,
    batch_size: int = 48,
    bit_depth: int = 16,
    threads: int | None = None,
) -> list[RateQualityPoint]:
    """Rate-quality point per grid entry, averaged over random 50/50 splits.

    Repeat ``r`` uses the same split for every method, so per-repeat values
    can be compared directly. Results do not depend on ``threads``.
    """
    spikes = np.asarray(spikes, dtype=np.float64)
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    tasks = [(spec, spikes, r, seed, epochs, batch_size, bit_depth) for spec in grid for r in range(repeats)]
    threads = worker_count() if threads is None else threads
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    points = []
    for i, spec in enumerate(grid):
        chunk = results[i * repeats : (i + 1) * repeats]
        crs = tuple(float(c) for c, _ in chunk)
        vals = tuple(float(v) for _, v in chunk)
        digest = spec.config.digest().hex() if spec.config is not None else ""
        points.append(
            RateQualityPoint(spec.method, spec.label, float(np.mean(crs)), float(np.mean(vals)), float(np.std(vals)), digest, crs, vals)
        )
    return points


def baseline_grid(spike_len: int, ms: Sequence[int] | None = None) -> list[MethodSpec]:
    ms = ms if ms is not None else [m for m in (1, 2, 3, 4, 6, 8, 12, 16) if m <= spike_len]
    return [MethodSpec(name, m) for name in ("pca", "dct", "dwt") for m in ms]


def dominance(points: Sequence[RateQualityPoint], min_cr: float = 16.0) -> list[bool]:
    """Per repeat: does every CAE point above ``min_cr`` beat every baseline?

    Each baseline is taken at its highest-CR point whose CR does not exceed
    the CAE point's CR in that repeat. A baseline with no such point does
    not constrain the comparison.
    """
    cae_points = [p for p in points if p.method == "cae"]
    base = [p for p in points if p.method != "cae"]
    if not cae_points:
        raise ValueError("no CAE points to compare")
    repeats = cae_points[0].repeats
    verdict = []
    for r in range(repeats):
        ok = True
        for p in cae_points:
            cr = p.repeat_cr[r]
            if cr <= min_cr:
                continue
            for method in sorted({b.method for b in base}):
                cands = [b for b in base if b.method == method and b.repeat_cr[r] <= cr]
                if not cands:
                    continue
                nearest = max(cands, key=lambda b: b.repeat_cr[r])
                if not p.repeat_sndr[r] > nearest.repeat_sndr[r]:
                    ok = False
        verdict.append(ok)
    return verdict


# ---------------------------------------------------------------------------
# codeword usage


@dataclass
class CodewordStats:
    counts: np.ndarray
    entropy_bits: float
    usage_fraction: float

    @property
    def k(self) -> int:
        return len(self.counts)

    @property
    def uniformity(self) -> float:
        """Entropy relative to the ``log2 K`` maximum."""
        return self.entropy_bits / math.log2(self.k) if self.k > 1 else 1.0


def codeword_stats(model: cae.CaeModel, spikes) -> CodewordStats:
    idx = cae.compress(model, spikes)
    hist = entropy.SymbolHistogram.from_indexes(idx, model.config.codebook_size)
    return CodewordStats(hist.counts, entropy.entropy(hist), float((hist.counts > 0).mean()))


# ---------------------------------------------------------------------------
# clustering and sorting


def kmeans(points, k: int, restarts: int = DEFAULT_RESTARTS, seed: int = 0, max_iter: int = 300) -> tuple[np.ndarray, float]:
    """Lloyd's algorithm from random distinct-point starts; best inertia wins."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    best_labels, best_inertia = None, np.inf
    for _ in range(max(1, restarts)):
        centers = x[rng.choice(n, size=k, replace=False)].copy()
        labels = None
        for _ in range(max_iter):
            dist = ((x[:, None, :] - centers[None]) ** 2).sum(-1)
            new = dist.argmin(axis=1)
            if labels is not None and (new == labels).all():
                break
            labels = new
            for j in range(k):
                members = x[labels == j]
                if len(members):
                    centers[j] = members.mean(axis=0)
                else:
                    far = dist[np.arange(n), labels].argmax()
                    centers[j] = x[far]
                    labels[far] = j
        inertia = float(((x - centers[labels]) ** 2).sum())
        if inertia < best_inertia:
            best_labels, best_inertia = labels.copy(), inertia
    return best_labels, best_inertia


def matched_accuracy(true_labels, pred_labels) -> float:
    """Per-spike agreement under the best one-to-one relabeling of clusters.

    Exhaustive over permutations for up to 6 classes, Hungarian otherwise.
    """
    t = np.asarray(true_labels).reshape(-1)
    p = np.asarray(pred_labels).reshape(-1)
    if len(t) != len(p) or len(t) == 0:
        raise ValueError("label arrays must be non-empty and equal length")
    t_ids, t_inv = np.unique(t, return_inverse=True)
    p_ids, p_inv = np.unique(p, return_inverse=True)
    size = max(len(t_ids), len(p_ids))
    conf = np.zeros((size, size), dtype=np.int64)
    np.add.at(conf, (p_inv, t_inv), 1)
    if size <= 6:
        best = max(conf[np.arange(size), perm].sum() for perm in itertools.permutations(range(size)))
    else:
        rows, cols = linear_sum_assignment(-conf)
        best = conf[rows, cols].sum()
    return float(best) / len(t)


def sorting_accuracy(spikes, labels, k: int, restarts: int = DEFAULT_RESTARTS, seed: int = 0) -> float:
    """PCA to three features, K-Means with ``k`` clusters, best-permutation accuracy."""
    x = np.asarray(spikes, dtype=np.float64)
    flat = x.reshape(len(x), -1)
    basis = baselines.pca_fit(flat, min(3, flat.shape[1], len(flat)))
    feats, _, _ = baselines.pca_codec(basis, flat)
    pred, _ = kmeans(feats, k, restarts=restarts, seed=seed)
    return matched_accuracy(labels, pred)


@dataclass
class SortingReport:
    sequence_id: str
    noise: float
    accuracy_before: float
    accuracy_after: dict[float, float] = field(default_factory=dict)

    def drop(self, cr: float) -> float:
        return self.accuracy_before - self.accuracy_after[cr]


def sorting_report(
    batch: data.SpikeBatch,
    models: Sequence[cae.CaeModel],
    k: int,
    noise: float = float("nan"),
    sequence_id: str = "",
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
) -> SortingReport:
    """Sorting accuracy on raw spikes and on each model's reconstruction."""
    if batch.labels is None:
        raise ValueError("sorting evaluation needs ground-truth labels")
    labels = batch.labels if batch.labels.ndim == 1 else batch.labels[:, 0]
    report = SortingReport(sequence_id, noise, sorting_accuracy(batch.spikes, labels, k, restarts, seed))
    for m in models:
        cr, _, _ = evaluate_cae(m, batch.spikes)
        recon = cae.decompress(m, cae.compress(m, batch.spikes))
        report.accuracy_after[cr] = sorting_accuracy(recon, labels, k, restarts, seed)
    return report


# ---------------------------------------------------------------------------
# generalization


@dataclass
class GeneralizationTable:
    ids: list[str]
    sndr_db: np.ndarray  # rows: training sequence, columns: test sequence


def first_half_split(batch: data.SpikeBatch) -> tuple[data.SpikeBatch, data.SpikeBatch]:
    """Earliest half of the spikes for training, the rest for testing."""
    n = len(batch)
    return data.first_last_split(batch, n // 2, n - n // 2)


def generalization_matrix(
    sequences: Mapping[str, data.SpikeBatch],
    config: cae.CaeConfig,
    epochs: int = 100,
    seed: int = 0,
    batch_size: int = 48,
) -> GeneralizationTable:
    """Train on each sequence's first half, test on every sequence's second half."""
    ids = list(sequences)
    splits = {name: first_half_split(b) for name, b in sequences.items()}
    table = np.zeros((len(ids), len(ids)))
    for i, row in enumerate(ids):
        model = fit_cae(config, splits[row][0].spikes, epochs, seed=seed, batch_size=batch_size)
        for j, col in enumerate(ids):
            _, table[i, j], _ = evaluate_cae(model, splits[col][1].spikes)
    return GeneralizationTable(ids, table)


# ---------------------------------------------------------------------------
# output files


def _write_rows(path, header, rows) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_rate_quality_csv(points: Sequence[RateQualityPoint], path) -> None:
    _write_rows(
        path,
        ["method", "label", "cr", "sndr_db", "sndr_std", "repeats", "config_digest"],
        [[p.method, p.label, repr(p.cr), repr(p.sndr_db), repr(p.sndr_std), p.repeats, p.config_digest] for p in points],
    )


def read_rate_quality_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_sorting_csv(reports: Sequence[SortingReport], path) -> None:
    rows = []
    for r in reports:
        rows.append([r.sequence_id, r.noise, "raw", r.accuracy_before])
        for cr, acc in sorted(r.accuracy_after.items()):
            rows.append([r.sequence_id, r.noise, repr(cr), acc])
    _write_rows(path, ["sequence", "noise", "cr", "accuracy"], rows)


def write_codewords_csv(stats: CodewordStats, path) -> None:
    rows = [[i, int(c)] for i, c in enumerate(stats.counts)]
    rows.append(["entropy_bits", repr(stats.entropy_bits)])
    rows.append(["usage_fraction", repr(stats.usage_fraction)])
    _write_rows(path, ["codeword", "count"], rows)


def write_generalization_csv(table: GeneralizationTable, path) -> None:
    rows = [[rid] + [repr(float(v)) for v in table.sndr_db[i]] for i, rid in enumerate(table.ids)]
    _write_rows(path, ["train\\test"] + table.ids, rows)


def render_rate_quality_svg(points: Sequence[RateQualityPoint], path) -> None:
    """Line chart of SNDR against CR per method (needs matplotlib)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for method in sorted({p.method for p in points}):
        pts = sorted((p for p in points if p.method == method), key=lambda p: p.cr)
        ax.errorbar([p.cr for p in pts], [p.sndr_db for p in pts], yerr=[p.sndr_std for p in pts], marker="o", label=method)
    ax.set_xscale("log")
    ax.set_xlabel("compression ratio")
    ax.set_ylabel("SNDR (dB)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
