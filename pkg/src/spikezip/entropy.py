"""Entropy coding of codeword indexes and rate bookkeeping.

Index streams are coded with a canonical Huffman code whose code lengths are
stored in the block header, so a block decodes without side information.
"""

from __future__ import annotations

import heapq
import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma, gammaln

from . import container

BITSTREAM_MAGIC = b"SPKC"
BITSTREAM_VERSION = 1
_LUT_MAX_BITS = 20


@dataclass
class SymbolHistogram:
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_indexes(cls, indexes, k: int) -> SymbolHistogram:
        idx = np.asarray(indexes).reshape(-1)
        if idx.size and (idx.min() < 0 or idx.max() >= k):
            raise ValueError(f"index outside [0, {k})")
        return cls(np.bincount(idx, minlength=k))


def entropy(hist: SymbolHistogram) -> float:
    """Empirical entropy in bits per symbol."""
    total = hist.total
    if total <= 0:
        raise ValueError("empty histogram")
    p = hist.counts[hist.counts > 0] / total
    return float(-(p * np.log2(p)).sum()) + 0.0


# ---------------------------------------------------------------------------
# Huffman


@dataclass
class HuffmanTable:
    lengths: np.ndarray  # code length per symbol, 0 = symbol absent
    codes: np.ndarray  # canonical code value per symbol

    @property
    def k(self) -> int:
        return len(self.lengths)

    def expected_length(self, hist: SymbolHistogram) -> float:
        return float((hist.counts * self.lengths).sum() / hist.total)

    def kraft_sum(self) -> float:
        used = self.lengths[self.lengths > 0]
        return float(sum(2.0 ** -int(n) for n in used))


def huffman_lengths(counts) -> np.ndarray:
    """Optimal prefix-code lengths; a lone symbol gets a 1-bit code."""
    counts = np.asarray(counts, dtype=np.int64)
    lengths = np.zeros(len(counts), dtype=np.int64)
    present = np.flatnonzero(counts > 0)
    if len(present) == 0:
        raise ValueError("no symbols with nonzero count")
    if len(present) == 1:
        lengths[present[0]] = 1
        return lengths
    # heap items: (weight, tiebreak, symbols under this node)
    heap = [(int(counts[s]), int(s), [int(s)]) for s in present]
    heapq.heapify(heap)
    while len(heap) > 1:
        w1, t1, s1 = heapq.heappop(heap)
        w2, t2, s2 = heapq.heappop(heap)
        for s in s1:
            lengths[s] += 1
        for s in s2:
            lengths[s] += 1
        heapq.heappush(heap, (w1 + w2, min(t1, t2), s1 + s2))
    return lengths


def canonical_codes(lengths) -> np.ndarray:
    """Assign canonical code values: shorter codes first, ties by symbol id."""
    lengths = np.asarray(lengths, dtype=np.int64)
    codes = np.zeros(len(lengths), dtype=np.int64)
    order = sorted((int(n), s) for s, n in enumerate(lengths) if n > 0)
    code, prev = 0, order[0][0] if order else 0
    for i, (n, s) in enumerate(order):
        if i:
            code = (code + 1) << (n - prev)
        codes[s] = code
        prev = n
    return codes


def huffman_build(hist: SymbolHistogram) -> HuffmanTable:
    lengths = huffman_lengths(hist.counts)
    return HuffmanTable(lengths, canonical_codes(lengths))


def table_from_lengths(lengths) -> HuffmanTable:
    lengths = np.asarray(lengths, dtype=np.int64)
    return HuffmanTable(lengths, canonical_codes(lengths))


def pack_bits(symbols: np.ndarray, table: HuffmanTable) -> tuple[bytes, int]:
    """MSB-first bit packing; returns (payload, number of valid bits)."""
    symbols = np.asarray(symbols, dtype=np.int64).reshape(-1)
    if symbols.size == 0:
        return b"", 0
    if symbols.min() < 0 or symbols.max() >= table.k or (table.lengths[symbols] == 0).any():
        raise ValueError("symbol not covered by the code table")
    lens = table.lengths[symbols]
    vals = table.codes[symbols]
    n_bits = int(lens.sum())
    ends = np.cumsum(lens)
    owner = np.repeat(np.arange(len(symbols)), lens)
    pos = np.arange(n_bits) - (ends - lens)[owner]
    bits = (vals[owner] >> (lens[owner] - 1 - pos)) & 1
    return np.packbits(bits.astype(np.uint8)).tobytes(), n_bits


def unpack_bits(payload: bytes, n_bits: int, n_symbols: int, table: HuffmanTable) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))[:n_bits]
    max_len = int(table.lengths.max())
    if max_len <= _LUT_MAX_BITS:
        return _decode_lut(bits, n_symbols, table, max_len)
    return _decode_canonical(bits, n_symbols, table)


def _decode_lut(bits: np.ndarray, n_symbols: int, table: HuffmanTable, max_len: int) -> np.ndarray:
    lut_sym = np.full(1 << max_len, -1, dtype=np.int64)
    lut_len = np.zeros(1 << max_len, dtype=np.int64)
    for s in np.flatnonzero(table.lengths):
        n = int(table.lengths[s])
        lo = int(table.codes[s]) << (max_len - n)
        lut_sym[lo : lo + (1 << (max_len - n))] = s
        lut_len[lo : lo + (1 << (max_len - n))] = n
    padded = np.concatenate([bits.astype(np.int64), np.zeros(max_len, dtype=np.int64)])
    window = np.zeros(len(bits) + 1, dtype=np.int64)
    for j in range(max_len):
        window = (window << 1) | padded[j : j + len(bits) + 1]
    window = window.tolist()
    lut_sym_l, lut_len_l = lut_sym.tolist(), lut_len.tolist()
    out = np.empty(n_symbols, dtype=np.int64)
    pos = 0
    n_bits = len(bits)
    for i in range(n_symbols):
        if pos >= n_bits:
            raise container.FormatError("payload ended early")
        v = window[pos]
        s = lut_sym_l[v]
        n = lut_len_l[v]
        if s < 0 or pos + n > n_bits:
            raise container.FormatError("invalid code in payload")
        out[i] = s
        pos += n
    if pos != n_bits:
        raise container.FormatError("payload has trailing bits")
    return out


def _decode_canonical(bits: np.ndarray, n_symbols: int, table: HuffmanTable) -> np.ndarray:
    by_code = {(int(table.lengths[s]), int(table.codes[s])): int(s) for s in np.flatnonzero(table.lengths)}
    max_len = int(table.lengths.max())
    out = np.empty(n_symbols, dtype=np.int64)
    pos = 0
    for i in range(n_symbols):
        code, n = 0, 0
        while True:
            if pos >= len(bits) or n >= max_len:
                raise container.FormatError("invalid code in payload")
            code = (code << 1) | int(bits[pos])
            pos += 1
            n += 1
            s = by_code.get((n, code))
            if s is not None:
                out[i] = s
                break
    if pos != len(bits):
        raise container.FormatError("payload has trailing bits")
    return out


# ---------------------------------------------------------------------------
# blocks


@dataclass
class CompressedBlock:
    config_digest: bytes
    k: int
    n_spikes: int
    symbols_per_spike: int
    table: HuffmanTable
    payload: bytes
    n_bits: int

    @property
    def n_symbols(self) -> int:
        return self.n_spikes * self.symbols_per_spike

    def to_bytes(self) -> bytes:
        if len(self.config_digest) != 8:
            raise ValueError("config digest must be 8 bytes")
        lengths = self.table.lengths
        if lengths.max(initial=0) > 255:
            raise ValueError("code length exceeds 255 bits")
        body = b"".join(
            [
                self.config_digest,
                struct.pack("<IIIQ", self.k, self.n_spikes, self.symbols_per_spike, self.n_bits),
                lengths.astype(np.uint8).tobytes(),
                self.payload,
            ]
        )
        return container.frame(BITSTREAM_MAGIC, BITSTREAM_VERSION, body)

    @classmethod
    def from_bytes(cls, raw: bytes) -> CompressedBlock:
        _, body = container.unframe(raw, BITSTREAM_MAGIC, (BITSTREAM_VERSION,))
        r = container.Reader(body)
        digest = r.take(8)
        k, n_spikes, per_spike, n_bits = r.unpack("IIIQ")
        lengths = np.frombuffer(r.take(k), dtype=np.uint8).astype(np.int64)
        payload = r.take((n_bits + 7) // 8)
        if not r.done():
            raise container.FormatError("trailing bytes after payload")
        return cls(digest, k, n_spikes, per_spike, table_from_lengths(lengths), payload, n_bits)

    @property
    def size_bits(self) -> int:
        """Total framed size in bits, header and trailer included."""
        return 8 * len(self.to_bytes())


def encode_block(indexes: np.ndarray, k: int, config_digest: bytes = b"\0" * 8, table: HuffmanTable | None = None) -> CompressedBlock:
    """Entropy-code an (n_spikes, symbols_per_spike) index array.

    Without an explicit table, one is built from the block's own histogram.
    """
    idx = np.asarray(indexes, dtype=np.int64)
    if idx.ndim == 1:
        idx = idx[:, None]
    if idx.ndim != 2:
        raise ValueError("indexes must be (n_spikes, symbols_per_spike)")
    if table is None:
        table = huffman_build(SymbolHistogram.from_indexes(idx, k)) if idx.size else table_from_lengths(np.zeros(k))
    if table.k != k:
        raise ValueError("code table size does not match K")
    payload, n_bits = pack_bits(idx, table)
    return CompressedBlock(config_digest, k, idx.shape[0], idx.shape[1], table, payload, n_bits)


def decode_block(block: CompressedBlock) -> np.ndarray:
    if block.n_symbols == 0:
        return np.zeros((block.n_spikes, block.symbols_per_spike), dtype=np.int64)
    flat = unpack_bits(block.payload, block.n_bits, block.n_symbols, block.table)
    return flat.reshape(block.n_spikes, block.symbols_per_spike)


# ---------------------------------------------------------------------------
# rates and distortion


def compression_ratio(m_spk: int, spike_len: int, bit_depth: int, n_feat: int, bits_per_index: float) -> float:
    """Original bits over transmitted bits: ``M_spk * D * W / (N_feat * bits)``."""
    if bits_per_index <= 0:
        raise ValueError("bits per index must be positive")
    return m_spk * spike_len * bit_depth / (n_feat * bits_per_index)


def config_compression_ratio(config, bits_per_index: float | None = None) -> float:
    bits = math.log2(config.codebook_size) if bits_per_index is None else bits_per_index
    return compression_ratio(config.m_spk, config.spike_len, config.bit_depth, config.n_feat, bits)


def unit_ball_volume(d: int) -> float:
    return math.exp((d / 2) * math.log(math.pi) - math.lgamma(d / 2 + 1))


def distortion_bound(d: int, r: float, k: float, h: float) -> float:
    """High-rate lower bound on E||x - Q(x)||^r for a K-cell quantizer in R^d.

    ``h`` is the differential entropy of the source in nats.
    """
    if d < 1 or r < 1 or k < 1:
        raise ValueError("need d >= 1, r >= 1, K >= 1")
    return (d / (d + r)) * (unit_ball_volume(d) * k) ** (-r / d) * math.exp((r / d) * h)


def knn_entropy(samples: np.ndarray, k: int = 3) -> float:
    """Kozachenko-Leonenko estimate of differential entropy (nats).

    Biased for small samples and high dimension; used only as a plug-in for
    :func:`distortion_bound`.
    """
    x = np.asarray(samples, dtype=np.float64)
    n, d = x.shape
    if n <= k:
        raise ValueError("need more samples than neighbours")
    x = x + 1e-12 * np.random.default_rng(0).standard_normal(x.shape)
    dist, _ = cKDTree(x).query(x, k=k + 1)
    eps = dist[:, k]
    log_vd = (d / 2) * math.log(math.pi) - gammaln(d / 2 + 1)
    return float(digamma(n) - digamma(k) + log_vd + d * np.mean(np.log(eps)))
