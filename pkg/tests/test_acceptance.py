"""End-to-end acceptance checks.

Each test records one ``criterion N: PASS|FAIL ...`` line, printed in the
terminal summary, then asserts. The trained models are shared per module,
so the whole file takes roughly a quarter of an hour on one core.
"""

import math

import numpy as np
import pytest

from spikezip import baselines, cli, data, entropy, evaluation
from spikezip import model as cae
from spikezip.autodiff import Tensor, gradient_check, mse, relu, tensor_sum
from spikezip.nn import (
    Downsample2,
    LayerSpec,
    Sequential,
    Upsample2,
    conv1d_forward,
    deconv1d_forward,
    downsample2,
    norm_forward,
    param_count,
    resnet_deconv_block,
    resnext_block,
    upsample2,
)

pytestmark = pytest.mark.slow

EPOCHS = 100
DESK = dict(m_spk=1, spike_len=64, bit_depth=16, n_feat=4, width=32, groups=16)


def record(log, n, ok, detail):
    log.append(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def rq_batch():
    seq = data.generate(data.standard_templates(2, 64, seed=1), 0.1, [20, 20], 60.0, seed=0)
    return data.ground_truth_batch(seq)


@pytest.fixture(scope="module")
def rq_points(rq_batch):
    grid = evaluation.baseline_grid(64) + [evaluation.MethodSpec("cae", config=cae.CaeConfig(codebook_size=128, **DESK))]
    return evaluation.sweep(rq_batch.spikes, grid, repeats=5, seed=0, epochs=EPOCHS)


def test_criterion_1_parameter_counts(acceptance_log):
    model = cae.build(cae.CaeConfig(m_spk=4, spike_len=48, n_feat=16, codebook_size=256))
    enc, dec = param_count(model.encoder_with_vq()), param_count(model.decoder)
    record(acceptance_log, 1, (enc, dec) == (17952, 794116), f"encoder+VQ {enc}, decoder {dec} (want 17952 / 794116)")


def _weighted(shape, r):
    w = r.standard_normal(shape)
    return lambda t: tensor_sum(t * Tensor(w))


def _layer_errors(seed):
    r = np.random.default_rng(seed)
    errs = {}
    for kind, fwd in (("conv1d", conv1d_forward), ("deconv1d", deconv1d_forward)):
        spec = LayerSpec(kind, 4, 6, 3, 2, True)
        x = Tensor(r.standard_normal((2, 4, 5)), requires_grad=True)
        w = Tensor(r.standard_normal(spec.weight_shape()), requires_grad=True)
        b = Tensor(r.standard_normal(6), requires_grad=True)
        f = _weighted((2, 6, 5), r)
        errs[kind] = gradient_check(lambda x, w, b, fwd=fwd, spec=spec, f=f: f(fwd(x, w, spec, b)), [x, w, b])
    for mode in ("train", "eval"):
        x = Tensor(r.standard_normal((3, 4, 5)) * 2 + 1, requires_grad=True)
        g = Tensor(r.uniform(0.5, 2.0, 4), requires_grad=True)
        b = Tensor(r.standard_normal(4), requires_grad=True)
        rm, rv = r.standard_normal(4), r.uniform(0.5, 2.0, 4)
        f = _weighted((3, 4, 5), r)
        errs[f"norm-{mode}"] = gradient_check(lambda x, g, b, f=f, mode=mode: f(norm_forward(x, g, b, mode, rm.copy(), rv.copy())), [x, g, b])
    v = r.standard_normal((2, 3, 8))
    v[np.abs(v) < 1e-3] = 0.5
    x = Tensor(v, requires_grad=True)
    f = _weighted(v.shape, r)
    errs["relu"] = gradient_check(lambda x: f(relu(x)), [x])
    errs["resample"] = gradient_check(lambda x: f(upsample2(downsample2(x))), [x])
    net = Sequential(resnext_block(8, 2, r), Downsample2(), resnet_deconv_block(8, r), Upsample2())
    x = Tensor(r.standard_normal((3, 8, 8)), requires_grad=True)
    target = r.standard_normal((3, 8, 8))
    params = [p for _, p in net.parameters()]
    errs["blocks"] = gradient_check(lambda x, *ps: mse(net(x), target), [x] + params, max_entries=12, seed=seed)
    tiny = cae.CaeConfig(m_spk=2, spike_len=16, n_feat=2, codebook_size=8, width=8, groups=2)
    m = cae.build(tiny, seed=seed)
    m.train_mode(True)
    spikes = r.standard_normal((6, 2, 16))
    errs["cae-loss"] = gradient_check(lambda *ps: cae.forward_loss(m, spikes, use_vq=False), m.parameters(), max_entries=4, seed=seed)
    dec = [p for name, p in m.named_parameters() if name.startswith("decoder")]
    errs["cae-loss-vq"] = gradient_check(lambda *ps: cae.forward_loss(m, spikes, use_vq=True), dec, max_entries=4, seed=seed)
    return errs


def test_criterion_2_gradients(acceptance_log):
    worst = {}
    for seed in range(20):
        for name, err in _layer_errors(seed).items():
            worst[name] = max(worst.get(name, 0.0), err)
    top = max(worst, key=worst.get)
    record(acceptance_log, 2, max(worst.values()) < 1e-4, f"20 seeds x {len(worst)} checks, worst {worst[top]:.2e} ({top}) < 1e-4")


def test_criterion_3_desk_rate_quality(acceptance_log, rq_batch, rq_points):
    (p,) = [q for q in rq_points if q.method == "cae"]
    ok = len(rq_batch) >= 2000 and p.cr >= 20 and p.sndr_db >= 8
    record(acceptance_log, 3, ok, f"{len(rq_batch)} spikes, CR {p.cr:.1f}x, SNDR {p.sndr_db:.2f} dB (want CR>=20, SNDR>=8)")


def test_criterion_4_baseline_dominance(acceptance_log, rq_points):
    verdict = evaluation.dominance(rq_points, min_cr=16.0)
    record(acceptance_log, 4, sum(verdict) >= 4, f"CAE beats PCA/DCT/DWT on {sum(verdict)}/5 repeats (want >=4)")


def test_criterion_5_codeword_uniformity(acceptance_log, rq_batch, rq_points):
    (p,) = [q for q in rq_points if q.method == "cae"]
    # the sweep's CR is 64*16 / (4*H), so the mean test-set entropy follows from it
    h = {128: float(np.mean([64 * 16 / (4 * cr) for cr in p.repeat_cr]))}
    train_idx, test_idx = evaluation.half_split(len(rq_batch), 0)
    for k in (32, 64):
        model = evaluation.fit_cae(cae.CaeConfig(codebook_size=k, **DESK), rq_batch.spikes[train_idx], EPOCHS, seed=0)
        h[k] = evaluation.codeword_stats(model, rq_batch.spikes[test_idx]).entropy_bits
    ratios = {k: h[k] / math.log2(k) for k in h}
    detail = ", ".join(f"K={k}: {h[k]:.2f}/{math.log2(k):.0f} bits ({ratios[k]:.3f})" for k in sorted(h))
    record(acceptance_log, 5, min(ratios.values()) >= 0.9, detail + " (want >=0.90)")


def test_criterion_6_sorting_robustness(acceptance_log):
    seq = data.generate(data.standard_templates(3, 64, seed=2), 0.05, [15, 15, 15], 40.0, seed=1)
    batch = data.ground_truth_batch(seq)
    train_idx, test_idx = evaluation.half_split(len(batch), 0)
    model = evaluation.fit_cae(cae.CaeConfig(codebook_size=16, **DESK), batch.spikes[train_idx], 60, seed=0)
    report = evaluation.sorting_report(batch.subset(test_idx), [model], 3, noise=0.05, restarts=10)
    (cr,) = report.accuracy_after
    drop = 100 * report.drop(cr)
    ok = drop <= 5 and 48 <= cr <= 96
    record(acceptance_log, 6, ok, f"accuracy {report.accuracy_before:.3f} -> {report.accuracy_after[cr]:.3f} at CR {cr:.1f}x, drop {drop:.2f} pts (want <=5)")


def test_criterion_7_denoising(acceptance_log):
    seq = data.generate(data.standard_templates(2, 64, seed=1), 0.1, [20, 20], 30.0, seed=3)
    batch = data.jitter(data.ground_truth_batch(seq), 8, 0, seq.signal)
    train_idx, test_idx = evaluation.half_split(len(batch), 0)
    scores = {}
    for den in (False, True):
        config = cae.CaeConfig(codebook_size=128, denoising=den, **DESK)
        clean = batch.clean[train_idx] if den else None
        model = evaluation.fit_cae(config, batch.spikes[train_idx], 60, seed=0, clean=clean)
        recon, _ = cae.reconstruct(model, batch.spikes[test_idx])
        scores[den] = evaluation.sndr(batch.clean[test_idx], recon)
    gain = scores[True] - scores[False]
    record(acceptance_log, 7, gain >= 1.0, f"clean-target SNDR {scores[False]:.2f} -> {scores[True]:.2f} dB, gain {gain:.2f} dB (want >=1)")


def _coder_ok(stream, k):
    block = entropy.encode_block(stream, k)
    back = entropy.decode_block(entropy.CompressedBlock.from_bytes(block.to_bytes()))
    h = entropy.entropy(entropy.SymbolHistogram.from_indexes(stream, k))
    rate = block.n_bits / stream.size
    kraft = np.ldexp(1.0, -block.table.lengths[block.table.lengths > 0].astype(int)).sum()
    return np.array_equal(back, stream), rate - h, kraft


def test_criterion_8_entropy_coder(acceptance_log, rq_batch):
    r = np.random.default_rng(0)
    random_stream = r.integers(0, 128, (250_000, 4))
    train_idx, test_idx = evaluation.half_split(len(rq_batch), 0)
    model = evaluation.fit_cae(cae.CaeConfig(codebook_size=128, **DESK), rq_batch.spikes[train_idx], 30, seed=0)
    trained = cae.compress(model, rq_batch.spikes[test_idx])
    # resample whole spikes of trained indexes up to a million symbols
    trained_stream = trained[r.integers(0, len(trained), 250_000)]
    results = [_coder_ok(s, 128) for s in (random_stream, trained_stream)]
    ok = all(rt and 0 <= gap < 1 and kraft == 1.0 for rt, gap, kraft in results)
    gaps = ", ".join(f"{g:.4f}" for _, g, _ in results)
    record(acceptance_log, 8, ok, f"2 x 10^6 symbols lossless, rate - entropy = {gaps} bits, Kraft sums {[k for *_, k in results]}")


def test_criterion_9_formulas(acceptance_log):
    checks = {
        "CR 4*48*16/(16*8)": (entropy.compression_ratio(4, 48, 16, 16, 8), 24.0),
        "CR 64*16/(4*6.78)": (entropy.compression_ratio(1, 64, 16, 4, 6.78), 1024 / 27.12),
        "CR fixed point": (entropy.compression_ratio(1, 64, 16, 64, 16), 1.0),
        "PCA D/m": (baselines.pca_codec(baselines.pca_fit(np.random.default_rng(0).standard_normal((20, 48)), 8), np.zeros((1, 48)))[2], 6.0),
        "DCT D/m": (baselines.dct_codec(np.zeros((1, 48)), 8)[2], 6.0),
        "DWT DW/(Wm+D)": (baselines.dwt_compression_ratio(48, 16, 6), 768 / 144),
        "threshold": (data.detection_threshold(np.full((1, 9), 0.6745))[0], 5.0),
        "SNDR": (evaluation.sndr([3.0, 4.0], [3.0, 3.0]), 20 * math.log10(5)),
        "entropy {2,1,1}": (entropy.entropy(entropy.SymbolHistogram(np.array([2, 1, 1]))), 1.5),
    }
    bad = [name for name, (got, want) in checks.items() if not math.isclose(got, want, rel_tol=1e-9)]
    record(acceptance_log, 9, not bad, f"{len(checks) - len(bad)}/{len(checks)} formula examples within 1e-9" + (f", failed {bad}" if bad else ""))


def _exhaustive(y, codebook):
    out = []
    for v in y:
        best, best_d = 0, math.inf
        for j, c in enumerate(codebook):
            d = 0.0
            for a, b in zip(v, c):
                d += (a - b) * (a - b)
            if d < best_d:
                best, best_d = j, d
        out.append(best)
    return np.array(out)


def test_criterion_10_vq_oracle(acceptance_log):
    r = np.random.default_rng(10)
    mismatches = ties = 0
    for i in range(10_000):
        k, d = int(r.integers(1, 17)), int(r.integers(1, 9))
        if i % 2:
            # small integers make exact ties common
            codebook = r.integers(-2, 3, (k, d)).astype(float)
            y = r.integers(-2, 3, (3, d)).astype(float)
        else:
            codebook, y = r.standard_normal((k, d)), r.standard_normal((3, d))
        want = _exhaustive(y, codebook)
        dist = ((y[:, None] - codebook[None]) ** 2).sum(-1)
        ties += int((np.ptp(np.sort(dist, axis=1)[:, :2], axis=1) == 0).sum()) if k > 1 else 0
        mismatches += int((cae.nearest_codewords(y, codebook) != want).sum())
    record(acceptance_log, 10, mismatches == 0, f"10^4 instances, {ties} vectors with tied nearest codewords, {mismatches} mismatches")


def test_criterion_11_spatial_proximity(acceptance_log):
    seq = data.generate(data.standard_templates(4, 64, seed=3, channels=4), 0.1, [10] * 4, 40.0, seed=4)
    batch = data.ground_truth_batch(seq)
    train_idx, test_idx = evaluation.half_split(len(batch), 0)
    config = cae.CaeConfig(m_spk=4, spike_len=64, n_feat=4, codebook_size=128, width=32, groups=16)
    margins = []
    for seed in range(3):
        scores = []
        for variant in (batch, data.shuffle_channels(batch, seed)):
            model = evaluation.fit_cae(config, variant.spikes[train_idx], 40, seed=seed)
            scores.append(evaluation.evaluate_cae(model, variant.spikes[test_idx])[1])
        margins.append(scores[0] - scores[1])
    mean = float(np.mean(margins))
    record(acceptance_log, 11, mean > 0.3, f"preserved - shuffled SNDR per seed {np.round(margins, 2).tolist()}, mean {mean:.2f} dB (want >0.3)")


def test_criterion_12_mac_accounting(acceptance_log, capsys):
    argv = ["stats", "--k", "256", "--mspk", "4", "--nfeat", "16", "--spike-len", "48", "--width", "256", "--groups", "32"]
    assert cli.run(argv) == 0
    out = capsys.readouterr().out
    line = next(s for s in out.splitlines() if s.startswith("encoder MACs per spike"))
    macs = float(line.split(":")[1].split()[0])
    ratio = macs / cli.REFERENCE_MACS_PER_SPIKE
    ok = "79.25K" in out and 0.5 <= ratio <= 2.0
    record(acceptance_log, 12, ok, f"{macs:.0f} MACs/spike vs reference 79.25K, ratio {ratio:.3f} (want within 2x)")
