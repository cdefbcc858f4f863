import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spikezip import container, data


@pytest.fixture(scope="module")
def templates():
    return data.standard_templates(3, 64, seed=4)


@pytest.fixture(scope="module")
def clean_sequence(templates):
    return data.generate(templates, 0.0, [15, 15, 15], 20.0, seed=2)


class TestTemplates:
    def test_peak_normalized_at_offset(self, templates):
        for t in templates:
            w = t.waveform[0]
            assert np.abs(w).max() == pytest.approx(1.0)
            assert np.argmax(np.abs(w)) == data.peak_offset(64) == 21

    def test_distinct(self, templates):
        a, b = templates[0].waveform[0], templates[1].waveform[0]
        assert np.abs(a - b).max() > 0.2

    def test_multichannel_gains(self):
        t = data.standard_templates(2, 48, seed=0, channels=4)[0]
        assert t.waveform.shape == (4, 48)
        assert np.abs(t.waveform).max() == pytest.approx(1.0)
        assert len(set(np.round(np.abs(t.waveform).max(axis=1), 6))) > 1

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            data.SpikeTemplate(np.array([np.nan, 1.0]))

    def test_load_templates_csv(self, tmp_path):
        w = np.zeros((2, 48))
        w[0, 30] = -2.0
        w[1, 5] = 0.5
        np.savetxt(tmp_path / "t.csv", w, delimiter=",")
        loaded = data.load_templates(tmp_path / "t.csv", spike_len=48)
        assert [np.argmax(np.abs(t.waveform[0])) for t in loaded] == [16, 16]
        assert loaded[0].waveform[0, 16] == -1.0
        with pytest.raises(ValueError):
            data.load_templates(tmp_path / "t.csv", spike_len=64)


class TestGenerate:
    def test_noise_free_extraction_reproduces_templates(self, clean_sequence, templates):
        batch = data.ground_truth_batch(clean_sequence)
        for spike, lab in zip(batch.spikes, batch.labels):
            np.testing.assert_array_equal(spike, templates[lab].waveform.astype(np.float32))

    def test_seeded(self, templates):
        a = data.generate(templates, 0.1, 20, 2.0, seed=1)
        b = data.generate(templates, 0.1, 20, 2.0, seed=1)
        c = data.generate(templates, 0.1, 20, 2.0, seed=2)
        np.testing.assert_array_equal(a.signal, b.signal)
        assert not np.array_equal(a.times, c.times)

    def test_times_sorted_labels_valid(self, clean_sequence):
        assert (np.diff(clean_sequence.times) > 0).all()
        assert set(clean_sequence.labels) <= {0, 1, 2}

    def test_firing_rate(self, templates):
        seq = data.generate(templates[:1], 0.0, 50.0, 200.0, seed=3)
        assert len(seq.times) / 200.0 == pytest.approx(50.0, rel=0.1)

    def test_refractory_respected(self, templates):
        seq = data.generate(templates[:1], 0.0, 100.0, 20.0, seed=0, isolate=False)
        assert np.diff(seq.times).min() >= round(2e-3 * 24000)

    def test_noise_level(self, templates):
        seq = data.generate(templates, 0.2, 0.0, 10.0, seed=5)
        assert seq.noise.std() == pytest.approx(0.2, rel=0.01)
        assert len(seq.times) == 0

    def test_isolated_windows_do_not_overlap(self, templates):
        seq = data.generate(templates, 0.0, [40, 40, 40], 10.0, seed=6)
        assert np.diff(seq.times).min() >= 64

    def test_errors(self, templates):
        with pytest.raises(ValueError):
            data.generate([], 0.1, 10, 1.0)
        with pytest.raises(ValueError):
            data.generate(templates, -0.1, 10, 1.0)


class TestDetection:
    def test_threshold_formula(self):
        x = np.full((1, 11), 0.6745)
        assert data.detection_threshold(x)[0] == pytest.approx(5.0)

    def test_threshold_on_gaussian_noise(self, rng):
        x = 0.3 * rng.standard_normal(200_000)
        assert data.detection_threshold(x)[0] == pytest.approx(1.5, rel=0.02)

    def test_one_detection_per_spike(self, templates):
        seq = data.generate(templates, 0.0, [10, 10, 10], 10.0, seed=8)
        signal = 10 * seq.signal + np.random.default_rng(0).standard_normal(seq.signal.shape)
        found = data.detect(signal, 64)
        assert len(found) == len(seq.times)
        assert (np.abs(found - seq.times) < 10).all()

    def test_noise_free_recall_and_precision(self, clean_sequence):
        found = data.detect(clean_sequence.signal, 64, threshold=0.5)
        batch = data.extract_align(clean_sequence.signal, found, 64)
        np.testing.assert_array_equal(batch.timestamps, clean_sequence.times)

    def test_empty_signal(self):
        with pytest.raises(ValueError):
            data.detect(np.zeros((1, 0)), 64)


class TestExtraction:
    def test_peaks_aligned(self, clean_sequence):
        found = data.detect(clean_sequence.signal, 64, threshold=0.5)
        batch = data.extract_align(clean_sequence.signal, found, 64)
        assert (np.abs(batch.spikes[:, 0]).argmax(axis=1) == 21).all()

    def test_out_of_bounds_dropped(self):
        x = np.zeros((1, 100))
        x[0, 3] = 1.0
        x[0, 50] = 1.0
        batch = data.extract_align(x, np.array([3, 50]), 48)
        assert len(batch) == 1 and batch.dropped == 1
        assert batch.timestamps[0] == 50 and batch.source_index[0] == 1

    def test_tetrode_length(self):
        seq = data.generate(data.standard_templates(2, 48, channels=4), 0.05, 20, 2.0)
        batch = data.ground_truth_batch(seq)
        assert batch.spikes.shape[1:] == (4, 48)


class TestTransforms:
    def test_jitter_zero_is_identity(self, clean_sequence):
        batch = data.ground_truth_batch(clean_sequence)
        out = data.jitter(batch, 0, 0, clean_sequence.signal)
        np.testing.assert_array_equal(out.spikes, batch.spikes)

    def test_jitter_statistics(self, templates):
        seq = data.generate(templates, 0.0, [30, 30, 30], 60.0, seed=1)
        batch = data.ground_truth_batch(seq)
        out = data.jitter(batch, 8, 0, seq.signal)
        assert np.abs(out.shifts).mean() == pytest.approx(8 * 5 / 18, rel=0.1)  # E|U{-4..4}| = 20/9
        peaks = np.abs(out.spikes[:, 0]).argmax(axis=1)
        assert set(peaks) == set(range(17, 26))
        np.testing.assert_array_equal(out.clean, batch.spikes)

    def test_jitter_width_validation(self, clean_sequence):
        batch = data.ground_truth_batch(clean_sequence)
        with pytest.raises(ValueError):
            data.jitter(batch, 3, 0, clean_sequence.signal)

    def test_drift_identity_and_decay(self, templates):
        seq = data.generate(templates, 0.0, [20, 20, 20], 100.0, seed=2)
        same = data.drift(seq, lambda t: np.ones_like(t))
        np.testing.assert_array_equal(same.signal, seq.signal)
        decayed = data.drift(seq, data.linear_schedule(1.0, 0.5, 100.0))
        batch = data.ground_truth_batch(decayed)
        first, last = data.first_last_split(batch, 500, 200)
        ratio = np.abs(last.spikes).max(axis=2).mean() / np.abs(first.spikes).max(axis=2).mean()
        assert ratio == pytest.approx(0.5 / 0.95, rel=0.1)

    def test_first_last_split(self, clean_sequence):
        batch = data.ground_truth_batch(clean_sequence)
        first, last = data.first_last_split(batch, 500, 200)
        assert len(first) == 500 and len(last) == 200
        assert first.timestamps.max() < last.timestamps.min()
        with pytest.raises(ValueError):
            data.first_last_split(batch, len(batch), 1)

    def test_overlap(self, clean_sequence, templates):
        batch = data.ground_truth_batch(clean_sequence)
        none = data.overlap(batch, 0.0, 0, templates)
        np.testing.assert_array_equal(none.spikes, batch.spikes)
        some = data.overlap(batch, 0.2, 0, templates)
        assert some.overlapped.mean() == pytest.approx(0.2, abs=0.05)
        extra = some.spikes - batch.spikes
        assert np.abs(extra[~some.overlapped]).max() == 0
        assert (np.abs(extra[some.overlapped]).max(axis=(1, 2)) > 0.3).all()
        with pytest.raises(ValueError):
            data.overlap(batch, 1.5, 0, templates)

    def test_shuffle_single_channel_identity(self, clean_sequence):
        batch = data.ground_truth_batch(clean_sequence)
        np.testing.assert_array_equal(data.shuffle_channels(batch, 0).spikes, batch.spikes)

    def test_shuffle_then_preserve_restores(self):
        seq = data.generate(data.standard_templates(3, 48, seed=1, channels=4), 0.05, 20, 5.0)
        batch = data.ground_truth_batch(seq)
        shuffled = data.shuffle_channels(batch, 3)
        assert not np.array_equal(shuffled.spikes, batch.spikes)
        np.testing.assert_array_equal(data.preserve_channels(shuffled).spikes, batch.spikes)

    def test_shuffle_homogenizes_ports(self):
        seq = data.generate(data.standard_templates(3, 48, seed=1, channels=4), 0.05, 20, 20.0)
        batch = data.ground_truth_batch(seq)
        port_power = lambda b: (b.spikes.astype(float) ** 2).mean(axis=(0, 2))
        assert port_power(data.shuffle_channels(batch, 0)).var() < 0.2 * port_power(batch).var()

    def test_group_channels(self, clean_sequence):
        batch = data.ground_truth_batch(clean_sequence)
        grouped = data.group_channels([batch, batch.subset(np.arange(1, len(batch)))])
        assert grouped.spikes.shape == (len(batch) - 1, 2, 64)
        np.testing.assert_array_equal(grouped.spikes[:, 1], batch.spikes[1:, 0])


class TestDatasetFiles:
    def test_round_trip(self, tmp_path, clean_sequence):
        batch = data.jitter(data.ground_truth_batch(clean_sequence), 4, 0, clean_sequence.signal)
        data.save_dataset(batch, tmp_path / "d.spkd")
        back = data.load_dataset(tmp_path / "d.spkd")
        np.testing.assert_array_equal(back.spikes, batch.spikes)
        np.testing.assert_array_equal(back.labels, batch.labels)
        np.testing.assert_array_equal(back.timestamps, batch.timestamps)
        np.testing.assert_array_equal(back.clean, batch.clean)
        assert data.dataset_bytes(back) == data.dataset_bytes(batch)

    def test_rejects_mismatched_length(self, tmp_path, clean_sequence):
        data.save_dataset(data.ground_truth_batch(clean_sequence), tmp_path / "d.spkd")
        with pytest.raises(container.FormatError):
            data.load_dataset(tmp_path / "d.spkd", spike_len=48)

    def test_truncated(self, tmp_path, clean_sequence):
        raw = data.dataset_bytes(data.ground_truth_batch(clean_sequence))
        (tmp_path / "d.spkd").write_bytes(raw[:-100])
        with pytest.raises(container.FormatError):
            data.load_dataset(tmp_path / "d.spkd")

    def test_csv_round_trip(self, tmp_path):
        seq = data.generate(data.standard_templates(2, 48, channels=2), 0.05, 20, 2.0)
        batch = data.ground_truth_batch(seq)
        data.export_csv(batch, tmp_path / "d.csv")
        back = data.import_csv(tmp_path / "d.csv")
        np.testing.assert_allclose(back.spikes, batch.spikes, rtol=1e-6)
        np.testing.assert_array_equal(back.labels, batch.labels)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_transforms_commute_with_save_load(self, tmp_path_factory, seed):
        seq = data.generate(data.standard_templates(2, 48, seed=seed % 7, channels=2), 0.05, 20, 1.0, seed=seed)
        batch = data.ground_truth_batch(seq)
        path = tmp_path_factory.mktemp("c") / "d.spkd"
        data.save_dataset(batch, path)
        a = data.shuffle_channels(data.load_dataset(path), seed)
        b = data.shuffle_channels(batch, seed)
        np.testing.assert_array_equal(a.spikes, b.spikes)
