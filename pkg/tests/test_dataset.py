import struct

import numpy as np
import pytest

from lstmamp.dataset import (Dataset, WindowSet, build_dataset, generate_excitation,
                             read_gain_segments, split_dataset, synth_note, tensorize,
                             window_block)
from lstmamp.surrogate import amp_process
from lstmamp.tensor import Rng
from lstmamp.wav import (AudioSignal, MalformedWavError, UnsupportedCodecError, read_wav,
                         write_wav)


def ramp_dataset(n, gains=(5.0,), sample_rate=8000):
    x = AudioSignal(np.linspace(-0.5, 0.5, n), sample_rate)
    return build_dataset(x, list(gains))


# -- excitation ------------------------------------------------------------

def test_excitation_peak_and_determinism():
    a = generate_excitation(2.0, 16000, Rng(3))
    b = generate_excitation(2.0, 16000, Rng(3))
    assert len(a) == 32000 and a.sample_rate == 16000
    assert np.abs(a.samples).max() == pytest.approx(0.9, abs=1e-15)
    assert a.samples.tobytes() == b.samples.tobytes()
    assert generate_excitation(2.0, 16000, Rng(4)).samples.tobytes() != a.samples.tobytes()


def test_excitation_rejects_bad_duration():
    with pytest.raises(ValueError):
        generate_excitation(0.0, 16000, Rng(0))


def test_note_spectral_peak_at_fundamental():
    note = synth_note(110.0, 1.0, 16000)
    spec = np.abs(np.fft.rfft(note))
    freqs = np.fft.rfftfreq(len(note), 1 / 16000)
    assert freqs[np.argmax(spec)] == 110.0


def test_note_drops_partials_above_nyquist():
    note = synth_note(1500.0, 0.5, 8000, tau=0.6)   # only partials 1 and 2 lie below 4 kHz
    t = np.arange(4000) / 8000
    expected = sum(np.exp(-t * k / 0.6) * np.sin(2 * np.pi * k * 1500.0 * t) / k for k in (1, 2))
    np.testing.assert_allclose(note, expected, rtol=0, atol=1e-12)


# -- build / split ---------------------------------------------------------

def test_build_single_and_multi_gain():
    exc = generate_excitation(0.5, 8000, Rng(0))
    one = build_dataset(exc, [5.0])
    assert len(one) == len(exc)
    three = build_dataset(exc, [2.0, 5.0, 8.0])
    assert len(three) == 3 * len(exc)
    n = len(exc)
    np.testing.assert_array_equal(np.unique(three.g), [0.2, 0.5, 0.8])
    for k, gain in enumerate([2.0, 5.0, 8.0]):
        seg = slice(k * n, (k + 1) * n)
        np.testing.assert_array_equal(three.g[seg], gain / 10)
        np.testing.assert_array_equal(three.x[seg], exc.samples)
        np.testing.assert_array_equal(three.target[seg], amp_process(exc.samples, gain))
    with pytest.raises(ValueError):
        build_dataset(exc, [])


def test_split_default_ratios():
    ds = split_dataset(ramp_dataset(1000))
    assert ds.splits == {"train": [(0, 700)], "test": [(700, 850)], "validation": [(850, 1000)]}


def test_split_partition_and_gain_membership():
    ds = split_dataset(ramp_dataset(1000, gains=(2.0, 5.0, 8.0)), num_step=10)
    covered = np.zeros(len(ds), dtype=int)
    for name in ("train", "test", "validation"):
        ranges = ds.split_ranges(name)
        assert {ds.passes[ds.pass_of(lo)][2] for lo, _ in ranges} == {2.0, 5.0, 8.0}
        for lo, hi in ranges:
            covered[lo:hi] += 1
    np.testing.assert_array_equal(covered, 1)


def test_split_errors():
    with pytest.raises(ValueError):
        split_dataset(ramp_dataset(100), ratios=(0.5, 0.3, 0.3))
    with pytest.raises(ValueError):
        split_dataset(ramp_dataset(100), num_step=20)   # 15-sample test split


# -- windows ---------------------------------------------------------------

def test_fig3_block_reshape():
    p, x = 9.0, [1.0, 2.0, 3.0, 4.0]
    windows = window_block(np.array([[p]]), np.array(x)[:, None], 2)
    assert windows.shape == (4, 2, 1)
    np.testing.assert_array_equal(windows[..., 0], [[p, 1], [1, 2], [2, 3], [3, 4]])


def test_fig3_tensorize_uses_preceding_sample():
    ds = split_dataset(ramp_dataset(100))
    batches = list(tensorize(ds, (40, 44), num_step=2, batch_size=4))
    assert len(batches) == 1 and batches[0].batch_size == 4
    expected = [[ds.x[39 + k], ds.x[40 + k]] for k in range(4)]
    np.testing.assert_array_equal(batches[0].inputs[..., 0], expected)
    np.testing.assert_array_equal(batches[0].targets, ds.target[40:44])


def test_zero_padding_at_signal_start():
    ds = split_dataset(ramp_dataset(100))
    batch = next(tensorize(ds, (0, 10), num_step=4, batch_size=10))
    np.testing.assert_array_equal(batch.inputs[0, :, 0], [0, 0, 0, ds.x[0]])
    np.testing.assert_array_equal(batch.inputs[2, :, 0], [0, ds.x[0], ds.x[1], ds.x[2]])


def test_num_step_one_and_alignment():
    ds = split_dataset(ramp_dataset(200, gains=(3.0, 6.0)))
    for num_step in (1, 5):
        ws = WindowSet(ds, ds.split_ranges("train"), num_step, 2)
        X = ws.gather()
        np.testing.assert_array_equal(X[:, -1, 0], ds.x[ws.indices])
        np.testing.assert_array_equal(X[:, -1, 1], ds.g[ws.indices])
        np.testing.assert_array_equal(ws.targets, ds.target[ws.indices])


def test_final_partial_batch_and_target_order():
    ds = split_dataset(ramp_dataset(1000))
    batches = list(tensorize(ds, (0, 700), num_step=8, batch_size=128))
    assert [b.batch_size for b in batches] == [128] * 5 + [60]
    targets = np.concatenate([b.targets for b in batches])
    np.testing.assert_array_equal(targets, ds.target[0:700])


def test_stride():
    ds = split_dataset(ramp_dataset(1000))
    batches = list(tensorize(ds, (0, 700), num_step=8, batch_size=1000, stride=3))
    np.testing.assert_array_equal(batches[0].indices, np.arange(0, 700, 3))


def test_windows_do_not_cross_gain_passes():
    ds = split_dataset(ramp_dataset(100, gains=(2.0, 8.0)))
    ws = WindowSet(ds, [(100, 110)], 4, 2)
    first = ws.gather([0])[0]
    np.testing.assert_array_equal(first[:3], 0.0)
    np.testing.assert_array_equal(first[3], [ds.x[100], 0.8])


def test_feature_major_gather_matches():
    ds = split_dataset(ramp_dataset(300, gains=(1.0, 9.0)))
    ws = WindowSet(ds, ds.split_ranges("validation"), 6, 2)
    np.testing.assert_array_equal(ws.gather_features(), ws.gather().transpose(1, 2, 0))


def test_tensorize_range_errors():
    ds = split_dataset(ramp_dataset(100, gains=(2.0, 8.0)))
    with pytest.raises(ValueError):
        list(tensorize(ds, (10, 12), num_step=5, batch_size=4))
    with pytest.raises(ValueError):
        list(tensorize(ds, (90, 120), num_step=5, batch_size=4))


# -- WAV -------------------------------------------------------------------

PCM16_FIXTURE = (
    b"RIFF" + struct.pack("<I", 44) + b"WAVE"
    + b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, 16000, 32000, 2, 16)
    + b"data" + struct.pack("<I", 8)
    + bytes([0x00, 0x00, 0x00, 0x40, 0x00, 0x80, 0xFF, 0xFF])
)


def test_hand_built_pcm16(tmp_path):
    path = tmp_path / "four.wav"
    path.write_bytes(PCM16_FIXTURE)
    sig = read_wav(path)
    assert sig.sample_rate == 16000
    np.testing.assert_array_equal(sig.samples, [0.0, 0.5, -1.0, -1 / 32768])


def test_write_is_bit_exact(tmp_path):
    path = tmp_path / "out.wav"
    write_wav(path, AudioSignal([0.0, 0.5, -1.0, -1 / 32768], 16000))
    assert path.read_bytes() == PCM16_FIXTURE


def test_round_trip_quantisation(tmp_path):
    x = Rng(0).uniform(-1, 1, 10_000)
    path = tmp_path / "rt.wav"
    write_wav(path, AudioSignal(x, 44100))
    back = read_wav(path)
    assert back.sample_rate == 44100
    assert np.abs(back.samples - x).max() <= 1 / 32768


def test_saturation(tmp_path):
    path = tmp_path / "clip.wav"
    write_wav(path, AudioSignal([1.5, -2.0], 8000))
    np.testing.assert_array_equal(read_wav(path).samples, [32767 / 32768, -1.0])


def test_empty_wav(tmp_path):
    path = tmp_path / "empty.wav"
    write_wav(path, AudioSignal(np.zeros(0), 8000))
    assert len(path.read_bytes()) == 44
    assert len(read_wav(path)) == 0


def test_float32_and_stereo(tmp_path):
    frames = np.array([[0.25, -0.75], [-0.5, 0.125]], dtype="<f4")
    data = frames.tobytes()
    raw = (b"RIFF" + struct.pack("<I", 36 + len(data)) + b"WAVE"
           + b"fmt " + struct.pack("<IHHIIHH", 16, 3, 2, 8000, 64000, 8, 32)
           + b"data" + struct.pack("<I", len(data)) + data)
    path = tmp_path / "f32.wav"
    path.write_bytes(raw)
    np.testing.assert_array_equal(read_wav(path).samples, [0.25, -0.5])


def test_malformed_and_unsupported(tmp_path):
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"RIFX" + PCM16_FIXTURE[4:])
    with pytest.raises(MalformedWavError):
        read_wav(bad)
    bad.write_bytes(PCM16_FIXTURE[:12])
    with pytest.raises(MalformedWavError):
        read_wav(bad)
    raw = bytearray(PCM16_FIXTURE)
    struct.pack_into("<H", raw, 20, 2)   # ADPCM tag
    bad.write_bytes(bytes(raw))
    with pytest.raises(UnsupportedCodecError):
        read_wav(bad)


def test_dataset_save_load(tmp_path):
    exc = generate_excitation(0.3, 8000, Rng(1))
    ds = build_dataset(exc, [2.0, 7.5])
    ds.save(tmp_path)
    assert read_gain_segments(tmp_path / "gains.txt") == ds.passes
    assert (tmp_path / "gains.txt").read_text().splitlines()[0] == f"0,{len(exc)},2.0"
    back = Dataset.load(tmp_path)
    assert back.passes == ds.passes
    np.testing.assert_array_equal(back.g, ds.g)
    assert np.abs(back.x - ds.x).max() <= 1 / 32768
    assert np.abs(back.target - ds.target).max() <= 1 / 32768


def test_build_is_reproducible():
    a = build_dataset(generate_excitation(0.5, 8000, Rng(9)), [2.0, 8.0])
    b = build_dataset(generate_excitation(0.5, 8000, Rng(9)), [2.0, 8.0])
    assert a.x.tobytes() == b.x.tobytes() and a.target.tobytes() == b.target.tobytes()
