import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from td2ip import diffcore as dc
from td2ip.data import (MotionSequence, MSQParseError, NormStats, compute_stats, denormalize, load_msq,
                        make_inverse_sample, normalize, save_msq, split_sequences, synth_generate, window_split)

from conftest import labeled_frames


def test_load_minimal_file(tmp_path):
    p = tmp_path / "a.msq"
    p.write_text("MSQ 1\n2 1 25.0\n0 0 0\n1 1 1\n")
    seq = load_msq(p)
    assert seq.frames.shape == (2, 1, 3) and seq.fps == 25.0
    assert seq.frames.tolist() == [[[0, 0, 0]], [[1, 1, 1]]]


def test_load_accepts_crlf(tmp_path):
    p = tmp_path / "a.msq"
    p.write_bytes(b"MSQ 1\r\n1 1 30.0\r\n1.5 -2 3e2\r\n")
    assert load_msq(p).frames.tolist() == [[[1.5, -2.0, 300.0]]]


@pytest.mark.parametrize("body,line", [
    ("MSQ 1\n3 1 25.0\n0 0 0\n1 1 1\n", 4),
    ("MSQ 2\n1 1 25.0\n0 0 0\n", 1),
    ("MSQ 1\n1 1 25.0\n0 x 0\n", 3),
    ("MSQ 1\n1 2 25.0\n0 0 0\n", 3),
    ("MSQ 1\n1 1\n0 0 0\n", 2),
    ("MSQ 1\n1 1 25.0\n0 0 0\n1 1 1\n", 4),
])
def test_parse_errors_carry_line_numbers(tmp_path, body, line):
    p = tmp_path / "bad.msq"
    p.write_text(body)
    with pytest.raises(MSQParseError) as err:
        load_msq(p)
    assert err.value.line == line


def test_save_format(tmp_path):
    p = tmp_path / "z.msq"
    save_msq(MotionSequence(np.zeros((1, 2, 3)), 25.0), p)
    lines = p.read_text().splitlines()
    assert lines[0] == "MSQ 1"
    assert lines[1].split()[:2] == ["1", "2"]
    assert lines[2] == "0 0 0 0 0 0"


def test_save_load_roundtrip(tmp_path, rng):
    seq = MotionSequence(rng.normal(scale=500.0, size=(7, 4, 3)), 50.0)
    save_msq(seq, tmp_path / "r.msq")
    back = load_msq(tmp_path / "r.msq")
    assert back.fps == 50.0
    assert np.max(np.abs(back.frames - seq.frames)) <= 1e-6


@pytest.mark.parametrize("T,stride,expected", [(5, 1, 1), (7, 2, 2), (4, 1, 0)])
def test_window_counts(T, stride, expected):
    seq = MotionSequence(labeled_frames(T), 25.0)
    assert len(window_split(seq, 3, 2, stride)) == expected


def test_windows_start_at_stride_offsets():
    seq = MotionSequence(labeled_frames(7), 25.0)
    starts = [s.X[0, 0, 0] for s in window_split(seq, 3, 2, 2)]
    assert starts == [0.0, 2.0]


@given(T=st.integers(1, 30), t_p=st.integers(1, 6), t_f=st.integers(1, 6), stride=st.integers(1, 5))
def test_window_count_formula(T, t_p, t_f, stride):
    n = len(window_split(MotionSequence(labeled_frames(T), 25.0), t_p, t_f, stride))
    expected = (T - t_p - t_f) // stride + 1 if T >= t_p + t_f else 0
    assert n == expected


def test_inverse_sample_on_labeled_frames():
    P = labeled_frames(5)
    X_r, Y_r = make_inverse_sample(P[:3], P[3:])
    assert X_r[:, 0, 0].tolist() == [4, 3, 2]
    assert Y_r[:, 0, 0].tolist() == [4, 3, 2, 1, 0]


def test_inverse_of_inverse_recovers_original_pairing():
    P = labeled_frames(6, joints=2)
    t_p = 4
    _, Y_r = make_inverse_sample(P[:t_p], P[t_p:])
    X_rr, Y_rr = make_inverse_sample(Y_r[:t_p], Y_r[t_p:])
    # frame labels by brute force: reversing twice restores index order
    assert [f[0, 0] for f in X_rr] == [float(t) for t in range(t_p)]
    assert [f[0, 0] for f in Y_rr] == [float(t) for t in range(6)]


@given(T=st.integers(2, 12), data=st.data())
def test_inverse_paths_agree_bitwise(T, data):
    t_p = data.draw(st.integers(1, T - 1))
    rng = np.random.default_rng(T)
    P = rng.normal(size=(T, 3, 3))
    X_r, Y_r = make_inverse_sample(P[:t_p], P[t_p:])
    flipped = dc.flip_axis(dc.Tensor(P), 0).values
    assert X_r.tobytes() == flipped[:t_p].tobytes()
    assert Y_r.tobytes() == flipped.tobytes()
    assert np.array_equal(Y_r[::-1], P)
    for t in range(t_p):
        assert np.array_equal(X_r[t], P[T - 1 - t])


def test_synth_determinism_and_zero_amplitude():
    a = synth_generate(5, 3, 12, 4, pattern="wave")
    b = synth_generate(5, 3, 12, 4, pattern="wave")
    assert all(x.frames.tobytes() == y.frames.tobytes() for x, y in zip(a, b))
    flat = synth_generate(5, 2, 12, 4, pattern="wave", amplitude_range=(0.0, 0.0))
    for s in flat:
        assert np.array_equal(s.frames, np.broadcast_to(s.frames[0], s.frames.shape))


def test_synth_walk_drift_is_linear():
    seqs = synth_generate(9, 4, 30, 5, pattern="walk", amplitude_range=(0.0, 0.0))
    for s in seqs:
        means = s.frames.mean(axis=1)
        d = means[1] - means[0]
        assert 2.0 - 1e-9 <= np.linalg.norm(d) <= 8.0 + 1e-9
        for t in range(s.n_frames):
            assert np.allclose(means[t] - means[0], t * d, atol=1e-9)


def test_synth_walk_drift_with_motion_fits_a_line():
    s = synth_generate(9, 1, 200, 12, pattern="walk")[0]
    flat = synth_generate(9, 1, 200, 12, pattern="walk", amplitude_range=(0.0, 0.0))[0]
    d = flat.frames.mean(axis=1)[1] - flat.frames.mean(axis=1)[0]
    means = s.frames.mean(axis=1)
    t = np.arange(200)
    slope = np.polyfit(t, means - means[0], 1)[0]
    assert np.allclose(slope, d, atol=0.3)


def test_synth_mixed_alternates_and_is_finite():
    seqs = synth_generate(1, 4, 20, 3, pattern="mixed", amplitude_range=(0.0, 0.0))
    moving = [not np.array_equal(s.frames[0], s.frames[-1]) for s in seqs]
    assert moving == [False, True, False, True]
    assert all(np.isfinite(s.frames).all() for s in synth_generate(2, 5, 20, 3))


def test_normalize_roundtrip_and_constant_data(rng):
    x = rng.normal(loc=100.0, scale=40.0, size=(6, 5, 4, 3))
    stats = compute_stats(x)
    assert np.max(np.abs(denormalize(normalize(x, stats), stats) - x)) <= 1e-9
    const = np.full((4, 2, 3), 7.0)
    cs = compute_stats(const)
    assert np.all(cs.std == 1e-8)
    assert np.array_equal(normalize(const, cs), np.zeros_like(const))


def test_stats_come_from_training_histories_only(rng):
    train = rng.normal(size=(10, 4, 2, 3))
    stats = compute_stats(train)
    val = rng.normal(loc=50.0, size=(3, 4, 2, 3))
    out = normalize(val, stats)
    assert np.allclose(out, (val - train.reshape(-1, 3).mean(0)) / train.reshape(-1, 3).std(0))
    assert isinstance(NormStats.identity(), NormStats)


def test_split_by_sequence():
    train, val = split_sequences(list(range(10)), 0.2)
    assert train == list(range(8)) and val == [8, 9]
