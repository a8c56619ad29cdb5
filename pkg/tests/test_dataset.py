import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qmpfc.dataset import (BINARY_MAGIC, COLUMNS, CorridorConfig, CorridorScaler,
                           DatasetError, NormStats, TrainingSet, compute_stats,
                           corridor_offsets, corridor_points, corridor_states,
                           denormalize, generate_dataset, normalize, read_dataset_binary,
                           read_dataset_csv, read_stats_csv, write_dataset_binary,
                           write_dataset_csv, write_stats_csv)
from qmpfc.ocp import OcpConfig, label_states
from qmpfc.path import eval_path, reference_inputs

SMALL = CorridorConfig(n_theta=10, n_width=3, n_length=3, n_height=3)


def test_corridor_counts():
    assert len(corridor_points(0.0, CorridorConfig(n_width=3, n_length=3, n_height=1))) == 9
    assert len(corridor_points(0.0, CorridorConfig())) == 1000
    assert CorridorConfig().n_corridor == 1000
    assert CorridorConfig().n_theta * CorridorConfig().n_corridor == 4_000_000


def test_zero_corridor_collapses_to_path_point():
    cfg = CorridorConfig(half_width=0, half_length=0, half_height=0)
    pt = eval_path(1.1)
    poses = corridor_points(1.1, cfg)
    assert np.allclose(poses, [pt.x, pt.y, pt.heading], rtol=0, atol=1e-15)


@pytest.mark.parametrize("cfg", [CorridorConfig(), SMALL,
                                 CorridorConfig(n_width=4, n_length=2, n_height=7)])
def test_offsets_symmetric_about_zero(cfg):
    off = corridor_offsets(cfg)
    assert np.all(np.abs(off.sum(axis=0)) <= 1e-12)
    assert np.max(np.abs(off), axis=0) == pytest.approx(
        [cfg.half_length, cfg.half_width, cfg.half_height])


def test_width_is_measured_along_the_normal():
    cfg = CorridorConfig(n_width=3, n_length=1, n_height=1)
    pt = eval_path(0.0)
    poses = corridor_points(0.0, cfg)
    # at theta = 0 the path heads +y, so the left normal is -x
    assert np.allclose(poses[:, 0] - pt.x, [0.01, 0.0, -0.01])
    assert np.allclose(poses[:, 1], pt.y)


@given(st.floats(0, 2 * math.pi))
def test_corridor_containment(theta):
    cfg = CorridorConfig(n_width=3, n_length=3, n_height=2)
    pt = eval_path(theta)
    d = np.hypot(*(corridor_points(theta, cfg)[:, :2] - [pt.x, pt.y]).T)
    assert np.all(d <= math.hypot(cfg.half_length, cfg.half_width) + 1e-12)


def test_corridor_states_order_and_theta_column():
    Z = corridor_states(SMALL)
    assert Z.shape == (10 * 27, 4)
    assert np.array_equal(Z[:27, 3], np.zeros(27))
    assert np.allclose(np.unique(Z[:, 3]), SMALL.thetas)


def test_small_dataset_labels_are_bitwise_reproducible():
    a = generate_dataset(corridor_cfg=SMALL)
    b = generate_dataset(corridor_cfg=SMALL)
    assert len(a) == 270 and a.n_failed == 0
    assert a.matrix.tobytes() == b.matrix.tobytes()
    lo, hi = OcpConfig().input_lo, OcpConfig().input_hi
    assert np.all((a.inputs >= lo) & (a.inputs <= hi))


@pytest.mark.parametrize("theta", [0.0, math.pi / 4, math.pi])
def test_on_path_label_is_the_feed_forward(theta):
    ocp = OcpConfig(v_ref=0.1)
    pt = eval_path(theta)
    W, status = label_states(np.array([[pt.x, pt.y, pt.heading, theta]]), ocp)
    assert status[0] != 3
    assert np.allclose(W[0], [*reference_inputs(theta, 0.1), 0.1], atol=1e-3)


def test_stats_example():
    stats = compute_stats(np.array([np.zeros(7), np.full(7, 2.0)]))
    assert np.array_equal(stats.mu, np.ones(7))
    assert np.array_equal(stats.sigma, np.ones(7))


def test_constant_row_floors_sigma():
    M = np.random.default_rng(0).normal(size=(50, 7))
    M[:, 2] = 3.5
    stats = compute_stats(M)
    assert stats.sigma[2] == 1.0
    Mn = normalize(M, stats)
    assert np.all(Mn[:, 2] == 0.0)
    assert np.allclose(denormalize(Mn, stats), M, rtol=0, atol=1e-12)


@given(arrays(np.float64, (40, 7), elements=st.floats(-100, 100)))
def test_normalized_rows_are_standard(M):
    stats = compute_stats(M)
    Mn = normalize(M, stats)
    assert np.all(np.abs(Mn.mean(axis=0)) <= 1e-9)
    live = M.std(axis=0) >= 1e-6
    assert np.all(np.abs(Mn.std(axis=0)[live] - 1) <= 1e-9)
    assert np.allclose(denormalize(Mn, stats), M, rtol=1e-12, atol=1e-10)


def test_normalize_mean_is_zero_vector():
    stats = NormStats(np.arange(7.0), np.arange(1.0, 8.0))
    assert np.array_equal(normalize(stats.mu, stats), np.zeros(7))


def test_state_and_input_slices_agree_with_full_transform(rng):
    M = rng.normal(3, 2, size=(20, 7))
    stats = compute_stats(M)
    full = normalize(M, stats)
    assert np.array_equal(stats.normalize_states(M[:, :4]), full[:, :4])
    assert np.array_equal(stats.normalize_inputs(M[:, 4:]), full[:, 4:])
    assert np.allclose(stats.denormalize_inputs(full[:, 4:]), M[:, 4:], atol=1e-12)


def test_norm_stats_validation():
    with pytest.raises(ValueError):
        NormStats(np.zeros(6), np.ones(6))
    with pytest.raises(ValueError):
        NormStats(np.zeros(7), np.zeros(7))
    with pytest.raises(ValueError):
        compute_stats(np.empty((0, 7)))


def test_scaler_estimator_api(rng):
    M = rng.normal(size=(30, 7))
    sc = CorridorScaler().fit(M)
    assert np.allclose(sc.inverse_transform(sc.transform(M)), M, atol=1e-12)
    assert sc.get_params() == {}
    with pytest.raises(ValueError):
        sc.transform(M[:, :6])


def _random_set(rng, n=25):
    return TrainingSet(rng.normal(size=(n, 4)), rng.normal(size=(n, 3)))


def test_csv_roundtrip_is_exact(tmp_path, rng):
    ts = _random_set(rng)
    write_dataset_csv(ts, tmp_path / "d.csv")
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == ",".join(COLUMNS)
    assert np.array_equal(read_dataset_csv(tmp_path / "d.csv").matrix, ts.matrix)


def test_binary_roundtrip_and_layout(tmp_path, rng):
    ts = _random_set(rng, 3)
    write_dataset_binary(ts, tmp_path / "d.bin")
    raw = (tmp_path / "d.bin").read_bytes()
    assert raw[:8] == BINARY_MAGIC and len(raw) == 24 + 3 * 7 * 8
    assert np.frombuffer(raw, "<f8", offset=24)[7] == ts.matrix[1, 0]
    assert np.array_equal(read_dataset_binary(tmp_path / "d.bin").matrix, ts.matrix)


def test_binary_rejects_bad_files(tmp_path, rng):
    write_dataset_binary(_random_set(rng, 3), tmp_path / "d.bin")
    raw = (tmp_path / "d.bin").read_bytes()
    (tmp_path / "short.bin").write_bytes(raw[:-4])
    (tmp_path / "magic.bin").write_bytes(b"XXXXXXXX" + raw[8:])
    for name in ("short.bin", "magic.bin"):
        with pytest.raises(DatasetError):
            read_dataset_binary(tmp_path / name)


def test_csv_rejects_wrong_header(tmp_path):
    (tmp_path / "d.csv").write_text("a,b,c\n1,2,3\n")
    with pytest.raises(DatasetError):
        read_dataset_csv(tmp_path / "d.csv")


def test_stats_roundtrip(tmp_path, rng):
    stats = compute_stats(rng.normal(size=(10, 7)))
    write_stats_csv(stats, tmp_path / "s.csv")
    back = read_stats_csv(tmp_path / "s.csv")
    assert np.array_equal(back.mu, stats.mu) and np.array_equal(back.sigma, stats.sigma)


def test_config_validation():
    with pytest.raises(ValueError):
        CorridorConfig(n_width=0)
    with pytest.raises(ValueError):
        CorridorConfig(half_width=-1)
    with pytest.raises(ValueError):
        TrainingSet(np.zeros((3, 4)), np.zeros((2, 3)))
