import json
import math
import struct

import numpy as np
import pytest

from decayfit import synth
from decayfit.edf import DecayParameters, retained_length, to_decibel
from decayfit.errors import FormatError, GenerationStalled, InvalidParameters
from decayfit.synth import (
    GeneratorConfig,
    check_multislope_constraints,
    draw_parameters,
    draw_valid_parameters,
    generate_dataset,
    load_dataset,
    make_edf_set,
    model_on_record_grid,
    record_rng,
    synthesize_edf,
)

SMALL = dict(sample_rate=16000.0, t_edf=2.0)


def rng(seed=0):
    return np.random.default_rng(seed)


class TestDrawParameters:
    @pytest.mark.parametrize("K", [1, 2, 3])
    def test_ranges(self, K):
        cfg = GeneratorConfig()
        g = rng(K)
        for _ in range(500):
            p = draw_parameters(K, cfg, g)
            assert np.all((p.decay_times >= 1.0) & (p.decay_times <= 15.0))
            assert 1e-14 <= p.noise <= 1e-3
            assert p.amplitudes.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(np.diff(p.decay_times) >= 0)
            assert np.all(np.diff(p.amplitudes) <= 0)

    def test_normalization_example(self):
        raw = np.array([1e-1, 1e-2])
        norm = raw / raw.sum()
        np.testing.assert_allclose(norm, [10 / 11, 1 / 11], rtol=1e-15)
        # the drawing path normalizes in the same way
        cfg = GeneratorConfig(amplitude_exponent_range=(-1.0, -1.0 + 1e-15))
        p = draw_parameters(1, cfg, rng())
        assert p.amplitudes[0] == pytest.approx(1.0)

    def test_bad_order(self):
        with pytest.raises(InvalidParameters):
            draw_parameters(4, GeneratorConfig(), rng())

    def test_midpoint_fraction(self):
        cfg = GeneratorConfig()
        g = rng(11)
        t1 = np.array([draw_parameters(1, cfg, g).decay_times[0] for _ in range(10_000)])
        assert np.mean(t1 < 0.8 * cfg.t_edf) == pytest.approx(0.5, abs=0.02)


class TestConstraints:
    @pytest.mark.parametrize("T, A, ok", [
        ([1.0, 1.4], [0.97, 0.03], False),
        ([1.0, 1.6], [0.97, 0.03], True),
        ([1.0, 1.6], [0.9, 0.1], False),
    ])
    def test_examples(self, T, A, ok):
        assert check_multislope_constraints(DecayParameters(2, T, A, 1e-9)) is ok

    def test_single_slope_always_valid(self):
        assert check_multislope_constraints(DecayParameters(1, [5.0], [1.0], 1e-9))

    def test_three_slopes_ratio(self):
        r = 10 ** (3 / 3)
        good = DecayParameters(3, [1, 2, 4], [r * r, r, 1.0], 1e-9)
        bad = DecayParameters(3, [1, 2, 4], [r * r, r * 0.99, 1.0], 1e-9)
        assert check_multislope_constraints(good)
        assert not check_multislope_constraints(bad)

    @pytest.mark.parametrize("K", [2, 3])
    def test_valid_draws_satisfy_constraints(self, K):
        cfg = GeneratorConfig()
        g = rng(K)
        for _ in range(50):
            p = draw_valid_parameters(K, cfg, g)
            T, A = p.decay_times, p.amplitudes
            assert np.all(T[1:] >= 1.5 * T[:-1])
            assert np.all(A[:-1] / A[1:] >= 10 ** (3 / K))

    def test_stalled(self, monkeypatch):
        monkeypatch.setattr(synth, "MAX_REDRAWS", 50)
        cfg = GeneratorConfig(decay_time_range=(0.5, 0.51))  # no room for a 1.5x spacing
        with pytest.raises(GenerationStalled):
            draw_valid_parameters(2, cfg, rng())


class TestSynthesize:
    def test_length(self):
        cfg = GeneratorConfig(**SMALL)
        g = rng()
        rec = synthesize_edf(draw_valid_parameters(2, cfg, g), cfg, g)
        assert rec.db.shape == (100,)
        assert rec.order == 2

    def test_violating_parameters(self):
        with pytest.raises(InvalidParameters):
            synthesize_edf(DecayParameters(2, [1.0, 1.4], [0.97, 0.03], 1e-9), GeneratorConfig(**SMALL), rng())

    @pytest.mark.parametrize("K", [1, 2, 3])
    def test_unit_streams_match_model(self, K):
        cfg = GeneratorConfig(**SMALL)
        g = rng(40 + K)
        for _ in range(5):
            p = draw_valid_parameters(K, cfg, g)
            rec = synthesize_edf(p, cfg, g, unit_streams=True)
            model = to_decibel(model_on_record_grid(p, cfg))
            model -= model[0]  # the synthesized EDF is normalized to 0 dB at t=0
            n = retained_length(100)
            assert np.mean(np.abs(rec.db[:n] - model[:n])) < 0.5

    def test_ramp_mode_bends_the_tail(self):
        p = DecayParameters(1, [0.5], [1.0], 1e-5)
        const = synthesize_edf(p, GeneratorConfig(**SMALL), rng(), unit_streams=True).db
        ramp = synthesize_edf(p, GeneratorConfig(**SMALL, noise_mode="ramp"), rng(), unit_streams=True).db
        assert np.max(np.abs(const - ramp)) > 1.0

    def test_same_seed_identical(self):
        cfg = GeneratorConfig(**SMALL)
        g1, g2 = record_rng(9, 4), record_rng(9, 4)
        a = synthesize_edf(draw_valid_parameters(3, cfg, g1), cfg, g1).db
        b = synthesize_edf(draw_valid_parameters(3, cfg, g2), cfg, g2).db
        np.testing.assert_array_equal(a, b)

    def test_record_consistency_with_ground_truth(self):
        # full 10 s records: shorter EDFs carry larger realization fluctuations
        cfg = GeneratorConfig(sample_rate=16000.0)
        n = retained_length(100)
        ok = 0
        for i in range(150):
            g = record_rng(5, i)
            p = draw_valid_parameters(1 + i % 3, cfg, g)
            rec = synthesize_edf(p, cfg, g)
            model = to_decibel(model_on_record_grid(p, cfg))
            ok += np.mean(np.abs(rec.db[:n] - (model[:n] - model[0]))) < 1.0
        assert ok >= 0.95 * 150


class TestDataset:
    def _generate(self, tmp_path, name="d.bin", **kw):
        cfg = GeneratorConfig(count=kw.pop("count", 30), seed=kw.pop("seed", 3), **SMALL, **kw)
        return cfg, generate_dataset(cfg, tmp_path / name)

    def test_counts_and_round_trip(self, tmp_path):
        cfg, summary = self._generate(tmp_path)
        assert summary["counts"] == {"1": 10, "2": 10, "3": 10}
        ds = load_dataset(tmp_path / "d.bin")
        assert len(ds) == 30
        np.testing.assert_array_equal(np.bincount(ds.orders), [0, 10, 10, 10])
        assert ds.norm_factor == pytest.approx(np.max(np.abs(ds.db)))
        for i in range(30):
            p = ds.params(i)
            assert p.amplitudes.sum() == pytest.approx(1.0, abs=1e-6)
            assert np.all(ds.decay_times[i, p.order:] == 0)

    def test_record_matches_direct_synthesis(self, tmp_path):
        cfg, _ = self._generate(tmp_path)
        ds = load_dataset(tmp_path / "d.bin")
        i = 17
        g = record_rng(cfg.seed, i)
        p = draw_valid_parameters(2, cfg, g)
        rec = synthesize_edf(p, cfg, g)
        np.testing.assert_array_equal(ds.db[i], rec.db.astype(np.float32))
        np.testing.assert_array_equal(ds.decay_times[i, :2], p.decay_times.astype(np.float32))

    def test_file_size_matches_header(self, tmp_path):
        self._generate(tmp_path)
        raw = (tmp_path / "d.bin").read_bytes()
        (size,) = struct.unpack("<I", raw[:4])
        header = json.loads(raw[4:4 + size])
        assert len(raw) - 4 - size == header["record_count"] * header["record_floats"] * 4
        assert "PCG64" in header["rng"]

    def test_deterministic_bytes(self, tmp_path):
        self._generate(tmp_path, "a.bin")
        self._generate(tmp_path, "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_workers_do_not_change_file(self, tmp_path):
        cfg = GeneratorConfig(count=6, seed=1, **SMALL)
        generate_dataset(cfg, tmp_path / "serial.bin")
        generate_dataset(cfg, tmp_path / "pool.bin", workers=2)
        assert (tmp_path / "serial.bin").read_bytes() == (tmp_path / "pool.bin").read_bytes()

    @pytest.mark.parametrize("count", [0, 10])
    def test_bad_count(self, tmp_path, count):
        with pytest.raises(ValueError):
            generate_dataset(GeneratorConfig(count=count, **SMALL), tmp_path / "x.bin")

    def test_truncated(self, tmp_path):
        self._generate(tmp_path)
        raw = (tmp_path / "d.bin").read_bytes()
        (tmp_path / "t.bin").write_bytes(raw[:-10])
        with pytest.raises(FormatError):
            load_dataset(tmp_path / "t.bin")

    def test_not_a_dataset(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"\x02\x00\x00\x00{}")
        with pytest.raises(FormatError):
            load_dataset(tmp_path / "x.bin")


class TestEdfSet:
    def test_ground_truth_on_own_grid(self):
        cfg = GeneratorConfig(count=3, seed=2, **SMALL)
        items = make_edf_set(3, cfg)
        assert [it.params.order for it in items] == [1, 2, 3]
        for it in items:
            assert it.edf.length == pytest.approx(2000, rel=0.01)
            assert it.edf.duration == pytest.approx(cfg.t_edf)
            assert it.edf.samples[0] == pytest.approx(1.0)
            # noise scaled from the M-point grid to the EDF's own length
            assert it.params.noise * it.edf.length == pytest.approx(
                draw_valid_parameters(it.params.order, cfg, record_rng(2, int(it.source[-5:]))).noise * 100)
        assert len({it.source for it in items}) == 3

    def test_record_length_in_seconds(self):
        assert math.isclose(GeneratorConfig(**SMALL).length, 32000)
