import csv
import json

import numpy as np
import pytest
from scipy.io import wavfile

from decayfit.edf import OCTAVE_CENTERS, DecayParameters, EnergyDecayFunction, evaluate_decay_model, to_decibel
from decayfit.errors import FormatError, InvalidBand
from decayfit.evalbench import (
    Engine,
    band_edfs,
    benchmark,
    evaluate,
    load_rir,
    quantile,
    run_engine,
    write_plot_csv,
    write_summary_csv,
    write_summary_json,
    write_timing_csv,
)
from decayfit.net.model import NetworkTopology, init_parameters


def model_edf(T, N0=1e-8, length=2000, fs=200.0):
    d = evaluate_decay_model(DecayParameters(1, [T], [1.0], N0), length, fs)
    return EnergyDecayFunction(d / d[0], fs)


@pytest.fixture(scope="module")
def random_net():
    return init_parameters(NetworkTopology(), np.random.default_rng(0), norm_factor=140.0,
                           output_bias={"t": 4.0, "a": 0.9, "n": 6.0})


class TestLoadRir:
    def test_int16_scaling(self, tmp_path):
        wavfile.write(tmp_path / "a.wav", 16000, np.full(100, 16384, dtype=np.int16))
        x, fs = load_rir(tmp_path / "a.wav")
        assert fs == 16000.0
        np.testing.assert_array_equal(x, 0.5)

    def test_first_of_four_channels(self, tmp_path):
        data = np.arange(4 * 250, dtype=np.int16).reshape(250, 4)
        wavfile.write(tmp_path / "m.wav", 8000, data)
        x, _ = load_rir(tmp_path / "m.wav")
        assert x.shape == (250,)
        np.testing.assert_array_equal(x * 32768, data[:, 0])

    @pytest.mark.parametrize("dtype, scale", [(np.int16, 2.0 ** 15), (np.int32, 2.0 ** 31), (np.float32, 1.0)])
    def test_round_trip(self, tmp_path, dtype, scale):
        g = np.random.default_rng(0)
        if dtype is np.float32:
            data = g.uniform(-1, 1, 500).astype(np.float32)
        else:
            data = g.integers(np.iinfo(dtype).min, np.iinfo(dtype).max, 500, dtype=dtype)
        wavfile.write(tmp_path / "r.wav", 44100, data)
        x, _ = load_rir(tmp_path / "r.wav")
        np.testing.assert_array_equal(x * scale, data.astype(np.float64))

    def test_24_bit(self, tmp_path):
        # scipy returns 24-bit PCM left-justified in int32
        samples = np.array([0, 1, -1, 2 ** 23 - 1, -2 ** 23, 4194304], dtype=np.int32)
        raw = b"".join(int(v).to_bytes(3, "little", signed=True) for v in samples)
        header = (b"RIFF" + (36 + len(raw)).to_bytes(4, "little") + b"WAVEfmt "
                  + (16).to_bytes(4, "little") + (1).to_bytes(2, "little") + (1).to_bytes(2, "little")
                  + (48000).to_bytes(4, "little") + (48000 * 3).to_bytes(4, "little")
                  + (3).to_bytes(2, "little") + (24).to_bytes(2, "little") + b"data" + len(raw).to_bytes(4, "little"))
        (tmp_path / "p.wav").write_bytes(header + raw)
        x, fs = load_rir(tmp_path / "p.wav")
        np.testing.assert_array_equal(x * 2.0 ** 23, samples.astype(np.float64))
        assert x[5] == 0.5

    def test_trim(self, tmp_path):
        wavfile.write(tmp_path / "t.wav", 1000, np.ones(1000, dtype=np.float32))
        x, _ = load_rir(tmp_path / "t.wav", trim_end=0.1)
        assert x.shape == (900,)

    def test_not_wav(self, tmp_path):
        (tmp_path / "x.wav").write_bytes(b"not a wave file at all")
        with pytest.raises(FormatError):
            load_rir(tmp_path / "x.wav")


class TestBands:
    def test_noise_burst(self):
        x = np.random.default_rng(0).standard_normal(16000)
        edfs = band_edfs(x, 16000.0)
        assert len(edfs) == 6
        for e in edfs:
            assert e.samples[0] == pytest.approx(1.0)
        again = band_edfs(x, 16000.0)
        for a, b in zip(edfs, again):
            np.testing.assert_array_equal(a.samples, b.samples)

    def test_band_limited_input(self):
        fs = 16000.0
        t = np.arange(int(2 * fs)) / fs
        env = np.exp(-6.9 * t / 0.5)  # T = 0.5 s
        g = np.random.default_rng(1)
        x = np.sin(2 * np.pi * 1000 * t) * env + 1e-3 * g.standard_normal(t.size)
        edfs = dict(zip(OCTAVE_CENTERS, band_edfs(x, fs)))
        broad = to_decibel(np.cumsum((x * x)[::-1])[::-1] / np.sum(x * x))
        k1, k2 = int(0.125 * fs), int(fs)
        # the 1 kHz band follows the broadband envelope while the decay dominates
        assert to_decibel(edfs[1000].samples)[k1] == pytest.approx(broad[k1], abs=1.0)
        assert to_decibel(edfs[1000].samples)[k1] - to_decibel(edfs[1000].samples)[k2] > 30.0
        # remote bands only see noise after the onset: an almost flat ramp
        for fc in (125, 250, 4000):
            db = to_decibel(edfs[fc].samples)
            assert db[k1] - db[k2] < 5.0

    def test_low_rate(self):
        with pytest.raises(InvalidBand):
            band_edfs(np.ones(100), 8000.0)


class TestQuantile:
    def test_definition(self):
        assert quantile(np.arange(1, 101), 0.99) == pytest.approx(99.01, abs=1e-12)

    def test_identical_inputs(self):
        v = np.full(17, 0.3)
        assert quantile(v, 0.5) == quantile(v, 0.99)


class TestEvaluate:
    edfs = [model_edf(T) for T in (0.5, 0.8, 1.3, 2.0, 2.7)]

    def test_median_against_sort_oracle(self):
        s = evaluate([Engine("regression-std"), Engine("bayes")], self.edfs)
        for engine in ("regression-std", "bayes"):
            vals = sorted(it.mse_db for it in s.items if it.engine == engine)
            n = len(vals)
            ref = vals[n // 2] if n % 2 else 0.5 * (vals[n // 2 - 1] + vals[n // 2])
            assert abs(s.median(engine) - ref) <= 1e-12
            assert s.median(engine) <= s.q99(engine)

    def test_every_edf_once(self):
        edfs = self.edfs + [EnergyDecayFunction(np.ones(100), 10.0)]  # no samples below -5 dB
        s = evaluate(Engine("regression-std"), edfs)
        assert [it.source for it in s.items] == [f"edf-{i:05d}" for i in range(6)]
        assert len(s.failures()) == 1 and "DegenerateInput" in s.failures()[0][2]
        assert s.rows()[0]["n"] == 5

    def test_flagging(self):
        s = evaluate(Engine("regression-std"), self.edfs, threshold=-1.0)
        assert len(s.flagged) == 5
        assert s.rows()[0]["n"] == 5  # flagged items stay in the aggregates
        s = evaluate(Engine("regression-std"), self.edfs, threshold=-1.0, exclude_flagged=True)
        assert s.rows()[0]["n"] == 0

    def test_bands_in_rows(self):
        s = evaluate(Engine("regression-std"), self.edfs[:4], bands=[125, 125, 1000, 1000])
        rows = s.rows()
        assert [r["band"] for r in rows] == ["all", "125", "1000"]
        assert [r["n"] for r in rows] == [4, 2, 2]

    def test_deterministic_and_pure(self):
        before = [e.samples.copy() for e in self.edfs]
        a = evaluate(Engine("bayes", seed=3), self.edfs).rows()
        b = evaluate(Engine("bayes", seed=3), self.edfs).rows()
        assert a == b
        for e, x in zip(self.edfs, before):
            np.testing.assert_array_equal(e.samples, x)

    def test_workers(self):
        edfs = self.edfs * 3
        engine = Engine("bayes", seed=1)
        serial = run_engine(engine, edfs)
        pooled = run_engine(engine, edfs, workers=2, chunk=4)
        assert [r.params.to_dict() for r in serial] == [r.params.to_dict() for r in pooled]

    def test_net_engine(self, random_net):
        s = evaluate(Engine("net", weights=random_net), self.edfs)
        assert len(s.values("net")) == 5

    def test_unknown_engine(self):
        with pytest.raises(ValueError):
            Engine("ransac")

    def test_writers(self, tmp_path):
        s = evaluate(Engine("regression-std"), self.edfs)
        write_summary_csv(s, tmp_path / "s.csv")
        write_summary_json(s, tmp_path / "s.json")
        write_plot_csv(s, tmp_path / "p.csv")
        rows = list(csv.DictReader(open(tmp_path / "s.csv")))
        assert list(rows[0]) == ["engine", "band", "n", "median_db2", "q99_db2", "flagged_count"]
        assert float(rows[0]["median_db2"]) == s.median("regression-std")
        doc = json.loads((tmp_path / "s.json").read_text())
        assert doc["summary"][0]["n"] == 5
        plot = list(csv.DictReader(open(tmp_path / "p.csv")))
        assert len(plot) == 5 and list(plot[0]) == ["edf_id", "engine", "mse_db"]


class TestBenchmark:
    def test_rows(self, tmp_path):
        edfs = [model_edf(1.0)] * 3
        rows = benchmark(Engine("regression-std"), edfs, repeats=2)
        assert rows[0]["n_edfs"] == 3 and rows[0]["repeats"] == 2
        assert rows[0]["per_edf_us"] == pytest.approx(rows[0]["mean_s"] / 3 * 1e6)
        write_timing_csv(rows, tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text().startswith("engine,n_edfs,repeats,mean_s,per_edf_us\n")

    def test_invalid_repeats(self):
        with pytest.raises(ValueError):
            benchmark(Engine("regression-std"), [model_edf(1.0)], repeats=0)

    def test_net_scales_linearly(self, random_net):
        edfs = [model_edf(0.5 + 0.01 * i) for i in range(500)]
        engine = Engine("net", weights=random_net)
        t1 = min(benchmark(engine, edfs, repeats=3)[0]["mean_s"] for _ in range(3))
        t2 = min(benchmark(engine, edfs * 2, repeats=3)[0]["mean_s"] for _ in range(3))
        assert 2 * 0.7 <= t2 / t1 <= 2 * 1.3
