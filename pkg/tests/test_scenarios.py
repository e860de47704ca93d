import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trafficgcn.assignment import FwConfig, frank_wolfe_solve
from trafficgcn.scenarios import (DatasetIntegrityError, DatasetLoadError, ScenarioKind,
                                  calibrate_factor_ranges, classify_ratios, classify_scenario,
                                  generate_dataset, quantize, read_dataset, scale_demand, stack,
                                  write_dataset)

from conftest import make_network


@pytest.fixture(scope="module")
def calibration(sioux_net, sioux_trips):
    return calibrate_factor_ranges(sioux_net, sioux_trips, FwConfig())


@pytest.fixture(scope="module")
def small_ds(sioux_net, sioux_trips, calibration):
    return generate_dataset(sioux_net, sioux_trips, 3, seed=11, calibration=calibration)


class TestScaleDemand:
    def test_identity(self, sioux_trips):
        np.testing.assert_array_equal(scale_demand(sioux_trips, 1.0), sioux_trips)

    def test_half(self):
        assert scale_demand(np.array([[0, 100.0], [0, 0]]), 0.5)[0, 1] == 50

    @pytest.mark.parametrize("factor", [0.0, -0.1])
    def test_nonpositive_rejected(self, factor):
        with pytest.raises(ValueError):
            scale_demand(np.zeros((2, 2)), factor)

    @given(st.floats(1e-3, 10))
    def test_row_sums_linear(self, sioux_trips, factor):
        np.testing.assert_allclose(scale_demand(sioux_trips, factor).sum(axis=1),
                                   factor * sioux_trips.sum(axis=1), rtol=1e-13)


class TestClassify:
    @pytest.mark.parametrize("ratio,kind", [(0.1, ScenarioKind.UNCONGESTED),
                                            (1.5, ScenarioKind.CONGESTED),
                                            (0.6, ScenarioKind.MODERATE)])
    def test_uniform_profiles(self, ratio, kind):
        assert classify_ratios(np.full(76, ratio)) == (kind, False)

    def test_unmatched_profile_warns(self):
        r = np.r_[np.full(50, 0.3), np.full(26, 0.95)]
        assert classify_ratios(r) == (ScenarioKind.MODERATE, True)

    def test_on_network(self):
        net = make_network(2, [(0, 1, 1), (1, 0, 1)], cap=100.0)
        assert classify_scenario(net, np.array([150.0, 150.0])) is ScenarioKind.CONGESTED

    @given(st.lists(st.floats(0, 5), min_size=1, max_size=80))
    def test_total_and_pure(self, ratios):
        a = classify_ratios(np.array(ratios))
        assert a == classify_ratios(np.array(ratios))
        assert a[0] in ScenarioKind


class TestQuantize:
    @given(st.floats(0, 1e7, allow_nan=False))
    def test_text_round_trip(self, v):
        q = quantize(np.array([v]))[0]
        assert float("%.12g" % q) == q
        assert q == pytest.approx(v, rel=1e-11, abs=1e-300)


class TestCalibration:
    def test_ranges_classify(self, sioux_net, sioux_trips, calibration):
        ranges, sweep = calibration
        assert len(sweep) >= 10
        for kind, rng in ranges.items():
            assert rng is not None and rng[0] <= rng[1]
            for f in (rng[0], rng[1]):
                res = frank_wolfe_solve(sioux_net, quantize(sioux_trips * f))
                assert classify_ratios(res.flows / sioux_net.capacities) == (ScenarioKind(kind), False)


class TestGenerate:
    def test_counts_and_labels(self, small_ds):
        assert small_ds.manifest.counts == {"uncongested": 3, "moderate": 3, "congested": 3}
        for s in small_ds.samples:
            assert s.relative_gap <= 1e-4
            assert 0 < s.scale_factor <= 1
            assert not s.class_warning
            assert s.sample_id.startswith(s.scenario.value)

    def test_labels_are_solutions(self, sioux_net, sioux_trips, small_ds):
        s = small_ds.samples[4]
        np.testing.assert_array_equal(s.demand, quantize(sioux_trips * s.scale_factor))
        res = frank_wolfe_solve(sioux_net, s.demand)
        np.testing.assert_array_equal(s.flows, quantize(res.flows))

    def test_deterministic_and_worker_independent(self, sioux_net, sioux_trips, calibration, small_ds):
        again = generate_dataset(sioux_net, sioux_trips, 3, seed=11, calibration=calibration,
                                 workers=2)
        assert again.samples == small_ds.samples
        assert again.manifest.content_digest() == small_ds.manifest.content_digest()

    def test_seed_changes_draws(self, sioux_net, sioux_trips, calibration, small_ds):
        other = generate_dataset(sioux_net, sioux_trips, 3, seed=12, calibration=calibration)
        assert [s.scale_factor for s in other.samples] != [s.scale_factor for s in small_ds.samples]

    def test_rejects_empty(self, sioux_net, sioux_trips, calibration):
        with pytest.raises(ValueError):
            generate_dataset(sioux_net, sioux_trips, 0, seed=1, calibration=calibration)

    def test_unreachable_regime_warns(self, sioux_net, sioux_trips):
        # a range too narrow to produce congestion leaves no congested sub-range
        ds = generate_dataset(sioux_net, sioux_trips, 1, seed=3, scenarios=["congested"],
                              factor_range=(0.1, 0.3))
        assert ds.manifest.factor_ranges["congested"] is None
        assert any("no calibrated factor range" in w for w in ds.manifest.warnings)
        assert ds.samples[0].class_warning


class TestStorage:
    def test_round_trip(self, sioux_net, small_ds, tmp_path):
        write_dataset(small_ds, tmp_path / "ds")
        back = read_dataset(tmp_path / "ds", sioux_net)
        assert back.samples == small_ds.samples
        assert back.manifest.content_digest() == small_ds.manifest.content_digest()

    def test_byte_identical_rewrite(self, sioux_net, small_ds, tmp_path):
        write_dataset(small_ds, tmp_path / "a")
        write_dataset(read_dataset(tmp_path / "a"), tmp_path / "b")
        for sub in ("od", "flows"):
            for f in sorted((tmp_path / "a" / sub).iterdir()):
                assert f.read_bytes() == (tmp_path / "b" / sub / f.name).read_bytes()
        assert (tmp_path / "a" / "manifest.json").read_bytes() == \
            (tmp_path / "b" / "manifest.json").read_bytes()

    def test_layout(self, small_ds, tmp_path):
        write_dataset(small_ds, tmp_path / "ds")
        s = small_ds.samples[0]
        od = (tmp_path / "ds" / "od" / f"{s.sample_id}.csv").read_text().splitlines()
        assert len(od) == 24 and all(len(r.split(",")) == 24 for r in od)
        fl = (tmp_path / "ds" / "flows" / f"{s.sample_id}.csv").read_text().splitlines()
        assert fl[0] == "link_id,flow" and len(fl) == 77

    def test_missing_flow_file(self, small_ds, tmp_path):
        write_dataset(small_ds, tmp_path / "ds")
        next((tmp_path / "ds" / "flows").iterdir()).unlink()
        with pytest.raises(DatasetIntegrityError, match="files"):
            read_dataset(tmp_path / "ds")

    def test_nan_cell_names_file_and_row(self, small_ds, tmp_path):
        write_dataset(small_ds, tmp_path / "ds")
        path = tmp_path / "ds" / "flows" / f"{small_ds.samples[0].sample_id}.csv"
        lines = path.read_text().splitlines()
        lines[3] = "2,NaN"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetLoadError, match=rf"{path.name}: row 4"):
            read_dataset(tmp_path / "ds")

    def test_edited_value_fails_digest(self, small_ds, tmp_path):
        write_dataset(small_ds, tmp_path / "ds")
        path = tmp_path / "ds" / "flows" / f"{small_ds.samples[0].sample_id}.csv"
        lines = path.read_text().splitlines()
        lines[3] = "2,1.5"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetIntegrityError, match="digest"):
            read_dataset(tmp_path / "ds")

    def test_tampered_manifest(self, small_ds, tmp_path):
        write_dataset(small_ds, tmp_path / "ds")
        m = tmp_path / "ds" / "manifest.json"
        doc = json.loads(m.read_text())
        doc["seed"] = 999
        m.write_text(json.dumps(doc))
        with pytest.raises(DatasetIntegrityError, match="manifest"):
            read_dataset(tmp_path / "ds")

    def test_other_network(self, small_ds, tmp_path):
        write_dataset(small_ds, tmp_path / "ds")
        net = make_network(2, [(0, 1, 1), (1, 0, 1)])
        with pytest.raises(DatasetIntegrityError, match="another network"):
            read_dataset(tmp_path / "ds", net)

    def test_timestamp_outside_digest(self, small_ds):
        d = small_ds.manifest.content_digest()
        old = small_ds.manifest.created
        small_ds.manifest.created = "1999-01-01T00:00:00Z"
        try:
            assert small_ds.manifest.content_digest() == d
        finally:
            small_ds.manifest.created = old

    def test_stack(self, small_ds):
        x, f = stack(small_ds.samples)
        assert x.shape == (9, 24, 24) and f.shape == (9, 76)
