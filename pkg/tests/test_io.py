import json

import numpy as np
import pytest

from remtrack import io as rio
from remtrack.autodiff import ParameterStore, Tensor
from remtrack.geometry import BoundingBox
from remtrack.simulator import ScenarioConfig, generate


class TestParseMotCsv:
    def test_single_gt_row(self):
        records = rio.parse_mot_csv("1,1,10,20,30,60,1,1,1.0\n")
        assert len(records) == 1
        rec = records[0]
        assert (rec.frame, rec.track_id) == (1, 1)
        assert rec.center_box() == BoundingBox(25, 50, 30, 60)
        assert rec.cls == 1 and rec.visibility == 1.0

    def test_empty_input(self):
        assert rio.parse_mot_csv("") == []
        assert rio.parse_mot_csv("\n\n") == []

    def test_seven_field_detection_variant(self):
        records = rio.parse_mot_csv("3,-1,5,5,10,10,0.9\n")
        rec = records[0]
        assert rec.track_id == -1 and rec.conf == 0.9
        assert rec.cls == -1 and rec.visibility is None

    def test_ten_field_placeholder_variant(self):
        records = rio.parse_mot_csv("2,7,0,0,4,4,1,-1,-1,-1\n")
        rec = records[0]
        assert rec.cls == -1 and rec.visibility is None

    def test_sorted_by_frame_then_id(self):
        text = "2,1,0,0,4,4,1\n1,9,0,0,4,4,1\n1,2,0,0,4,4,1\n"
        records = rio.parse_mot_csv(text)
        assert [(r.frame, r.track_id) for r in records] == [(1, 2), (1, 9), (2, 1)]

    def test_malformed_line_reports_number(self):
        with pytest.raises(ValueError, match="line 2"):
            rio.parse_mot_csv("1,1,0,0,4,4,1\n1,1,0,0\n")

    def test_non_numeric_field_reports_number(self):
        with pytest.raises(ValueError, match="line 1"):
            rio.parse_mot_csv("1,1,xx,0,4,4,1\n")

    def test_invalid_geometry_reports_number(self):
        with pytest.raises(ValueError, match="line 1"):
            rio.parse_mot_csv("1,1,0,0,-4,4,1\n")
        with pytest.raises(ValueError, match="line 1"):
            rio.parse_mot_csv("0,1,0,0,4,4,1\n")


class TestWriteResultsCsv:
    def test_round_trip(self):
        tracks = [
            [(0, BoundingBox(10.5, 20.25, 4.0, 8.0)), (1, BoundingBox(1.0, 2.0, 3.0, 4.0))],
            [(0, BoundingBox(11.0, 20.5, 4.0, 8.0))],
        ]
        text = rio.write_results_csv(tracks)
        records = rio.parse_mot_csv(text)
        frames = rio.records_to_frames(records)
        assert frames == tracks

    def test_golden_single_row(self):
        tracks = [[(3, BoundingBox(10.0, 20.0, 4.0, 8.0))]]
        assert rio.write_results_csv(tracks) == "1,3,8.000000,16.000000,4.000000,8.000000,1,-1,-1,-1\n"

    def test_empty_tracks(self):
        assert rio.write_results_csv([]) == ""
        assert rio.write_results_csv([[], []]) == ""

    def test_gt_csv_round_trip(self):
        seq = generate(ScenarioConfig(n_frames=4, seed=1))
        text = rio.write_gt_csv(seq)
        records = rio.parse_mot_csv(text)
        assert len(records) == sum(len(f) for f in seq.frames)
        for rec in records:
            assert rec.cls == 1 and rec.visibility is not None


class TestScenarioJsonl:
    def test_round_trip_bitwise(self):
        seq = generate(ScenarioConfig(n_frames=12, n_groups=3, seed=6, jitter_std=0.05))
        text = rio.write_scenario_jsonl(seq)
        back = rio.read_scenario_jsonl(text)
        assert back.frames == seq.frames
        assert back.group_of == seq.group_of
        assert back.birth == seq.birth and back.death == seq.death

    def test_large_round_trip_bitwise(self):
        seq = generate(
            ScenarioConfig(n_frames=100, n_groups=4, group_size_min=2, group_size_max=3, seed=8, jitter_std=0.1)
        )
        assert sum(len(f) for f in seq.frames) >= 1000
        assert rio.read_scenario_jsonl(rio.write_scenario_jsonl(seq)).frames == seq.frames

    def test_missing_field_reports_index(self):
        good = json.dumps({"t": 0, "id": 1, "cx": 0.0, "cy": 0.0, "w": 1.0, "h": 1.0, "vis": 1.0, "group": 0})
        bad = json.dumps({"t": 1, "id": 1, "cx": 0.0})
        with pytest.raises(ValueError, match="record 1.*missing"):
            rio.read_scenario_jsonl(good + "\n" + bad + "\n")

    def test_invalid_json_reports_index(self):
        with pytest.raises(ValueError, match="record 0"):
            rio.read_scenario_jsonl("{not json}\n")

    def test_invalid_visibility_rejected(self):
        bad = json.dumps({"t": 0, "id": 1, "cx": 0.0, "cy": 0.0, "w": 1.0, "h": 1.0, "vis": 1.5, "group": 0})
        with pytest.raises(ValueError, match="visibility"):
            rio.read_scenario_jsonl(bad + "\n")

    def test_empty_text(self):
        seq = rio.read_scenario_jsonl("")
        assert seq.n_frames == 0 and seq.frames == []


class TestCheckpoints:
    def make_store(self):
        store = ParameterStore()
        rng = np.random.default_rng(4)
        store.register("a.w", Tensor(rng.normal(size=(3, 2))))
        store.register("a.b", Tensor(rng.normal(size=3)))
        return store

    def test_round_trip(self):
        store = self.make_store()
        text = rio.checkpoint_to_json(store, {"F": 3, "F_a": 2})
        dims, params = rio.load_checkpoint_json(text)
        assert dims == {"F": 3, "F_a": 2}
        fresh = self.make_store()
        for t in fresh._params.values():
            t.data[:] = 0.0
        rio.restore_store(fresh, params)
        for name in store.names():
            assert np.array_equal(fresh[name].data, store[name].data)

    def test_version_checked(self):
        doc = json.loads(rio.checkpoint_to_json(self.make_store(), {"F": 1}))
        doc["version"] = 99
        with pytest.raises(ValueError, match="version"):
            rio.load_checkpoint_json(json.dumps(doc))

    def test_shape_mismatch_rejected(self):
        store = self.make_store()
        text = rio.checkpoint_to_json(store, {"F": 3})
        _, params = rio.load_checkpoint_json(text)
        params["a.w"] = params["a.w"].reshape(2, 3)
        with pytest.raises(ValueError, match="shape"):
            rio.restore_store(store, params)

    def test_name_mismatch_rejected(self):
        store = self.make_store()
        _, params = rio.load_checkpoint_json(rio.checkpoint_to_json(store, {}))
        del params["a.b"]
        with pytest.raises(ValueError, match="mismatch"):
            rio.restore_store(store, params)

    def test_corrupt_length_rejected(self):
        doc = json.loads(rio.checkpoint_to_json(self.make_store(), {}))
        doc["params"]["a.b"]["data"] = [1.0]
        with pytest.raises(ValueError, match="length"):
            rio.load_checkpoint_json(json.dumps(doc))


class TestReports:
    def test_report_json_and_curve(self, rng):
        from remtrack.metrics import evaluate

        b = BoundingBox(1, 1, 2, 2)
        gt = [[(0, b)] for _ in range(3)]
        report = evaluate(gt, gt)
        doc = json.loads(rio.report_to_json(report))
        assert doc["mota"] == 1.0 and doc["hota"] == 1.0
        assert len(doc["per_alpha"]) == 19
        curve = rio.hota_curve_csv(report)
        lines = curve.strip().splitlines()
        assert lines[0] == "alpha,deta,assa,hota"
        assert len(lines) == 20

    def test_loss_curve_csv(self):
        text = rio.loss_curve_csv([1.5, 0.75])
        assert text.splitlines() == ["epoch,loss", "0,1.5", "1,0.75"]

    def test_relation_records_jsonl(self):
        text = rio.relation_records_jsonl([(0, 1, 2, 0.5)])
        assert json.loads(text) == {"t": 0, "i": 1, "j": 2, "R": 0.5}
