import json
from pathlib import Path

import numpy as np
import pytest

import disco

ROOT = Path(__file__).resolve().parents[2]
SPEC = {
    "taskId": "py",
    "model": {"inputDim": 2, "hiddenDim": 4, "outputDim": 2, "seed": 1},
    "training": {"batchSize": 8, "epochsPerRound": 3, "learningRate": 0.3, "shuffleSeed": 1},
    "totalRounds": 2,
}


def write_csv(path, rows):
    path.write_text("a,b,label\n" + "".join(f"{a},{b},{y}\n" for a, b, y in rows))


def blob_rows(n=80):
    rng = np.random.default_rng(3)
    rows = []
    for i in range(n):
        y = i % 2
        a, b = rng.normal(2.0 * y, 0.2, size=2)
        rows.append((a, b, y))
    return rows


def test_fedavg_matches_numpy_weighted_mean():
    rng = np.random.default_rng(0)
    updates = [rng.normal(size=17) for _ in range(4)]
    counts = [5, 100, 31, 2]
    expected = sum(c * u for c, u in zip(counts, updates)) / sum(counts)
    np.testing.assert_allclose(disco.fedavg(updates, counts), expected, rtol=0, atol=1e-13)
    np.testing.assert_allclose(disco.fedavg(updates, counts, uniform=True), np.mean(updates, axis=0), atol=1e-13)


def test_load_csv_min_max_scales(tmp_path):
    rows = blob_rows()
    write_csv(tmp_path / "d.csv", rows)
    d = disco.load_csv(str(tmp_path / "d.csv"))
    raw = np.array([[a, b] for a, b, _ in rows])
    expected = (raw - raw.min(axis=0)) / (raw.max(axis=0) - raw.min(axis=0))
    np.testing.assert_allclose(d["features"], expected, atol=1e-12)
    assert list(d["labels"]) == [y for _, _, y in rows]
    assert d["num_classes"] == 2


def test_train_solo_learns_separable_blobs(tmp_path):
    write_csv(tmp_path / "d.csv", blob_rows())
    params, metrics = disco.train_solo(json.dumps(SPEC), str(tmp_path / "d.csv"))
    assert params.shape == (2 * 4 + 4 + 4 * 2 + 2,)
    assert len(metrics) == SPEC["totalRounds"] * SPEC["training"]["epochsPerRound"]
    assert metrics[-1][2] > 0.95


def test_smoke_scenario_runs():
    report, csv = disco.run_scenario(ROOT / "scenarios" / "smoke-2client.json")
    assert report["finished"]
    assert len(report["aggregations"]) == 10
    assert csv.splitlines()[0].startswith("kind,")


def test_invalid_spec_raises_with_code():
    bad = dict(SPEC, totalRounds=0)
    with pytest.raises(disco.DiscoError, match="invalid-spec.*totalRounds"):
        disco.normalize_task_spec(bad)
    assert disco.normalize_task_spec(SPEC)["taskId"] == "py"
