import json

import numpy as np
import pytest

import iclmol

OXIME = json.dumps(
    {
        "id": "acetaldoxime",
        "atoms": [[6, [0, 0, 0]], [6, [1.5, 0, 0]], [7, [2.8, 0.6, 0]], [8, [3.9, 0, 0]]],
        "bonds": [[0, 1, 1], [1, 2, 2], [2, 3, 1]],
        "label_u0": -4.5,
    }
)


def test_molecule_round_trip():
    m = iclmol.Molecule.from_json(OXIME)
    assert m.id == "acetaldoxime"
    assert m.elements == [6, 6, 7, 8]
    assert m.positions.shape == (4, 3)
    assert m.heavy_atom_count == 4
    assert iclmol.Molecule.from_json(m.to_json()).label_u0 == -4.5
    assert iclmol.classify_ood(m) == "oxime"


def test_errors_map_to_python_exceptions():
    with pytest.raises(iclmol.ParseError):
        iclmol.Molecule.from_json("{not json")
    bad = json.loads(OXIME)
    bad["bonds"].append([0, 9, 1])
    with pytest.raises(iclmol.DataError):
        iclmol.Molecule.from_json(json.dumps(bad))
    with pytest.raises(iclmol.DimensionError):
        iclmol.fit_minnorm(np.eye(2), np.ones(3))


def test_fit_minnorm_matches_numpy():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(9, 40))
    y = rng.normal(size=9)
    w, b = iclmol.fit_minnorm(x, y)
    xc = x - x.mean(axis=0)
    w_ref = np.linalg.pinv(xc) @ (y - y.mean())
    np.testing.assert_allclose(w, w_ref, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(x @ w + b, y, atol=1e-8)


def test_curriculum_weights():
    assert iclmol.curriculum_weights(0, 10) == [1.0] * 10
    assert iclmol.curriculum_weights(10**6, 4) == [0.0, 0.0, 0.0, 1.0]


def test_cli_and_mining(tmp_path):
    code, out, _ = iclmol.run_cli(
        ["gen-synthetic", "--patterns", "4", "--per-pattern", "20", "--out", str(tmp_path)]
    )
    assert code == 0
    molecules = iclmol.read_dataset(tmp_path / "dataset.jsonl")
    assert len(molecules) == 80
    patterns = iclmol.mine_patterns(molecules, min_support=10, max_nodes=3)
    assert patterns and all(len(p["support"]) >= 10 for p in patterns)
    code, out, _ = iclmol.run_cli(
        ["split-ood", "--dataset", str(tmp_path / "dataset.jsonl"), "--out", str(tmp_path / "split")]
    )
    assert code == 0
    counts = dict(line.split() for line in out.splitlines())
    assert sum(int(v) for v in counts.values()) == 80
    assert iclmol.run_cli(["no-such-command"])[0] == 1
