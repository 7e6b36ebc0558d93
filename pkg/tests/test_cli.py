import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l1iot.cli import RunConfig, UsageError, main
from l1iot.eot import QuadraticBasis, center_features, loss


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def write_samples(path, x, y):
    header = [f"x{i}" for i in range(x.shape[1])] + [f"y{j}" for j in range(y.shape[1])]
    rows = [",".join(header)] + [",".join(repr(float(v)) for v in row) for row in np.hstack([x, y])]
    path.write_text("\n".join(rows) + "\n")


def samples(n=60, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2))
    return x, 0.7 * x + rng.standard_normal((n, 2))


def test_certificate_row_count_and_margins(tmp_path, capsys):
    out = tmp_path / "cert.csv"
    code, _, _ = run(["certificate", "--graph", "circular", "--n", "40",
                      "--eps", "0.1,1,10", "--out", str(out)], capsys)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert len(rows) == 40 * 40 * 3
    assert set(rows[0]) == {"i", "j", "d_geod", "eps", "z", "on_support"}
    margins = json.loads((tmp_path / "cert.csv.json").read_text())["margin"]
    values = [margins[k] for k in ("0.1", "1.0", "10.0")]
    assert values[0] < values[1] < values[2]


def test_certificate_is_byte_identical(tmp_path, capsys):
    outs = []
    for name in ("a.csv", "b.csv"):
        path = tmp_path / name
        assert run(["certificate", "--graph", "erdos", "--p", "0.1", "--seed", "7",
                    "--eps", "1,10", "--out", str(path)], capsys)[0] == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_solve_from_csv(tmp_path, capsys):
    x, y = samples()
    path = tmp_path / "pairs.csv"
    write_samples(path, x, y)
    code, out, _ = run(["solve", "--input", str(path), "--lambda", "0.02", "--eps", "1.0"], capsys)
    assert code == 0
    result = json.loads(out)
    A = np.array(result["A"])
    support = {tuple(p) for p in result["support"]}
    assert support == {tuple(ij) for ij in np.argwhere(np.abs(A) > 1e-8)}
    assert all(A[i, j] == v for i, j, v in result["triplets"])
    assert result["kkt_sup"] <= 1 + 1e-6
    rescored = loss(A.ravel(order="F"), center_features(QuadraticBasis(x, y)), 1.0, tol=1e-13)
    rescored += 0.02 * np.abs(A).sum()
    assert abs(rescored - result["objective"]) <= 1e-10


def test_solve_huge_lambda_gives_zero(tmp_path, capsys):
    x, y = samples()
    path = tmp_path / "pairs.csv"
    write_samples(path, x, y)
    code, out, _ = run(["solve", "--input", str(path), "--lambda", "1e6", "--eps", "1.0"], capsys)
    assert code == 0
    result = json.loads(out)
    assert np.all(np.array(result["A"]) == 0)
    assert result["support"] == []


def test_solve_from_graph_model(capsys):
    code, out, _ = run(["solve", "--graph", "circular", "--n", "3", "--samples", "300",
                        "--lambda", "0.05", "--eps", "4"], capsys)
    assert code == 0
    assert np.array(json.loads(out)["A"]).shape == (3, 3)


@pytest.mark.parametrize("body, line", [
    ("x0,y0\n1.0,2.0\n1.5\n", 3),
    ("x0,y0\n1.0,2.0\n0.5,1.0\nabc,1.0\n", 4),
    ("x0,y0\n1.0,nan\n", 2),
    ("a,b\n1.0,2.0\n", 1),
])
def test_malformed_csv_exit_code(tmp_path, capsys, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    code, _, err = run(["solve", "--input", str(path), "--lambda", "0.1"], capsys)
    assert code == 2
    assert f":{line}:" in err


def test_bad_flags_exit_two(capsys):
    with pytest.raises(SystemExit) as info:
        main(["certificate", "--graph", "hexagonal"])
    assert info.value.code == 2
    capsys.readouterr()
    assert run(["experiment", "sparsistency", "--lambda-grid", "1:2"], capsys)[0] == 2


def test_experiment_sparsistency_rows_and_determinism(tmp_path, capsys):
    argv = ["experiment", "sparsistency", "--graph", "circular", "--n", "3",
            "--eps", "1,5", "--lambda-grid", "0.5:0.01:3", "--samples", "200",
            "--seeds", "0,1", "--grad-tol", "1e-7"]
    outs = []
    for name in ("a.csv", "b.csv"):
        path = tmp_path / name
        assert run(argv + ["--out", str(path)], capsys)[0] == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    rows = list(csv.DictReader(io.StringIO(outs[0].decode())))
    assert len(rows) == 3 * 2 * 2
    assert list(rows[0]) == ["lambda", "eps", "n_samples", "seed", "support_errors",
                             "l2_error", "margin", "status"]
    summary = json.loads((tmp_path / "a.csv.json").read_text())
    assert set(summary["min_support_errors"]) == {"1.0", "5.0"}


def test_experiment_complexity_summary(tmp_path, capsys):
    path = tmp_path / "cx.csv"
    code, _, _ = run(["experiment", "complexity", "--graph", "circular", "--n", "3",
                      "--eps", "5", "--lambda", "0.05", "--samples", "100,400",
                      "--seeds", "0-1", "--grad-tol", "1e-7", "--out", str(path)], capsys)
    assert code == 0
    assert len(path.read_text().strip().splitlines()) == 1 + 4
    summary = json.loads((tmp_path / "cx.csv.json").read_text())
    assert np.isfinite(summary["slope"])


def test_limits_lasso_gap(capsys):
    code, out, _ = run(["limits", "lasso", "--graph", "circular", "--n", "4",
                        "--eps", "10,100,1000", "--lambda0", "0.1"], capsys)
    assert code == 0
    rows = json.loads(out)["rows"]
    assert [r["eps"] for r in rows] == [10.0, 100.0, 1000.0]
    assert rows[-1]["A_gap"] <= 1e-2
    assert rows[-1]["z_gap"] <= 0.02
    assert all(a["A_gap"] > b["A_gap"] for a, b in zip(rows, rows[1:]))
    assert all(a["z_gap"] > b["z_gap"] for a, b in zip(rows, rows[1:]))


def test_limits_glasso_identity(capsys):
    code, out, _ = run(["limits", "glasso", "--n", "3", "--identity",
                        "--eps", "0.1,0.01", "--lambda0", "0.1"], capsys)
    assert code == 0
    assert all(r["z_gap"] == 0 for r in json.loads(out)["rows"])


def test_limits_glasso_rejects_asymmetric_cost(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(RunConfig(graph="planar", n=4, directed=True).to_json())
    code, _, err = run(["limits", "glasso", "--config", str(cfg), "--eps", "0.1"], capsys)
    assert code == 2
    assert "symmetric" in err


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(RunConfig(graph="circular", n=5, eps=[2.0]).to_json())
    out = tmp_path / "c.csv"
    assert run(["certificate", "--config", str(cfg), "--n", "6", "--out", str(out)], capsys)[0] == 0
    assert len(out.read_text().strip().splitlines()) == 1 + 36
    summary = json.loads((tmp_path / "c.csv.json").read_text())
    assert summary["config"]["n"] == 6 and summary["config"]["eps"] == [2.0]


def test_config_rejects_unknown_keys_and_versions(tmp_path, capsys):
    with pytest.raises(UsageError):
        RunConfig.from_dict({"graph": "circular", "colour": "red"})
    with pytest.raises(UsageError):
        RunConfig.from_dict({"schema_version": 99})
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"nonsense": 1}')
    assert run(["certificate", "--config", str(cfg)], capsys)[0] == 2


@settings(max_examples=30, deadline=None)
@given(
    st.sampled_from(["circular", "planar", "erdos"]),
    st.integers(3, 100),
    st.floats(0, 1),
    st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=4),
    st.lists(st.integers(0, 1000), min_size=1, max_size=5),
    st.floats(1e-12, 1e-2),
)
def test_config_round_trip(graph, n, p, eps, seeds, tol):
    config = RunConfig(command="experiment", kind="sparsistency", graph=graph, n=n, p=p,
                       eps=eps, seeds=seeds, grad_tol=tol)
    again = RunConfig.from_json(config.to_json())
    assert again == config
    assert again.to_json() == config.to_json()
