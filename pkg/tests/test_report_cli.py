import json

import pytest

from batchforge import cli, report
from batchforge.cluster import HardAssignment
from batchforge.errors import ContractError, NumericError
from batchforge.heuristics import validate_solution
from batchforge.report import run_benchmark
from batchforge.routing import load_assignment, solution_distance
from batchforge.warehouse import Warehouse, load_instance, save_instance

from conftest import make_instance

TINY_CFG = {"hidden": 8, "layers": 1, "lstm_layers": 1, "est_widths": [8, 8, 8], "M": 4, "P": 3,
            "kmeans_restarts": 2, "epochs": 3, "lr": 5e-3}


@pytest.fixture
def inst_dir(tmp_path):
    out = tmp_path / "inst"
    assert cli.main(["generate", "--orders", "12", "--K", "3", "--c", "4", "--blocks", "2",
                     "--aisles", "5", "--slots", "8", "--count", "2", "--seed", "1",
                     "--out", str(out)]) == 0
    return out


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(TINY_CFG))
    return p


def first(d):
    return sorted(d.glob("*.json"))[0]


def test_generate_deterministic(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["generate", "--orders", "20", "--K", "4", "--c", "5", "--seed", "3",
                         "--out", str(tmp_path / f"{name}.json")]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_generate_infeasible_shape(tmp_path):
    assert cli.main(["generate", "--orders", "7", "--K", "2", "--c", "3",
                     "--out", str(tmp_path / "x.json")]) == cli.EXIT_INVALID


def test_solve_random_reproducible(inst_dir, tmp_path, capsys):
    f = first(inst_dir)
    outs = []
    for k in range(2):
        assert cli.main(["solve", "--instance", str(f), "--method", "random", "--seed", "4",
                         "--out", str(tmp_path / f"s{k}.json")]) == 0
        outs.append(capsys.readouterr().out)
    assert outs[0] == outs[1] and outs[0].startswith("d_S ")
    assert (tmp_path / "s0.json").read_bytes() == (tmp_path / "s1.json").read_bytes()


def test_solve_bkm_four_corners(tmp_path, capsys):
    w = Warehouse(blocks=1, aisles=6, slots=10)
    inst = make_instance([[(0, 0, 0)], [(0, 0, 9)], [(0, 5, 0)], [(0, 5, 9)]], K=2, c=2, w=w)
    save_instance(inst, tmp_path / "toy.json")
    assert cli.main(["solve", "--instance", str(tmp_path / "toy.json"), "--method", "bkm",
                     "--out", str(tmp_path / "s.json")]) == 0
    got = load_assignment(tmp_path / "s.json", inst)
    best = min((solution_distance(HardAssignment.from_batches(p, 4, 2), inst).total, p)
               for p in ([[0, 1], [2, 3]], [[0, 2], [1, 3]], [[0, 3], [1, 2]]))
    assert solution_distance(got, inst).total == best[0]


def test_solve_learned_needs_checkpoint(inst_dir, capsys):
    assert cli.main(["solve", "--instance", str(first(inst_dir)), "--method", "btogcn"]) == cli.EXIT_USAGE


def test_missing_file_and_bad_method(tmp_path):
    assert cli.main(["solve", "--instance", str(tmp_path / "nope.json"), "--method", "heuristic"]) == 3
    with pytest.raises(SystemExit) as e:
        cli.main(["solve", "--instance", "x.json", "--method", "magic"])
    assert e.value.code == 2


def test_train_then_solve(inst_dir, cfg_file, tmp_path, capsys):
    ckpt, metrics = tmp_path / "m.npz", tmp_path / "m.csv"
    assert cli.main(["train", "--config", str(cfg_file), "--instances", str(inst_dir),
                     "--split", "1,0,1", "--out", str(ckpt), "--metrics", str(metrics)]) == 0
    rows = metrics.read_text().splitlines()
    head = rows[0].split(",")
    row0 = dict(zip(head, rows[1].split(",")))
    assert row0["epoch"] == "0" and row0["gamma"] == "1" and row0["beta"] == "0"
    f = first(inst_dir)
    assert cli.main(["solve", "--instance", str(f), "--method", "btogcn", "--checkpoint", str(ckpt),
                     "--out", str(tmp_path / "s.json")]) == 0
    inst = load_instance(f)
    assert validate_solution(inst, load_assignment(tmp_path / "s.json", inst)) == []


def test_train_csv_deterministic_and_supervised(inst_dir, cfg_file, tmp_path):
    csvs = []
    for k in range(2):
        assert cli.main(["train", "--config", str(cfg_file), "--instances", str(first(inst_dir)),
                         "--split", "1,0,0", "--out", str(tmp_path / f"m{k}.npz"),
                         "--metrics", str(tmp_path / f"m{k}.csv")]) == 0
        csvs.append((tmp_path / f"m{k}.csv").read_bytes())
    assert csvs[0] == csvs[1]
    sup = tmp_path / "sup.json"
    sup.write_text(json.dumps(dict(TINY_CFG, mode="supervised-only", eps=1e12)))
    assert cli.main(["train", "--config", str(sup), "--instances", str(first(inst_dir)),
                     "--split", "1,0,0", "--out", str(tmp_path / "s.npz"),
                     "--metrics", str(tmp_path / "s.csv")]) == 0
    lines = (tmp_path / "s.csv").read_text().splitlines()
    col = lines[0].split(",").index("beta")
    assert all(l.split(",")[col] == "0" for l in lines[1:])


def test_train_bad_config_key(inst_dir, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"learning_rate": 1}))
    assert cli.main(["train", "--config", str(bad), "--instances", str(inst_dir),
                     "--out", str(tmp_path / "m.npz")]) == cli.EXIT_USAGE


def test_route_command(inst_dir, tmp_path, capsys):
    f = first(inst_dir)
    cli.main(["solve", "--instance", str(f), "--method", "heuristic", "--out", str(tmp_path / "s.json")])
    capsys.readouterr()
    assert cli.main(["route", "--instance", str(f), "--assignment", str(tmp_path / "s.json"),
                     "--out", str(tmp_path / "r.svg")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 3 and all(l.startswith("batch ") for l in out)
    assert (tmp_path / "r.svg").read_text().lstrip().startswith("<?xml")


def test_bench_outputs_deterministic(inst_dir, cfg_file, tmp_path):
    for name in ("a", "b"):
        assert cli.main(["bench", "--instances", str(inst_dir), "--methods", "heuristic,bkm,random,btogcn",
                         "--seeds", "0,1", "--config", str(cfg_file), "--out", str(tmp_path / name),
                         "--deterministic"]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["routes_bkm.svg", "routes_btogcn.svg", "routes_heuristic.svg", "routes_random.svg",
                     "rows.csv", "scores.svg", "summary.csv"]
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes(), n


def test_single_method_avg_is_total_over_K(small_instance):
    rep = run_benchmark([small_instance], ["heuristic"], [0])
    row = rep.rows[0]
    assert row.avg == pytest.approx(row.total / small_instance.K)
    assert row.min <= row.avg <= row.max
    s = rep.summary()[0]
    assert s["avg_batch"] == row.avg and s["runs"] == 1 and s["failures"] == 0


def test_identical_methods_identical_rows(small_instance):
    rep = run_benchmark([small_instance], ["random", "random"], [3])
    a, b = rep.rows
    assert (a.total, a.avg, a.max, a.min) == (b.total, b.avg, b.max, b.min)


def test_failure_row_recorded(small_instance, monkeypatch):
    real = report.solve_method

    def flaky(inst, method, *a, **k):
        if method == "bkm":
            raise NumericError("boom")
        return real(inst, method, *a, **k)

    monkeypatch.setattr(report, "solve_method", flaky)
    rep = run_benchmark([small_instance], ["bkm", "heuristic"], [0])
    statuses = {r.method: r.status for r in rep.rows}
    assert statuses["heuristic"] == "ok" and statuses["bkm"] != "ok"
    s = {x["method"]: x for x in rep.summary()}
    assert s["bkm"]["failures"] == 1


def test_unknown_method_rejected(small_instance):
    with pytest.raises(ContractError):
        run_benchmark([small_instance], ["nonsense"], [0])
