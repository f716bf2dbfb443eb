import json

import numpy as np
import pytest

from liftpdb.cli import main
from liftpdb.tractor import TractorModel, save_model


@pytest.fixture()
def fig_model_path(tmp_path):
    model = TractorModel(
        ["A", "B", "C"], ["R"], [[0.2, 0.4, 0.8], [0.6, 0.5, 0.2]], [[0.5], [1.0]]
    )
    path = tmp_path / "fig.model.json"
    save_model(model, path)
    return path


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_safety_reports_unsafe_with_blocking(data_dir, capsys):
    code, out, _err = run(capsys, "safety", "-q", str(data_dir / "h0.q"))
    assert code == 0
    assert out.startswith("UNSAFE: ")
    assert "R_A" in out and "T_B" in out


def test_safety_safe_query(data_dir, capsys):
    code, out, _ = run(capsys, "safety", "-q", str(data_dir / "q1.q"))
    assert code == 0
    assert out.strip() == "SAFE"


def test_safety_json(data_dir, capsys):
    code, out, _ = run(capsys, "safety", "--json", "-q", str(data_dir / "h0.q"))
    doc = json.loads(out)
    assert code == 0 and doc["safe"] is False and "blocking" in doc


def test_pdb_query_and_oracle_agree(data_dir, capsys):
    code, out, _ = run(
        capsys, "pdb-query", "-d", str(data_dir / "scientists.pdb"), "-q", str(data_dir / "q1.q")
    )
    assert code == 0
    lifted = float(out.strip())
    code, out, _ = run(
        capsys, "pdb-oracle", "-d", str(data_dir / "scientists.pdb"), "-q", str(data_dir / "q1.q")
    )
    assert code == 0
    assert lifted == pytest.approx(float(out.strip()), abs=1e-6)
    assert lifted == pytest.approx(0.94456, abs=1e-6)


def test_pdb_query_explain_plan(data_dir, capsys):
    code, out, err = run(
        capsys,
        "pdb-query",
        "--explain",
        "-d",
        str(data_dir / "scientists.pdb"),
        "-q",
        str(data_dir / "q1.q"),
    )
    assert code == 0
    assert "step5" in err and "step0" in err


def test_pdb_query_full_precision(data_dir, capsys):
    _code, brief, _ = run(
        capsys, "pdb-query", "-d", str(data_dir / "scientists.pdb"), "-q", str(data_dir / "q1.q")
    )
    _code, full, _ = run(
        capsys,
        "pdb-query",
        "--full",
        "-d",
        str(data_dir / "scientists.pdb"),
        "-q",
        str(data_dir / "q1.q"),
    )
    assert len(full.strip()) > len(brief.strip())
    assert float(full) == pytest.approx(0.94456, abs=1e-9)


def test_pdb_query_unsafe_exit_code(tmp_path, data_dir, capsys):
    db = tmp_path / "db.tsv"
    db.write_text("R\tA\tB\t0.5\nS\tA\tB\t0.5\nT\tA\tB\t0.5\n", encoding="utf-8")
    code, _out, err = run(capsys, "pdb-query", "-d", str(db), "-q", str(data_dir / "h0.q"))
    assert code == 3
    assert "UNSAFE" in err


def test_missing_file_is_data_error(capsys, tmp_path):
    code, _out, err = run(capsys, "safety", "-q", str(tmp_path / "nope.q"))
    assert code == 2
    assert "error" in err


def test_usage_error_exit_code(capsys):
    assert main(["pdb-query"]) == 1  # missing required flags
    assert main(["no-such-command"]) == 1


def test_tractor_query_figure_value(fig_model_path, tmp_path, capsys):
    q = tmp_path / "q.q"
    q.write_text("R(A,B)\n", encoding="utf-8")
    code, out, _ = run(capsys, "tractor-query", "-m", str(fig_model_path), "-q", str(q))
    assert code == 0
    assert out.strip() == "0.170000"


def test_tractor_query_json(fig_model_path, tmp_path, capsys):
    q = tmp_path / "q.q"
    q.write_text("R(A,B) OR R(A,C)\n", encoding="utf-8")
    code, out, _ = run(capsys, "tractor-query", "--json", "-m", str(fig_model_path), "-q", str(q))
    doc = json.loads(out)
    assert code == 0 and 0 < doc["probability"] < 1


def test_tractor_query_display_clamps_but_raw_does_not(tmp_path, capsys):
    model = TractorModel(["A", "B"], ["R"], [[-0.9, 0.8]], [[1.0]])
    path = tmp_path / "neg.model.json"
    save_model(model, path)
    q = tmp_path / "q.q"
    q.write_text("R(A,B)\n", encoding="utf-8")
    _code, out, _ = run(capsys, "tractor-query", "-m", str(path), "-q", str(q))
    assert float(out) == 0.0  # display is clamped into [0, 1]
    _code, out, _ = run(capsys, "tractor-query", "--raw", "-m", str(path), "-q", str(q))
    assert float(out) == pytest.approx(-0.72, abs=1e-6)


def test_tractor_rank(fig_model_path, tmp_path, capsys):
    tpl = tmp_path / "tpl.q"
    tpl.write_text("Q1(t) = R(A,t)\n", encoding="utf-8")
    cands = tmp_path / "cands.txt"
    cands.write_text("B\nC\n", encoding="utf-8")
    code, out, _ = run(
        capsys, "tractor-rank", "-m", str(fig_model_path), "-q", str(tpl), "--candidates", str(cands)
    )
    assert code == 0
    lines = [line.split("\t") for line in out.strip().splitlines()]
    assert [entity for entity, _score in lines] == ["B", "C"]
    assert float(lines[0][1]) == pytest.approx(0.17, abs=1e-6)


def test_selftest_passes(capsys):
    code, out, _ = run(capsys, "selftest")
    assert code == 0
    assert "10/10 checks passed" in out


def test_train_rank_eval_pipeline(tmp_path, capsys):
    rng = np.random.default_rng(3)
    entities = [f"N{i}" for i in range(12)]
    lines = []
    seen = set()
    for _ in range(60):
        h, t = rng.choice(entities, 2)
        r = f"R{rng.integers(0, 2)}"
        if (h, r, t) not in seen and h != t:
            seen.add((h, r, t))
            lines.append(f"{h}\t{r}\t{t}")
    triples = tmp_path / "triples.tsv"
    triples.write_text("\n".join(lines) + "\n", encoding="utf-8")

    model_path = tmp_path / "model.json"
    code, out, err = run(
        capsys,
        "tractor-train",
        "-t",
        str(triples),
        "-o",
        str(model_path),
        "--d",
        "4",
        "--epochs",
        "3",
        "--seed",
        "5",
    )
    assert code == 0, err
    assert model_path.exists()
    assert "epoch 0" in err

    qs_path = tmp_path / "queries.qs"
    code, out, err = run(
        capsys,
        "gen-queries",
        "--template",
        "Q1",
        "-n",
        "5",
        "--seed",
        "7",
        "-t",
        str(triples),
        "--test-fraction",
        "0.2",
        "--negatives",
        "6",
        "-o",
        str(qs_path),
    )
    assert code == 0, err
    assert qs_path.exists()

    report_dir = tmp_path / "report"
    code, out, err = run(
        capsys,
        "eval",
        "-m",
        str(model_path),
        "--queries",
        str(qs_path),
        "--threads",
        "1",
        "--report",
        str(report_dir),
    )
    assert code == 0, err
    assert "Q1" in out and "overall" in out
    tsv = (report_dir / "metrics.tsv").read_text(encoding="utf-8")
    assert tsv.startswith("template\tqueries\tauc\tapr")
    assert (report_dir / "metrics.png").stat().st_size > 0


def test_eval_json_output(tmp_path, capsys, fig_model_path):
    qs = tmp_path / "queries.qs"
    qs.write_text("Q1(t) = R(A,t);answer=B;negs=C\n", encoding="utf-8")
    code, out, _ = run(
        capsys, "eval", "-m", str(fig_model_path), "--queries", str(qs), "--threads", "1", "--json"
    )
    doc = json.loads(out)
    assert code == 0
    assert doc["per_template"][0]["template"] == "Q1"
    assert doc["per_template"][0]["auc"] == 1.0
    assert doc["overall"]["apr"] == 100.0


def test_seed_env_fallback(tmp_path, capsys, monkeypatch):
    triples = tmp_path / "triples.tsv"
    triples.write_text("A\tR\tB\nB\tR\tC\nC\tR\tA\nA\tR\tC\n", encoding="utf-8")
    out1 = tmp_path / "m1.json"
    out2 = tmp_path / "m2.json"
    monkeypatch.setenv("LIFTPDB_SEED", "99")
    code, _, _ = run(capsys, "tractor-train", "-t", str(triples), "-o", str(out1), "--d", "2", "--epochs", "2")
    assert code == 0
    code, _, _ = run(capsys, "tractor-train", "-t", str(triples), "-o", str(out2), "--d", "2", "--epochs", "2")
    assert code == 0
    assert out1.read_text(encoding="utf-8") == out2.read_text(encoding="utf-8")


def test_template_query_rejected_for_boolean_commands(tmp_path, data_dir, capsys):
    tpl = tmp_path / "tpl.q"
    tpl.write_text("Q1(t) = R(A,t)\n", encoding="utf-8")
    code, _out, err = run(
        capsys, "pdb-query", "-d", str(data_dir / "scientists.pdb"), "-q", str(tpl)
    )
    assert code == 2
    assert "Boolean" in err
