import json
import subprocess
import sys

import pytest

from geneus.cli import EXIT_INVALID, EXIT_OK, EXIT_PROVIDER, EXIT_USAGE, main
from geneus.schema import parse_result, serialize

from support import FIXTURES, ROOT, good_result_value

INSULIN = str(FIXTURES / "insulin.txt")
INSULIN_FIX = str(FIXTURES / "insulin.fixture.json")
MENTCARE = str(FIXTURES / "mentcare.md")
MENTCARE_FIX = str(FIXTURES / "mentcare.fixture.json")


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def mentcare_result(tmp_path, capsys):
    out = tmp_path / "result.json"
    code, _, _ = run(["generate", "--input", MENTCARE, "--fixture", MENTCARE_FIX,
                      "--output-dir", str(tmp_path / "runs"), "--output", str(out)], capsys)
    assert code == EXIT_OK
    return out


# generate


def test_generate_writes_run_directory(tmp_path, capsys):
    code, out, _ = run(["generate", "--input", MENTCARE, "--fixture", MENTCARE_FIX,
                        "--output-dir", str(tmp_path)], capsys)
    assert code == EXIT_OK
    assert "10 requirements, 10 stories, 10 test cases" in out
    (run_dir,) = [p for p in tmp_path.iterdir()]
    assert {p.name for p in run_dir.iterdir()} == {"result.json", "transcript.json", "meta.json"}
    assert json.loads((run_dir / "meta.json").read_text())["input"] == MENTCARE


def test_generate_missing_input_is_user_error(tmp_path, capsys):
    code, _, err = run(["generate", "--input", str(tmp_path / "nope.md"), "--fixture", MENTCARE_FIX,
                        "--output-dir", str(tmp_path)], capsys)
    assert code == EXIT_INVALID and "not found" in err


def test_generate_fixture_miss_is_provider_error(tmp_path, capsys):
    doc = tmp_path / "other.txt"
    doc.write_text("An unrecorded document about ward rounds.", encoding="utf-8")
    code, _, err = run(["generate", "--input", str(doc), "--fixture", MENTCARE_FIX,
                        "--output-dir", str(tmp_path / "runs")], capsys)
    assert code == EXIT_PROVIDER and "error" in err


def test_usage_errors_exit_64(capsys):
    with pytest.raises(SystemExit) as info:
        main(["generate"])
    assert info.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == EXIT_USAGE


# lint


def test_lint_text_report(mentcare_result, capsys):
    code, out, _ = run(["lint", "--input", str(mentcare_result)], capsys)
    assert code == EXIT_OK
    assert "category scores" in out and "  R: " in out


def test_lint_formats(mentcare_result, capsys):
    code, out, _ = run(["lint", "--input", str(mentcare_result), "--format", "json"], capsys)
    assert code == EXIT_OK and set(json.loads(out)["category_scores"]) == {"R", "U", "S", "T"}
    code, out, _ = run(["lint", "--input", str(mentcare_result), "--format", "csv"], capsys)
    assert out.startswith("story_index,rule_id,passed,category")


def test_lint_min_score_with_injected_duplicate(tmp_path, capsys):
    value = good_result_value()
    value["stories"].append(json.loads(json.dumps(value["stories"][0])))
    path = tmp_path / "dup.json"
    path.write_text(json.dumps(value), encoding="utf-8")
    code, out, err = run(["lint", "--input", str(path), "--min-score", "5"], capsys)
    assert code == EXIT_INVALID
    assert "stories 0 and 1" in out and "S=" in err


def test_lint_clean_result_meets_min_score(tmp_path, capsys):
    path = tmp_path / "ok.json"
    path.write_text(json.dumps(good_result_value()), encoding="utf-8")
    assert run(["lint", "--input", str(path), "--min-score", "5"], capsys)[0] == EXIT_OK


def test_lint_malformed_and_invalid_input(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    code, _, err = run(["lint", "--input", str(bad)], capsys)
    assert code == EXIT_INVALID and "not valid JSON" in err
    bad.write_text('{"stories": 3}', encoding="utf-8")
    code, _, err = run(["lint", "--input", str(bad)], capsys)
    assert code == EXIT_INVALID and "schema" in err


def test_lint_bad_threshold_is_usage(mentcare_result, capsys):
    assert run(["lint", "--input", str(mentcare_result), "--threshold", "0"], capsys)[0] == EXIT_USAGE


# consistency


def test_consistency_replay_is_perfectly_stable(tmp_path, capsys):
    report = tmp_path / "stability.json"
    matrix = tmp_path / "m.csv"
    code, out, _ = run(["consistency", "--input", INSULIN, "--fixture", INSULIN_FIX, "--runs", "10",
                        "--output-dir", str(tmp_path / "runs"), "--report", str(report),
                        "--matrix-csv", str(matrix)], capsys)
    assert code == EXIT_OK
    assert "stability (exact): 1.000000" in out
    data = json.loads(report.read_text())
    assert len(data["runs"]) == 10 and data["stability"]["mean_pairwise_similarity"] == 1.0
    assert len(matrix.read_text().splitlines()) == 11
    assert len(list((tmp_path / "runs").iterdir())) == 10


def test_consistency_compare_io(tmp_path, capsys):
    code, out, _ = run(["consistency", "--input", INSULIN, "--fixture", INSULIN_FIX, "--runs", "2",
                        "--compare-io", "--output-dir", str(tmp_path)], capsys)
    assert code == EXIT_OK
    io_section = out.split("only in IO extraction:")[1]
    assert "time since the last insulin injection" in io_section
    report = json.loads((tmp_path / next(p.name for p in tmp_path.iterdir() if p.name.startswith("consistency-"))
                         / "stability.json").read_text())
    assert "comparison" in report


@pytest.mark.parametrize("runs", ["1", "0", "many"])
def test_consistency_runs_below_two_is_usage(runs):
    with pytest.raises(SystemExit) as info:
        main(["consistency", "--input", INSULIN, "--fixture", INSULIN_FIX, "--runs", runs])
    assert info.value.code == EXIT_USAGE


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "geneus", "--version"], capture_output=True, text=True,
                          cwd=ROOT, timeout=60)
    assert proc.returncode == 0 and proc.stdout.startswith("geneus ")


def test_serialize_helper_matches_file(mentcare_result):
    text = mentcare_result.read_text(encoding="utf-8")
    assert serialize(parse_result(text)) + "\n" == text
