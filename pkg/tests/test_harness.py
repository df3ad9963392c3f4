import json
import time

import numpy as np
import pytest

from raml_lab.harness import config as cfgmod
from raml_lab.harness.cli import main
from raml_lab.harness.io import csv_text, jsonl_text, read_csv
from raml_lab.harness.verify import CheckResult, suite_identities


def run(args, tmp_path, name):
    out = tmp_path / name
    code = main(args + ["--out", str(out)])
    return code, out


def test_edit_hist_cli(tmp_path):
    t0 = time.perf_counter()
    code, out = run(["edit-hist", "--m", "20", "--v", "61", "--mode", "figure1"], tmp_path, "hist.csv")
    assert time.perf_counter() - t0 < 1.0
    assert code == 0
    text = out.read_text()
    assert text.startswith("# edit-hist m=20 v=61 mode=figure1")
    rows = read_csv(out)
    assert list(rows[0]) == ["tau", "e", "probability"]
    by_tau = {}
    for r in rows:
        by_tau.setdefault(float(r["tau"]), []).append(float(r["probability"]))
    assert sorted(by_tau) == [0.6, 0.7, 0.8, 0.9]
    for probs in by_tau.values():
        assert len(probs) == 41 and abs(sum(probs) - 1) < 1e-9
    assert by_tau[0.6][0] == pytest.approx(0.6051, abs=0.01)
    assert int(np.argmax(by_tau[0.9])) == 7


def test_edit_hist_e_max_truncates(tmp_path):
    code, out = run(["edit-hist", "--m", "5", "--v", "3", "--tau", "1.0", "--e-max", "3"], tmp_path, "h.csv")
    assert code == 0 and [int(r["e"]) for r in read_csv(out)] == [0, 1, 2, 3]


def test_payoff_cli(tmp_path):
    code, out = run(["payoff", "--target", "0", "--vocab", "01", "--tau", "1", "--len", "1"], tmp_path, "q.csv")
    assert code == 0
    rows = read_csv(out)
    assert [r["sequence"] for r in rows] == ["0", "1"]
    assert float(rows[0]["probability"]) == pytest.approx(0.731059, abs=1e-6)
    assert float(rows[1]["probability"]) == pytest.approx(0.268941, abs=1e-6)
    assert "# logZ=0.3132616875182228" in out.read_text()


def test_payoff_cli_small_tau_and_normalization(tmp_path):
    code, out = run(["payoff", "--target", "abca", "--vocab", "abc", "--tau", "1e-6"], tmp_path, "q.csv")
    assert code == 0
    probs = [float(r["probability"]) for r in read_csv(out)]
    assert probs[0] > 1 - 1e-6
    assert abs(sum(probs) - 1) < 1e-9
    assert probs == sorted(probs, reverse=True)
    code, out = run(["payoff", "--target", "ab", "--vocab", "abc", "--tau", "0.7", "--len", "3",
                     "--up-to", "--reward", "neg_edit"], tmp_path, "q2.csv")
    rows = read_csv(out)
    assert code == 0 and len(rows) == 1 + 3 + 9 + 27 and rows[0]["sequence"] == "ab"
    assert abs(sum(float(r["probability"]) for r in rows) - 1) < 1e-9


def test_payoff_guard_exits_1(tmp_path, capsys):
    code, out = run(["payoff", "--target", "0", "--vocab", "0123456789", "--tau", "1", "--len", "7",
                     "--up-to", "--reward", "neg_edit"], tmp_path, "q.csv")
    assert code == 1 and not out.exists()
    assert "too large" in capsys.readouterr().err


@pytest.mark.parametrize("args", [
    ["payoff", "--target", "2", "--vocab", "01"],
    ["edit-hist", "--tau", "0"],
    ["train", "--method", "ppo"],
    ["train", "--grad", "stoch:0"],
    ["verify", "--suite", "everything"],
])
def test_bad_values_exit_2(args, tmp_path):
    with pytest.raises(SystemExit) as info:
        code, out = run(args, tmp_path, "x")
        raise SystemExit(code)
    assert info.value.code == 2
    assert not (tmp_path / "x").exists()


def test_unknown_config_key_exits_2(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("train:\n  stpes: 5\n")
    code, out = run(["--config", str(cfg), "train"], tmp_path, "t.jsonl")
    assert code == 2 and not out.exists()
    cfg.write_text("[1, 2")
    assert main(["--config", str(cfg), "train"]) == 2
    assert main(["--config", str(tmp_path / "missing.yaml"), "train"]) == 2


def test_config_file_with_overrides(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("steps: 3\ntrain:\n  tau: [0.5, 1.0]\n  lr: 0.25\nverify:\n  trials: 9\n")
    code, out = run(["--config", str(cfg), "train", "--lr", "0.5"], tmp_path, "t.jsonl")
    assert code == 0
    header = json.loads(out.read_text().splitlines()[0])
    assert header["steps"] == 3 and header["lr"] == 0.5 and header["taus"] == [0.5, 1.0]


def test_build_merges_sections():
    c = cfgmod.build("verify", {"seed": 4, "verify": {"trials": 7}, "train": {"steps": 1}}, {"trials": 11})
    assert (c.seed, c.trials) == (4, 11)
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.build("verify", {"bogus": 1}, {})


def _train(tmp_path, name, *extra):
    code, out = run(["train", "--task", "copy", "--steps", "5", "--lr", "0.5", *extra], tmp_path, name)
    assert code == 0
    return out, [json.loads(line) for line in out.read_text().splitlines()]


def test_train_jsonl_schema(tmp_path):
    _, lines = _train(tmp_path, "a.jsonl", "--method", "raml,rl", "--tau", "0.5,1", "--seeds", "0,1")
    assert all(rec["schema"] == 1 for rec in lines)
    assert lines[0]["type"] == "header" and lines[0]["master_seeds"] == [0, 1]
    steps = [r for r in lines if r["type"] == "step"]
    assert len(steps) == 2 * 2 * 2 * 5
    assert "wall_time_ms" not in steps[0]
    assert set(steps[0]) >= {"step", "loss_ml", "loss_raml", "loss_rl", "expected_reward", "kl_q_p", "kl_p_q",
                             "grad_variance", "method", "tau", "seed"}
    summary = [r for r in lines if r["type"] == "summary"]
    assert {(r["method"], r["tau"]) for r in summary} == {(m, t) for m in ("raml", "rl") for t in (0.5, 1.0)}
    for r in summary:
        assert r["minus"] <= 0 <= r["plus"] and r["n_seeds"] == 2


def test_train_raml_zero_tau_matches_ml(tmp_path):
    cols = ("loss_ml", "loss_raml", "loss_rl", "expected_reward", "kl_q_p")
    runs = []
    for method in ("raml", "ml"):
        _, lines = _train(tmp_path, f"{method}.jsonl", "--method", method, "--tau", "0",
                          "--grad", "stoch:4", "--batch", "3", "--seeds", "5")
        runs.append([[r[c] for c in cols] for r in lines if r["type"] == "step"])
        assert all(r["kl_p_q"] is None for r in lines if r["type"] == "step")
    assert runs[0] == runs[1]


def test_train_reruns_byte_identical(tmp_path):
    args = ("--method", "rl,raml", "--tau", "0.5", "--grad", "stoch:8", "--batch", "2", "--seeds", "3,4")
    a, _ = _train(tmp_path, "a.jsonl", *args)
    b, _ = _train(tmp_path, "b.jsonl", *args)
    c, _ = _train(tmp_path, "c.jsonl", *args, "--jobs", "2")
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()


def test_train_timing_flag(tmp_path):
    _, lines = _train(tmp_path, "t.jsonl", "--timing")
    assert all(r["wall_time_ms"] >= 0 for r in lines if r["type"] == "step")


def test_train_exact_raml_converges(tmp_path):
    code, out = run(["train", "--method", "raml", "--tau", "1", "--steps", "600", "--lr", "2"], tmp_path, "r.jsonl")
    lines = [json.loads(x) for x in out.read_text().splitlines()]
    assert code == 0 and [r for r in lines if r["type"] == "step"][-1]["kl_q_p"] < 1e-6


def test_verify_cli_pass_and_report(tmp_path):
    code, out = run(["verify", "--suite", "identities", "--trials", "20", "--seed", "7"], tmp_path, "v.txt")
    text = out.read_text().splitlines()
    assert code == 0
    assert text[0].startswith("# raml-lab verify suite=identities trials=20 seed=7")
    assert text[-1].startswith("RESULT PASS")
    assert any(line.startswith("rl_as_kl") for line in text)


def test_verify_exit_is_conjunction(monkeypatch, tmp_path):
    import raml_lab.harness.cli as cli

    fake = [CheckResult("a", 1, 0.0, 1.0, True), CheckResult("b", 1, 2.0, 1.0, False)]
    monkeypatch.setattr(cli, "run_suites", lambda *a: fake)
    code, out = run(["verify", "--suite", "props"], tmp_path, "v.txt")
    assert code == 1 and out.read_text().splitlines()[-1].startswith("RESULT FAIL")
    monkeypatch.setattr(cli, "run_suites", lambda *a: fake[:1])
    assert run(["verify", "--suite", "props"], tmp_path, "w.txt")[0] == 0


def test_suite_results_are_seeded():
    a = [r.line() for r in suite_identities(5, 3)]
    b = [r.line() for r in suite_identities(5, 3)]
    assert a == b and all(r.passed for r in suite_identities(5, 3))


def test_io_formats():
    text = csv_text(("a", "b"), [("x,y", 1)], ["note"])
    assert text == '# note\na,b\n"x,y",1\n'
    assert jsonl_text([{"b": 1, "a": 2}]) == '{"a": 2, "b": 1}\n'
    with pytest.raises(ValueError):
        jsonl_text([{"a": float("nan")}])
