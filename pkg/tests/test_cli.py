import json
import os
import subprocess
import sys

import numpy as np
import pytest

from llweak.cli import main


def run_cli(args, capsys):
    code = main(args)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def read_csv(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    return header, rows


def test_moments_smoke_and_schema(tmp_path, capsys):
    out = tmp_path / "m.csv"
    code, _, err = run_cli(["moments", "--problem", "gbm", "--delta", "0.25",
                            "--samples", "64", "--seed", "3",
                            "--out", str(out)], capsys)
    assert code == 0, err
    header, rows = read_csv(out)
    assert header[0] == "t"
    assert "exact_mean_1" in header
    assert "prop_mean_1" in header
    assert "mc_mean_1" in header
    assert len(rows) == 5
    # propagated equals exact to 1e-6 without sampling noise
    em = header.index("exact_mean_1")
    pm = header.index("prop_mean_1")
    for row in rows:
        assert float(row[pm]) == pytest.approx(float(row[em]), rel=1e-6)


def test_moments_single_sample_smoke(tmp_path, capsys):
    out = tmp_path / "m1.csv"
    code, _, _ = run_cli(["moments", "--problem", "gbm", "--delta", "0.5",
                          "--samples", "1", "--seed", "3", "--out", str(out)],
                         capsys)
    assert code == 0
    header, rows = read_csv(out)
    assert all(np.isfinite(float(v)) for v in rows[-1][1:])


def test_moments_propagate_only_mode(tmp_path, capsys):
    out = tmp_path / "m0.csv"
    code, _, _ = run_cli(["moments", "--problem", "gbm", "--delta", "0.25",
                          "--samples", "0", "--seed", "3", "--out", str(out)],
                         capsys)
    assert code == 0
    header, _ = read_csv(out)
    assert "prop_mean_1" in header
    assert "mc_mean_1" not in header


def test_moments_rejects_problem_without_ground_truth(capsys):
    code, _, err = run_cli(["moments", "--problem", "example2",
                            "--delta", "0.5", "--samples", "4"], capsys)
    assert code == 3
    payload = json.loads(err.strip().splitlines()[-1])
    assert payload["category"] == "config"


def test_csv_floats_round_trip(tmp_path, capsys):
    out = tmp_path / "m.csv"
    run_cli(["moments", "--problem", "gbm", "--delta", "0.25", "--samples",
             "32", "--seed", "9", "--out", str(out)], capsys)
    header, rows = read_csv(out)
    for row in rows:
        for cell in row:
            if cell and not cell.isdigit():
                assert f"{float(cell):.17g}" == cell


def test_determinism_across_threads_and_reruns(tmp_path, capsys):
    base = ["error-table", "--problem", "example1", "--delta", "0.125",
            "--t-end", "1.0", "--samples", "64,128", "--seed", "11"]
    texts = []
    for name, threads in (("a", "1"), ("b", "4"), ("c", "1")):
        out = tmp_path / f"{name}.csv"
        code, _, err = run_cli(base + ["--threads", threads, "--out", str(out)],
                               capsys)
        assert code == 0, err
        texts.append(out.read_bytes())
    assert texts[0] == texts[1] == texts[2]


def test_error_table_schema(tmp_path, capsys):
    out = tmp_path / "t.csv"
    code, _, _ = run_cli(["error-table", "--problem", "gbm", "--delta", "0.25",
                          "--samples", "32,64", "--seed", "2",
                          "--out", str(out)], capsys)
    assert code == 0
    header, rows = read_csv(out)
    assert header == ["statistic", "M_32", "M_64", "gamma", "gamma_std"]
    stats = [r[0] for r in rows]
    assert "e_hat_mean_1" in stats
    assert "e_bar_mean_1" in stats
    assert "r_1" in stats
    r_row = rows[stats.index("r_1")]
    assert r_row[3] == "" and r_row[4] == ""


def test_convergence_smoke_schema(tmp_path, capsys):
    out = tmp_path / "c.csv"
    code, _, _ = run_cli(["convergence", "--problem", "example2",
                          "--scheme", "llweak,euler,euler-romberg",
                          "--delta", "1,0.5", "--samples", "10",
                          "--batches", "2", "--seed", "2", "--out", str(out)],
                         capsys)
    assert code == 0
    header, rows = read_csv(out)
    assert header[:4] == ["scheme", "delta", "e_hat", "half_width"]
    assert len(rows) == 6
    schemes = {r[0] for r in rows}
    assert schemes == {"llweak", "euler", "euler-romberg"}


def test_simulate_reproducible(tmp_path, capsys):
    args = ["simulate", "--problem", "example2", "--scheme", "llweak",
            "--delta", "0.5", "--t-end", "1.0", "--samples", "2", "--seed", "5"]
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    assert run_cli(args + ["--out", str(a)], capsys)[0] == 0
    assert run_cli(args + ["--out", str(b)], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    header, rows = read_csv(a)
    assert header == ["trajectory", "t", "x_1", "x_2"]
    assert len(rows) == 2 * 3


def test_simulate_euler_and_exact(tmp_path, capsys):
    for scheme, problem in (("euler", "example2"), ("exact", "example1")):
        out = tmp_path / f"{scheme}.csv"
        code, _, err = run_cli(["simulate", "--problem", problem, "--scheme",
                                scheme, "--delta", "0.5", "--t-end", "1.0",
                                "--samples", "2", "--seed", "5",
                                "--out", str(out)], capsys)
        assert code == 0, err


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"problem": "gbm", "delta": "0.5",
                               "samples": "16", "seed": 4}))
    out = tmp_path / "m.csv"
    code, _, _ = run_cli(["moments", "--config", str(cfg), "--out", str(out),
                          "--samples", "8"], capsys)
    assert code == 0
    header, rows = read_csv(out)
    alive = header.index("mc_alive")
    assert rows[-1][alive] == "8"  # flag wins over the config file


def test_exit_codes_and_error_payload(tmp_path, capsys):
    code, _, err = run_cli(["moments", "--problem", "unobtainium"], capsys)
    assert code == 3
    assert json.loads(err.strip().splitlines()[-1])["category"] == "config"

    code, _, err = run_cli(["moments", "--problem", "gbm", "--scheme", "warp"],
                           capsys)
    assert code == 2

    code, _, err = run_cli(["moments", "--problem", "gbm", "--emit-plots"],
                           capsys)
    assert code == 5
    assert json.loads(err.strip().splitlines()[-1])["category"] == "io"


def test_emit_plots_writes_svg(tmp_path, capsys):
    out = tmp_path / "m.csv"
    code, _, _ = run_cli(["moments", "--problem", "gbm", "--delta", "0.25",
                          "--samples", "16", "--seed", "1", "--out", str(out),
                          "--emit-plots"], capsys)
    assert code == 0
    for suffix in ("_mean.svg", "_var.svg"):
        path = tmp_path / f"m{suffix}"
        assert path.exists()
        text = path.read_text()
        assert text.startswith("<svg") and text.rstrip().endswith("</svg>")


def test_threads_env_fallback(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("LLWEAK_THREADS", "1")
    out = tmp_path / "m.csv"
    code, _, _ = run_cli(["moments", "--problem", "gbm", "--delta", "0.5",
                          "--samples", "8", "--seed", "1", "--out", str(out)],
                         capsys)
    assert code == 0


def test_stdout_output(capsys):
    code, out, _ = run_cli(["moments", "--problem", "gbm", "--delta", "0.5",
                            "--samples", "0", "--seed", "1"], capsys)
    assert code == 0
    assert out.splitlines()[0].startswith("t,exact_mean_1")


def test_cli_subprocess_entry():
    proc = subprocess.run(
        [sys.executable, "-m", "llweak.cli", "moments", "--problem", "gbm",
         "--delta", "0.5", "--samples", "0", "--seed", "1"],
        capture_output=True, text=True,
        env=dict(os.environ, LLWEAK_THREADS="1"))
    assert proc.returncode == 0
    assert proc.stdout.startswith("t,exact_mean_1")
