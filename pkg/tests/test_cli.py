import csv
import io
import os

import numpy as np
import pytest

from spidersqn import cli

SYN = "300,20,0.2"


def run_cli(argv, capsys):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_gen_data_lines_and_repeatability(tmp_path, capsys):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    code, out, _ = run_cli(["gen-data", "--n", "100", "--d", "30", "--density", "0.1", "--seed", "4", "--out", str(a)], capsys)
    assert code == 0 and "n=100" in out
    assert len(a.read_text().splitlines()) == 100
    run_cli(["gen-data", "--n", "100", "--d", "30", "--density", "0.1", "--seed", "4", "--out", str(b)], capsys)
    assert a.read_bytes() == b.read_bytes()


def test_gen_data_rejects_zero_density(tmp_path, capsys):
    code, _, err = run_cli(["gen-data", "--n", "5", "--d", "5", "--density", "0", "--out", str(tmp_path / "x")], capsys)
    assert code == 2 and "error" in err


def test_run_to_stdout_and_determinism(capsys):
    argv = ["run", "--synthetic", SYN, "--algo", "spider_sqn", "--batch", "16", "--K", "40", "--checkpoint-every", "10"]
    code, out, _ = run_cli(argv, capsys)
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == cli.TRACE_HEADER
    assert [int(r[2]) for r in rows[1:]] == [0, 10, 20, 30, 40]
    _, again, _ = run_cli(argv, capsys)
    strip = lambda text: [r[:-1] for r in csv.reader(io.StringIO(text))]
    assert strip(out) == strip(again)


def test_run_single_iteration_writes_two_checkpoints(tmp_path, capsys):
    code, _, _ = run_cli(
        ["run", "--synthetic", SYN, "--algo", "sgd", "--K", "1", "--batch", "8", "--checkpoint-every", "1", "--out", str(tmp_path)], capsys
    )
    rows = read_csv(tmp_path / "trace_sgd_seed0.csv")
    assert code == 0 and len(rows) == 3


def test_run_from_libsvm_file(tmp_path, capsys):
    data = tmp_path / "d.txt"
    run_cli(["gen-data", "--n", "80", "--d", "10", "--density", "0.3", "--out", str(data)], capsys)
    code, out, _ = run_cli(["run", "--data", str(data), "--problem", "logistic", "--K", "5", "--batch", "4"], capsys)
    assert code == 0 and out.startswith("algorithm,")


def test_run_needs_a_source(capsys):
    code, _, err = run_cli(["run", "--K", "3"], capsys)
    assert code == 2 and "--data or --synthetic" in err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_run_divergence_exit_code(capsys):
    code, _, err = run_cli(["run", "--synthetic", SYN, "--problem", "robust", "--eta", "1e305", "--K", "50", "--batch", "8",
                            "--checkpoint-every", "1"], capsys)
    assert code == 3 and "error" in err


def test_online_run(capsys):
    code, out, _ = run_cli(
        ["run", "--synthetic", SYN, "--mode", "online", "--batch", "8", "--refresh-batch", "64", "--K", "16",
         "--checkpoint-every", "8"], capsys
    )
    rows = list(csv.reader(io.StringIO(out)))
    assert code == 0 and rows[-1][2] == "16" and int(rows[-1][3]) == 2 * 64 + 14 * 8


def test_bench_outputs_and_medians(tmp_path, capsys):
    out = tmp_path / "b"
    argv = ["bench", "--synthetic", SYN, "--algo", "spider_sqn,spider_boost", "--seeds", "0,1,2", "--batch", "16",
            "--epochs", "2", "--out", str(out), "--no-plot"]
    code, stdout, _ = run_cli(argv, capsys)
    assert code == 0
    traces = sorted(p for p in os.listdir(out) if p.startswith("trace_"))
    assert len(traces) == 6
    summary = read_csv(out / "summary.csv")
    assert summary[0] == cli.SUMMARY_HEADER
    per_run = [r for r in summary[1:] if r[1] != "median"]
    medians = [r for r in summary[1:] if r[1] == "median"]
    assert len(per_run) == 6 and len(medians) == 2
    for med in medians:
        finals = [float(r[3]) for r in per_run if r[0] == med[0]]
        assert float(med[3]) == np.median(finals)
    assert stdout.count("median") == 2

    first = {p: (out / p).read_bytes() for p in traces}
    run_cli(argv, capsys)
    for p, content in first.items():
        strip = lambda b: [r[:-1] for r in csv.reader(io.StringIO(b.decode()))]
        assert strip((out / p).read_bytes()) == strip(content)


def test_bench_plan_and_flag_precedence(tmp_path, capsys):
    plan = tmp_path / "plan.txt"
    plan.write_text(
        "# small plan\nsynthetic = 200,10,0.3\nalgo = sgd\nseeds = 5\nK = 7\nbatch = 4\ncheckpoint_every = 7\nno_plot = true\n"
    )
    out = tmp_path / "o"
    code, _, _ = run_cli(["bench", "--plan", str(plan), "--K", "3", "--checkpoint-every", "1", "--out", str(out)], capsys)
    assert code == 0
    rows = read_csv(out / "trace_sgd_seed5.csv")
    assert [int(r[2]) for r in rows[1:]] == [0, 1, 2, 3]
    assert not (out / "convergence.png").exists()


def test_bench_writes_figure(tmp_path, capsys):
    out = tmp_path / "f"
    code, _, _ = run_cli(["bench", "--synthetic", SYN, "--algo", "sgd", "--K", "5", "--batch", "8", "--out", str(out)], capsys)
    assert code == 0 and (out / "convergence.png").stat().st_size > 0


def test_bench_parallel_matches_serial(tmp_path, capsys):
    base = ["bench", "--synthetic", SYN, "--algo", "spider_sqn_med", "--seeds", "0,1", "--K", "20", "--batch", "8", "--no-plot"]
    run_cli(base + ["--out", str(tmp_path / "s")], capsys)
    run_cli(base + ["--out", str(tmp_path / "p"), "--workers", "2"], capsys)
    a = read_csv(tmp_path / "s" / "summary.csv")
    b = read_csv(tmp_path / "p" / "summary.csv")
    assert [r[:7] for r in a] == [r[:7] for r in b]


@pytest.mark.parametrize(
    "text",
    ["nonsense line\n", "plan = other.txt\n", "batch = many\n", "no_plot = maybe\n"],
)
def test_bad_plans_exit_2(tmp_path, capsys, text):
    plan = tmp_path / "bad.txt"
    plan.write_text("synthetic = 50,5,0.5\n" + text)
    code, _, _ = run_cli(["bench", "--plan", str(plan), "--out", str(tmp_path / "o")], capsys)
    assert code == 2


def test_bench_unknown_algorithm(capsys):
    code, _, err = run_cli(["bench", "--synthetic", SYN, "--algo", "adam"], capsys)
    assert code == 2 and "adam" in err


def test_audit_clean_and_injected(capsys):
    code, out, _ = run_cli(["audit"], capsys)
    assert code == 0 and out.rstrip().endswith("all invariants hold")
    code, out, _ = run_cli(["audit", "--inject", "spider-batch"], capsys)
    assert code == 1 and "violated:" in out and "spider-variance" in out.splitlines()[-1]


def test_format_helper():
    assert cli.fmt(3) == "3"
    assert cli.fmt(np.int64(4)) == "4"
    assert float(cli.fmt(0.1)) == 0.1


def test_sqrt_epoch_length(capsys):
    code, out, _ = run_cli(["run", "--synthetic", "100,5,0.5", "--q", "sqrt", "--K", "25", "--batch", "4",
                            "--checkpoint-every", "25"], capsys)
    last = list(csv.reader(io.StringIO(out)))[-1]
    assert code == 0 and int(last[3]) == 3 * 100 + 22 * 4
