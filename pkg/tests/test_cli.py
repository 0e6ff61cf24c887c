import re

import pytest

from bitsird.cli import main, parse_config
from bitsird.errors import ConfigError

TINY_CONFIG = """
# tiny deterministic run for the CLI tests
net.stage_channels = 4,8,16
net.blocks = 1,1,1
train.epochs = 2
train.lr = 0.003
train.batch = 8
train.seed = 0
data.size = 32
data.count = 16
data.val_count = 6
"""


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_run")
    cfg = root / "run.cfg"
    cfg.write_text(TINY_CONFIG)
    out = root / "out"
    code = main(["train", str(cfg), "--out", str(out)])
    assert code == 0
    return cfg, out


def test_config_defaults_and_overrides(tmp_path):
    cfg = parse_config(None)
    assert cfg["net.blocks"] == (1, 2, 5)
    assert cfg["train.epochs"] == 60
    path = tmp_path / "c.cfg"
    path.write_text("train.lr = 0.01  # comment\n\nnet.blocks=1,1,1\n")
    cfg = parse_config(path)
    assert cfg["train.lr"] == 0.01
    assert cfg["net.blocks"] == (1, 1, 1)


def test_unknown_key_is_a_config_error(tmp_path):
    path = tmp_path / "typo.cfg"
    path.write_text("trian.lr = 0.01\n")
    with pytest.raises(ConfigError) as exc:
        parse_config(path)
    assert exc.value.key == "trian.lr"


def test_train_unknown_key_exits_2(tmp_path, capsys):
    path = tmp_path / "typo.cfg"
    path.write_text("trian.lr = 0.01\n")
    code = main(["train", str(path), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "trian.lr" in capsys.readouterr().err


def test_train_writes_artifacts(tiny_run):
    _, out = tiny_run
    assert (out / "final.ckpt").exists()
    assert (out / "best.ckpt").exists()
    report = (out / "report.txt").read_text()
    assert report.startswith("epoch=0 ")
    assert "k." in report


def test_train_is_deterministic(tiny_run, tmp_path):
    cfg, out = tiny_run
    out2 = tmp_path / "again"
    assert main(["train", str(cfg), "--out", str(out2)]) == 0
    assert (out / "final.ckpt").read_bytes() == (out2 / "final.ckpt").read_bytes()


def _parse_kv(text, key):
    m = re.search(rf"^{re.escape(key)}=(\S+)", text, re.MULTILINE)
    assert m, f"{key} not found"
    return float(m.group(1))


def test_eval_reproduces_final_training_metrics(tiny_run, capsys):
    cfg, out = tiny_run
    code = main(["eval", str(out / "final.ckpt"), "--config", str(cfg)])
    assert code == 0
    stdout = capsys.readouterr().out
    final_line = [
        l for l in (out / "report.txt").read_text().splitlines()
        if l.startswith("epoch=1 ")
    ][0]
    train_miou = float(re.search(r"miou=([0-9.eE+-]+)", final_line).group(1))
    train_pd = float(re.search(r" pd=([0-9.eE+-]+)", final_line).group(1))
    assert abs(_parse_kv(stdout, "miou") - train_miou) < 1e-9
    assert abs(_parse_kv(stdout, "pd") - train_pd) < 1e-9
    assert (out / "final.ckpt.eval.txt").exists()


def test_eval_account_only(tiny_run, capsys):
    cfg, out = tiny_run
    code = main(["eval", str(out / "final.ckpt"), "--config", str(cfg),
                 "--account-only"])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "Params" in stdout and "OPs" in stdout
    assert "miou" not in stdout


def test_eval_truncated_checkpoint_exits_5(tiny_run, tmp_path, capsys):
    cfg, out = tiny_run
    broken = tmp_path / "broken.ckpt"
    broken.write_bytes((out / "final.ckpt").read_bytes()[:-9])
    code = main(["eval", str(broken), "--config", str(cfg)])
    assert code == 5
    assert "byte offset" in capsys.readouterr().err


def test_eval_architecture_mismatch_exits_4(tiny_run, tmp_path, capsys):
    cfg, out = tiny_run
    other_cfg = tmp_path / "other.cfg"
    other_cfg.write_text(TINY_CONFIG.replace("4,8,16", "8,16,32"))
    code = main(["eval", str(out / "final.ckpt"), "--config", str(other_cfg)])
    assert code == 4
    err = capsys.readouterr().err
    assert "mismatch" in err
    assert re.search(r"\w+\.\w+", err)  # names the first offending tensor


def test_eval_export_binary_is_compact(tiny_run, tmp_path):
    cfg, out = tiny_run
    snapshot = tmp_path / "deploy.ckpt"
    code = main(["eval", str(out / "final.ckpt"), "--config", str(cfg),
                 "--export-binary", str(snapshot)])
    assert code == 0
    assert snapshot.exists()
    assert snapshot.stat().st_size < (out / "final.ckpt").stat().st_size


def test_bench_match_flags(capsys):
    code = main(["bench", "--sizes", "8", "16", "--channels", "4"])
    assert code == 0
    out = capsys.readouterr().out
    assert "True" in out and "False" not in out


def test_check_all_suites_pass(capsys):
    assert main(["check"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 5


def test_check_single_suite(capsys):
    assert main(["check", "--suite", "grad"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 1


def test_check_sign_zero_fault_fails_with_counterexample(capsys):
    assert main(["check", "--suite", "xnor", "--sign-zero-negative"]) == 1
    out = capsys.readouterr().out
    assert "[FAIL] xnor" in out
    assert "got" in out and "want" in out
    # the fault flag must not leak into later runs
    assert main(["check", "--suite", "xnor"]) == 0
