import os

import pytest

from fblab.cli import main

TINY = """K=3
N=6
J=400
batch=100
epochs=1
enc_hidden=5
dec_hidden=5
enc_layers=1
dec_layers=1
grid=1,0.01
schemes=neural,repetition,tbcc
target_errors=30
max_trials=3000
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "tiny.cfg"
    p.write_text(TINY)
    return str(p)


def test_train_prints_config_and_is_reproducible(cfg_path, tmp_path, capsys):
    a, b = str(tmp_path / "a.fbm"), str(tmp_path / "b.fbm")
    assert main(["train", cfg_path, "--out", a]) == 0
    out = capsys.readouterr().out
    assert out.startswith("# K=3") and "# root_seed=0" in out and "# lr_decay=0.95" in out
    assert main(["train", cfg_path, "--out", b]) == 0
    assert open(a, "rb").read() == open(b, "rb").read()
    assert main(["train", cfg_path, "--out", str(tmp_path / "c.fbm"), "--seed", "5"]) == 0
    assert open(a, "rb").read() != open(tmp_path / "c.fbm", "rb").read()


def test_train_bad_config(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("K=3\nfoo=1\n")
    assert main(["train", str(p), "--out", str(tmp_path / "x")]) == 1
    err = capsys.readouterr().err
    assert "foo" in err and "line 2" in err


def test_train_unwritable_output(cfg_path, capsys):
    assert main(["train", cfg_path, "--out", "/nonexistent/dir/m.fbm"]) == 1
    assert "not writable" in capsys.readouterr().err


def test_eval_and_mismatch(cfg_path, tmp_path, capsys):
    m = str(tmp_path / "m.fbm")
    main(["train", cfg_path, "--out", m])
    capsys.readouterr()
    assert main(["eval", "--model", m, "--max-trials", "2000"]) == 0
    out = capsys.readouterr().out
    assert "# eval.sigma2_sq=0.01" in out and "\nscheme,K,N," in out
    assert main(["eval", "--model", m, "--N", "7"]) == 1
    err = capsys.readouterr().err
    assert "N=7" in err and "N=6" in err


def test_baseline_warns_on_sigma2(capsys):
    assert main(["baseline", "repetition", "--K", "2", "--N", "6", "--sigma2-sq", "0.3",
                 "--max-trials", "1000"]) == 0
    cap = capsys.readouterr()
    assert "ignored" in cap.err and "repetition,2,6" in cap.out


def test_baseline_tbcc(capsys):
    assert main(["baseline", "tbcc", "--K", "6", "--max-trials", "500", "--target-errors", "20"]) == 0
    assert "tbcc,6,18" in capsys.readouterr().out


def test_sweep_is_reproducible(cfg_path, tmp_path, capsys):
    a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    assert main(["sweep", cfg_path, "--csv", a]) == 0
    assert main(["sweep", cfg_path, "--csv", b, "--workers", "2", "--model-dir", str(tmp_path / "models")]) == 0
    assert open(a).read() == open(b).read()
    assert len(open(a).read().strip().split("\n")) == 1 + 2 * 3
    assert len(os.listdir(tmp_path / "models")) == 2


def test_audit(cfg_path, capsys):
    assert main(["audit", "--config", cfg_path, "--samples", "100,4000", "--eval-samples", "4000"]) == 0
    rows = [l for l in capsys.readouterr().out.splitlines() if l and not l.startswith("#")]
    assert rows[0].startswith("freeze_samples") and len(rows) == 3


def test_gradcheck_command(capsys, monkeypatch):
    import fblab.gradcheck as gc

    full = gc.closed_loop_check
    monkeypatch.setattr(gc, "closed_loop_check", lambda seed: full(seed, K=2, N=3, hidden=3, batch=6))
    assert main(["gradcheck", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "PASS softmax" in out and "closed loop K=2" in out and out.strip().splitlines()[-1].startswith("PASS overall")
