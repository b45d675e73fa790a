import json

from kwtorus.cli import build_parser, main, read_csv, verify_manifest


def test_parser_subcommands():
    ap = build_parser()
    for cmd in ("green", "minimize", "sweep", "testfn", "probe-beta", "probe-ray", "diagnose", "run"):
        assert ap.parse_args([cmd]).command == cmd
    assert ap.parse_args(["sweep", "--eps-schedule", "0.5,0.2"]).eps_schedule == [0.5, 0.2]


def test_minimize_writes_outputs(tmp_path):
    out = tmp_path / "m"
    code = main(["minimize", "--N", "32", "--weight", "cosine", "--a", "0.3", "--eps", "0.5", "--out", str(out)])
    assert code == 0
    rows = read_csv(out / "minimize.csv")
    assert len(rows) == 1 and rows[0]["converged"] == "true"
    assert (out / "minimize.csv").read_text().startswith("# schema: kw-minimize/1\n")
    # floats carry 17 significant digits
    assert len(rows[0]["J"].lstrip("-").replace(".", "").split("e")[0]) >= 16
    assert verify_manifest(out) == []
    man = json.loads((out / "manifest.json").read_text())
    assert man["exit_code"] == 0 and len(man["config_sha256"]) == 64


def test_bad_config_exit_2(tmp_path, capsys):
    assert main(["minimize", "--alpha", "50", "--eps", "0.5", "--out", str(tmp_path / "x")]) == 2
    assert "lambda_1" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_failing_check_exit_1(tmp_path):
    # the Moser probe at small k does not decrease: its check fails
    code = main(["probe-beta", "--N", "32", "--beta", "28.3", "--r", "0.05", "--out", str(tmp_path / "b")])
    assert code == 1
    man = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert man["records"][0]["checks"]["strictly_decreasing"] is False


def test_kw_out_default(tmp_path, monkeypatch):
    monkeypatch.setenv("KW_OUT", str(tmp_path / "root"))
    assert main(["green", "--N", "64"]) == 0
    runs = list((tmp_path / "root").glob("run-*"))
    assert len(runs) == 1 and (runs[0] / "green.json").exists()


def test_threads_do_not_change_csv(tmp_path, monkeypatch):
    args = ["testfn", "--N", "32", "--weight", "cosine", "--a", "0.5", "--alpha", "10",
            "--eps-grid", "0.01,0.003"]
    monkeypatch.setenv("KW_THREADS", "1")
    main(args + ["--out", str(tmp_path / "s")])
    monkeypatch.setenv("KW_THREADS", "2")
    main(args + ["--out", str(tmp_path / "p")])
    assert (tmp_path / "s" / "testfn.csv").read_bytes() == (tmp_path / "p" / "testfn.csv").read_bytes()


def test_pipeline_and_diagnose(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("torus: {N: 128}\nweight: {kind: cosine, a: 0.4}\n"
                   "run: {stages: [diagnose, minimize, green], eps: 0.3, alpha: 5.0, p: [0.0, 0.0]}\n")
    out = tmp_path / "r"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert [r["stage"] for r in man["records"]] == ["green", "minimize", "diagnose"]
    diag = json.loads((out / "diagnose.json").read_text())
    assert 0 < diag["concentration_fraction"] < 1
    # standalone diagnose against the dumped Green function
    out2 = tmp_path / "d"
    assert main(["diagnose", "--N", "128", "--weight", "cosine", "--a", "0.4", "--input", str(out / "minimize_u.bin"),
                 "--green", str(out / "green_field"), "--out", str(out2)]) == 0
    assert "far_field_gap" in json.loads((out2 / "diagnose.json").read_text())
    assert verify_manifest(out) == [] and verify_manifest(out2) == []


def test_probe_ray_bessel(tmp_path):
    out = tmp_path / "ray"
    assert main(["probe-ray", "--N", "32", "--alpha", repr(4 * 3.141592653589793**2), "--out", str(out)]) == 0
    rows = read_csv(out / "probe_ray.csv")
    assert abs(float(rows[1]["J"]) - float(rows[1]["bessel"])) < 1e-10


def test_run_without_stages(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("run: {stages: []}\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
