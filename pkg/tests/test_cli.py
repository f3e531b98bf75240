import json
import re
from pathlib import Path

import pytest

from recsys_lens.cli import COMMANDS, EXIT_CODES, build_parser, main
from recsys_lens.minidata import mini_path
from recsys_lens.recommenders import SeriesTrace

GOLDEN = Path(__file__).parent / "golden" / "help_flags.txt"


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def help_text(argv, capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")
    with pytest.raises(SystemExit) as exc:
        main([*argv, "--help"])
    assert exc.value.code == 0
    return capsys.readouterr().out


def flag_listing(capsys, monkeypatch):
    top = help_text([], capsys, monkeypatch)
    lines = ["(top): " + " ".join(sorted(set(re.findall(r"(?<![\w-])(--[a-z][a-z0-9-]*)", top))))]
    for name in COMMANDS:
        assert name in top
        text = help_text([name], capsys, monkeypatch)
        flags = sorted(set(re.findall(r"(?<![\w-])(--[a-z][a-z0-9-]*)", text)))
        lines.append(f"{name}: {' '.join(flags)}")
    return "\n".join(lines) + "\n"


def test_help_enumerates_every_flag(capsys, monkeypatch):
    listing = flag_listing(capsys, monkeypatch)
    assert listing == GOLDEN.read_text(encoding="utf-8")
    # and every flag the parser accepts shows up in the listing
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        declared = {o for a in p._actions for o in a.option_strings if o.startswith("--")}
        line = next(l for l in listing.splitlines() if l.startswith(name + ":"))
        assert declared <= set(line.split()[1:]), name


def test_zeromat_without_training_data(tmp_path, capsys):
    code, _, err = run(["train", "--algo", "zeromat", "--iterations", "200", "--out", str(tmp_path)], capsys)
    assert code == 0, err
    model = json.loads((tmp_path / "model_zeromat.json").read_text())
    assert model["algorithm"] == "zeromat"
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["inputs"] == []
    assert [o["path"] for o in manifest["outputs"]] == ["model_zeromat.json"]


def test_mf_without_training_data_fails(tmp_path, capsys):
    code, _, err = run(["train", "--algo", "mf", "--out", str(tmp_path)], capsys)
    assert code == EXIT_CODES["usage"]
    assert err.startswith("error: category=usage message=")
    assert len(err.strip().splitlines()) == 1


def test_unknown_flag_is_usage_error(tmp_path, capsys):
    code, _, err = run(["split", "--bogus", "--out", str(tmp_path)], capsys)
    assert code == EXIT_CODES["usage"] and "category=usage" in err


def test_missing_input_is_io_error(tmp_path, capsys):
    code, _, err = run(["ingest", "--input", str(tmp_path / "nope.csv"), "--out", str(tmp_path)], capsys)
    assert code == EXIT_CODES["io"] and "category=io" in err


def test_unparseable_input(tmp_path, capsys):
    bad = tmp_path / "bad.dat"
    bad.write_text("nonsense\n")
    code, _, err = run(["ingest", "--input", str(bad), "--format", "movielens_dat", "--out", str(tmp_path)], capsys)
    assert code == EXIT_CODES["parse"]


def test_stage_chain(tmp_path, capsys):
    out = tmp_path
    assert run(["ingest", "--input", str(mini_path()), "--name", "mini", "--out", str(out)], capsys)[0] == 0
    assert (out / "mini_ratings.csv").read_text() == mini_path().read_text()
    assert run(["split", "--out", str(out), "--seed", "3"], capsys)[0] == 0
    tr, te = str(out / "mini_train.csv"), str(out / "mini_test.csv")
    code, stdout, _ = run(["train", "--algo", "mf", "--train", tr, "--test", te, "--iterations", "500", "--out", str(out)], capsys)
    assert code == 0 and "test_mae" in stdout
    code, _, err = run(
        ["grid", "--algo", "random,zeromat", "--train", tr, "--test", te, "--grid", "0.01,0.02,0.03,0.04",
         "--iterations", "300", "--out", str(out)], capsys)
    assert code == 0, err
    trace = SeriesTrace.from_csv((out / "mini_trace_random.csv").read_text())
    assert len(trace.xs) == 4
    traces = [str(out / "mini_trace_random.csv"), str(out / "mini_trace_zeromat.csv")]
    assert run(["embed", "--trace", *traces, "--dim", "2", "--out", str(out)], capsys)[0] == 0
    assert (out / "mini_embed2d_all.svg").exists()
    assert run(["recur", "--trace", *traces, "--out", str(out)], capsys)[0] == 0
    assert (out / "mini_recurrence_random.pgm").read_text().startswith("P1\n4 4\n")
    assert run(["sim", "--mode", "item_item", "--out", str(out)], capsys)[0] == 0
    code, stdout, _ = run(["dpp", "--matrix", str(out / "mini_sim_item.csv"), "--select", "0,1,2", "--out", str(out)], capsys)
    assert code == 0 and 0.0 <= float(stdout) <= 1.0
    assert run(["graph", "--mode", "user_user", "--iterations", "5", "--out", str(out)], capsys)[0] == 0
    assert (out / "mini_graph_user.graphml").exists()
    for kind, payload in [
        ("line", "mini_trace_random.csv"),
        ("heatmap", "mini_heatmap_item.csv"),
        ("recurrence", "mini_recurrence_random.pgm"),
        ("graph", "mini_graph_user.graphml"),
        ("loglog", "mini_popularity_items.csv"),
    ]:
        code, _, err = run(["plot", "--kind", kind, "--payload", str(out / payload), "--output", f"p_{kind}.svg",
                            "--out", str(out)], capsys)
        assert code == 0, (kind, err)
        assert (out / f"p_{kind}.svg").read_text().startswith("<?xml")


def test_manifest_contents(tmp_path, capsys):
    assert run(["split", "--out", str(tmp_path), "--ratio", "0.7"], capsys)[0] == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    for key in ("schema_version", "toolkit_version", "command", "argv", "config", "seeds", "inputs", "outputs",
                "duration_seconds"):
        assert key in man
    assert man["command"] == "split"
    assert man["config"]["ratio"] == 0.7 and man["config"]["seed"] == 0
    assert man["seeds"] == {"split": 0}
    assert {o["path"] for o in man["outputs"]} == {"mini_train.csv", "mini_test.csv"}
    import hashlib

    for o in man["outputs"]:
        assert hashlib.sha256((tmp_path / o["path"]).read_bytes()).hexdigest() == o["sha256"]


def test_pipeline_bad_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"nonsense": 1}))
    code, _, err = run(["pipeline", "--config", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == EXIT_CODES["validate"]
