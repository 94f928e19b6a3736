import csv
import json

import pytest

from rbal import cli
from rbal.campaign import CampaignError
from rbal.cli import ConfigError, main, parse_config, parse_config_dict, run_experiment


def tiny(tmp_path, **kw):
    doc = {
        "dataset": {"synthetic": {"cycles": 1, "points_per_cycle_per_class": [15, 15, 15, 15],
                                  "first_cycle_points": None, "seed": 2}},
        "process": "synthetic",
        "agents": [{"classifier": "gmm"}],
        "repetitions": 2,
        "init_label_fraction": 0.2,
        "output_dir": str(tmp_path / "out"),
    }
    doc.update(kw)
    return doc


def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def test_minimal_config_defaults(tmp_path):
    cfg = parse_config_dict({"dataset": {"synthetic": {}}, "process": "synthetic",
                             "agents": [{"classifier": "gmm"}]})
    assert cfg.repetitions == 100 and cfg.test_fraction == 0.5 and cfg.base_seed == 0
    assert cfg.agents[0]["baseline"] is True and cfg.agents[0]["name"] == "gmm"


def test_round_trip(tmp_path):
    cfg = parse_config(write(tmp_path, tiny(tmp_path)))
    again = parse_config_dict(json.loads(json.dumps(cfg.to_dict())), cfg.base_dir)
    assert again == cfg


@pytest.mark.parametrize("patch, pointer", [
    ({"repetitions": 0}, "/repetitions"),
    ({"bogus": 1}, "/"),
    ({"test_fraction": "half"}, "/test_fraction"),
    ({"agents": [{"classifier": "gmm", "alpha": -1}]}, "/agents/0/alpha"),
    ({"agents": []}, "/agents"),
])
def test_validation_errors_carry_pointer(tmp_path, patch, pointer):
    with pytest.raises(ConfigError) as err:
        parse_config_dict(tiny(tmp_path, **patch))
    assert str(err.value).startswith(pointer + ":")


def test_duplicate_agent_names(tmp_path):
    with pytest.raises(ConfigError, match="unique"):
        parse_config_dict(tiny(tmp_path, agents=[{"classifier": "gmm"}, {"classifier": "gmm"}]))


def test_manifest_and_rerun_identity(tmp_path):
    cfg = parse_config_dict(tiny(tmp_path, repetitions=1))
    assert run_experiment(cfg, log=open("/dev/null", "w")) == 0
    out = tmp_path / "out"
    assert sorted(p.name for p in out.iterdir()) == ["aggregate.json", "per_query.csv", "summary.csv"]
    first = {p: (out / p).read_bytes() for p in ("per_query.csv", "summary.csv")}
    run_experiment(cfg, log=open("/dev/null", "w"))
    assert first == {p: (out / p).read_bytes() for p in first}


def test_standalone_repetition_reproduces_rows(tmp_path):
    full = tmp_path / "full"
    one = tmp_path / "one"
    doc = tiny(tmp_path, output_dir=str(full))
    path = write(tmp_path, doc)
    assert main(["simulate", "--config", str(path)]) == 0
    assert main(["simulate", "--config", str(path), "--only-rep", "1", "--out", str(one)]) == 0
    rows = lambda p: (p / "per_query.csv").read_text().splitlines()  # noqa: E731
    full_rows = [r for r in rows(full)[1:] if r.startswith("1,")]
    assert full_rows and rows(one)[1:] == full_rows
    with open(one / "per_query.csv", newline="") as fh:
        assert {r["seed"] for r in csv.DictReader(fh)} == {"1"}


def test_two_agent_blocks(tmp_path):
    cfg = parse_config_dict(tiny(tmp_path, agents=[{"classifier": "gmm", "baseline": False},
                                                   {"classifier": "mrvm2", "baseline": False}]))
    run_experiment(cfg, log=open("/dev/null", "w"))
    agg = json.loads((tmp_path / "out" / "aggregate.json").read_text())
    assert sorted(agg["agents"]) == ["gmm", "mrvm2"]
    assert all(len(a["query_counts"]) == 2 for a in agg["agents"].values())


def test_baseline_block_added(tmp_path):
    cfg = parse_config_dict(tiny(tmp_path))
    run_experiment(cfg, log=open("/dev/null", "w"))
    agg = json.loads((tmp_path / "out" / "aggregate.json").read_text())
    assert sorted(agg["agents"]) == ["gmm", "gmm_random"]
    assert agg["agents"]["gmm"]["query_counts"] == agg["agents"]["gmm_random"]["query_counts"]


def test_exit_codes(tmp_path, monkeypatch, capsys):
    bad = write(tmp_path, tiny(tmp_path, repetitions=0), "bad.json")
    assert main(["simulate", "--config", str(bad)]) == 2
    assert "/repetitions" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["report", "--out", str(tmp_path / "nowhere")]) == 2
    good = write(tmp_path, tiny(tmp_path))
    assert main(["simulate", "--config", str(good), "--only-rep", "5"]) == 2

    def fail(*a, **k):
        raise CampaignError(3, RuntimeError("diverged"))

    monkeypatch.setattr(cli, "run_campaign", fail)
    assert main(["simulate", "--config", str(good)]) == 3
    summary = (tmp_path / "out" / "summary.csv").read_text()
    assert "error: campaign aborted at pool step 3" in summary


def test_report_and_dataset_commands(tmp_path, capsys):
    good = write(tmp_path, tiny(tmp_path))
    assert main(["simulate", "--config", str(good)]) == 0
    assert main(["report", "--out", str(tmp_path / "out")]) == 0
    assert "gmm_random" in capsys.readouterr().out
    csv_path = tmp_path / "d.csv"
    assert main(["dataset", "gen", "--config", str(good), "--out", str(csv_path)]) == 0
    assert main(["dataset", "import", str(csv_path), "--dims", "2"]) == 0
    assert "60 observations" in capsys.readouterr().out
    assert main(["dataset", "import", str(csv_path), "--dims", "4"]) == 2


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    assert "repetitions=100" in capsys.readouterr().out
