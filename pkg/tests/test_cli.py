import json

import pytest

from faceshape.cli import build_parser, main
from faceshape.stats import FeatureStats, load_correlation
from faceshape.training import TrainingConfig
from faceshape.world import BackendDescriptor


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    main(["make-backend", "--out", str(root / "backend.json"),
          "--seed", "11", "--n-styles", "2", "--style-dim", "32",
          "--height", "32", "--width", "32"])
    return root


def test_make_backend_writes_descriptor(workdir, capsys):
    descriptor = BackendDescriptor.load(workdir / "backend.json")
    assert descriptor.seed == 11
    assert descriptor.style_dim == 32


def test_fit_stats_roundtrip(workdir):
    main(["fit-stats", "--backend", str(workdir / "backend.json"),
          "--out", str(workdir / "stats.tsv"),
          "--correlation-out", str(workdir / "corr.tsv"),
          "--samples", "1200", "--seed", "3"])
    stats = FeatureStats.load(workdir / "stats.tsv")
    assert stats.sample_count == 1200
    corr = load_correlation(workdir / "corr.tsv")
    assert corr.shape == (23, 23)


def test_train_evaluate_cycle(workdir, capsys):
    config = TrainingConfig(
        backend=BackendDescriptor.load(workdir / "backend.json"),
        steps=8, batch_size=4, lr=1e-3, stats_samples=1200, log_every=50)
    config.save(workdir / "train.json")
    main(["train", "--config", str(workdir / "train.json"),
          "--out", str(workdir / "editor.pt"), "--steps", "6"])
    assert (workdir / "editor.pt").exists()
    assert (workdir / "editor.metrics.jsonl").exists()
    capsys.readouterr()

    main(["evaluate", "--checkpoint", str(workdir / "editor.pt"),
          "--faces", "10", "--edits", "1", "--seed", "5",
          "--out", str(workdir / "report.json")])
    printed = json.loads(capsys.readouterr().out)
    assert printed["n_faces"] == 10
    saved = json.loads((workdir / "report.json").read_text())
    assert saved["edit_error"] == printed["edit_error"]


def test_ablate_subset(workdir, capsys):
    main(["ablate", "--config", str(workdir / "train.json"),
          "--out", str(workdir / "ablation"),
          "--variants", "full", "full3x", "--seeds", "0",
          "--faces", "6", "--edits", "1"])
    out = capsys.readouterr().out
    assert "full3x" in out
    records = json.loads(
        (workdir / "ablation" / "ablation_records.json").read_text())
    assert set(records) == {"full", "full3x"}


def test_serve_parser_wiring():
    args = build_parser().parse_args(
        ["serve", "--checkpoint", "x.pt", "--port", "9000"])
    assert args.port == 9000 and args.host == "127.0.0.1"
    with pytest.raises(SystemExit):
        build_parser().parse_args(["serve"])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["no-such-command"])
