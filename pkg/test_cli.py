"""End-to-end checks of the command-line entry point."""

import json

import pytest

from app import main
from data_pipeline import file_digest, read_pairs, read_tsv

CORPUS = (["C" * n + "O" for n in range(4, 11)] + ["C" * n + "N" for n in range(4, 11)]
          + ["c1ccccc1", "c1ccccc1O", "c1ccccc1N", "c1ccncc1", "Oc1ccc(O)cc1", "C1CCCCC1", "OC1CCCCC1"])


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "mols.txt").write_text("\n".join(CORPUS) + "\nC((C\n", encoding="utf-8")
    (tmp_path / "holdout.txt").write_text("CCCCCCCCCCO\n", encoding="utf-8")
    (tmp_path / "cmg.conf").write_text("# curation\ndata.negative_cap=20\ndata.simnet_fraction=0.5\n"
                                       "runtime.progress=false\n", encoding="utf-8")
    return tmp_path


def test_missing_checkpoint_exits_with_usage(workspace, capsys):
    with pytest.raises(SystemExit) as info:
        main(["generate", "--model", str(workspace / "nope.ckpt"), "--input", str(workspace / "mols.txt"),
              "--out", str(workspace / "gen.tsv")])
    assert info.value.code == 2
    assert "usage:" in capsys.readouterr().err


def test_evaluate_moo_without_successes(workspace, capsys):
    gen = workspace / "gen.tsv"
    gen.write_text("# config_hash=x seed=0\n"
                   "input_smiles\tjitter_index\toutput_smiles\tvalid\ttanimoto\ts_beam\ts_pn\ts_sn\n"
                   "CCO\t0\tCCN\t1\t0.3\t-1.0\t0.5\t0.5\n"
                   "CCO\t1\tC(\t0\t\t-2.0\t0.1\t0.1\n", encoding="utf-8")
    assert main(["evaluate", "--generations", str(gen), "--mode", "moo"]) == 0
    out = capsys.readouterr().out
    assert "moo_success_rate: 0.00%" in out
    assert "validity: 0.5000" in out


def test_bad_config_file_exits_2(workspace, capsys):
    bad = workspace / "bad.conf"
    bad.write_text("threads\n", encoding="utf-8")
    code = main(["curate", "--molecules", str(workspace / "mols.txt"), "--out", str(workspace / "out"),
                 "--config", str(bad)])
    assert code == 2
    assert "configuration error" in capsys.readouterr().err


def test_curate_writes_artifacts(workspace):
    out = workspace / "data"
    code = main(["curate", "--molecules", str(workspace / "mols.txt"), "--holdout", str(workspace / "holdout.txt"),
                 "--out", str(out), "--config", str(workspace / "cmg.conf"), "--seed", "3"])
    assert code == 0

    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["seed"] == 3
    assert manifest["counts"]["molecules"] == len(CORPUS) - 1
    for name, digest in manifest["digests"].items():
        assert file_digest(out / name) == digest

    train = read_pairs(out / "pairs_train.tsv")
    dev = read_pairs(out / "pairs_dev.tsv")
    assert len(train) + len(dev) == manifest["counts"]["pairs"]
    assert all(s >= 0.4 for s in train.similarity)
    assert "CCCCCCCCCCO" not in set(train.x) | set(train.y) | set(dev.x) | set(dev.y)

    simnet = read_pairs(out / "simnet_train.tsv")
    assert set(simnet.labels.tolist()) <= {0, 1}
    molecules = read_tsv(out / "molecules_train.tsv", ["smiles", "plogp", "qed", "drd2"])
    assert "C((C" not in set(molecules["smiles"])
    assert (out / "scaler.json").exists()


def test_curate_is_reproducible(workspace):
    digests = []
    for name in ("a", "b"):
        main(["curate", "--molecules", str(workspace / "mols.txt"), "--out", str(workspace / name),
              "--config", str(workspace / "cmg.conf"), "--seed", "1"])
        digests.append(json.loads((workspace / name / "manifest.json").read_text(encoding="utf-8"))["digests"])
    assert digests[0] == digests[1]


TINY_PIPELINE = ("model.d=8\nmodel.heads=2\nmodel.enc_layers=1\nmodel.dec_layers=1\nmodel.ff=16\n"
                 "model.max_len=24\nmodel.rnn_d=6\ntrain.batch_size=8\ntrain.patience=2\n"
                 "decode.beam_width=2\ndecode.n_samples=2\ndecode.max_len=24\nruntime.progress=false\n")


def run_pipeline(workspace, name, seed):
    """Run every subcommand once under ``workspace/name`` and return the artifacts written."""
    root = workspace / name
    root.mkdir()
    conf = workspace / "tiny.conf"
    conf.write_text(TINY_PIPELINE, encoding="utf-8")
    (workspace / "inputs.txt").write_text("CCCCO\nc1ccccc1O\n", encoding="utf-8")
    common = ["--config", str(conf), "--seed", str(seed)]
    data = root / "data"
    out = {
        "propnet": root / "propnet.ckpt", "propnet_report": root / "propnet.tsv",
        "simnet": root / "simnet.ckpt", "simnet_report": root / "simnet.tsv",
        "cmg": root / "cmg.ckpt", "cmg_report": root / "cmg.tsv",
        "generations": root / "gen.tsv", "metrics": root / "metrics.tsv",
    }
    assert main(["curate", "--molecules", str(workspace / "mols.txt"), "--out", str(data)] + common) == 0
    assert main(["pretrain-propnet", "--data", str(data), "--epochs", "2", "--out", str(out["propnet"]),
                 "--report", str(out["propnet_report"])] + common) == 0
    assert main(["pretrain-simnet", "--data", str(data), "--epochs", "2", "--out", str(out["simnet"]),
                 "--report", str(out["simnet_report"])] + common) == 0
    assert main(["train", "--data", str(data), "--propnet", str(out["propnet"]), "--simnet", str(out["simnet"]),
                 "--epochs", "2", "--out", str(out["cmg"]), "--report", str(out["cmg_report"])] + common) == 0
    assert main(["generate", "--model", str(out["cmg"]), "--input", str(workspace / "inputs.txt"),
                 "--sigma", "0.1,0.1,0.1", "--out", str(out["generations"])] + common) == 0
    assert main(["evaluate", "--generations", str(out["generations"]), "--out", str(out["metrics"])]
                + common) == 0
    report_args = []
    for stage in ("propnet_report", "simnet_report", "cmg_report"):
        report_args += ["--train-report", str(out[stage])]
    assert main(["report", "--metrics", str(out["metrics"]), "--out", str(root / "report")]
                + report_args + common) == 0
    for artifact in ("metrics.tsv", "summary.txt", "summary.html"):
        out[f"report_{artifact}"] = root / "report" / artifact
    for artifact in sorted(p.name for p in data.iterdir()):
        out[f"data_{artifact}"] = data / artifact
    return out


def test_pipeline_commands_write_artifacts(workspace, capsys):
    out = run_pipeline(workspace, "run", seed=5)
    assert all(path.exists() for path in out.values())
    printed = capsys.readouterr().out
    assert "PropNet dev MSE:" in printed
    assert "SimNet dev accuracy:" in printed
    assert "CMG best dev loss" in printed
    assert "for 2 inputs" in printed

    generations = read_tsv(out["generations"], ["input_smiles", "jitter_index", "output_smiles", "valid"])
    assert set(generations["input_smiles"]) <= {"CCCCO", "c1ccccc1O"}
    assert set(generations["jitter_index"]) <= {"0", "1"}
    assert set(generations["valid"]) <= {"0", "1"}

    for stage, name in (("propnet_report", "propnet"), ("simnet_report", "simnet"), ("cmg_report", "cmg")):
        first = out[stage].read_text(encoding="utf-8").splitlines()[0]
        assert first.startswith(f"# stage={name} ")
    metrics = read_tsv(out["metrics"], ["metric", "value", "std"])
    assert "validity" in set(metrics["metric"])
    assert "validity" in out["report_summary.txt"].read_text(encoding="utf-8")


def test_pipeline_is_deterministic(workspace):
    first = run_pipeline(workspace, "first", seed=11)
    second = run_pipeline(workspace, "second", seed=11)
    assert first.keys() == second.keys()
    for name in first:
        assert file_digest(first[name]) == file_digest(second[name]), name
