import json
import logging

import numpy as np
import pytest

from husformer import kernels
from husformer.checkpoint import save_checkpoint
from husformer.cli import main
from husformer.data import read_dataset, synthesize_dataset, write_dataset
from husformer.model import Husformer, ModelConfig
from husformer.training import TrainConfig, train

TINY_MODEL = {"hidden_dim": 8, "heads": 2, "cm_layers": 1, "sa_layers": 1, "ffn_dim": 8}


def write_config(path, **overrides):
    doc = {
        "dataset": "data.hsf",
        "output_dir": "run",
        "variant": "husformer",
        "model": dict(TINY_MODEL),
        "train": {"epochs": 1, "k_folds": 3, "batch_size": 16, "seed": 1},
    }
    doc.update(overrides)
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture
def workdir(tmp_path):
    assert main(["synth", "--samples", "45", "--seed", "7", "-o", str(tmp_path / "data.hsf")]) == 0
    return tmp_path


@pytest.fixture
def trained(workdir):
    cfg = write_config(workdir / "run.json", dump={"indices": [0, 3], "fold": 1})
    assert main(["train", str(cfg), "-q"]) == 0
    return workdir


class TestSynth:
    def test_writes_readable_file_and_manifest(self, workdir, capsys):
        ds = read_dataset(workdir / "data.hsf")
        assert len(ds) == 45 and len(ds.modalities) == 3
        manifest = json.loads((workdir / "data.hsf.json").read_text())
        assert manifest["seed"] == 7 and manifest["coupling"] == 1.0

    def test_summary_line(self, tmp_path, capsys):
        main(["synth", "--modalities", "2", "--samples", "30", "--classes", "4",
              "--coupling", "0.5", "--seed", "3", "-o", str(tmp_path / "d.hsf")])
        out = capsys.readouterr().out
        for token in ("N=30", "n=2", "c=4", "coupling=0.5", "seed=3"):
            assert token in out

    def test_same_flags_same_bytes(self, tmp_path):
        for name in ("a.hsf", "b.hsf"):
            main(["synth", "--samples", "20", "--seed", "2", "-o", str(tmp_path / name)])
        assert (tmp_path / "a.hsf").read_bytes() == (tmp_path / "b.hsf").read_bytes()

    @pytest.mark.parametrize("value", ["1.5", "-0.2"])
    def test_coupling_out_of_range(self, tmp_path, capsys, value):
        assert main(["synth", "--coupling", value, "-o", str(tmp_path / "d.hsf")]) == 2
        assert "--coupling" in capsys.readouterr().err
        assert not (tmp_path / "d.hsf").exists()

    def test_other_flags_validated(self, tmp_path, capsys):
        assert main(["synth", "--classes", "1", "-o", str(tmp_path / "d.hsf")]) == 2
        assert "--classes" in capsys.readouterr().err


class TestTrain:
    def test_outputs(self, trained):
        run = trained / "run"
        report = json.loads((run / "report.json").read_text())
        assert len(report["folds"]) == 3
        for key in ("acc_mean", "acc_std", "f1_mean", "f1_std"):
            assert isinstance(report[key], float)
        assert sorted(p.name for p in run.glob("fold_*.ckpt")) == [
            "fold_00.ckpt", "fold_01.ckpt", "fold_02.ckpt"]
        assert sorted(p.name for p in (run / "attention").iterdir()) == [
            "sample_00000.json", "sample_00003.json"]

    def test_checkpoint_reload_reproduces_fold_metrics(self, trained, capsys):
        report = json.loads((trained / "run" / "report.json").read_text())
        for fold in report["folds"]:
            capsys.readouterr()
            idx = ",".join(map(str, fold["test_indices"]))
            assert main(["eval", "--checkpoint", str(trained / "run" / f"fold_{fold['fold']:02d}.ckpt"),
                         "--dataset", str(trained / "data.hsf"), "--indices", idx]) == 0
            metrics = json.loads(capsys.readouterr().out)
            assert metrics["acc"] == fold["acc"] and metrics["f1"] == fold["f1"]
            assert metrics["confusion"] == fold["confusion"]

    def test_rerun_is_identical(self, trained):
        first = (trained / "run" / "report.json").read_bytes()
        ckpt = (trained / "run" / "fold_00.ckpt").read_bytes()
        dump = (trained / "run" / "attention" / "sample_00003.json").read_bytes()
        assert main(["train", str(trained / "run.json"), "-q"]) == 0
        assert (trained / "run" / "report.json").read_bytes() == first
        assert (trained / "run" / "fold_00.ckpt").read_bytes() == ckpt
        assert (trained / "run" / "attention" / "sample_00003.json").read_bytes() == dump

    def test_variant_flag_and_transformer_log(self, tmp_path, caplog):
        main(["synth", "--modalities", "6", "--samples", "12", "-o", str(tmp_path / "data.hsf")])
        cfg = write_config(tmp_path / "run.json", train={"epochs": 0, "k_folds": 2})
        with caplog.at_level(logging.INFO):
            assert main(["train", str(cfg), "--variant", "huspair"]) == 0
        assert "built huspair: 30 cross-modal transformers" in caplog.text
        report = json.loads((tmp_path / "run" / "report.json").read_text())
        assert report["variant"] == "huspair" and report["cross_modal_transformers"] == 30

    @pytest.mark.parametrize("overrides,message", [
        ({"extra": 1}, "unknown key"),
        ({"model": {"hidden_dim": 8, "heads": 2, "depth": 3}}, "depth"),
        ({"train": {"learning_rate": -1.0}}, "learning_rate"),
        ({"train": {"k_folds": 100}}, "folds"),
        ({"model": {"hidden_dim": 9, "heads": 2}}, "d_k"),
        ({"model": dict(TINY_MODEL, kernel_sizes=[3, 3])}, "kernel_sizes"),
        ({"model": dict(TINY_MODEL, kernel_sizes=4)}, "kernel_size"),
        ({"dump": {"indices": [45]}}, "out of range"),
        ({"variant": "huslstm"}, "variant"),
        ({"dataset": "missing.hsf"}, "missing.hsf"),
    ])
    def test_validation_before_compute(self, workdir, capsys, overrides, message):
        cfg = write_config(workdir / "bad.json", **overrides)
        assert main(["train", str(cfg)]) == 2
        assert message in capsys.readouterr().err
        assert not (workdir / "run").exists()

    def test_missing_required_key(self, workdir, capsys):
        (workdir / "bad.json").write_text(json.dumps({"dataset": "data.hsf"}))
        assert main(["train", str(workdir / "bad.json")]) == 2
        assert "output_dir" in capsys.readouterr().err

    def test_corrupt_dataset(self, workdir, capsys):
        data = workdir / "data.hsf"
        data.write_bytes(data.read_bytes()[:-7])
        assert main(["train", str(write_config(workdir / "run.json"))]) == 2
        assert "byte offset" in capsys.readouterr().err


class TestEval:
    def test_twice_identical(self, trained, capsys):
        args = ["eval", "--checkpoint", str(trained / "run" / "fold_00.ckpt"),
                "--dataset", str(trained / "data.hsf")]
        main(args)
        a = capsys.readouterr().out
        main(args)
        b = capsys.readouterr().out
        assert a == b
        doc = json.loads(a)
        assert np.sum(doc["confusion"]) == 45 and doc["n"] == 45

    def test_memorized_toy_set_scores_perfectly(self, tmp_path, capsys):
        ds = synthesize_dataset(2, n_samples=30, coupling=0.0, noise=0.0, seed=0)
        write_dataset(ds, tmp_path / "toy.hsf")
        cfg = ModelConfig([m._asdict() for m in ds.modalities], 3, **TINY_MODEL)
        model = Husformer(cfg, seed=0)
        train(model, ds, TrainConfig(batch_size=10, epochs=30, learning_rate=1e-2))
        save_checkpoint(model, tmp_path / "toy.ckpt")
        main(["eval", "--checkpoint", str(tmp_path / "toy.ckpt"), "--dataset", str(tmp_path / "toy.hsf")])
        doc = json.loads(capsys.readouterr().out)
        assert doc["acc"] == 1.0 and doc["f1"] == 1.0

    def test_shape_mismatch_names_modalities(self, trained, capsys):
        main(["synth", "--modalities", "2", "--samples", "10", "-o", str(trained / "two.hsf")])
        capsys.readouterr()
        assert main(["eval", "--checkpoint", str(trained / "run" / "fold_00.ckpt"),
                     "--dataset", str(trained / "two.hsf")]) == 2
        err = capsys.readouterr().err
        assert "'m2'" in err and "expects" in err

    def test_index_out_of_range(self, trained, capsys):
        assert main(["eval", "--checkpoint", str(trained / "run" / "fold_00.ckpt"),
                     "--dataset", str(trained / "data.hsf"), "--indices", "3,99"]) == 2
        assert "99" in capsys.readouterr().err


class TestDumpAttention:
    def _dump(self, trained, out, indices="2,5"):
        return main(["dump-attn", "--checkpoint", str(trained / "run" / "fold_00.ckpt"),
                     "--dataset", str(trained / "data.hsf"), "--indices", indices, "-o", str(out)])

    def test_files_and_normalization(self, trained):
        assert self._dump(trained, trained / "att") == 0
        doc = json.loads((trained / "att" / "sample_00005.json").read_text())
        assert doc["sample"] == 5
        assert set(doc["cross_modal"]) == {"cm.m0", "cm.m1", "cm.m2"}
        assert np.array(doc["cross_modal"]["cm.m1"]).shape == (3, 6)
        assert np.array(doc["self"]).shape == (6, 6)
        assert np.array(doc["z_f"]).shape == (6, 8)
        rows = [np.array(doc["self"])] + [np.array(m) for m in doc["cross_modal"].values()]
        rows += [np.array(layer) for layer in doc["self_layers"]]
        for layers in doc["cross_modal_layers"].values():
            rows += [np.array(layer) for layer in layers]
        for r in rows:
            np.testing.assert_allclose(r.sum(axis=-1), 1.0, atol=1e-6)

    def test_same_sample_twice(self, trained):
        self._dump(trained, trained / "a")
        self._dump(trained, trained / "b")
        for name in ("sample_00002.json", "sample_00005.json"):
            assert (trained / "a" / name).read_bytes() == (trained / "b" / name).read_bytes()

    def test_index_out_of_range(self, trained, capsys):
        assert self._dump(trained, trained / "x", "1,45") == 2
        assert "45" in capsys.readouterr().err


class TestGradcheck:
    def test_default_all_variants_pass(self, capsys):
        assert main(["gradcheck"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 3 and all(line.endswith("PASS") for line in lines)

    def test_corrupted_backward_rule_fails(self, monkeypatch, capsys):
        original = kernels.softmax_backward
        monkeypatch.setattr(kernels, "softmax_backward", lambda y, gy: 1.01 * original(y, gy))
        assert main(["gradcheck", "--variant", "husfuse"]) == 1
        assert capsys.readouterr().out.strip().endswith("FAIL")

    def test_parameter_cap(self, tmp_path, capsys):
        cfg = {"modalities": [{"name": "a", "channels": 4, "input_dim": 64}], "num_classes": 3,
               "hidden_dim": 64, "heads": 4}
        (tmp_path / "big.json").write_text(json.dumps(cfg))
        assert main(["gradcheck", "--config", str(tmp_path / "big.json"), "--variant", "husfuse"]) == 2
        assert "cap" in capsys.readouterr().err


class TestCompare:
    def test_report_comparison(self, trained, capsys):
        report = trained / "run" / "report.json"
        assert main(["compare", str(report), str(report)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["alpha"] == 0.01
        assert doc["metrics"]["acc"]["p"] == 1.0 and not doc["metrics"]["acc"]["significant"]
