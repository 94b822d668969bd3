import dataclasses
import json

import pytest

from gaitkd.cli import main
from gaitkd.config import RunConfig, dump_config
from gaitkd.objective import ABLATION_VARIANTS
from gaitkd.toybench import ModelConfig, SynthConfig, TrainConfig

TINY = RunConfig(
    synth=SynthConfig(num_ids=10, samples_per_id=8, seq_feature_dim=8, num_parts=4, part_input_dim=6,
                      view_count=2, noise_sigma=0.3, seed=1),
    student=ModelConfig(num_parts=2, hidden=8, depth=1, emb_dim=4),
    teachers=(ModelConfig(num_parts=4, hidden=16, depth=2, emb_dim=6),),
    teacher_train=TrainConfig(steps=40),
    train=TrainConfig(steps=15),
    seeds=(0, 1),
)


@pytest.fixture
def workdir(tmp_path):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(dump_config(TINY))
    return tmp_path, ["--config", str(cfg), "--out", str(tmp_path / "out")]


def test_gen_writes_dataset_and_manifest(workdir):
    tmp, common = workdir
    assert main(["gen", *common]) == 0
    out = tmp / "out"
    lines = (out / "data.csv").read_text().splitlines()
    assert len(lines) == 1 + 80
    manifest = json.loads((out / "manifest_gen.json").read_text())
    assert {"seed", "config_sha256", "data_sha256"} <= set(manifest)
    assert (out / "config.yaml").exists()


def test_pipeline_with_student_only_eval(workdir, capsys):
    tmp, common = workdir
    out = tmp / "out"
    assert main(["train-teacher", *common]) == 0
    assert main(["train-baseline", *common]) == 0
    teacher_bytes = (out / "teacher0.ckpt").read_bytes()
    assert main(["distill", *common]) == 0
    assert (out / "teacher0.ckpt").read_bytes() == teacher_bytes

    record = json.loads((out / "distill_record.json").read_text())
    R_t, R_b, R_s = record["teacher_rank1"], record["baseline_rank1"], record["student_rank1"]
    if R_t != R_b:
        assert record["gap_closed"] == pytest.approx((R_s - R_b) / (R_t - R_b) * 100)

    (out / "teacher0.ckpt").unlink()
    capsys.readouterr()
    assert main(["eval", str(out / "student.ckpt"), *common]) == 0
    first = capsys.readouterr().out
    assert main(["eval", str(out / "student.ckpt"), *common]) == 0
    assert capsys.readouterr().out == first
    assert "rank1" in first


def test_inert_distill_equals_baseline(workdir, tmp_path):
    tmp, common = workdir
    inert = tmp / "inert.yaml"
    text = dump_config(dataclasses.replace(
        TINY, objective=dataclasses.replace(TINY.objective, lambda_logit=0.0, lambda_bound=0.0)))
    inert.write_text(text)
    args = ["--config", str(inert), "--out", str(tmp / "inert")]
    assert main(["train-teacher", *args]) == 0
    assert main(["train-baseline", *args]) == 0
    assert main(["distill", *args]) == 0
    out = tmp / "inert"
    assert (out / "student_eval.txt").read_text() == (out / "baseline_eval.txt").read_text()
    assert (out / "student_history.csv").read_text() == (out / "baseline_history.csv").read_text()


def test_aggregation_modes_produce_records(workdir):
    tmp, common = workdir
    assert main(["train-teacher", *common]) == 0
    records = {}
    for mode in ("gaitkd", "mean_teacher"):
        assert main(["distill", *common, "--aggregation", mode]) == 0
        records[mode] = json.loads((tmp / "out" / "distill_record.json").read_text())
    assert records["gaitkd"]["aggregation"] == "gaitkd"
    assert records["mean_teacher"]["aggregation"] == "mean_teacher"


def test_distill_without_teachers_is_io_error(workdir):
    _, common = workdir
    assert main(["distill", *common]) == 3


def test_bad_config_exit_code(tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("synth:\n  num_idz: 3\n")
    assert main(["gen", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_missing_checkpoint_exit_code(workdir):
    tmp, common = workdir
    assert main(["eval", str(tmp / "nope.ckpt"), *common]) == 3


def test_gradcheck_verb(workdir):
    tmp, common = workdir
    assert main(["gradcheck", "--points", "2", *common]) == 0
    report = (tmp / "out" / "gradcheck.txt").read_text()
    for name in ("ce", "triplet", "kl", "tckd", "nckd", "dkd", "ab", "ab_multilayer", "total"):
        assert f"\n{name} " in report


def test_ablate_rows(workdir):
    tmp, common = workdir
    assert main(["ablate", *common, "--variants", "baseline", "full", "--seeds", "0"]) == 0
    rows = (tmp / "out" / "ablation.csv").read_text().splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["teacher", "baseline", "full"]
    assert "full" in ABLATION_VARIANTS


def test_dump_embeddings(workdir):
    tmp, common = workdir
    assert main(["train-baseline", *common]) == 0
    ckpt = str(tmp / "out" / "baseline.ckpt")
    assert main(["dump-embeddings", ckpt, *common]) == 0
    first = (tmp / "out" / "embeddings.csv").read_text()
    rows = first.splitlines()
    assert len(rows) == 1 + 20 + 20
    assert len(rows[0].split(",")) == 3 + 4 * 2
    assert sum(r.startswith("probe,") for r in rows) == 20
    assert main(["dump-embeddings", ckpt, *common]) == 0
    assert (tmp / "out" / "embeddings.csv").read_text() == first


def test_thread_flag_does_not_change_results(workdir):
    tmp, common = workdir
    outs = []
    for n in (1, 4):
        target = tmp / f"t{n}"
        assert main(["train-baseline", "--config", common[1], "--out", str(target), "--threads", str(n)]) == 0
        outs.append((target / "baseline_history.csv").read_text())
    assert outs[0] == outs[1]


def test_out_env_override(tmp_path, monkeypatch):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(dump_config(TINY))
    monkeypatch.setenv("GAITKD_OUT", str(tmp_path / "env"))
    assert main(["gen", "--config", str(cfg)]) == 0
    assert (tmp_path / "env" / "data.csv").exists()
