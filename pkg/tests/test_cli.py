import os

import numpy as np
import pytest

from hsfuse.cli import main, parse_train_config
from hsfuse.data import EmbeddingTable, write_embedding_file
from hsfuse.errors import ConfigError
from hsfuse.model import load_checkpoint

FIXTURE_DICT = os.path.join(os.path.dirname(__file__), "fixtures", "ecommerce_dict.txt")


def build_corpus(tmp_path, n_per_class=6, classes=4, dim=6, seed=0):
    """Tiny separable corpus: one embedding cluster per class, two modalities."""
    rng = np.random.default_rng(seed)
    codes = [f"64{i:04d}" for i in range(classes)]
    lines = []
    vec_i, vec_t = {}, {}
    centers = rng.normal(scale=3.0, size=(classes, dim))
    for c, code in enumerate(codes):
        for j in range(n_per_class):
            rid = f"r{c}_{j}"
            lines.append(f"id:{rid}\ths6:{code}\tD:sample item number {j}")
            vec_i[rid] = centers[c] + rng.normal(scale=0.1, size=dim)
            vec_t[rid] = -centers[c] + rng.normal(scale=0.1, size=dim)
    manifest = tmp_path / "data.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_embedding_file(EmbeddingTable("I", dim, vec_i), str(tmp_path / "img.emb"))
    write_embedding_file(EmbeddingTable("T", dim, vec_t), str(tmp_path / "txt.emb"))
    return str(manifest), str(tmp_path / "img.emb"), str(tmp_path / "txt.emb")


def train_config(tmp_path, **overrides):
    values = dict(lr=0.01, epochs=30, patience=30, batch_size=4, seed=5,
                  fusion="multconcat", hidden=8)
    values.update(overrides)
    path = tmp_path / "train.cfg"
    path.write_text("".join(f"{k}={v}\n" for k, v in values.items()), encoding="utf-8")
    return str(path)


# --- config file ---------------------------------------------------------------


def test_parse_train_config(tmp_path):
    path = train_config(tmp_path)
    values = parse_train_config(path)
    assert values["lr"] == 0.01 and values["fusion"] == "multconcat"


def test_parse_train_config_unknown_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("learning_rate=0.1\n")
    with pytest.raises(ConfigError) as err:
        parse_train_config(str(path))
    assert "learning_rate" in str(err.value)


# --- exit codes -----------------------------------------------------------------


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "hsfuse" in capsys.readouterr().out


def test_version_exits_zero(capsys):
    assert main(["--version"]) == 0


def test_unknown_subcommand_exits_two(capsys):
    assert main(["conjure"]) == 2
    assert "usage" in capsys.readouterr().err.lower()


def test_unknown_flag_exits_two(capsys):
    assert main(["train", "--manifest", "x", "--out-model", "y", "--frobnicate"]) == 2


def test_missing_config_file_exits_one(tmp_path, capsys):
    manifest, img, txt = build_corpus(tmp_path)
    code = main([
        "train", "--config", str(tmp_path / "missing.cfg"), "--manifest", manifest,
        "--embeddings", f"I={img}", "--out-model", str(tmp_path / "m.ckpt"),
    ])
    assert code == 1
    assert "missing.cfg" in capsys.readouterr().err


def test_bad_config_key_exits_two(tmp_path, capsys):
    manifest, img, txt = build_corpus(tmp_path)
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("nonsense=1\n")
    code = main([
        "train", "--config", str(cfg), "--manifest", manifest,
        "--embeddings", f"I={img}", "--out-model", str(tmp_path / "m.ckpt"),
    ])
    assert code == 2


# --- end-to-end pipeline -----------------------------------------------------------


def run_training(tmp_path, capsys, seed=5):
    manifest, img, txt = build_corpus(tmp_path)
    cfg = train_config(tmp_path, seed=seed)
    model = str(tmp_path / "model.ckpt")
    code = main([
        "train", "--config", cfg, "--manifest", manifest,
        "--embeddings", f"I={img}", "--embeddings", f"T={txt}",
        "--out-model", model,
    ])
    out = capsys.readouterr()
    assert code == 0, out.err
    return manifest, img, txt, model, out.out


def test_train_then_eval_prints_table(tmp_path, capsys):
    manifest, img, txt, model, out = run_training(tmp_path, capsys)
    assert "trained epochs=" in out
    code = main([
        "eval", "--model", model, "--manifest", manifest,
        "--embeddings", f"I={img}", "--embeddings", f"T={txt}",
        "--split", "test", "--topk", "1,3,5",
    ])
    captured = capsys.readouterr()
    assert code == 0, captured.err
    assert "k=1" in captured.out and "k=3" in captured.out and "k=5" in captured.out
    # fully separable toy corpus: the trained model aces its test split
    assert "1.000" in captured.out


def test_eval_writes_machine_report(tmp_path, capsys):
    manifest, img, txt, model, _ = run_training(tmp_path, capsys)
    report_path = str(tmp_path / "report.txt")
    code = main([
        "eval", "--model", model, "--manifest", manifest,
        "--embeddings", f"I={img}", "--embeddings", f"T={txt}",
        "--split", "val", "--out", report_path,
    ])
    assert code == 0
    content = open(report_path).read()
    assert content.startswith("#evalreport v1")
    from hsfuse.evaluation import report_from_text

    report = report_from_text(content)
    assert report.split == "val" and report.n > 0


def test_same_seed_byte_identical_checkpoints(tmp_path, capsys):
    manifest, img, txt = build_corpus(tmp_path)
    cfg = train_config(tmp_path)
    m1, m2 = str(tmp_path / "m1.ckpt"), str(tmp_path / "m2.ckpt")
    for model in (m1, m2):
        code = main([
            "train", "--config", cfg, "--manifest", manifest,
            "--embeddings", f"I={img}", "--embeddings", f"T={txt}",
            "--out-model", model,
        ])
        capsys.readouterr()
        assert code == 0
    assert open(m1, "rb").read() == open(m2, "rb").read()


def test_env_seed_override(tmp_path, capsys, monkeypatch):
    manifest, img, txt = build_corpus(tmp_path)
    cfg = train_config(tmp_path, seed=5)
    monkeypatch.setenv("HSFUSE_SEED", "99")
    model = str(tmp_path / "m.ckpt")
    code = main([
        "train", "--config", cfg, "--manifest", manifest,
        "--embeddings", f"I={img}", "--embeddings", f"T={txt}",
        "--out-model", model,
    ])
    capsys.readouterr()
    assert code == 0
    _, loaded_cfg, _ = load_checkpoint(model)
    assert loaded_cfg.seed == 99


def test_predict_on_record(tmp_path, capsys):
    manifest, img, txt, model, _ = run_training(tmp_path, capsys)
    record = tmp_path / "one.tsv"
    record.write_text("id:r0_0\tD:sample item number 0\n", encoding="utf-8")
    code = main([
        "predict", "--model", model, "--input", str(record),
        "--embeddings", f"I={img}", "--embeddings", f"T={txt}", "--topk", "3",
    ])
    captured = capsys.readouterr()
    assert code == 0, captured.err
    rows = [line.split("\t") for line in captured.out.strip().splitlines()]
    assert len(rows) == 3
    assert [r[0] for r in rows] == ["1", "2", "3"]
    probs = [float(r[2]) for r in rows]
    assert probs == sorted(probs, reverse=True)
    # the training cluster for r0_0 is class 0
    assert rows[0][1] == "640000"


def test_preprocess_command(tmp_path, capsys):
    manifest = tmp_path / "raw.tsv"
    manifest.write_text(
        "id:a1\ths6:640399\tD:RedShirt 100% COTTON!\n"
        "id:a2\ths6:640411\tT:LeatherShoes\n",
        encoding="utf-8",
    )
    out = str(tmp_path / "clean.tsv")
    code = main(["preprocess", "--manifest", str(manifest), "--dict", FIXTURE_DICT, "--out", out])
    captured = capsys.readouterr()
    assert code == 0, captured.err
    content = open(out).read()
    assert "D:red shirt cotton" in content
    assert "T:leather shoes" in content


def test_embeddings_flag_validation(tmp_path, capsys):
    manifest, img, txt = build_corpus(tmp_path)
    code = main([
        "train", "--manifest", manifest, "--embeddings", "garbage",
        "--out-model", str(tmp_path / "m.ckpt"),
    ])
    assert code == 2
    # header modality must match the flag's modality
    code = main([
        "train", "--manifest", manifest, "--embeddings", f"T={img}",
        "--out-model", str(tmp_path / "m.ckpt"),
    ])
    assert code == 2
