import json

import pytest

from xrayvlm.cli import main, read_experiment, run_config_from_mapping, CommandError
from xrayvlm.metrics import TABLE3_COLUMNS, TABLE4_COLUMNS

HEADER = """[experiment]
seed = 0
strategy = greedy
fixed_length = false
"""

RUN = """
[{name}]
encoder = {enc}
decoder = {dec}
image_size = 16
patch_size = 4
embed_dim = {embed}
encoder_depth = {depth}
encoder_heads = 2
window_size = 2
model_dim = 16
decoder_depth = 1
decoder_heads = 2
mlp_ratio = 2
max_len = 24
epochs = 1
batch_size = 4
"""


def tiny_config(path, pairings=(("vit", "gpt2"),)):
    runs = [RUN.format(name=f"{enc}_{dec}", enc=enc, dec=dec, embed=16 if enc == "vit" else 8,
                       depth=1 if enc == "vit" else "2,1") for enc, dec in pairings]
    path.write_text(HEADER + "".join(runs))
    return path


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["stats", "--bogus"])
    assert exc.value.code == 2


def test_unknown_command_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["explode"])
    assert exc.value.code == 2


def test_runtime_failure_one_line(tmp_path, capsys):
    assert main(["stats", "--data", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("xrayvlm stats: error:") and err.count("\n") == 1


def test_ingest(synthetic16, tmp_path, capsys):
    assert main(["ingest", "--data", str(synthetic16.root), "--out", str(tmp_path)]) == 0
    assert "16 records" in capsys.readouterr().out
    summary = json.loads((tmp_path / "validation.json").read_text())
    assert summary["total"] == 16 and summary["split_counts"]["train"] == 11


def test_stats_prints_table_row(synthetic16, tmp_path, capsys):
    assert main(["stats", "--data", str(synthetic16.root), "--split", "train", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "Train" in out and "Standard Deviation" in out
    lines = (tmp_path / "report_length_stats.csv").read_text().splitlines()
    assert lines[0].startswith("Split,Count,Mean") and lines[1].startswith("train,11,")


def test_wordcloud_csvs(synthetic16, tmp_path):
    assert main(["wordcloud", "--data", str(synthetic16.root), "--out", str(tmp_path)]) == 0
    before = (tmp_path / "word_frequencies_before_stopwords.csv").read_text().splitlines()
    after = (tmp_path / "word_frequencies_after_stopwords.csv").read_text().splitlines()
    assert before[0] == after[0] == "word,count"
    assert len(after) < len(before)


def test_wordcloud_render(synthetic16, tmp_path):
    pytest.importorskip("wordcloud")
    assert main(["wordcloud", "--data", str(synthetic16.root), "--out", str(tmp_path), "--render"]) == 0
    assert (tmp_path / "wordcloud_after_stopwords.png").stat().st_size > 0


def test_evaluate_identical_files(tmp_path, capsys):
    rows = "a\tno acute cardiopulmonary disease\nb\tthe heart size is normal\n"
    (tmp_path / "p.tsv").write_text(rows)
    (tmp_path / "r.tsv").write_text("study_id\ttext\n" + rows)
    assert main(["evaluate", "--pred", str(tmp_path / "p.tsv"), "--ref", str(tmp_path / "r.tsv"),
                 "--out", str(tmp_path / "o")]) == 0
    values = (tmp_path / "o" / "metric_report.csv").read_text().splitlines()[1].split(",")[1:]
    assert [float(v) for v in values] == pytest.approx([1.0] * 9, abs=1e-12)


def test_evaluate_id_mismatch(tmp_path, capsys):
    (tmp_path / "p.tsv").write_text("a\tx\n")
    (tmp_path / "r.tsv").write_text("b\tx\n")
    assert main(["evaluate", "--pred", str(tmp_path / "p.tsv"), "--ref", str(tmp_path / "r.tsv")]) == 1
    assert "missing predictions ['b']" in capsys.readouterr().err


def test_config_parsing(tmp_path):
    settings, runs = read_experiment(tiny_config(tmp_path / "e.cfg", [("swin", "bart"), ("vit", "gpt2")]))
    assert settings["strategy"] == "greedy"
    assert [name for name, _ in runs] == ["swin_bart", "vit_gpt2"]
    swin = runs[0][1]
    assert swin.encoder.depth == (2, 1) and swin.encoder.embed_dim == 8 and swin.epochs == 1
    assert swin.learning_rate == 5e-5 and swin.weight_decay == 0.01 and swin.batch_size == 4


def test_flags_override_config(tmp_path):
    _, runs = read_experiment(tiny_config(tmp_path / "e.cfg"), {"epochs": 3, "learning_rate": 1e-3, "seed": 9})
    run = runs[0][1]
    assert (run.epochs, run.learning_rate, run.seed) == (3, 1e-3, 9)


def test_bad_pairing_rejected():
    with pytest.raises(CommandError):
        run_config_from_mapping({"encoder": "vit", "decoder": "t5"})


def test_table2_defaults():
    run = run_config_from_mapping({"encoder": "swin", "decoder": "bart"})
    assert (run.learning_rate, run.weight_decay, run.batch_size, run.epochs) == (5e-5, 0.01, 8, 8)


def test_train_generate_evaluate_plot(synthetic16, tmp_path, capsys):
    cfg = tiny_config(tmp_path / "e.cfg")
    out = tmp_path / "run"
    assert main(["train", "--data", str(synthetic16.root), "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "loss_curves.csv").read_text().startswith("epoch,train_loss,val_loss\n1,")
    assert (out / "loss_curves.png").stat().st_size > 0
    ckpt = out / "checkpoints" / "epoch_01.npz"
    gen_out = tmp_path / "gen"
    assert main(["generate", "--data", str(synthetic16.root), "--checkpoint", str(ckpt), "--out", str(gen_out),
                 "--no-fixed-length"]) == 0
    preds = (gen_out / "predictions.tsv").read_text().splitlines()
    assert len(preds) == len(synthetic16.split("test"))
    assert main(["evaluate", "--pred", str(gen_out / "predictions.tsv"), "--ref", str(gen_out / "references.tsv"),
                 "--name", "ViT B16-GPT-2"]) == 0
    assert "ViT B16-GPT-2" in capsys.readouterr().out
    assert main(["plot-loss", "--curves", str(out / "loss_curves.csv"), "--out", str(tmp_path / "plots")]) == 0
    assert (tmp_path / "plots" / "loss_curves.png").stat().st_size > 0


def test_generate_needs_checkpoint(synthetic16, tmp_path, capsys):
    assert main(["generate", "--data", str(synthetic16.root), "--out", str(tmp_path)]) == 1


def test_compare_headers_and_layout(synthetic16, tmp_path):
    cfg = tiny_config(tmp_path / "e.cfg", [("vit", "gpt2"), ("swin", "bart")])
    out = tmp_path / "cmp"
    assert main(["compare", "--spec", str(cfg), "--data", str(synthetic16.root), "--out", str(out)]) == 0
    lines = (out / "metric_report.csv").read_text().splitlines()
    assert tuple(lines[0].split(",")) == TABLE3_COLUMNS + TABLE4_COLUMNS[1:]
    assert [ln.split(",")[0] for ln in lines[1:]] == ["ViT B16-GPT-2", "SWIN-BART"]
    text = (out / "metric_report.txt").read_text()
    assert "Model Evaluation with ROUGE and BLEU score" in text and "Model Evaluation with BERTScore" in text
    for slug in ("vit_gpt2", "swin_bart"):
        assert (out / slug / "loss_curves.csv").exists() and (out / slug / "predictions.tsv").exists()
    written = {p.relative_to(tmp_path).parts[0] for p in tmp_path.rglob("*")}
    assert written == {"e.cfg", "cmp"}
