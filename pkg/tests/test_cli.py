import os
from pathlib import Path

import pytest

from probattr import cli
from probattr.core import save_taxonomy

GOLDEN = Path(__file__).parent / "golden"
SUBCOMMANDS = ["gen-synth", "train-attrib", "embed", "train-tree", "eval", "explain", "run"]


def invoke(argv):
    try:
        return cli.main([str(a) for a in argv])
    except SystemExit as exc:
        return exc.code


def help_text(name=None):
    parser = cli.build_parser()
    if name is None:
        return parser.format_help()
    return parser._subparsers._group_actions[0].choices[name].format_help()


@pytest.mark.parametrize("name", [None] + SUBCOMMANDS)
def test_help_matches_golden_file(name):
    path = GOLDEN / f"{name or 'probattr'}.txt"
    assert help_text(name) == path.read_text(encoding="utf-8")


@pytest.mark.parametrize("name", ["train-tree", "explain", "run"])
def test_help_lists_documented_flags(name):
    text = help_text(name)
    for flag in ["--taxonomy", "--out", "--seed", "--task", "--kind", "--depth-grid"]:
        assert flag in text
    if name != "train-tree":
        assert "--runs" in text


def test_depth_grid_parsing():
    assert cli.parse_depth_grid("2-4,none") == [2, 3, 4, None]
    assert cli.parse_depth_grid("7") == [7]
    for bad in ["0", "x", "3-a", ""]:
        with pytest.raises(Exception):
            cli.parse_depth_grid(bad)


def test_missing_taxonomy_is_usage_error(tmp_path, capsys):
    assert invoke(["run", "--out", tmp_path]) == 1
    err = capsys.readouterr().err
    assert "usage:" in err and "--taxonomy" in err


def test_unknown_flag_is_usage_error(tmp_path, capsys):
    assert invoke(["gen-synth", "--taxonomy", "default", "--out", tmp_path, "--bogus"]) == 1
    assert "unrecognized arguments: --bogus" in capsys.readouterr().err


def test_metadata_without_embeddings_is_usage_error(tmp_path):
    assert invoke(["run", "--taxonomy", "default", "--out", tmp_path, "--metadata", "m.csv"]) == 1


def test_malformed_embeddings_exit_2(tmp_path, capsys):
    meta = tmp_path / "m.csv"
    meta.write_text("utt_id,split,label,attack_id\na,train,bonafide,\n")
    emb = tmp_path / "e.paeb"
    emb.write_bytes(b"XXXX" + bytes(12))
    rc = invoke(["train-tree", "--taxonomy", "default", "--metadata", meta, "--embeddings", emb,
                 "--out", tmp_path / "o"])
    assert rc == 2
    err = capsys.readouterr().err
    assert str(emb) in err and "byte offset 0" in err


def test_malformed_taxonomy_exit_2(tmp_path):
    bad = tmp_path / "t.yaml"
    bad.write_text("sets: [}\n")
    assert invoke(["gen-synth", "--taxonomy", bad, "--out", tmp_path / "o"]) == 2


@pytest.fixture(scope="module")
def corpus(tmp_path_factory, request):
    """A small corpus built with gen-synth and train-attrib, shared by the subcommand tests."""
    from probattr.core import AttributeSetDef, AttributeTaxonomy

    root = tmp_path_factory.mktemp("corpus")
    tax = AttributeTaxonomy(
        [AttributeSetDef("Inputs", ["Text", "Speech"]),
         AttributeSetDef("Waveform", ["WaveNet", "Concat", "LPC-vocoder"])],
        {"S01": ["Text", "WaveNet"], "S02": ["Speech", "Concat"], "S03": ["Text", "LPC-vocoder"]},
        {"S09": "S02"})
    save_taxonomy(tax, root / "tax.yaml")
    assert invoke(["gen-synth", "--taxonomy", root / "tax.yaml", "--out", root / "data", "--seed", 5,
                   "--dim", 24, "--counts", "30,10,10", "--bonafide", "30,10,10",
                   "--alias-count", 4]) == 0
    base = ["--taxonomy", root / "tax.yaml", "--metadata", root / "data" / "metadata.csv",
            "--embeddings", root / "data" / "embeddings.paeb"]
    assert invoke(["train-attrib", *base, "--out", root / "nets", "--epochs", 5]) == 0
    assert invoke(["embed", "--taxonomy", root / "tax.yaml", "--embeddings",
                   root / "data" / "embeddings.paeb", "--nets", root / "nets", "--out", root / "emb"]) == 0
    attrib = ["--taxonomy", root / "tax.yaml", "--metadata", root / "data" / "metadata.csv",
              "--embeddings", root / "emb" / "attrib_embeddings.paeb"]
    assert invoke(["train-tree", *attrib, "--task", "attribution", "--out", root / "tree",
                   "--depth-grid", "1-4,none"]) == 0
    return root, base, attrib


def files_of(directory):
    return {p.relative_to(directory): p.read_bytes() for p in Path(directory).rglob("*") if p.is_file()}


def subcommand_argv(name, root, base, attrib, out):
    tax = root / "tax.yaml"
    return {
        "gen-synth": ["gen-synth", "--taxonomy", tax, "--seed", 5, "--dim", 24, "--counts", "3,2,2",
                      "--format", "csv"],
        "train-attrib": ["train-attrib", *base, "--epochs", 3, "--seed", 2],
        "embed": ["embed", "--taxonomy", tax, "--embeddings", root / "data" / "embeddings.paeb",
                  "--nets", root / "nets"],
        "train-tree": ["train-tree", *attrib, "--task", "detection", "--seed", 4, "--depth-grid", "1-5"],
        "eval": ["eval", *attrib, "--task", "attribution",
                 "--tree", root / "tree" / "tree_attribution_attrib.json"],
        "explain": ["explain", *attrib, "--task", "attribution", "--runs", 2, "--seed", 1],
        "run": ["run", "--taxonomy", tax, "--seed", 7, "--dim", 24, "--counts", "20,8,8", "--bonafide",
                "20,8,8", "--epochs", 2, "--runs", 2, "--depth-grid", "1-3"],
    }[name] + ["--out", out]


@pytest.mark.parametrize("name", SUBCOMMANDS)
def test_subcommand_is_byte_identical_across_runs(name, corpus, tmp_path, monkeypatch):
    root, base, attrib = corpus
    monkeypatch.chdir(tmp_path)
    for out in ("first", "second"):
        assert invoke(subcommand_argv(name, root, base, attrib, tmp_path / out)) == 0
    first, second = files_of(tmp_path / "first"), files_of(tmp_path / "second")
    assert first and first == second
    # nothing lands beside the output directories
    assert sorted(p.name for p in tmp_path.iterdir()) == ["first", "second"]


def test_eval_writes_metrics_with_exclusions(corpus, tmp_path):
    root, base, attrib = corpus
    assert invoke(subcommand_argv("eval", root, base, attrib, tmp_path)) == 0
    lines = (tmp_path / "metrics_attribution_attrib.csv").read_text().splitlines()
    assert lines[0] == "task,kind,split,n,excluded,accuracy,f1_macro,max_depth"
    assert lines[2].startswith("attribution,attrib,eval,34,0,")


def test_explain_writes_csv_and_ranked_table(corpus, tmp_path):
    root, base, attrib = corpus
    assert invoke(subcommand_argv("explain", root, base, attrib, tmp_path)) == 0
    rows = (tmp_path / "shapley_attribution_attrib.csv").read_text().splitlines()
    assert len(rows) == 1 + 5
    assert [r.split(",")[-1] for r in rows[1:]] == ["1", "2", "3", "4", "5"]
    assert (tmp_path / "shapley_attribution_attrib.txt").read_text().strip()
    assert (tmp_path / "shapley_attribution_attrib_plot.csv").read_text().startswith("label,value,run_1,run_2")


def test_kind_attrib_rejects_raw_embeddings(corpus, tmp_path):
    root, base, _ = corpus
    assert invoke(["train-tree", *base, "--kind", "attrib", "--out", tmp_path]) == 2


def test_embed_with_missing_nets_is_data_error(corpus, tmp_path):
    root, _, _ = corpus
    rc = invoke(["embed", "--taxonomy", root / "tax.yaml", "--embeddings",
                 root / "data" / "embeddings.paeb", "--nets", tmp_path, "--out", tmp_path / "o"])
    assert rc == 2


def test_thread_cap_does_not_change_outputs(corpus, tmp_path, monkeypatch):
    root, base, _ = corpus
    outs = []
    for threads in ("1", "0"):
        monkeypatch.setenv("ATTRIB_TRACE_THREADS", threads)
        out = tmp_path / threads
        assert invoke(["train-attrib", *base, "--epochs", 2, "--out", out]) == 0
        outs.append(files_of(out))
    assert outs[0] == outs[1]
    assert os.environ["ATTRIB_TRACE_THREADS"] == "0"
