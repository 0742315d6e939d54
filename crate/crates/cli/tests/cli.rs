use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn npdec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npdec"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("npdec runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = npdec(dir, args);
    assert!(
        out.status.success(),
        "npdec {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path) {
    ok(dir, &["gen-synth", "--out-dir", "."]);
}

const TRAIN: [&str; 10] = [
    "train",
    "--corpus",
    "corpus.jsonl",
    "--examples",
    "train.jsonl",
    "--k",
    "2",
    "--epochs",
    "3",
    "--seed",
];

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        npdec(dir.path(), &["train", "--bogus"]).status.code(),
        Some(1)
    );
    assert_eq!(
        npdec(dir.path(), &["no-such-command"]).status.code(),
        Some(1)
    );
    assert_eq!(npdec(dir.path(), &["train"]).status.code(), Some(1));
    assert_eq!(npdec(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(
        npdec(
            dir.path(),
            &[
                "train",
                "--corpus",
                "c",
                "--examples",
                "e",
                "--out",
                "o",
                "--mode",
                "fancy"
            ]
        )
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = npdec(
        dir.path(),
        &["build-vocab", "--corpus", "missing.jsonl", "--out", "v.txt"],
    );
    assert_eq!(out.status.code(), Some(2));
    fs::write(dir.path().join("bad.jsonl"), "{\"doc_id\": 1}\n").unwrap();
    let out = npdec(
        dir.path(),
        &["build-vocab", "--corpus", "bad.jsonl", "--out", "v.txt"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn pipeline_composes_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    ok(
        d,
        &[
            "build-vocab",
            "--corpus",
            "corpus.jsonl",
            "--out",
            "vocab.txt",
        ],
    );
    ok(
        d,
        &[
            "build-ce",
            "--corpus",
            "corpus.jsonl",
            "--vocab",
            "vocab.txt",
            "--k",
            "2",
            "--out",
            "ce.bin",
        ],
    );
    let mut train = TRAIN.to_vec();
    train.extend([
        "0",
        "--vocab",
        "vocab.txt",
        "--ce",
        "ce.bin",
        "--out",
        "m.ckpt",
    ]);
    ok(d, &train);
    assert!(d.join("m.ckpt.ce").exists() && d.join("m.ckpt.config.toml").exists());
    ok(
        d,
        &[
            "decode",
            "--corpus",
            "corpus.jsonl",
            "--examples",
            "test.jsonl",
            "--vocab",
            "vocab.txt",
            "--checkpoint",
            "m.ckpt",
            "--ce",
            "m.ckpt.ce",
            "--beam",
            "10",
            "--topn",
            "10",
            "--out",
            "res.jsonl",
        ],
    );
    let results = fs::read_to_string(d.join("res.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 50);
    for line in results.lines() {
        let docs = line.matches("\"doc_id\"").count();
        assert!((1..=10).contains(&docs), "{line}");
    }
    let report = ok(
        d,
        &[
            "eval",
            "--corpus",
            "corpus.jsonl",
            "--examples",
            "test.jsonl",
            "--results",
            "res.jsonl",
            "--metrics",
            "rprec,hits@1,recall@10",
            "--split-overlap",
        ],
    );
    let names: Vec<&str> = report
        .lines()
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    assert_eq!(names[0], "rprec");
    assert!(names.contains(&"hits@1[low]") && names.contains(&"recall@10[high]"));
    for line in report.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 3);
        let mean: f64 = cols[1].parse().unwrap();
        assert!((0.0..=1.0).contains(&mean));
    }
}

#[test]
fn two_hop_decoding_writes_ranked_documents() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-synth", "--chain", "--out-dir", "."]);
    ok(
        d,
        &[
            "train",
            "--corpus",
            "corpus.jsonl",
            "--examples",
            "queries.jsonl",
            "--epochs",
            "2",
            "--out",
            "m.ckpt",
        ],
    );
    ok(
        d,
        &[
            "decode",
            "--corpus",
            "corpus.jsonl",
            "--examples",
            "queries.jsonl",
            "--checkpoint",
            "m.ckpt",
            "--ce",
            "m.ckpt.ce",
            "--hops",
            "2",
            "--dedup",
            "--out",
            "res.jsonl",
        ],
    );
    let line = fs::read_to_string(d.join("res.jsonl")).unwrap();
    assert!(line.matches("\"doc_id\"").count() >= 2);
    assert_eq!(
        npdec(
            d,
            &[
                "decode",
                "--corpus",
                "corpus.jsonl",
                "--examples",
                "queries.jsonl",
                "--checkpoint",
                "m.ckpt",
                "--ce",
                "m.ckpt.ce",
                "--hops",
                "3",
                "--out",
                "r.jsonl",
            ]
        )
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    for out in ["a.ckpt", "b.ckpt"] {
        let mut args = vec![
            "train", "--mode", "np_base", "--k", "5", "--seed", "0", "--epochs", "2",
        ];
        args.extend([
            "--corpus",
            "corpus.jsonl",
            "--examples",
            "train.jsonl",
            "--out",
            out,
        ]);
        ok(d, &args);
    }
    assert_eq!(
        fs::read(d.join("a.ckpt")).unwrap(),
        fs::read(d.join("b.ckpt")).unwrap()
    );
    assert_eq!(
        fs::read(d.join("a.ckpt.ce")).unwrap(),
        fs::read(d.join("b.ckpt.ce")).unwrap()
    );
    let mut args = TRAIN.to_vec();
    args.extend(["1", "--out", "c.ckpt"]);
    ok(d, &args);
    assert_ne!(
        fs::read(d.join("a.ckpt")).unwrap(),
        fs::read(d.join("c.ckpt")).unwrap()
    );
}

#[test]
fn vanilla_checkpoint_decodes_without_ce() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    let mut args = TRAIN.to_vec();
    args.extend(["0", "--mode", "vanilla", "--out", "v.ckpt"]);
    ok(d, &args);
    assert!(!d.join("v.ckpt.ce").exists());
    ok(
        d,
        &[
            "decode",
            "--corpus",
            "corpus.jsonl",
            "--examples",
            "test.jsonl",
            "--checkpoint",
            "v.ckpt",
            "--topn",
            "3",
            "--out",
            "res.jsonl",
        ],
    );
    let results = fs::read_to_string(d.join("res.jsonl")).unwrap();
    assert!(results
        .lines()
        .all(|l| l.matches("\"doc_id\"").count() <= 3));
}

#[test]
fn k1_storage_rows_are_distinct_tokens_plus_specials() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    ok(
        d,
        &[
            "build-ce",
            "--corpus",
            "corpus.jsonl",
            "--k",
            "1",
            "--out",
            "ce.bin",
        ],
    );
    let report = ok(d, &["report-storage", "--ce", "ce.bin"]);
    let field = |name: &str| -> f64 {
        report
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{name}\t")))
            .unwrap()
            .parse()
            .unwrap()
    };
    let corpus = fs::read_to_string(d.join("corpus.jsonl")).unwrap();
    let mut title_tokens = std::collections::BTreeSet::new();
    for line in corpus.lines() {
        let title = line
            .split("\"title\":\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap();
        title_tokens.extend(title.split(' ').map(str::to_string));
    }
    assert_eq!(field("rows") as usize, title_tokens.len() + 3);
    assert_eq!(field("ratio_vs_k1"), 1.0);
}

#[test]
fn storage_report_from_counts() {
    let dir = tempfile::tempdir().unwrap();
    let report = ok(
        dir.path(),
        &[
            "report-storage",
            "--rows",
            "117508",
            "--dim",
            "1024",
            "--occurrences",
            "37000000",
            "--distinct",
            "32000",
        ],
    );
    assert!(report.contains("bytes\t481312768"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    fs::write(
        d.join("run.toml"),
        "corpus = \"corpus.jsonl\"\nk = 1\nout = \"ce.bin\"\n",
    )
    .unwrap();
    let k1 = ok(d, &["build-ce", "--config", "run.toml"]);
    let k2 = ok(d, &["build-ce", "--config", "run.toml", "--k", "2"]);
    let rows = |s: &str| s.split('\t').nth(1).unwrap().parse::<usize>().unwrap();
    assert!(rows(&k2) > rows(&k1));
    fs::write(d.join("bad.toml"), "kk = 1\n").unwrap();
    assert_eq!(
        npdec(d, &["build-ce", "--config", "bad.toml"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn dump_clusters_lists_homograph_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    ok(
        d,
        &[
            "build-ce",
            "--corpus",
            "corpus.jsonl",
            "--k",
            "2",
            "--out",
            "ce.bin",
        ],
    );
    let corpus = fs::read_to_string(d.join("corpus.jsonl")).unwrap();
    let first_title = corpus
        .lines()
        .next()
        .unwrap()
        .split("\"title\":\"")
        .nth(1)
        .unwrap();
    let head = first_title.split(' ').next().unwrap();
    let listing = ok(
        d,
        &[
            "dump-clusters",
            "--corpus",
            "corpus.jsonl",
            "--ce",
            "ce.bin",
            "--token",
            head,
        ],
    );
    assert_eq!(listing.lines().filter(|l| l.starts_with("row ")).count(), 2);
    assert!(listing.contains("syn000") && listing.contains("syn001"));
    assert_eq!(
        npdec(
            d,
            &[
                "dump-clusters",
                "--corpus",
                "corpus.jsonl",
                "--ce",
                "ce.bin",
                "--token",
                "zzzz"
            ]
        )
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck", "--instances", "3"]);
    assert_eq!(out.lines().count(), 5);
}
