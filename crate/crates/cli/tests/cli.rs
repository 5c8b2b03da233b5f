use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sgmt::corpus::{read_examples, TEST_FILE, TEST_SRC_FILE};
use sgmt::scene_graph::{deserialize, serialize, Modality};

fn sgmt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgmt"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_small(dir: &Path, seed: &str) {
    let o = sgmt(&[
        "gen-data",
        "--out",
        p(dir),
        "--seed",
        seed,
        "--n-train",
        "12",
        "--n-mono",
        "12",
        "--n-test",
        "4",
        "--z-dim",
        "8",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&sgmt(&[])), 1);
    assert_eq!(code(&sgmt(&["frobnicate"])), 1);
    assert_eq!(code(&sgmt(&["train", "--data", "x"])), 1);
    assert_eq!(code(&sgmt(&["--help"])), 0);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    assert_eq!(code(&sgmt(&["eval", "--data", p(&missing), "--hyp", p(&missing)])), 2);
    gen_small(dir.path(), "3");
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "colour = red\n").unwrap();
    let out = dir.path().join("run");
    assert_eq!(
        code(&sgmt(&[
            "train",
            "--data",
            p(dir.path()),
            "--out",
            p(&out),
            "--config",
            p(&cfg)
        ])),
        2
    );
    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let o = sgmt(&["eval", "--data", p(dir.path()), "--checkpoint", p(&junk)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gen_data_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    gen_small(a.path(), "5");
    gen_small(b.path(), "5");
    let mut names: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 5);
    for n in names {
        assert_eq!(
            fs::read(a.path().join(&n)).unwrap(),
            fs::read(b.path().join(&n)).unwrap(),
            "{n:?}"
        );
    }
}

#[test]
fn gradcheck_passes_every_loss() {
    let o = sgmt(&["gradcheck"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for loss in ["cma", "rec", "vcb", "cpb", "vsh"] {
        assert_eq!(
            text.lines().filter(|l| l.starts_with(&format!("{loss}\tPASS"))).count(),
            1,
            "{text}"
        );
    }
}

#[test]
fn train_then_use_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_small(&data, "9");
    let cfg = dir.path().join("tiny.cfg");
    fs::write(
        &cfg,
        "dim = 8\nz_dim = 8\ntri_dim = 3\ntri_hidden = 3\nepochs_stage1 = 2\nepochs_stage2 = 1\nepochs_stage3 = 1\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    let o = sgmt(&["train", "--data", p(&data), "--out", p(&run), "--config", p(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["stage1.ckpt", "stage2.ckpt", "stage3.ckpt", "final.ckpt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let metrics = fs::read_to_string(run.join("metrics.tsv")).unwrap();
    let stages: Vec<&str> = metrics.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(stages, ["1", "1", "2", "3"]);

    let ck = run.join("final.ckpt");
    let o = sgmt(&["eval", "--data", p(&data), "--checkpoint", p(&ck)]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(
        text.contains("bleu_image_free\t") && text.contains("node_recovery\t"),
        "{text}"
    );

    let hyp = dir.path().join("hyp.txt");
    let src = data.join(TEST_SRC_FILE);
    let o = sgmt(&[
        "translate",
        "--data",
        p(&data),
        "--checkpoint",
        p(&ck),
        "--src",
        p(&src),
        "--out",
        p(&hyp),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(&hyp).unwrap().lines().count(), 4);
    let o = sgmt(&["eval", "--data", p(&data), "--hyp", p(&hyp)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).starts_with("bleu\t"));

    let lsg = dir.path().join("test.lsg");
    let examples = read_examples(&data.join(TEST_FILE)).unwrap();
    let lines: Vec<String> = examples.iter().map(|e| serialize(&e.lsg)).collect();
    fs::write(&lsg, lines.join("\n") + "\n").unwrap();
    let vsg = dir.path().join("test.vsg");
    let o = sgmt(&[
        "hallucinate",
        "--lsg",
        p(&lsg),
        "--checkpoint",
        p(&ck),
        "--data",
        p(&data),
        "--out",
        p(&vsg),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let graphs: Vec<_> = fs::read_to_string(&vsg)
        .unwrap()
        .lines()
        .map(|l| deserialize(l).unwrap())
        .collect();
    assert_eq!(graphs.len(), 4);
    assert!(graphs
        .iter()
        .all(|g| g.modality() == Modality::Visual && g.validate().is_ok()));
    let report = stdout(&o);
    assert!(
        report.starts_with("kind\tbefore\tafter\trate") && report.contains("object\t"),
        "{report}"
    );

    let o = sgmt(&["stats", "--data", p(&data), "--split", "train"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("object\t"));
}
