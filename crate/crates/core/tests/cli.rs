mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn r2reid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_r2reid")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(r2reid(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(r2reid(&[]).status.code(), Some(2));
    assert_eq!(r2reid(&["eval", "--bogus"]).status.code(), Some(2));
}

#[test]
fn help_lists_every_flag() {
    let top = r2reid(&["--help"]);
    assert_eq!(top.status.code(), Some(0));
    for sub in ["synth", "train", "extract", "rank", "eval", "gradcheck"] {
        assert!(stdout(&top).contains(sub), "{sub}");
    }
    let cases: [(&str, &[&str]); 6] = [
        ("synth", &["--out", "--ids", "--imgs-per-id", "--height", "--width", "--seed"]),
        ("train", &["--config", "--seed", "--out"]),
        ("extract", &["--checkpoint", "--manifest", "--out", "--config"]),
        ("rank", &["--checkpoint", "--query", "--gallery", "--top-k", "--config"]),
        (
            "eval",
            &["--checkpoint", "--query-manifest", "--gallery-manifest", "--query-index", "--gallery-index", "--top-k", "--config"],
        ),
        ("gradcheck", &["--scope", "--seeds"]),
    ];
    for (sub, flags) in cases {
        let help = stdout(&r2reid(&[sub, "--help"]));
        for f in flags {
            assert!(help.contains(f), "{sub} --help lacks {f}");
        }
    }
}

#[test]
fn synth_is_deterministic_and_validates() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = r2reid(&["synth", "--seed", "7", "--out", p(d.path())]);
        assert_eq!(o.status.code(), Some(0), "{o:?}");
    }
    let fa = common::files_in(a.path());
    assert_eq!(fa, common::files_in(b.path()));
    assert_eq!(fa.iter().filter(|(n, _)| n.ends_with(".rten")).count(), 64);
    assert!(fa.iter().any(|(n, _)| n == "query.csv"));

    let o = r2reid(&["synth", "--ids", "1", "--out", p(a.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("identities"));
}

#[test]
fn eval_on_prebaked_descriptors() {
    use r2reid::retrieval::GalleryIndex;
    let dir = tempfile::tempdir().unwrap();
    let names = |n: usize| (0..n).map(|i| i.to_string()).collect::<Vec<_>>();
    let basis = |i: usize| (0..4).map(|j| if i == j { 1.0 } else { 0.05 }).collect::<Vec<f32>>();
    let queries = GalleryIndex::build(&(0..4).map(basis).collect::<Vec<_>>(), vec![1, 2, 3, 4], vec![1; 4], &names(4)).unwrap();
    let gallery = GalleryIndex::build(
        &[basis(0), basis(1), basis(2), basis(3), vec![1.0, 1.0, 1.0, 1.0]],
        vec![1, 2, 3, 4, -1],
        vec![2, 2, 2, 2, 2],
        &names(5),
    )
    .unwrap();
    let (qp, gp) = (dir.path().join("q.r2gx"), dir.path().join("g.r2gx"));
    queries.save(&qp).unwrap();
    gallery.save(&gp).unwrap();
    let o = r2reid(&["eval", "--query-index", p(&qp), "--gallery-index", p(&gp), "--top-k", "3"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let out = stdout(&o);
    assert!(out.lines().any(|l| l == "mAP,1.0"), "{out}");
    assert!(out.lines().any(|l| l == "1,1.0"), "{out}");
}

#[test]
fn missing_files_are_named() {
    let o = r2reid(&["eval", "--query-index", "/nonexistent/q.r2gx", "--gallery-index", "/nonexistent/g.r2gx"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/q.r2gx"));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.r2gx");
    fs::write(&bad, b"XXXX\x01").unwrap();
    let o = r2reid(&["eval", "--query-index", p(&bad), "--gallery-index", p(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad magic"));
}

#[test]
fn gradcheck_block_scope() {
    let o = r2reid(&["gradcheck", "--scope", "block"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let out = stdout(&o);
    let line = out.lines().find(|l| l.starts_with("res2net_block ")).expect("res2net_block row");
    let fields: Vec<&str> = line.split_whitespace().collect();
    let err: f64 = fields[2].parse().unwrap();
    assert!(err < 1e-4, "{line}");
    assert_eq!(fields.last(), Some(&"pass"));
    assert_eq!(r2reid(&["gradcheck", "--scope", "everything"]).status.code(), Some(2));
}

#[test]
fn train_extract_rank_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(r2reid(&["synth", "--out", p(&data), "--ids", "4", "--imgs-per-id", "4"]).status.code(), Some(0));
    let config = dir.path().join("cfg.json");
    fs::write(
        &config,
        r#"{
  "train_manifest": "data/train.csv",
  "out_dir": "run",
  "train": {"max_iterations": 4, "batch_size": 4, "augment": {"crop_h": 32, "crop_w": 16}}
}"#,
    )
    .unwrap();
    let o = r2reid(&["train", "--config", p(&config), "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let run = dir.path().join("run");
    let ckpt = run.join("model.r2mt");
    let loss = fs::read_to_string(run.join("loss.csv")).unwrap();
    assert!(loss.starts_with("iter,epoch,lr,id_loss_a,id_loss_b,verif_loss,total\n"));
    assert_eq!(loss.lines().count(), 5);

    let bytes = fs::read(&ckpt).unwrap();
    let o = r2reid(&["train", "--config", p(&config), "--seed", "3", "--out", p(&dir.path().join("again"))]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read(dir.path().join("again/model.r2mt")).unwrap(), bytes);

    let idx = dir.path().join("index");
    let o = r2reid(&[
        "extract", "--checkpoint", p(&ckpt), "--manifest", p(&data.join("gallery.csv")), "--out", p(&idx), "--config", p(&config),
    ]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    for f in ["descriptors.rten", "gallery.r2gx", "gallery.csv"] {
        assert!(idx.join(f).is_file(), "{f}");
    }

    let gallery_img = fs::read_to_string(data.join("gallery.csv")).unwrap();
    let first = gallery_img.lines().nth(1).unwrap().split(',').next().unwrap().to_string();
    let o = r2reid(&[
        "rank", "--checkpoint", p(&ckpt), "--query", p(&data.join(&first)), "--gallery", p(&idx.join("gallery.r2gx")), "--top-k", "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3, "{out}");
    // the query is itself in the gallery, so it ranks first
    assert!(lines[1].starts_with("1,1.0000") && lines[1].ends_with(&first), "{out}");

    let o = r2reid(&[
        "eval", "--checkpoint", p(&ckpt), "--query-manifest", p(&data.join("query.csv")), "--gallery-manifest", p(&data.join("gallery.csv")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).lines().any(|l| l.starts_with("mAP,")));

    let o = r2reid(&["eval", "--checkpoint", p(&ckpt), "--query-manifest", p(&data.join("query.csv"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_with_unknown_key_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.json");
    fs::write(&config, r#"{"train_manifest": "t.csv", "learning_rate": 0.1}"#).unwrap();
    let o = r2reid(&["train", "--config", p(&config), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
}

#[test]
fn shipped_toy_config_matches_test_setup() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.json");
    let cfg = r2reid::cli::CliConfig::load(&path).unwrap();
    assert_eq!(cfg.backbone, r2reid::res2net::BackboneConfig::toy(0));
    let expected = common::toy_train_config(0);
    assert_eq!(cfg.train, expected);
    assert!(cfg.train_manifest.ends_with("data/train.csv"));
}
