use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dtaf::synthetic::RegimeSwitching;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        let x = RegimeSwitching {
            len: 800,
            regime_len: (60, 120),
            ..Default::default()
        }
        .generate();
        let mut csv = String::from("date,value\n");
        for (t, v) in x.iter().enumerate() {
            csv.push_str(&format!("2020-01-01 {t:04},{v}\n"));
        }
        fs::write(ws.path("series.csv"), csv).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Tiny model config; `extra` is appended to the `[model]` section.
    fn config(&self, name: &str, extra: &str) -> PathBuf {
        let text = format!(
            "[data]\npath = \"series.csv\"\nsplit = [0.7, 0.1, 0.2]\n\n\
             [model]\ninput_len = 64\nhorizon = 8\npatch_len = 16\nstride = 8\nd_model = 8\nexperts = 2\ntopk = 3\n{extra}\n\n\
             [train]\nmax_epochs = 2\nbatch_size = 32\nseed = 1\n\n\
             [output]\ndir = \"out\"\n"
        );
        let path = self.path(name);
        fs::write(&path, text).unwrap();
        path
    }
}

fn dtaf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtaf"))
        .args(args)
        .env("DTAF_THREADS", "2")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: PathBuf) -> String {
    fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn train_writes_outputs_and_is_reproducible() {
    let ws = Workspace::new();
    let cfg = ws.config("run.toml", "");
    let out = dtaf(&["train", "--config", s(&cfg)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let dir = ws.path("out");
    for f in ["history.csv", "steps.csv", "metrics.csv", "checkpoint.txt", "checkpoint.txt.bin"] {
        assert!(dir.join(f).is_file(), "{f} missing");
    }
    let history = read(dir.join("history.csv"));
    let hash = history.lines().next().unwrap().to_string();
    assert!(hash.starts_with("# config_hash=") && hash.len() == 14 + 64, "{hash}");
    for f in ["steps.csv", "metrics.csv"] {
        assert_eq!(read(dir.join(f)).lines().next().unwrap(), hash);
    }
    assert_eq!(read(dir.join("checkpoint.txt")).lines().nth(1).unwrap(), hash);
    assert_eq!(history.lines().nth(1).unwrap(), "epoch,task,stable,robust,total,val_mse,val_mae");
    assert_eq!(history.lines().count(), 4);

    let other = ws.path("again");
    let out = dtaf(&["train", "--config", s(&cfg), "--out", s(&other)]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["history.csv", "steps.csv", "metrics.csv", "checkpoint.txt", "checkpoint.txt.bin"] {
        assert_eq!(fs::read(dir.join(f)).unwrap(), fs::read(other.join(f)).unwrap(), "{f}");
    }

    let seeded = ws.path("seeded");
    assert!(dtaf(&["train", "--config", s(&cfg), "--out", s(&seeded), "--seed", "5"]).status.success());
    assert_ne!(read(seeded.join("history.csv")), history);
}

#[test]
fn missing_dataset_is_a_user_error() {
    let ws = Workspace::new();
    let cfg = ws.path("bad.toml");
    fs::write(&cfg, "[data]\npath = \"nowhere.csv\"\n").unwrap();
    let out = dtaf(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nowhere.csv"), "{}", stderr(&out));
}

#[test]
fn config_errors_name_the_field() {
    let ws = Workspace::new();
    let cfg = ws.config("k.toml", "horizons = [8]\nwidth = 3");
    let out = dtaf(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("width"), "{}", stderr(&out));

    let cfg = ws.config("k2.toml", "dropout = 1.5");
    let out = dtaf(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("dropout"), "{}", stderr(&out));

    let out = dtaf(&["train", "--config", s(&ws.path("absent.toml"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("absent.toml"));

    assert_eq!(dtaf(&["fly"]).status.code(), Some(2));
    assert_eq!(dtaf(&["--help"]).status.code(), Some(0));
}

#[test]
fn bad_csv_cells_are_reported_with_their_row() {
    let ws = Workspace::new();
    let mut text = read(ws.path("series.csv"));
    text.push_str("2020-12-31,abc\n");
    fs::write(ws.path("series.csv"), text).unwrap();
    let out = dtaf(&["train", "--config", s(&ws.config("run.toml", ""))]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("row 801") && err.contains("abc"), "{err}");
}

#[test]
fn diverging_training_is_a_runtime_failure() {
    let ws = Workspace::new();
    let cfg = ws.config("boom.toml", "");
    let text = read(cfg.clone()).replace("seed = 1", "seed = 1\nlr = 1e250\nclip_norm = 0");
    fs::write(&cfg, text).unwrap();
    let out = dtaf(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("non-finite"), "{}", stderr(&out));
}

#[test]
fn eval_matches_training_and_checks_shapes() {
    let ws = Workspace::new();
    let cfg = ws.config("run.toml", "");
    assert!(dtaf(&["train", "--config", s(&cfg)]).status.success());
    let dir = ws.path("out");
    let out = dtaf(&["eval", "--config", s(&cfg)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let first = read(dir.join("eval_metrics.csv"));
    assert_eq!(first, read(dir.join("metrics.csv")));
    assert!(dtaf(&["eval", "--config", s(&cfg)]).status.success());
    assert_eq!(first, read(dir.join("eval_metrics.csv")));

    let wide = ws.config("wide.toml", "");
    let text = read(wide.clone()).replace("d_model = 8", "d_model = 16");
    fs::write(&wide, text).unwrap();
    let ckpt = dir.join("checkpoint.txt");
    let out = dtaf(&["eval", "--config", s(&wide), "--checkpoint", s(&ckpt), "--out", s(&ws.path("w"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("embed"), "{}", stderr(&out));

    let out = dtaf(&["eval", "--config", s(&cfg), "--checkpoint", s(&ws.path("none.txt"))]);
    assert_eq!(out.status.code(), Some(2));
}

fn groups(csv: &str) -> Vec<String> {
    let mut v: Vec<String> = csv
        .lines()
        .skip(2)
        .map(|l| l.split(',').next().unwrap().to_string())
        .collect();
    v.dedup();
    v
}

#[test]
fn sweeps_emit_one_group_per_value() {
    let ws = Workspace::new();
    let cfg = ws.config("run.toml", "");
    let text = read(cfg.clone()).replace("max_epochs = 2", "max_epochs = 1");
    fs::write(&cfg, text).unwrap();
    let out = dtaf(&["sweep", "--config", s(&cfg), "--sweep", "topk=2,3,4,5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = read(ws.path("out/sweep_topk.csv"));
    assert_eq!(table.lines().nth(1).unwrap(), "topk,horizon,seed,mse,mae");
    assert_eq!(groups(&table), ["2", "3", "4", "5"]);
    assert_eq!(read(ws.path("out/sweep_topk_failures.csv")).lines().count(), 2);

    let out = dtaf(&["sweep", "--config", s(&cfg), "--sweep", "patch_len=8,16,32,48"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(groups(&read(ws.path("out/sweep_patch_len.csv"))), ["8", "16", "32", "48"]);

    let out = dtaf(&["sweep", "--config", s(&cfg), "--sweep", "topk="]);
    assert_eq!(out.status.code(), Some(2));
    let out = dtaf(&["sweep", "--config", s(&cfg), "--sweep", "heads=1,2"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.contains("topk") && err.contains("patch_len") && err.contains("input_len"), "{err}");
    let out = dtaf(&["sweep", "--config", s(&cfg), "--sweep", "topk=99"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_output_does_not_depend_on_thread_count() {
    let ws = Workspace::new();
    let cfg = ws.config("run.toml", "horizons = [4, 8]");
    let text = read(cfg.clone()).replace("max_epochs = 2", "max_epochs = 1\nseeds = [0, 1]");
    fs::write(&cfg, text).unwrap();
    let run = |threads: &str, out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_dtaf"))
            .args(["sweep", "--config", s(&cfg), "--sweep", "k=2,3", "--out", s(&ws.path(out))])
            .env("DTAF_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        read(ws.path(out).join("sweep_topk.csv"))
    };
    let one = run("1", "a");
    assert_eq!(one, run("4", "b"));
    assert_eq!(one.lines().count(), 2 + 2 * 2 * 2);
    let summary = read(ws.path("a/sweep_topk_summary.csv"));
    assert_eq!(summary.lines().count(), 2 + 2 * 2);

    let o = Command::new(env!("CARGO_BIN_EXE_dtaf"))
        .args(["sweep", "--config", s(&cfg), "--sweep", "k=2"])
        .env("DTAF_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_writes_one_table_per_window() {
    let ws = Workspace::new();
    let cfg = ws.config("run.toml", "");
    assert!(dtaf(&["train", "--config", s(&cfg)]).status.success());
    let out = dtaf(&["analyze", "--config", s(&cfg), "--windows", "3"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let router = read(ws.path("out/router_weights.csv"));
    assert_eq!(groups(&router), ["0", "1", "2"]);
    // 3 windows, 7 patches, 2 experts
    assert_eq!(router.lines().count(), 2 + 3 * 7 * 2);
    let picks = read(ws.path("out/spectral_picks.csv"));
    assert_eq!(picks.lines().count(), 2 + 3 * 7 * 3);
    let kl = read(ws.path("out/residual_kl.csv"));
    assert_eq!(kl.lines().count(), 2 + 3 * 2 * 49);
    assert_eq!(read(ws.path("out/kl_summary.csv")).lines().count(), 5);

    let files = ["router_weights.csv", "residual_kl.csv", "kl_summary.csv", "spectral_picks.csv"];
    let before: Vec<String> = files.iter().map(|f| read(ws.path("out").join(f))).collect();
    assert!(dtaf(&["analyze", "--config", s(&cfg), "--windows", "3"]).status.success());
    let after: Vec<String> = files.iter().map(|f| read(ws.path("out").join(f))).collect();
    assert_eq!(before, after);

    let out = dtaf(&["analyze", "--config", s(&cfg), "--windows", "0"]);
    assert_eq!(out.status.code(), Some(2));
}
