use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use resflow::report::MetricReport;
use tempfile::TempDir;

fn resflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resflow")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = resflow(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn generate(dir: &Path, seed: u64, samples: usize, ctr: f64, cvr: f64) -> PathBuf {
    let out = dir.join("data");
    let (seed, samples, ctr, cvr) = (seed.to_string(), samples.to_string(), ctr.to_string(), cvr.to_string());
    ok(&[
        "--seed",
        &seed,
        "generate-synthetic",
        "--out",
        out.to_str().unwrap(),
        "--samples",
        &samples,
        "--users",
        "2000",
        "--items",
        "1500",
        "--ctr",
        &ctr,
        "--cvr",
        &cvr,
    ]);
    out.join("manifest.toml")
}

fn write_config(dir: &Path, manifest: &Path, extra_model: &str) -> PathBuf {
    let text = format!(
        r#"seed = 11

[data]
manifest = "{}"
split_fraction = 0.8

[model]
widths = [16, 8, 1]
{extra_model}

[[model.task]]
name = "ctr"
label = "click"

[[model.task]]
name = "ctcvr"
label = "order"
pos_weight = 5.0

[train]
batch_size = 256

[output]
dir = "run"
"#,
        manifest.display()
    );
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn funnel_run(samples: usize) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate(dir.path(), 5, samples, 0.1, 0.1);
    let config = write_config(dir.path(), &manifest, "");
    (dir, config)
}

#[test]
fn evaluate_after_train_reproduces_report() {
    let (dir, config) = funnel_run(20_000);
    ok(&["train", "--config", config.to_str().unwrap()]);
    let run = dir.path().join("run");
    let trained = MetricReport::read(&run.join("report.json")).unwrap();
    assert!(trained.tasks["ctr"].auc.is_some());
    assert!(trained.list.is_some());
    let ckpt = run.join("model.ckpt");
    let json = ok(&["evaluate", "--checkpoint", ckpt.to_str().unwrap()]);
    let evaluated: MetricReport = serde_json::from_str(&json).unwrap();
    assert_eq!(evaluated, trained);
    assert_eq!(json, fs::read_to_string(run.join("report.json")).unwrap());
    let all: MetricReport =
        serde_json::from_str(&ok(&["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--split", "all"])).unwrap();
    assert_eq!(all.samples, 20_000);
}

#[test]
fn equal_seeds_give_identical_artifacts() {
    let (dir, config) = funnel_run(8_000);
    let cfg = config.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["train", "--config", cfg, "--out", a.to_str().unwrap()]);
    ok(&["train", "--config", cfg, "--out", b.to_str().unwrap()]);
    for f in ["model.ckpt", "report.json", "loss.tsv", "predictions.tsv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let c = dir.path().join("c");
    ok(&["--seed", "12", "train", "--config", cfg, "--out", c.to_str().unwrap()]);
    assert_ne!(fs::read(a.join("loss.tsv")).unwrap(), fs::read(c.join("loss.tsv")).unwrap());
}

#[test]
fn untrained_model_scores_near_chance() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate(dir.path(), 9, 100_000, 0.2, 0.2);
    let config = write_config(dir.path(), &manifest, "");
    let json = ok(&["train", "--config", config.to_str().unwrap(), "--epochs", "0"]);
    let report: MetricReport = serde_json::from_str(&json).unwrap();
    for task in ["ctr", "ctcvr"] {
        let auc = report.tasks[task].auc.unwrap();
        assert!((auc - 0.5).abs() <= 0.05, "{task} AUC {auc}");
    }
    let trace = fs::read_to_string(dir.path().join("run/loss.tsv")).unwrap();
    assert_eq!(trace.lines().count(), 1);
}

#[test]
fn dataset_without_lists_omits_list_metrics() {
    let (dir, config) = funnel_run(8_000);
    let manifest = dir.path().join("data/manifest.toml");
    let text = fs::read_to_string(&manifest).unwrap();
    let stripped: String = text
        .lines()
        .filter(|l| !l.starts_with("list_id") && !l.starts_with("item_id") && !l.starts_with("weight"))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(dir.path().join("data/nolists.toml"), stripped).unwrap();
    let cfg = fs::read_to_string(&config).unwrap().replace("data/manifest.toml", "data/nolists.toml");
    fs::write(&config, cfg).unwrap();
    let json = ok(&["train", "--config", config.to_str().unwrap()]);
    let report: MetricReport = serde_json::from_str(&json).unwrap();
    assert!(report.list.is_none());
    assert!(report.tasks["ctr"].auc.is_some() && report.tasks["ctcvr"].auc.is_some());
    assert!(!json.contains("\"list\""));
    assert!(!dir.path().join("run/predictions.tsv").exists());
}

#[test]
fn damaged_checkpoints_fail_with_data_exit_code() {
    let (dir, config) = funnel_run(5_000);
    ok(&["train", "--config", config.to_str().unwrap()]);
    let good = fs::read(dir.path().join("run/model.ckpt")).unwrap();
    type Damage = Box<dyn Fn(&mut Vec<u8>)>;
    let cases: [(&str, Damage, &str); 4] = [
        (
            "flip",
            Box::new(|b: &mut Vec<u8>| {
                let mid = b.len() / 2;
                b[mid] ^= 0x10
            }),
            "checksum mismatch",
        ),
        ("truncate", Box::new(|b: &mut Vec<u8>| b.truncate(b.len() - 9)), "checksum mismatch"),
        ("magic", Box::new(|b: &mut Vec<u8>| b[0] = b'X'), "bad magic"),
        ("version", Box::new(|b: &mut Vec<u8>| b[8] = 2), "unsupported checkpoint version 2"),
    ];
    for (name, damage, message) in cases {
        let mut bytes = good.clone();
        damage(&mut bytes);
        let path = dir.path().join(format!("{name}.ckpt"));
        fs::write(&path, bytes).unwrap();
        let out = resflow(&["evaluate", "--checkpoint", path.to_str().unwrap()]);
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert_eq!(out.status.code(), Some(2), "{name}: {stderr}");
        assert!(stderr.contains(message), "{name}: {stderr}");
    }
}

#[test]
fn schema_mismatch_is_reported_against_checkpoint() {
    let (dir, config) = funnel_run(5_000);
    ok(&["train", "--config", config.to_str().unwrap()]);
    let manifest = dir.path().join("data/manifest.toml");
    let text = fs::read_to_string(&manifest).unwrap();
    let without_tags = &text[..text.rfind("[[field]]").unwrap()];
    assert!(text[without_tags.len()..].contains("item_tags"));
    fs::write(dir.path().join("data/swapped.toml"), without_tags).unwrap();
    let ckpt = dir.path().join("run/model.ckpt");
    let out = resflow(&[
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        dir.path().join("data/swapped.toml").to_str().unwrap(),
    ]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(2), "{stderr}");
    assert!(stderr.contains("version 1") && stderr.contains("expects fields"), "{stderr}");
}

#[test]
fn invalid_config_lists_every_issue_with_lines() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), Path::new("missing.toml"), "dropout = 1.5\nregularizer = \"m9\"");
    let text = fs::read_to_string(&config).unwrap().replace("batch_size = 256", "batch_size = 0");
    fs::write(&config, text).unwrap();
    let out = resflow(&["train", "--config", config.to_str().unwrap()]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(1), "{stderr}");
    assert!(stderr.contains("line 9: `model.dropout`"), "{stderr}");
    assert!(stderr.contains("line 10: `model.regularizer`"), "{stderr}");
    assert!(stderr.contains("line 22: `train.batch_size`"), "{stderr}");
    assert!(!dir.path().join("run").exists());
}

#[test]
fn unknown_label_column_is_a_config_error() {
    let (_dir, config) = funnel_run(3_000);
    let text = fs::read_to_string(&config).unwrap().replace("label = \"order\"", "label = \"purchase\"");
    fs::write(&config, text).unwrap();
    let out = resflow(&["train", "--config", config.to_str().unwrap()]);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(out.status.code(), Some(1), "{stderr}");
    assert!(stderr.contains("line 17: `model.task[1].label`") && stderr.contains("purchase"), "{stderr}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(resflow(&["train"]).status.code(), Some(1));
    assert_eq!(resflow(&["fuse-search", "--predictions", "x", "--family", "sum"]).status.code(), Some(1));
    assert_eq!(resflow(&["train", "--config", "/nonexistent/run.toml"]).status.code(), Some(1));
    assert_eq!(resflow(&["train", "--config", "x", "--k", "10,0"]).status.code(), Some(1));
    assert_eq!(resflow(&["--help"]).status.code(), Some(0));
}

#[test]
fn mode_override_trains_each_baseline() {
    let (dir, config) = funnel_run(4_000);
    let text =
        fs::read_to_string(&config).unwrap().replace("widths = [16, 8, 1]", "widths = [16, 8, 1]\nlinks = \"none\"");
    fs::write(&config, text).unwrap();
    for mode in ["nse", "esmm", "resflow"] {
        let out = dir.path().join(mode);
        let json = ok(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--mode",
            mode,
            "--out",
            out.to_str().unwrap(),
            "--k",
            "5",
        ]);
        let report: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report.list.unwrap().at_k.keys().copied().collect::<Vec<_>>(), [5]);
    }
}

#[test]
fn gradcheck_command() {
    let first = ok(&["--seed", "4", "gradcheck", "--instances", "22"]);
    assert!(first.lines().last().unwrap().starts_with("PASS: 22 instances"), "{first}");
    assert_eq!(first, ok(&["--seed", "4", "gradcheck", "--instances", "22"]));
    let out = resflow(&["--seed", "4", "gradcheck", "--instances", "11", "--corrupt"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

fn write_predictions(path: &Path) {
    // Two lists; the ordered items are those with the larger CTR + 20 CTCVR.
    let rows = [
        "1\t1\t0.30\t0.001\t0\t0\t0\t1",
        "1\t2\t0.10\t0.020\t2\t1\t0\t1",
        "1\t3\t0.20\t0.002\t0\t0\t0\t0",
        "2\t4\t0.05\t0.010\t1\t1\t0\t1",
        "2\t5\t0.25\t0.000\t0\t0\t0\t1",
    ];
    let text = format!("list_id\titem_id\tctr\tctcvr\tW\torder\tatc\tclick\n{}\n", rows.join("\n"));
    fs::write(path, text).unwrap();
}

#[test]
fn fuse_search_table_is_sorted_and_both_families_report() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("p.tsv");
    write_predictions(&preds);
    let out = ok(&[
        "fuse-search",
        "--predictions",
        preds.to_str().unwrap(),
        "--k",
        "1",
        "--alphas",
        "0,1,2",
        "--betas",
        "1,20",
    ]);
    let metrics: Vec<f64> = out
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("alpha") && !l.starts_with("best"))
        .map(|l| l.split('\t').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(metrics.len(), 6);
    assert!(metrics.windows(2).all(|w| w[0] >= w[1]), "{out}");
    assert!(out.contains("best additive: alpha=0 beta=1 wr@1=1.000000"), "{out}");
    let both = ok(&["fuse-search", "--predictions", preds.to_str().unwrap(), "--family", "both", "--k", "1"]);
    assert!(both.contains("best additive:") && both.contains("best multiplicative:"), "{both}");
    assert!(both.lines().filter(|l| !l.starts_with('#')).count() > 21 * 21);
}

#[test]
fn fuse_search_rejects_bad_dump() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("p.tsv");
    fs::write(&preds, "list_id\titem_id\tctr\tctcvr\tW\torder\tatc\tclick\n1\t1\t0.1\tx\t0\t0\t0\t0\n").unwrap();
    let out = resflow(&["fuse-search", "--predictions", preds.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2: malformed"));
}

#[test]
fn dump_activations_rows_add_up() {
    let (dir, config) = funnel_run(3_000);
    ok(&["train", "--config", config.to_str().unwrap()]);
    let ckpt = dir.path().join("run/model.ckpt");
    let text = ok(&["dump-activations", "--checkpoint", ckpt.to_str().unwrap(), "--limit", "2"]);
    let mut sites = std::collections::BTreeSet::new();
    for line in text.lines().skip(1) {
        let t: Vec<&str> = line.split('\t').collect();
        sites.insert(t[2].to_string());
        let v: Vec<f64> = t[5..8].iter().map(|x| x.parse().unwrap()).collect();
        assert_eq!(v[0] + v[1], v[2], "{line}");
    }
    assert_eq!(sites.into_iter().collect::<Vec<_>>(), ["h1.query", "h2.query", "logit"]);
}

fn write_movielens(dir: &Path) {
    let mut users = String::new();
    for u in 1..=60 {
        let g = if u % 2 == 0 { "M" } else { "F" };
        users.push_str(&format!("{u}::{g}::{}::{}::{:05}\n", [1, 18, 25, 35][u % 4], u % 21, 10000 + u % 7));
    }
    let genres = ["Comedy", "Drama", "Action|Thriller", "Animation|Children's"];
    let mut movies = String::new();
    for m in 1..=40 {
        movies.push_str(&format!("{m}::Movie {m} ({})::{}\n", 1980 + m % 20, genres[m % 4]));
    }
    let mut ratings = String::new();
    let mut t = 978_300_000u64;
    for u in 1..=60u64 {
        for m in 1..=40u64 {
            if (u * 7 + m * 3) % 4 != 0 {
                continue;
            }
            let r = 1 + ((u % 5) + (m % 3) + (u * m) % 2).min(4);
            t += 37;
            ratings.push_str(&format!("{u}::{m}::{r}::{t}\n"));
        }
    }
    fs::write(dir.join("users.dat"), users).unwrap();
    fs::write(dir.join("movies.dat"), movies).unwrap();
    fs::write(dir.join("ratings.dat"), ratings).unwrap();
}

#[test]
fn progressive_and_traditional_regression_heads() {
    let dir = tempfile::tempdir().unwrap();
    let ml = dir.path().join("ml");
    fs::create_dir(&ml).unwrap();
    write_movielens(&ml);
    fs::write(dir.path().join("ml.toml"), "format = \"movielens-1m\"\npath = \"ml\"\n").unwrap();
    for (head, widths, reg) in [("progressive", "[16, 8, 1]", "m3"), ("traditional", "[24, 16, 1]", "none")] {
        let config = dir.path().join(format!("{head}.toml"));
        fs::write(
            &config,
            format!(
                "seed = 2\n[data]\nmanifest = \"ml.toml\"\n[model]\nwidths = {widths}\nregularizer = \"{reg}\"\n[regression]\nhead = \"{head}\"\n[train]\nepochs = 10\nbatch_size = 32\nlearning_rate = 0.01\n[output]\ndir = \"{head}\"\n"
            ),
        )
        .unwrap();
        let report: MetricReport = serde_json::from_str(&ok(&["train", "--config", config.to_str().unwrap()])).unwrap();
        let mse = report.regression_mse.unwrap();
        assert!(mse.is_finite() && mse < 2.0, "{head}: {mse}");
        assert!(report.list.is_none());
        let ckpt = dir.path().join(head).join("model.ckpt");
        let again: MetricReport =
            serde_json::from_str(&ok(&["evaluate", "--checkpoint", ckpt.to_str().unwrap()])).unwrap();
        assert_eq!(again, report);
        if head == "progressive" {
            assert_eq!(report.tasks.keys().collect::<Vec<_>>(), ["ge_2", "ge_3", "ge_4", "ge_5"]);
        } else {
            assert!(report.tasks["rating"].mse.is_some());
        }
    }
}
