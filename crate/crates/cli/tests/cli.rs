use std::path::Path;
use std::process::{Command, Output};

use phenoclass::config::RunConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_phenoclass"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn error_line(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "{text}");
    serde_json::from_str(lines[0]).expect("error line is JSON")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

const SUBCOMMANDS: [&str; 13] = [
    "ingest",
    "composite",
    "features",
    "synth",
    "pretrain",
    "finetune",
    "embed",
    "train-rf",
    "train-mlp",
    "evaluate",
    "ablation",
    "report",
    "default-config",
];

#[test]
fn help_lists_every_flag_with_the_config_defaults() {
    let d = RunConfig::default();
    let seeds: Vec<String> = d.seeds.iter().map(u64::to_string).collect();
    let expected = [
        format!("[default: {}]", d.seed),
        format!("[default: {}]", seeds.join(" ")),
        format!("[default: {}]", d.synth.preset),
        format!("[default: {}]", d.features.subset),
        format!("[default: {}]", d.pipelines.join(" ")),
        format!("[default: {}]", d.paths.out),
        format!("[default: {}]", d.paths.data),
    ];
    for sub in SUBCOMMANDS {
        let help = String::from_utf8(ok(&[sub, "--help"]).stdout).unwrap();
        for flag in ["--config", "--seed ", "--seeds", "--preset", "--subset", "--pipeline", "--out", "--data", "--encoder"] {
            assert!(help.contains(flag), "{sub} help lacks {flag}");
        }
        for want in &expected {
            assert!(help.contains(want.as_str()), "{sub} help lacks `{want}`:\n{help}");
        }
    }
}

#[test]
fn default_config_round_trips() {
    let text = String::from_utf8(ok(&["default-config"]).stdout).unwrap();
    assert_eq!(RunConfig::from_toml(&text).unwrap(), RunConfig::default());
}

#[test]
fn errors_are_one_json_line() {
    assert_eq!(error_line(&run(&["frobnicate"]))["error"], "usage");
    assert_eq!(error_line(&run(&["synth", "--preset", "nope"]))["error"], "usage");

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seeds = [1, 1]\n[split]\ntrain_fraction = 2.0\n").unwrap();
    let e = error_line(&run(&["evaluate", "--config", cfg.to_str().unwrap()]));
    assert_eq!(e["error"], "config");
    let msg = e["message"].as_str().unwrap();
    assert!(msg.contains("seeds must be distinct") && msg.contains("split.train_fraction"), "{msg}");

    let missing = dir.path().join("nothing");
    let e = error_line(&run(&["features", "--data", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]));
    assert_eq!(e["error"], "missing-input");

    let out = bin().env("PHENOCLASS_THREADS", "0").arg("default-config").output().unwrap();
    assert_eq!(error_line(&out)["error"], "config");
}

#[test]
fn synth_writes_the_simb_shaped_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("simb");
    let o = out.to_str().unwrap();
    ok(&["synth", "--preset", "simb", "--seed", "42", "--out", o]);
    let labels = read(&out.join("labels.csv"));
    let rows: Vec<&str> = labels.lines().skip(1).collect();
    assert_eq!(rows.len(), 1479);
    let mut classes: Vec<&str> = rows.iter().map(|r| r.rsplit(',').next().unwrap()).collect();
    classes.sort_unstable();
    classes.dedup();
    assert_eq!(classes.len(), 7);
    for f in ["composites.csv", "statics.csv", "observations.csv", "synth.config.toml"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&read(&out.join("synth.manifest.json"))).unwrap();
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 4);
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    std::fs::write(
        &path,
        "dataset = \"simb\"\n\
         [synth]\npreset = \"simb\"\nscale = 0.04\n\
         [encoder]\nd_e = 16\ndepth = 1\nheads = 2\nff = 32\nout_dim = 128\n\
         [pretrain]\nmask_ratio = 0.75\nepochs = 1\nbatch_size = 32\nlr = 0.001\nweight_decay = 0.0\n\
         [pretrain_pool]\npreset = \"simb\"\nsize = 30\nseed = 9001\n\
         [mlp]\nhidden = [16, 8, 8]\nbn_momentum = 0.1\nbn_eps = 1e-5\n\
         [train]\nlr = 0.001\nweight_decay = 0.00746\nepochs = 2\nbatch_size = 16\nval_fraction = 0.15\n\
         [forest]\ntrees = 10\nmax_features = 0\nmin_samples_split = 2\nbootstrap = true\n",
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn pipeline_from_observations_to_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let (synth, comp, feats) = (p("synth"), p("comp"), p("feats"));
    ok(&["synth", "--config", &cfg, "--seed", "7", "--out", &synth]);

    // Compositing the raw observations reproduces the written band values.
    ok(&["composite", "--config", &cfg, "--data", &synth, "--out", &comp]);
    let bands = |dir: &str| {
        let text = read(&Path::new(dir).join("composites.csv"));
        let mut rows: Vec<String> = text
            .lines()
            .skip(1)
            .map(|l| l.rsplitn(2, ',').nth(1).unwrap().to_string())
            .filter(|r| !r.contains(",NDVI,"))
            .collect();
        rows.sort_unstable();
        rows
    };
    assert_eq!(bands(&comp), bands(&synth));
    ok(&["ingest", "--config", &cfg, "--data", &synth, "--out", &p("ingest")]);

    ok(&["features", "--config", &cfg, "--data", &comp, "--out", &feats, "--subset", "s1"]);
    ok(&["features", "--config", &cfg, "--data", &comp, "--out", &feats, "--subset", "s1s2"]);
    let width = |name: &str| read(&Path::new(&feats).join(name)).lines().next().unwrap().split(',').count() - 1;
    assert_eq!(width("features_s1_all.csv"), 22);
    assert_eq!(width("features_s1s2_all.csv"), 209);

    let (pre, emb) = (p("pretrain"), p("embed"));
    ok(&["pretrain", "--config", &cfg, "--data", &comp, "--out", &pre]);
    let stem = Path::new(&pre).join("encoder");
    ok(&["embed", "--config", &cfg, "--data", &comp, "--out", &emb, "--encoder", stem.to_str().unwrap()]);
    let emb_text = read(&Path::new(&emb).join("embeddings.csv"));
    assert_eq!(emb_text.lines().next().unwrap().split(',').count(), 129);

    for (sub, out) in [("finetune", "ft"), ("train-mlp", "mlp"), ("train-rf", "rf")] {
        ok(&[sub, "--config", &cfg, "--data", &comp, "--out", &p(out)]);
    }
    assert!(Path::new(&p("rf")).join("forest.txt").is_file());
    assert!(Path::new(&p("mlp")).join("confusion.svg").is_file());
    ok(&["train-rf", "--config", &cfg, "--data", &comp, "--out", &p("rfd"), "--pipeline", "rf-deep"]);

    let (ev, ev2, rep) = (p("eval"), p("eval2"), p("report"));
    let args = |out: &str| {
        vec![
            "evaluate".to_string(),
            "--config".into(),
            cfg.clone(),
            "--data".into(),
            comp.clone(),
            "--out".into(),
            out.to_string(),
            "--pipeline".into(),
            "mlp-deep".into(),
            "--seeds".into(),
            "1,2,3,4,5".into(),
        ]
    };
    let a = args(&ev);
    ok(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let summary = read(&Path::new(&ev).join("summary.csv"));
    assert!(summary.starts_with("pipeline,metric,mean,std\n"));
    assert!(summary.contains("\nmlp-deep,oa,") && summary.contains("\nmlp-deep,macro_f1,"));
    let report = read(&Path::new(&ev).join("report.csv"));
    assert_eq!(report.lines().filter(|l| l.contains(",oa,")).count(), 5);

    let b = args(&ev2);
    ok(&b.iter().map(String::as_str).collect::<Vec<_>>());
    for f in ["summary.csv", "report.csv", "confusion_mlp-deep_3.svg"] {
        assert_eq!(read(&Path::new(&ev).join(f)), read(&Path::new(&ev2).join(f)), "{f}");
    }

    ok(&["report", "--data", &ev, "--out", &rep]);
    assert_eq!(read(&Path::new(&rep).join("summary.csv")), summary);
    assert!(Path::new(&rep).join("confusion_mlp-deep_1.svg").is_file());

    ok(&["ablation", "--config", &cfg, "--data", &comp, "--out", &p("abl"), "--seeds", "1,2"]);
    assert_eq!(read(&Path::new(&p("abl")).join("ablation.csv")).lines().count(), 10);
}
