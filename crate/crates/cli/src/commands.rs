//! One function per subcommand. Each reads from `paths.data` and writes
//! into `paths.out`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use phenoclass::config::RunConfig;
use phenoclass::data::dataset::{COMPOSITES_FILE, LABELS_FILE, STATICS_FILE};
use phenoclass::data::{
    ingest_csv, read_dataset, series_from_files, synth_generate, synth_observations, write_dataset,
    write_observations, Dataset, IngestConfig, PixelTimeSeries, SynthConfig,
};
use phenoclass::encoder::{mae_pretrain, normalize, token_inputs, Encoder, TokenInput};
use phenoclass::eval::{
    ablation_csv, ablation_grid, confusion, confusion_svg, mean_std, run_comparison, write_reports, ConfusionMatrix,
    Pipeline, SUMMARY_HEADER,
};
use phenoclass::features::{extract_table, write_feature_table, Imputer};
use phenoclass::forest::{rf_fit, rf_predict};
use phenoclass::mlp::{embed_inputs, finetune, train_mlp, Mlp};
use phenoclass::nn::params::{blob_path, manifest_path, write_atomic};
use phenoclass::preprocess::{cloud_filter, monthly_median, write_composites};
use phenoclass::split::stratified_split;
use phenoclass::Matrix;

use crate::manifest::Record;
use crate::{Command, Failure};

pub const OBSERVATIONS_FILE: &str = "observations.csv";

pub fn dispatch(command: Command, cfg: &RunConfig) -> Result<Record, Failure> {
    let mut run = Run {
        cfg,
        data: PathBuf::from(&cfg.paths.data),
        out: PathBuf::from(&cfg.paths.out),
        record: Record::default(),
    };
    std::fs::create_dir_all(&run.out).map_err(|e| io_failure(&run.out, e))?;
    match command {
        Command::Ingest => run.ingest()?,
        Command::Composite => run.composite()?,
        Command::Features => run.features()?,
        Command::Synth => run.synth()?,
        Command::Pretrain => run.pretrain()?,
        Command::Finetune => run.finetune()?,
        Command::Embed => run.embed()?,
        Command::TrainRf => run.train_rf()?,
        Command::TrainMlp => run.train_mlp()?,
        Command::Evaluate => run.evaluate()?,
        Command::Ablation => run.ablation()?,
        Command::Report => run.report()?,
        Command::DefaultConfig => {}
    }
    Ok(run.record)
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::new("io", format!("{}: {e}", path.display()))
}

struct Run<'a> {
    cfg: &'a RunConfig,
    data: PathBuf,
    out: PathBuf,
    record: Record,
}

impl Run<'_> {
    fn input(&mut self, name: &str) -> Result<PathBuf, Failure> {
        let path = self.data.join(name);
        if !path.is_file() {
            return Err(Failure::new("missing-input", format!("{} does not exist", path.display())));
        }
        self.record.inputs.push(path.clone());
        Ok(path)
    }

    fn output(&mut self, name: &str) -> PathBuf {
        let path = self.out.join(name);
        self.record.outputs.push(path.clone());
        path
    }

    fn put(&mut self, name: &str, text: &str) -> Result<(), Failure> {
        let path = self.output(name);
        write_atomic(&path, text.as_bytes())?;
        Ok(())
    }

    fn checkpoint_written(&mut self, stem: &Path) {
        self.record.outputs.push(manifest_path(stem));
        self.record.outputs.push(blob_path(stem));
    }

    fn observations(&mut self) -> Result<Vec<phenoclass::data::Observation>, Failure> {
        let path = self.input(OBSERVATIONS_FILE)?;
        let ingested = ingest_csv(&path, &IngestConfig { year: self.cfg.ingest.year })?;
        let mut text = String::from("line,reason\n");
        for r in &ingested.rejections {
            let _ = writeln!(text, "{},\"{}\"", r.line, r.reason.replace('"', "\"\""));
        }
        self.put("rejections.csv", &text)?;
        Ok(cloud_filter(&ingested.observations, self.cfg.ingest.cloud_threshold))
    }

    fn ingest(&mut self) -> Result<(), Failure> {
        let kept = self.observations()?;
        let path = self.output(OBSERVATIONS_FILE);
        write_observations(&path, &kept)?;
        Ok(())
    }

    fn composite(&mut self) -> Result<(), Failure> {
        let kept = self.observations()?;
        let path = self.output(COMPOSITES_FILE);
        write_composites(&path, &monthly_median(&kept))?;
        // Carry statics and labels along so the output is a dataset directory.
        for name in [STATICS_FILE, LABELS_FILE] {
            if self.data.join(name).is_file() {
                let src = self.input(name)?;
                let dst = self.output(name);
                if src != dst {
                    std::fs::copy(&src, &dst).map_err(|e| io_failure(&dst, e))?;
                }
            }
        }
        Ok(())
    }

    fn unlabelled(&mut self) -> Result<Vec<PixelTimeSeries>, Failure> {
        let composites = self.input(COMPOSITES_FILE)?;
        let statics = self.input(STATICS_FILE)?;
        Ok(series_from_files(&composites, &statics)?)
    }

    fn labelled(&mut self) -> Result<Dataset, Failure> {
        for name in [COMPOSITES_FILE, STATICS_FILE, LABELS_FILE] {
            self.input(name)?;
        }
        Ok(read_dataset(&self.data, self.cfg.schema()?)?)
    }

    fn features(&mut self) -> Result<(), Failure> {
        let series = self.unlabelled()?;
        let table = extract_table(&series, &self.cfg.handcrafted()?);
        let name = format!("features_{}_{}.csv", self.cfg.features.subset, self.cfg.features.set);
        let path = self.output(&name);
        write_feature_table(&path, &table)?;
        if !table.diagnostics.is_empty() {
            self.put("features_diagnostics.txt", &(table.diagnostics.join("\n") + "\n"))?;
        }
        Ok(())
    }

    fn synth(&mut self) -> Result<(), Failure> {
        let ds = synth_generate(&self.cfg.synth()?, self.cfg.seed)?;
        write_dataset(&self.out, &ds)?;
        for name in [COMPOSITES_FILE, STATICS_FILE, LABELS_FILE] {
            self.output(name);
        }
        let observations: Vec<_> = ds.series().flat_map(|s| synth_observations(s, self.cfg.seed)).collect();
        let path = self.output(OBSERVATIONS_FILE);
        write_observations(&path, &observations)?;
        Ok(())
    }

    fn normalized(&self, series: &[PixelTimeSeries]) -> Vec<PixelTimeSeries> {
        series.iter().map(|s| normalize(s, &self.cfg.normalization)).collect()
    }

    fn pretrain(&mut self) -> Result<(), Failure> {
        let series = self.unlabelled()?;
        let enc = Encoder::new(self.cfg.encoder, self.cfg.seed)?;
        let (enc, losses) = mae_pretrain(enc, &self.normalized(&series), &self.cfg.pretrain, self.cfg.seed)?;
        let stem = self.out.join("encoder");
        enc.save(&stem)?;
        self.checkpoint_written(&stem);
        let mut text = String::from("epoch,loss\n");
        for (i, l) in losses.iter().enumerate() {
            let _ = writeln!(text, "{},{l}", i + 1);
        }
        self.put("pretrain_loss.csv", &text)
    }

    /// The configured checkpoint, or one pre-trained on a synthetic pool
    /// that shares nothing with the evaluated data.
    fn encoder(&mut self) -> Result<Encoder, Failure> {
        if !self.cfg.paths.encoder.is_empty() {
            let stem = PathBuf::from(&self.cfg.paths.encoder);
            self.record.inputs.push(manifest_path(&stem));
            self.record.inputs.push(blob_path(&stem));
            return Ok(Encoder::load(&stem)?);
        }
        let pool = &self.cfg.pretrain_pool;
        let preset = SynthConfig::preset(&pool.preset)?;
        let scale = pool.size as f64 / preset.total() as f64;
        let ds = synth_generate(&preset.scaled(scale), pool.seed)?;
        let series: Vec<PixelTimeSeries> = ds.series().cloned().collect();
        let enc = Encoder::new(self.cfg.encoder, pool.seed)?;
        Ok(mae_pretrain(enc, &self.normalized(&series), &self.cfg.pretrain, pool.seed)?.0)
    }

    fn tokens(&self, series: &[PixelTimeSeries]) -> Vec<Vec<TokenInput>> {
        self.normalized(series).iter().map(token_inputs).collect()
    }

    fn split(&mut self, ds: &Dataset) -> Result<(Vec<usize>, Vec<usize>), Failure> {
        let (train, test) = stratified_split(&ds.labels(), self.cfg.split.train_fraction, self.cfg.seed)?;
        let mut text = String::from("plot_id,part\n");
        let mut parts: Vec<(usize, &str)> = train.iter().map(|&i| (i, "train")).chain(test.iter().map(|&i| (i, "test"))).collect();
        parts.sort_unstable();
        for (i, part) in parts {
            let _ = writeln!(text, "{},{part}", ds.samples[i].series.plot_id);
        }
        self.put("split.csv", &text)?;
        Ok((train, test))
    }

    fn finetune(&mut self) -> Result<(), Failure> {
        let ds = self.labelled()?;
        let enc = self.encoder()?;
        let (train, _) = self.split(&ds)?;
        let series: Vec<PixelTimeSeries> = train.iter().map(|&i| ds.samples[i].series.clone()).collect();
        let labels = ds.labels();
        let y: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let mlp = Mlp::new(enc.config.out_dim, ds.class_count(), self.cfg.mlp.clone(), self.cfg.seed)?;
        let r = finetune(enc, mlp, &self.tokens(&series), &y, &self.cfg.train, false, self.cfg.seed)?;
        for (name, save) in [("finetuned_encoder", 0), ("mlp", 1)] {
            let stem = self.out.join(name);
            if save == 0 {
                r.encoder.save(&stem)?;
            } else {
                r.mlp.save(&stem)?;
            }
            self.checkpoint_written(&stem);
        }
        self.put("finetune_trace.csv", &r.trace.to_csv())
    }

    fn embeddings(&self, enc: &Encoder, series: &[PixelTimeSeries]) -> Result<Matrix, Failure> {
        let tokens = self.tokens(series);
        let refs: Vec<&[TokenInput]> = tokens.iter().map(Vec::as_slice).collect();
        Ok(embed_inputs(enc, &refs)?)
    }

    fn embed(&mut self) -> Result<(), Failure> {
        let series = self.unlabelled()?;
        let enc = self.encoder()?;
        let x = self.embeddings(&enc, &series)?;
        let mut text = String::from("plot_id");
        for j in 0..x.cols() {
            let _ = write!(text, ",deep_{j}");
        }
        text.push('\n');
        for (i, s) in series.iter().enumerate() {
            text.push_str(&s.plot_id);
            for v in x.row(i) {
                let _ = write!(text, ",{v}");
            }
            text.push('\n');
        }
        self.put("embeddings.csv", &text)
    }

    fn write_confusion(&mut self, truth: &[usize], pred: &[usize], ds: &Dataset, title: &str) -> Result<(), Failure> {
        let conf = confusion(truth, pred, ds.class_count())?.with_names(ds.class_names())?;
        self.put("confusion.csv", &conf.to_csv())?;
        self.put("confusion.svg", &confusion_svg(&conf, title))
    }

    /// Train and test matrices for a frozen-encoder or hand-crafted run.
    fn design(&mut self, ds: &Dataset, train: &[usize], test: &[usize], deep: bool) -> Result<(Matrix, Matrix), Failure> {
        let pick = |ix: &[usize]| ix.iter().map(|&i| ds.samples[i].series.clone()).collect::<Vec<_>>();
        if deep {
            let enc = self.encoder()?;
            Ok((self.embeddings(&enc, &pick(train))?, self.embeddings(&enc, &pick(test))?))
        } else {
            let hc = self.cfg.handcrafted()?;
            let rows = |ix: &[usize]| extract_table(&pick(ix), &hc).rows;
            let (tr, te) = (rows(train), rows(test));
            let imputer = Imputer::fit(&tr);
            Ok((imputer.transform(&tr)?, imputer.transform(&te)?))
        }
    }

    fn train_rf(&mut self) -> Result<(), Failure> {
        let pipelines = self.cfg.pipelines()?;
        let deep = match (pipelines.contains(&Pipeline::RfHand), pipelines.contains(&Pipeline::RfDeep)) {
            (true, _) => false,
            (false, true) => true,
            (false, false) => return Err(Failure::new("config", "train-rf needs --pipeline rf-hand or rf-deep")),
        };
        let ds = self.labelled()?;
        let (train, test) = self.split(&ds)?;
        let (xtr, xte) = self.design(&ds, &train, &test, deep)?;
        let labels = ds.labels();
        let ytr: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let yte: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        let model = rf_fit(&xtr, &ytr, ds.class_count(), &self.cfg.forest, self.cfg.seed)?;
        let path = self.output("forest.txt");
        model.save(&path)?;
        let (pred, _) = rf_predict(&model, &xte)?;
        let tag = if deep { "rf-deep" } else { "rf-hand" };
        self.write_confusion(&yte, &pred, &ds, &format!("{tag} seed {}", self.cfg.seed))
    }

    fn train_mlp(&mut self) -> Result<(), Failure> {
        let ds = self.labelled()?;
        let (train, test) = self.split(&ds)?;
        let (xtr, xte) = self.design(&ds, &train, &test, true)?;
        let labels = ds.labels();
        let ytr: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
        let yte: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
        let mlp = Mlp::new(xtr.cols(), ds.class_count(), self.cfg.mlp.clone(), self.cfg.seed)?;
        let (mlp, trace) = train_mlp(mlp, &xtr, &ytr, &self.cfg.train, self.cfg.seed)?;
        let stem = self.out.join("mlp");
        mlp.save(&stem)?;
        self.checkpoint_written(&stem);
        self.put("train_trace.csv", &trace.to_csv())?;
        let (pred, _) = mlp.predict(&xte)?;
        self.write_confusion(&yte, &pred, &ds, &format!("mlp on frozen features, seed {}", self.cfg.seed))
    }

    fn evaluate(&mut self) -> Result<(), Failure> {
        let ds = self.labelled()?;
        let pipelines = self.cfg.pipelines()?;
        let enc = if pipelines.iter().any(|p| p.is_deep()) {
            Some(self.encoder()?)
        } else {
            None
        };
        let reports = run_comparison(&ds, &pipelines, enc.as_ref(), &self.cfg.seeds, &self.cfg.settings()?)?;
        let written = write_reports(&self.out, &reports)?;
        self.record.outputs.extend(written);
        match reports.iter().find(|r| !r.is_complete()) {
            Some(r) => Err(Failure::new(
                "incomplete",
                format!("{} failed on {} seed(s), see failures.csv", r.pipeline, r.failures.len()),
            )),
            None => Ok(()),
        }
    }

    fn ablation(&mut self) -> Result<(), Failure> {
        let ds = self.labelled()?;
        let cells = phenoclass::eval::ablation_table(&ds, &self.cfg.seeds, &self.cfg.settings()?)?;
        self.put("ablation.csv", &ablation_csv(&cells))?;
        self.put("ablation_grid.csv", &ablation_grid(&cells))
    }

    fn report(&mut self) -> Result<(), Failure> {
        let path = self.input("report.csv")?;
        let text = std::fs::read_to_string(&path).map_err(|e| io_failure(&path, e))?;
        self.put("summary.csv", &summary_from_long(&text)?)?;
        let mut names: Vec<String> = std::fs::read_dir(&self.data)
            .map_err(|e| io_failure(&self.data, e))?
            .filter_map(|e| e.ok()?.file_name().into_string().ok())
            .filter(|n| n.starts_with("confusion_") && n.ends_with(".csv"))
            .collect();
        names.sort();
        for name in names {
            let src = self.input(&name)?;
            let conf = read_confusion(&src)?;
            let stem = name.trim_end_matches(".csv");
            let title = stem.trim_start_matches("confusion_").replace('_', " seed ");
            self.put(&format!("{stem}.svg"), &confusion_svg(&conf, &title))?;
        }
        Ok(())
    }
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes())
}

/// Mean and sample deviation per pipeline and metric, in the order the
/// rows first appear; per-class F1 rows become `f1:<class>`.
pub fn summary_from_long(text: &str) -> Result<String, Failure> {
    let bad = |m: String| Failure::new("report", m);
    let mut order: Vec<(String, String)> = Vec::new();
    let mut values: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for (i, rec) in csv_reader(text).records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 5 {
            return Err(bad(format!("report.csv row {} has {} fields", i + 2, rec.len())));
        }
        let metric = match (&rec[2], &rec[3]) {
            ("oa" | "macro_f1" | "weighted_f1", _) => rec[2].to_string(),
            ("f1", class) => format!("f1:{class}"),
            _ => continue,
        };
        let value: f64 = rec[4].parse().map_err(|_| bad(format!("report.csv row {}: bad value `{}`", i + 2, &rec[4])))?;
        let key = (rec[0].to_string(), metric);
        if !values.contains_key(&key) {
            order.push(key.clone());
        }
        values.entry(key).or_default().push(value);
    }
    let mut out = format!("{SUMMARY_HEADER}\n");
    for key in order {
        let (mean, std) = mean_std(&values[&key]);
        let metric = if key.1.contains([',', '"']) {
            format!("\"{}\"", key.1.replace('"', "\"\""))
        } else {
            key.1.clone()
        };
        let _ = writeln!(out, "{},{metric},{mean},{std}", key.0);
    }
    Ok(out)
}

pub fn read_confusion(path: &Path) -> Result<ConfusionMatrix, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let bad = |m: &str| Failure::new("report", format!("{}: {m}", path.display()));
    let mut reader = csv_reader(&text);
    let header = reader.headers().map_err(|e| bad(&e.to_string()))?.clone();
    let classes: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut counts = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(&e.to_string()))?;
        let row: Vec<u64> = rec
            .iter()
            .skip(1)
            .map(|v| v.parse().map_err(|_| bad(&format!("bad count `{v}`"))))
            .collect::<Result<_, _>>()?;
        if row.len() != classes.len() {
            return Err(bad("ragged row"));
        }
        counts.push(row);
    }
    if counts.len() != classes.len() {
        return Err(bad("matrix is not square"));
    }
    Ok(ConfusionMatrix { classes, counts })
}
