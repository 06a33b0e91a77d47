//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::path::Path;
use std::time::{Duration, Instant};

use phenoclass::bands::{BandId, ChannelGroup};
use phenoclass::data::{synth_generate, GeoLocation, PixelTimeSeries, SynthConfig, Terrain};
use phenoclass::encoder::{mae_pretrain, normalize, token_inputs, Encoder, EncoderConfig, NormalizationSpec, PretrainConfig};
use phenoclass::eval::{
    confusion, mean_std, metrics, run_comparison, write_reports, ExperimentSettings, MultiSeedReport, Pipeline,
};
use phenoclass::features::harmonic::design_row;
use phenoclass::features::{fit_harmonic, FeatureRegistry, FeatureSet, SensorSubset};
use phenoclass::forest::{best_split, rf_fit, rf_predict, ForestConfig};
use phenoclass::mlp::{cross_entropy, Mlp, MlpConfig, Mode, TrainConfig};
use phenoclass::nn::check_gradients;
use phenoclass::rng::rng_from;
use phenoclass::split::stratified_split;
use phenoclass::Matrix;
use rand::seq::index::sample;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn harmonic_recovery() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from(101);
    let (mut beta_err, mut rmse, mut ortho) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let beta: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-5.0..5.0));
        let signal: Vec<Option<f64>> = (0..12)
            .map(|m| {
                let t = m as f64 / 12.0;
                let arg = 2.0 * std::f64::consts::PI * t;
                Some(beta[0] + beta[1] * t + beta[2] * arg.cos() + beta[3] * arg.sin())
            })
            .collect();
        let fit = fit_harmonic(&signal, BandId::B8).unwrap();
        for k in 0..4 {
            beta_err = beta_err.max((fit.beta[k] - beta[k]).abs());
        }
        rmse = rmse.max(fit.rmse);
        let mut xtr = [0.0; 4];
        for (m, y) in signal.iter().enumerate() {
            let t = m as f64 / 12.0;
            let r = y.unwrap() - fit.predict(t);
            for (k, x) in design_row(t).iter().enumerate() {
                xtr[k] += x * r;
            }
        }
        ortho = xtr.iter().fold(ortho, |a, v| a.max(v.abs()));
    }
    let t = start.elapsed();
    outcome(
        beta_err <= 1e-9 && rmse <= 1e-9 && ortho <= 1e-8 && within(t, 5.0),
        format!("max |beta err| {beta_err:.2e}, max rmse {rmse:.2e}, max |X'r| {ortho:.2e}, {:.2} s", t.as_secs_f64()),
    )
}

fn feature_counts() -> Outcome {
    let got = [
        FeatureRegistry::new(SensorSubset::S1S2, FeatureSet::All).len(),
        FeatureRegistry::new(SensorSubset::S1S2, FeatureSet::Seasonal).len(),
        FeatureRegistry::new(SensorSubset::S1S2, FeatureSet::Harmonic).len(),
        FeatureRegistry::new(SensorSubset::S1, FeatureSet::All).len(),
    ];
    outcome(got == [209, 76, 133, 22], format!("all/seasonal/harmonic/s1-all = {got:?}"))
}

fn normalization_endpoints() -> Outcome {
    let spec = NormalizationSpec::default();
    let cases = [
        ("s1", spec.s1, (-31.0, 17.0), (-0.24, 1.68)),
        ("s2", spec.s2, (10.0, 15_769.0), (0.00, 1.58)),
        ("temperature", spec.temperature, (278.0, 295.0), (0.17, 0.66)),
        ("precipitation", spec.precipitation, (0.008, 0.208), (0.27, 6.93)),
        ("elevation", spec.elevation, (-27.0, 331.0), (-0.01, 0.17)),
        ("slope", spec.slope, (0.0, 39.3), (0.00, 0.79)),
    ];
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    for (name, rule, (lo, hi), (want_lo, want_hi)) in cases {
        let err = (rule.apply(lo) - want_lo).abs().max((rule.apply(hi) - want_hi).abs());
        worst = worst.max(err);
        if err > 0.01 {
            bad.push(name);
        }
    }
    outcome(bad.is_empty(), format!("max endpoint error {worst:.4}, out of tolerance: {bad:?}"))
}

fn full_series() -> PixelTimeSeries {
    let mut s = PixelTimeSeries::empty("P");
    let mut rng = rng_from(5);
    for m in 0..12 {
        for g in ChannelGroup::DYNAMIC_REAL {
            let v: Vec<f64> = (0..g.width()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            s.set_group(m, g, &v).unwrap();
        }
        s.set_dw(m, Some(1)).unwrap();
    }
    s.statics.terrain = Some(Terrain {
        elevation_m: 0.05,
        slope_deg: 0.1,
    });
    s.statics.location = Some(GeoLocation { lat: 52.0, lon: 5.0 });
    s
}

fn token_accounting() -> Outcome {
    let start = Instant::now();
    let enc = Encoder::new(EncoderConfig::tiny(), 11).unwrap();
    let full = full_series();
    let mut ok = enc.tokenize(&full).unwrap().len() == 110;
    let mut rng = rng_from(404);
    let mut mismatches = 0;
    for _ in 0..500 {
        let mut s = full.clone();
        let mut expected = 110;
        for g in ChannelGroup::ALL {
            if rng.gen_bool(0.5) {
                s.drop_group(g);
                expected -= if g.is_dynamic() { 12 } else { 1 };
            }
        }
        if enc.tokenize(&s).map_or(true, |t| t.len() != expected) {
            mismatches += 1;
        }
    }
    ok &= mismatches == 0;
    let t = start.elapsed();
    outcome(
        ok && within(t, 5.0),
        format!("full input 110 tokens, {mismatches}/500 masks miscounted, {:.2} s", t.as_secs_f64()),
    )
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let enc = Encoder::new(EncoderConfig::tiny(), 11).unwrap();
    let mut s = full_series();
    for m in 4..12 {
        for g in ChannelGroup::DYNAMIC {
            s.clear_group(m, g);
        }
    }
    let inputs = token_inputs(&s);
    let mut rng = rng_from(77);
    let r: Vec<f64> = (0..128).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (_, cache) = enc.forward(&inputs).unwrap();
    let mut grads = enc.store.zero_grads();
    enc.backward(&cache, &r, &mut grads).unwrap();
    let mut store = enc.store.clone();
    let enc_report = check_gradients(&mut store, &grads, 1e-4, |st| {
        let e = Encoder::from_store(st.clone()).unwrap();
        e.forward(&inputs).unwrap().0.iter().zip(&r).map(|(a, b)| a * b).sum()
    });

    let mlp = Mlp::new(
        5,
        3,
        MlpConfig {
            hidden: vec![8, 4, 2],
            ..MlpConfig::default()
        },
        4,
    )
    .unwrap();
    let x = Matrix::from_vec(6, 5, (0..30).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    let y = vec![0, 1, 2, 1, 0, 2];
    let (logits, cache, _) = mlp.forward_logits(&x, Mode::Train).unwrap();
    let (_, d) = cross_entropy(&logits, &y).unwrap();
    let mut grads = mlp.store.zero_grads();
    mlp.backward(&cache, &d, &mut grads);
    let mut store = mlp.store.clone();
    let mlp_report = check_gradients(&mut store, &grads, 1e-4, |st| {
        let m = Mlp::from_store(st.clone()).unwrap();
        cross_entropy(&m.forward_logits(&x, Mode::Train).unwrap().0, &y).unwrap().0
    });
    let t = start.elapsed();
    outcome(
        enc_report.max_rel_error < 1e-4 && mlp_report.max_rel_error < 1e-4 && within(t, 60.0),
        format!(
            "encoder max rel err {:.2e} over {} entries, mlp {:.2e} over {}, {:.1} s",
            enc_report.max_rel_error,
            enc_report.checked,
            mlp_report.max_rel_error,
            mlp_report.checked,
            t.as_secs_f64()
        ),
    )
}

fn mae_sanity() -> Outcome {
    let start = Instant::now();
    let ds = synth_generate(&SynthConfig::simb(), 6).unwrap();
    let spec = NormalizationSpec::default();
    let all: Vec<&PixelTimeSeries> = ds.series().collect();
    let mut picks = sample(&mut rng_from(606), all.len(), 200).into_vec();
    picks.sort_unstable();
    let data: Vec<PixelTimeSeries> = picks.iter().map(|&i| normalize(all[i], &spec)).collect();
    let config = PretrainConfig {
        epochs: 20,
        ..PretrainConfig::default()
    };
    let enc = Encoder::new(EncoderConfig::tiny(), 1).unwrap();
    let (_, losses) = mae_pretrain(enc, &data, &config, 1).unwrap();
    let (first, last) = (losses[0], *losses.last().unwrap());
    let t = start.elapsed();
    outcome(
        losses.len() == 20 && last < first && within(t, 120.0),
        format!("{} pixels, loss {first:.5} -> {last:.5} over {} epochs, {:.1} s", data.len(), losses.len(), t.as_secs_f64()),
    )
}

/// Exhaustive search: every feature, every gap between consecutive distinct
/// values, impurity score compared as exact fractions.
fn brute_force(x: &Matrix, y: &[usize], classes: usize) -> Option<(usize, f64, f64, (u128, u128))> {
    let n = x.rows();
    let mut best: Option<(usize, f64, f64, (u128, u128))> = None;
    for f in 0..x.cols() {
        let mut values: Vec<f64> = (0..n).map(|i| x.get(i, f)).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let mut left = vec![0u128; classes];
            let mut right = vec![0u128; classes];
            for i in 0..n {
                if x.get(i, f) <= w[0] {
                    left[y[i]] += 1;
                } else {
                    right[y[i]] += 1;
                }
            }
            let (nl, nr): (u128, u128) = (left.iter().sum(), right.iter().sum());
            let sl: u128 = left.iter().map(|c| c * c).sum();
            let sr: u128 = right.iter().map(|c| c * c).sum();
            // sl/nl + sr/nr as one fraction.
            let score = (sl * nr + sr * nl, nl * nr);
            let better = match &best {
                None => true,
                Some((_, _, _, (a, b))) => score.0 * b > a * score.1,
            };
            if better {
                best = Some((f, w[0], w[1], score));
            }
        }
    }
    best
}

fn rf_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from(707);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = rng.gen_range(2..=50);
        let p = rng.gen_range(1..=5);
        let classes = rng.gen_range(2..=4);
        let x = Matrix::from_vec(n, p, (0..n * p).map(|_| rng.gen_range(0..8) as f64 * 0.5).collect()).unwrap();
        let y: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let rows: Vec<usize> = (0..n).collect();
        let features: Vec<usize> = (0..p).collect();
        let got = best_split(&x, &y, &rows, &features, classes);
        let want = brute_force(&x, &y, classes);
        let agree = match (&got, &want) {
            (None, None) => true,
            (Some(g), Some((f, lo, hi, (a, b)))) => {
                g.feature == *f && g.threshold >= *lo && g.threshold < *hi && (g.score.value() - *a as f64 / *b as f64).abs() < 1e-12
            }
            _ => false,
        };
        if !agree {
            mismatches += 1;
        }
    }
    let xor = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
    let labels = [0, 1, 1, 0];
    let single = ForestConfig {
        trees: 1,
        max_features: 2,
        bootstrap: false,
        ..ForestConfig::default()
    };
    let model = rf_fit(&xor, &labels, 2, &single, 3).unwrap();
    let (pred, _) = rf_predict(&model, &xor).unwrap();
    let xor_ok = pred == labels;
    let t = start.elapsed();
    outcome(
        mismatches == 0 && xor_ok && within(t, 30.0),
        format!("{mismatches}/200 best-split mismatches, xor fitted {xor_ok}, {:.2} s", t.as_secs_f64()),
    )
}

fn metric_oracle() -> Outcome {
    let truth = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
    let pred = [0, 0, 0, 0, 0, 0, 0, 1, 1, 1];
    let c = confusion(&truth, &pred, 2).unwrap();
    let m = metrics(&c);
    let metric_ok = c.counts == vec![vec![5, 0], vec![2, 3]]
        && (m.overall_accuracy - 0.8).abs() <= 1e-4
        && (m.macro_f1 - 0.7917).abs() <= 1e-4;
    let labels: Vec<usize> = std::iter::repeat(0).take(513).chain(std::iter::repeat(1).take(89)).collect();
    let (train, test) = stratified_split(&labels, 0.7, 1).unwrap();
    let count = |ix: &[usize], c: usize| ix.iter().filter(|&&i| labels[i] == c).count();
    let split = [count(&train, 0), count(&test, 0), count(&train, 1), count(&test, 1)];
    outcome(
        metric_ok && split == [359, 154, 62, 27],
        format!("OA {:.4}, macro-F1 {:.4}, split train/test {split:?}", m.overall_accuracy, m.macro_f1),
    )
}

/// Encoder pre-trained on an unlabelled synthetic pool drawn with its own seed.
fn pretrained_toy_encoder() -> Encoder {
    let pool = synth_generate(&SynthConfig::simb().scaled(0.2), 9_001).unwrap();
    let spec = NormalizationSpec::default();
    let data: Vec<PixelTimeSeries> = pool.series().map(|s| normalize(s, &spec)).collect();
    let enc = Encoder::new(EncoderConfig::toy(), 1).unwrap();
    mae_pretrain(enc, &data, &PretrainConfig::default(), 1).unwrap().0
}

fn toy_settings() -> ExperimentSettings {
    ExperimentSettings {
        train: TrainConfig {
            lr: 1e-3,
            epochs: 30,
            ..TrainConfig::default()
        },
        ..ExperimentSettings::default()
    }
}

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn directional_ordering() -> (Outcome, Vec<MultiSeedReport>) {
    let start = Instant::now();
    let ds = synth_generate(&SynthConfig::simb(), 42).unwrap();
    let enc = pretrained_toy_encoder();
    let reports = match run_comparison(&ds, &Pipeline::ALL, Some(&enc), &SEEDS, &toy_settings()) {
        Ok(r) => r,
        Err(e) => return (outcome(false, format!("run failed: {e}")), Vec::new()),
    };
    let t = start.elapsed();
    let f1 = |p: Pipeline| {
        reports
            .iter()
            .find(|r| r.pipeline == p)
            .filter(|r| r.is_complete() && r.reports.len() == SEEDS.len())
            .and_then(|r| r.mean("macro_f1"))
            .unwrap_or(f64::NAN)
    };
    let (mlp, rf_deep, rf_hand) = (f1(Pipeline::MlpDeep), f1(Pipeline::RfDeep), f1(Pipeline::RfHand));
    let pass = ds.len() == 1479
        && ds.class_count() == 7
        && mlp >= rf_deep
        && rf_deep >= rf_hand - 0.01
        && mlp > rf_hand
        && within(t, 600.0);
    (
        outcome(
            pass,
            format!(
                "mean macro-F1 mlp-deep {:.2}, rf-deep {:.2}, rf-hand {:.2} (%), {:.0} s",
                100.0 * mlp,
                100.0 * rf_deep,
                100.0 * rf_hand,
                t.as_secs_f64()
            ),
        ),
        reports,
    )
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_default()
}

/// Recomputes every `oa` and `macro_f1` summary row from the per-seed rows.
fn summary_matches_seed_rows(dir: &Path) -> bool {
    let report = read(dir, "report.csv");
    let summary = read(dir, "summary.csv");
    let mut checked = 0;
    for p in Pipeline::ALL {
        for metric in ["oa", "macro_f1"] {
            let values: Vec<f64> = report
                .lines()
                .filter(|l| l.starts_with(&format!("{p},")) && l.split(',').nth(2) == Some(metric))
                .filter_map(|l| l.rsplit(',').next()?.parse().ok())
                .collect();
            if values.len() != SEEDS.len() {
                return false;
            }
            let (mean, std) = mean_std(&values);
            let line = summary.lines().find(|l| l.starts_with(&format!("{p},{metric},")));
            let Some(fields) = line.map(|l| l.split(',').collect::<Vec<_>>()) else {
                return false;
            };
            let (m, s): (f64, f64) = (fields[2].parse().unwrap_or(f64::NAN), fields[3].parse().unwrap_or(f64::NAN));
            // n-1 denominator, recomputed here from scratch.
            let mu = values.iter().sum::<f64>() / 5.0;
            let sd = (values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 4.0).sqrt();
            if (m - mean).abs() > 1e-12 || (s - std).abs() > 1e-12 || (s - sd).abs() > 1e-12 || (m - mu).abs() > 1e-12 {
                return false;
            }
            checked += 1;
        }
    }
    checked == 2 * Pipeline::ALL.len()
}

fn five_seed_protocol(reports: &[MultiSeedReport]) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let full = dir.path().join("full");
    let full_ok = !reports.is_empty() && write_reports(&full, reports).is_ok() && summary_matches_seed_rows(&full);

    // Rerun determinism on a reduced dataset keeps the suite inside its time budget.
    let ds = synth_generate(&SynthConfig::simb().scaled(0.1), 42).unwrap();
    let enc = Encoder::new(EncoderConfig::tiny(), 2).unwrap();
    let settings = ExperimentSettings {
        forest: ForestConfig {
            trees: 50,
            ..ForestConfig::default()
        },
        train: TrainConfig {
            lr: 1e-3,
            epochs: 3,
            ..TrainConfig::default()
        },
        ..ExperimentSettings::default()
    };
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let written = run_comparison(&ds, &Pipeline::ALL, Some(&enc), &SEEDS, &settings)
            .and_then(|r| write_reports(&out, &r))
            .unwrap_or_default();
        let bytes: Vec<(String, Vec<u8>)> = written
            .iter()
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(p).unwrap()))
            .collect();
        outputs.push((bytes, summary_matches_seed_rows(&out)));
    }
    let identical = !outputs[0].0.is_empty() && outputs[0].0 == outputs[1].0;
    outcome(
        full_ok && identical && outputs[0].1,
        format!(
            "summary recomputed from 5 seed rows (full run {full_ok}, rerun {}), {} files bit-identical on rerun: {identical}",
            outputs[0].1,
            outputs[0].0.len()
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "harmonic recovery", harmonic_recovery()),
        (2, "feature counts", feature_counts()),
        (3, "normalization endpoints", normalization_endpoints()),
        (4, "token accounting", token_accounting()),
        (5, "gradient checks", gradient_checks()),
        (6, "masked pre-training loss", mae_sanity()),
        (7, "forest split oracle", rf_oracle()),
        (8, "metric oracle", metric_oracle()),
    ];
    let (ordering, reports) = directional_ordering();
    results.push((9, "directional ordering", ordering));
    results.push((10, "five-seed protocol", five_seed_protocol(&reports)));
    for (n, name, o) in &results {
        println!("criterion {n:>2} {:<26} {}  {}", name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
