//! MLP classification head and the fine-tuning loop.

pub mod model;
pub mod train;

pub use model::{argmax, cross_entropy, BatchStats, Mlp, MlpCache, MlpConfig, Mode};
pub use train::{embed_inputs, finetune, train_mlp, EpochRecord, FinetuneResult, TrainConfig, TrainTrace};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::nn::check_gradients;
    use crate::rng::rng_from;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn tiny_config() -> MlpConfig {
        MlpConfig {
            hidden: vec![8, 4, 2],
            ..MlpConfig::default()
        }
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = rng_from(seed);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    /// Well separated Gaussian blobs, `per_class` points per class.
    fn blobs(classes: usize, per_class: usize, dim: usize, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = rng_from(seed);
        let centers: Vec<Vec<f64>> = (0..classes)
            .map(|c| (0..dim).map(|j| if j % classes == c { 6.0 } else { 0.0 }).collect())
            .collect();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per_class {
                rows.push(center.iter().map(|m| m + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect());
                labels.push(c);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn default_widths_and_probabilities() {
        let mlp = Mlp::new(128, 7, MlpConfig::default(), 1).unwrap();
        assert_eq!(mlp.hidden_widths(), vec![1024, 512, 256]);
        let x = random_matrix(5, 128, 2);
        for mode in [Mode::Train, Mode::Eval] {
            let p = mlp.forward(&x, mode).unwrap();
            for i in 0..5 {
                assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(p.row(i).iter().all(|&v| v >= 0.0));
            }
        }
        assert_eq!(mlp.forward(&x, Mode::Eval).unwrap(), mlp.forward(&x, Mode::Eval).unwrap());
        assert!(matches!(mlp.forward(&random_matrix(2, 3, 1), Mode::Eval), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mlp = Mlp::new(5, 3, tiny_config(), 4).unwrap();
        let x = random_matrix(6, 5, 5);
        let y = vec![0, 1, 2, 1, 0, 2];
        let (logits, cache, _) = mlp.forward_logits(&x, Mode::Train).unwrap();
        let (_, d) = cross_entropy(&logits, &y).unwrap();
        let mut grads = mlp.store.zero_grads();
        mlp.backward(&cache, &d, &mut grads);
        let mut store = mlp.store.clone();
        let report = check_gradients(&mut store, &grads, 1e-4, |st| {
            let m = Mlp::from_store(st.clone()).unwrap();
            let (l, _, _) = m.forward_logits(&x, Mode::Train).unwrap();
            cross_entropy(&l, &y).unwrap().0
        });
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn single_row_batch_uses_running_stats() {
        let mlp = Mlp::new(5, 3, tiny_config(), 4).unwrap();
        let x = random_matrix(1, 5, 8);
        let train = mlp.forward(&x, Mode::Train).unwrap();
        assert_eq!(train, mlp.forward(&x, Mode::Eval).unwrap());
        let (logits, cache, _) = mlp.forward_logits(&x, Mode::Train).unwrap();
        let (_, d) = cross_entropy(&logits, &[1]).unwrap();
        let mut grads = mlp.store.zero_grads();
        mlp.backward(&cache, &d, &mut grads);
        let mut store = mlp.store.clone();
        let report = check_gradients(&mut store, &grads, 1e-4, |st| {
            let m = Mlp::from_store(st.clone()).unwrap();
            cross_entropy(&m.forward_logits(&x, Mode::Train).unwrap().0, &[1]).unwrap().0
        });
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn batch_norm_standardizes_in_train_mode() {
        let mlp = Mlp::new(6, 3, MlpConfig::default(), 9).unwrap();
        let x = random_matrix(64, 6, 10).map(|v| 3.0 * v + 2.0);
        let (_, cache, _) = mlp.forward_logits(&x, Mode::Train).unwrap();
        for layer in &cache.layers {
            let n = layer.xhat.rows() as f64;
            for j in 0..layer.xhat.cols() {
                let col: Vec<f64> = (0..layer.xhat.rows()).map(|i| layer.xhat.get(i, j)).collect();
                let mean = col.iter().sum::<f64>() / n;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                assert!(mean.abs() < 1e-6);
                assert!((var - 1.0).abs() < 1e-3, "{var}");
            }
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let logits = random_matrix(4, 5, 3);
        let y = [0, 4, 2, 2];
        let (loss, d) = cross_entropy(&logits, &y).unwrap();
        let shifted = logits.map(|v| v + 7.5);
        let (loss2, d2) = cross_entropy(&shifted, &y).unwrap();
        assert!((loss - loss2).abs() < 1e-12);
        for i in 0..4 {
            assert!(d.row(i).iter().sum::<f64>().abs() < 1e-15);
            assert_eq!(argmax(logits.row(i)), argmax(shifted.row(i)));
            for (a, b) in d.row(i).iter().zip(d2.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (x, y) = blobs(7, 100, 14, 21);
        let mlp = Mlp::new(14, 7, MlpConfig::default(), 3).unwrap();
        let (trained, trace) = train_mlp(mlp, &x, &y, &TrainConfig::default(), 3).unwrap();
        let (pred, _) = trained.predict(&x).unwrap();
        let acc = pred.iter().zip(&y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64;
        assert!(acc >= 0.99, "train accuracy {acc}");
        let best = trace.best().unwrap().val_loss;
        assert!(best <= trace.epochs.last().unwrap().val_loss);
        assert!(trace.epochs.iter().all(|e| e.val_loss >= best));
    }

    #[test]
    fn training_is_deterministic_and_checks_labels() {
        let (x, y) = blobs(3, 20, 6, 1);
        let cfg = TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        };
        let run = || train_mlp(Mlp::new(6, 3, tiny_config(), 2).unwrap(), &x, &y, &cfg, 7).unwrap().1;
        assert_eq!(run(), run());
        let single = vec![0; y.len()];
        assert!(matches!(
            train_mlp(Mlp::new(6, 3, tiny_config(), 2).unwrap(), &x, &single, &cfg, 7),
            Err(crate::Error::SingleClass(1))
        ));
        assert!(run().to_csv().starts_with("epoch,train_loss,val_loss,val_acc\n1,"));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut mlp = Mlp::new(5, 3, tiny_config(), 4).unwrap();
        mlp.store.round_to_f32();
        mlp.save(&dir.path().join("head")).unwrap();
        let loaded = Mlp::load(&dir.path().join("head")).unwrap();
        assert_eq!(loaded.store, mlp.store);
        assert_eq!(loaded.hidden_widths(), vec![8, 4, 2]);
    }

    mod finetuning {
        use super::*;
        use crate::data::{synth_generate, SynthConfig};
        use crate::encoder::{normalize, token_inputs, Encoder, EncoderConfig, NormalizationSpec};

        fn data() -> (Vec<Vec<crate::encoder::TokenInput>>, Vec<usize>) {
            let ds = synth_generate(&SynthConfig::simb().scaled(0.02), 5).unwrap();
            let spec = NormalizationSpec::default();
            let inputs = ds.series().map(|s| token_inputs(&normalize(s, &spec))).collect();
            (inputs, ds.labels())
        }

        fn cfg() -> TrainConfig {
            TrainConfig {
                epochs: 2,
                batch_size: 8,
                ..TrainConfig::default()
            }
        }

        #[test]
        fn gradients_reach_the_encoder() {
            let (inputs, labels) = data();
            let enc = Encoder::new(EncoderConfig::tiny(), 1).unwrap();
            let head = Mlp::new(128, 7, tiny_config(), 1).unwrap();
            let before = enc.store.clone();
            let r = finetune(enc, head, &inputs, &labels, &cfg(), false, 1).unwrap();
            assert!(r.first_encoder_grad_norm > 0.0);
            assert_ne!(r.encoder.store, before);
            assert_eq!(r.trace.epochs.len(), 2);
        }

        #[test]
        fn frozen_encoder_is_bit_identical() {
            let (inputs, labels) = data();
            let enc = Encoder::new(EncoderConfig::tiny(), 1).unwrap();
            let head = Mlp::new(128, 7, tiny_config(), 1).unwrap();
            let before = enc.store.clone();
            let r = finetune(enc, head.clone(), &inputs, &labels, &cfg(), true, 1).unwrap();
            assert_eq!(r.encoder.store, before);
            assert_ne!(r.mlp.store, head.store);
        }
    }
}
