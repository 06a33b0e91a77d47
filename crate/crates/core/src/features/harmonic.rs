//! First-order harmonic regression with a linear trend:
//!
//! ```text
//! P(t) = b0 + b1 t + b2 cos(2 pi w t) + b3 sin(2 pi w t)
//! ```
//!
//! with `w` = 1 cycle per year and `t` in years since January.

use std::f64::consts::PI;

use crate::bands::BandId;
use crate::error::{Error, Result};

/// Harmonic frequency, cycles per year.
pub const OMEGA: f64 = 1.0;
/// Time step between monthly samples, in years. Month `m` sits at `m * MONTH_STEP`.
pub const MONTH_STEP: f64 = 1.0 / 12.0;
/// Starting point of the iterative solver.
pub const INITIAL_GUESS: [f64; 4] = [0.1, 0.1, 0.4, 0.4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitMethod {
    /// Closed-form least squares through a Householder QR factorization.
    #[default]
    LeastSquares,
    /// Levenberg-Marquardt iterations from [`INITIAL_GUESS`].
    Iterative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicFit {
    pub beta: [f64; 4],
    pub amplitude: f64,
    /// Quadrant-aware angle of (b3, b2), in (-pi, pi].
    pub phase: f64,
    pub rmse: f64,
    pub omega: f64,
    pub n_points: usize,
    pub t_values: Vec<f64>,
}

impl HarmonicFit {
    /// The seven classification parameters: b0..b3, amplitude, phase, RMSE.
    pub fn parameters(&self) -> [f64; 7] {
        let [b0, b1, b2, b3] = self.beta;
        [b0, b1, b2, b3, self.amplitude, self.phase, self.rmse]
    }

    pub fn predict(&self, t: f64) -> f64 {
        dot4(&design_row(t), &self.beta)
    }
}

pub fn amplitude(beta2: f64, beta3: f64) -> f64 {
    beta2.hypot(beta3)
}

pub fn phase(beta2: f64, beta3: f64) -> f64 {
    beta3.atan2(beta2)
}

pub fn design_row(t: f64) -> [f64; 4] {
    let arg = 2.0 * PI * OMEGA * t;
    [1.0, t, arg.cos(), arg.sin()]
}

fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

/// Least-squares coefficients for rows `x` and targets `y` via Householder QR.
/// `None` when the design is rank deficient.
pub fn solve_least_squares(x: &[[f64; 4]], y: &[f64]) -> Option<[f64; 4]> {
    let n = x.len();
    if n < 4 {
        return None;
    }
    let mut a: Vec<[f64; 4]> = x.to_vec();
    let mut b = y.to_vec();
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    for k in 0..4 {
        let norm = (k..n).map(|i| a[i][k] * a[i][k]).sum::<f64>().sqrt();
        if norm <= 1e-10 * scale.max(1.0) {
            return None;
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..n).map(|i| a[i][k]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 > 0.0 {
            for j in k..4 {
                let s: f64 = (k..n).map(|i| v[i - k] * a[i][j]).sum::<f64>() * 2.0 / vnorm2;
                for i in k..n {
                    a[i][j] -= s * v[i - k];
                }
            }
            let s: f64 = (k..n).map(|i| v[i - k] * b[i]).sum::<f64>() * 2.0 / vnorm2;
            for i in k..n {
                b[i] -= s * v[i - k];
            }
        }
        if a[k][k].abs() <= 1e-10 * scale.max(1.0) {
            return None;
        }
    }
    let mut beta = [0.0; 4];
    for k in (0..4).rev() {
        let s: f64 = (k + 1..4).map(|j| a[k][j] * beta[j]).sum();
        beta[k] = (b[k] - s) / a[k][k];
    }
    Some(beta)
}

fn solve4(mut m: [[f64; 4]; 4], mut r: [f64; 4]) -> Option<[f64; 4]> {
    for c in 0..4 {
        let p = (c..4).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[p][c].abs() < 1e-300 {
            return None;
        }
        m.swap(c, p);
        r.swap(c, p);
        for i in c + 1..4 {
            let f = m[i][c] / m[c][c];
            for j in c..4 {
                m[i][j] -= f * m[c][j];
            }
            r[i] -= f * r[c];
        }
    }
    let mut x = [0.0; 4];
    for i in (0..4).rev() {
        let s: f64 = (i + 1..4).map(|j| m[i][j] * x[j]).sum();
        x[i] = (r[i] - s) / m[i][i];
    }
    Some(x)
}

fn sse(x: &[[f64; 4]], y: &[f64], beta: &[f64; 4]) -> f64 {
    x.iter().zip(y).map(|(r, v)| (dot4(r, beta) - v).powi(2)).sum()
}

/// Damped Gauss-Newton refinement from `start`. The model is linear in the
/// coefficients, so this converges to the least-squares solution.
fn levenberg_marquardt(x: &[[f64; 4]], y: &[f64], start: [f64; 4]) -> Option<[f64; 4]> {
    let mut jtj = [[0.0; 4]; 4];
    for r in x {
        for i in 0..4 {
            for j in 0..4 {
                jtj[i][j] += r[i] * r[j];
            }
        }
    }
    let mut beta = start;
    let mut cost = sse(x, y, &beta);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let mut grad = [0.0; 4];
        for (r, v) in x.iter().zip(y) {
            let resid = v - dot4(r, &beta);
            for i in 0..4 {
                grad[i] += r[i] * resid;
            }
        }
        let mut damped = jtj;
        for (i, row) in damped.iter_mut().enumerate() {
            row[i] += lambda * jtj[i][i];
        }
        let step = solve4(damped, grad)?;
        let trial = [beta[0] + step[0], beta[1] + step[1], beta[2] + step[2], beta[3] + step[3]];
        let trial_cost = sse(x, y, &trial);
        if trial_cost <= cost {
            beta = trial;
            let converged = step
                .iter()
                .zip(&beta)
                .all(|(s, b)| s.abs() <= 1e-15 * b.abs().max(1.0));
            cost = trial_cost;
            lambda = (lambda / 10.0).max(1e-12);
            if converged {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    Some(beta)
}

/// Fits the harmonic model to the non-missing months of `signal`.
pub fn fit_harmonic(signal: &[Option<f64>], band: BandId) -> Result<HarmonicFit> {
    fit_harmonic_with(signal, band, FitMethod::LeastSquares)
}

pub fn fit_harmonic_with(signal: &[Option<f64>], band: BandId, method: FitMethod) -> Result<HarmonicFit> {
    let (t_values, y): (Vec<f64>, Vec<f64>) = signal
        .iter()
        .enumerate()
        .filter_map(|(m, v)| v.map(|v| (m as f64 * MONTH_STEP, v)))
        .unzip();
    let x: Vec<[f64; 4]> = t_values.iter().map(|&t| design_row(t)).collect();
    let rank_deficient = || Error::RankDeficient {
        band: band.name().to_string(),
        points: y.len(),
    };
    let ls = solve_least_squares(&x, &y).ok_or_else(rank_deficient)?;
    let beta = match method {
        FitMethod::LeastSquares => ls,
        FitMethod::Iterative => levenberg_marquardt(&x, &y, INITIAL_GUESS).ok_or_else(rank_deficient)?,
    };
    let n = y.len();
    let rmse = (sse(&x, &y, &beta) / n as f64).sqrt();
    Ok(HarmonicFit {
        beta,
        amplitude: amplitude(beta[2], beta[3]),
        phase: phase(beta[2], beta[3]),
        rmse,
        omega: OMEGA,
        n_points: n,
        t_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(beta: [f64; 4]) -> Vec<Option<f64>> {
        (0..12)
            .map(|m| Some(dot4(&design_row(m as f64 * MONTH_STEP), &beta)))
            .collect()
    }

    /// Normal-equations solve, kept apart from the QR path.
    fn normal_equations(signal: &[Option<f64>]) -> [f64; 4] {
        let mut m = [[0.0; 4]; 4];
        let mut r = [0.0; 4];
        for (i, v) in signal.iter().enumerate() {
            let Some(v) = v else { continue };
            let t = i as f64 / 12.0;
            let row = [1.0, t, (2.0 * PI * t).cos(), (2.0 * PI * t).sin()];
            for a in 0..4 {
                r[a] += row[a] * v;
                for b in 0..4 {
                    m[a][b] += row[a] * row[b];
                }
            }
        }
        solve4(m, r).unwrap()
    }

    #[test]
    fn recovers_exact_coefficients() {
        let beta = [0.5, 0.01, 0.3, -0.2];
        let fit = fit_harmonic(&sample(beta), BandId::Ndvi).unwrap();
        let oracle = normal_equations(&sample(beta));
        for k in 0..4 {
            assert!((fit.beta[k] - beta[k]).abs() < 1e-9);
            assert!((fit.beta[k] - oracle[k]).abs() < 1e-9);
        }
        assert!(fit.rmse <= 1e-9);
        assert_eq!(fit.n_points, 12);
    }

    #[test]
    fn constant_signal() {
        let fit = fit_harmonic(&[Some(0.37); 12], BandId::B4).unwrap();
        assert!((fit.beta[0] - 0.37).abs() < 1e-12);
        for b in &fit.beta[1..] {
            assert!(b.abs() < 1e-12);
        }
        assert!(fit.rmse < 1e-12);
    }

    #[test]
    fn amplitude_and_phase_identities() {
        assert_eq!(amplitude(3.0, 4.0), 5.0);
        assert!((phase(0.0, 1.0) - PI / 2.0).abs() < 1e-15);
        // The quadrant is kept where a plain arctangent of the ratio would fold it.
        assert!((phase(-1.0, -1.0) + 3.0 * PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn too_few_points_names_band() {
        let mut s = vec![None; 12];
        s[0] = Some(1.0);
        s[4] = Some(2.0);
        s[8] = Some(1.5);
        match fit_harmonic(&s, BandId::VH) {
            Err(Error::RankDeficient { band, points }) => {
                assert_eq!(band, "VH");
                assert_eq!(points, 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn iterative_mode_agrees() {
        let mut rng = crate::rng::rng_from(5);
        use rand::Rng;
        for _ in 0..50 {
            let s: Vec<Option<f64>> = (0..12)
                .map(|_| (rng.gen::<f64>() > 0.2).then(|| rng.gen_range(-1.0..1.0)))
                .collect();
            let Ok(a) = fit_harmonic_with(&s, BandId::B8, FitMethod::LeastSquares) else { continue };
            let b = fit_harmonic_with(&s, BandId::B8, FitMethod::Iterative).unwrap();
            for k in 0..4 {
                assert!((a.beta[k] - b.beta[k]).abs() < 1e-6, "{:?} vs {:?}", a.beta, b.beta);
            }
        }
    }

    #[test]
    fn appending_on_curve_point_does_not_raise_rmse() {
        let mut s: Vec<Option<f64>> = (0..12)
            .map(|m| Some(0.4 + 0.2 * (m as f64).sin() + 0.05 * (m as f64 * 1.7).cos()))
            .collect();
        s[7] = None;
        let fit = fit_harmonic(&s, BandId::Ndvi).unwrap();
        s[7] = Some(fit.predict(7.0 * MONTH_STEP));
        let refit = fit_harmonic(&s, BandId::Ndvi).unwrap();
        assert!(refit.rmse <= fit.rmse + 1e-15);
        for k in 0..4 {
            assert!((refit.beta[k] - fit.beta[k]).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn residuals_orthogonal_to_design(values in prop::collection::vec(-5.0f64..5.0, 12)) {
            let s: Vec<Option<f64>> = values.iter().map(|&v| Some(v)).collect();
            let fit = fit_harmonic(&s, BandId::B2).unwrap();
            for col in 0..4 {
                let dot: f64 = (0..12)
                    .map(|m| {
                        let row = design_row(m as f64 * MONTH_STEP);
                        row[col] * (values[m] - dot4(&row, &fit.beta))
                    })
                    .sum();
                prop_assert!(dot.abs() < 1e-8, "column {col}: {dot}");
            }
        }

        #[test]
        fn constant_offset_moves_only_intercept(
            values in prop::collection::vec(-5.0f64..5.0, 12),
            c in -10.0f64..10.0,
        ) {
            let a: Vec<Option<f64>> = values.iter().map(|&v| Some(v)).collect();
            let b: Vec<Option<f64>> = values.iter().map(|&v| Some(v + c)).collect();
            let fa = fit_harmonic(&a, BandId::B2).unwrap();
            let fb = fit_harmonic(&b, BandId::B2).unwrap();
            prop_assert!((fb.beta[0] - fa.beta[0] - c).abs() < 1e-9);
            for k in 1..4 {
                prop_assert!((fb.beta[k] - fa.beta[k]).abs() < 1e-9);
            }
        }

        #[test]
        fn circular_shift_rotates_phase(
            amp in 0.1f64..2.0,
            phi in -3.0f64..3.0,
            k in 0usize..12,
        ) {
            let pure: Vec<f64> = (0..12)
                .map(|m| amp * (2.0 * PI * m as f64 / 12.0 - phi).cos())
                .collect();
            let shifted: Vec<Option<f64>> = (0..12).map(|m| Some(pure[(m + 12 - k) % 12])).collect();
            let base = fit_harmonic(&pure.iter().map(|&v| Some(v)).collect::<Vec<_>>(), BandId::Ndvi).unwrap();
            let moved = fit_harmonic(&shifted, BandId::Ndvi).unwrap();
            prop_assert!((moved.amplitude - base.amplitude).abs() < 1e-9);
            let delta = (moved.phase - base.phase - 2.0 * PI * k as f64 / 12.0).rem_euclid(2.0 * PI);
            prop_assert!(delta.min(2.0 * PI - delta) < 1e-9, "delta {delta}");
        }
    }
}
