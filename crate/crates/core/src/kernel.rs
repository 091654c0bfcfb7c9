//! Composed covariance function for cycle-ageing regression.
//!
//! Five Matérn-5/2 factors host the stress-factor dimensions (reciprocal
//! temperature, DOD, middle-SOC, charging and discharging C-rates) and are
//! multiplied together with an offset-linear factor in the Ah-throughput
//! increment. The noise variance contributes only on the Gram diagonal, so
//! repeated input rows with different targets stay distinct noisy
//! observations.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of stress-factor dimensions hosted by Matérn factors.
pub const STRESS_DIMS: usize = 5;
/// Total number of kernel hyperparameters (in canonical order, see [`ParamIndex`]).
pub const N_PARAMS: usize = 8;

/// Canonical hyperparameter ordering used by gradients and the optimizer:
/// the five stress length-scales, the linear-kernel offset, the signal
/// variance and the noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamIndex {
    LengthScale(usize),
    LinearOffset,
    SignalVar,
    NoiseVar,
}

impl ParamIndex {
    pub fn from_flat(i: usize) -> Self {
        match i {
            0..=4 => ParamIndex::LengthScale(i),
            5 => ParamIndex::LinearOffset,
            6 => ParamIndex::SignalVar,
            7 => ParamIndex::NoiseVar,
            _ => panic!("hyperparameter index {i} out of range"),
        }
    }
}

/// Names for diagnostics and reports, in canonical order.
pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "theta_inv_temp",
    "theta_dod",
    "theta_mid_soc",
    "theta_c_chg",
    "theta_c_dchg",
    "theta_delta_ah",
    "signal_var",
    "noise_var",
];

/// Labels for the five stress dimensions, in input order.
pub const STRESS_NAMES: [&str; STRESS_DIMS] = ["inv_temp", "dod", "mid_soc", "c_chg", "c_dchg"];

/// One six-dimensional model input.
///
/// Dimension order is fixed: reciprocal temperature, DOD, middle-SOC,
/// charging C-rate, discharging C-rate, and the Ah-throughput increment
/// last (hosted by the linear kernel factor).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressInputVector {
    /// Ah-throughput increment the prediction covers [Ah].
    pub delta_ah: f64,
    /// Reciprocal absolute temperature [1/K].
    pub inv_temp: f64,
    /// Depth of discharge [%].
    pub dod: f64,
    /// Average state of charge [%].
    pub mid_soc: f64,
    /// Charging C-rate [C].
    pub c_chg: f64,
    /// Discharging C-rate [C].
    pub c_dchg: f64,
}

impl StressInputVector {
    pub fn new(
        delta_ah: f64,
        inv_temp: f64,
        dod: f64,
        mid_soc: f64,
        c_chg: f64,
        c_dchg: f64,
    ) -> Result<Self> {
        let v = StressInputVector {
            delta_ah,
            inv_temp,
            dod,
            mid_soc,
            c_chg,
            c_dchg,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.delta_ah,
            self.inv_temp,
            self.dod,
            self.mid_soc,
            self.c_chg,
            self.c_dchg,
        ];
        if fields.iter().any(|f| !f.is_finite()) {
            return Err(Error::invalid("non-finite stress input"));
        }
        if self.delta_ah <= 0.0 {
            return Err(Error::invalid(format!(
                "delta_ah must be > 0, got {}",
                self.delta_ah
            )));
        }
        if self.inv_temp <= 0.0 {
            return Err(Error::invalid(format!(
                "inv_temp must be > 0, got {}",
                self.inv_temp
            )));
        }
        if !(self.dod > 0.0 && self.dod <= 100.0) {
            return Err(Error::invalid(format!(
                "dod must lie in (0, 100], got {}",
                self.dod
            )));
        }
        if !(0.0..=100.0).contains(&self.mid_soc) {
            return Err(Error::invalid(format!(
                "mid_soc must lie in [0, 100], got {}",
                self.mid_soc
            )));
        }
        if self.c_chg <= 0.0 || self.c_dchg <= 0.0 {
            return Err(Error::invalid("C-rates must be > 0"));
        }
        Ok(())
    }

    /// The five stress coordinates, in kernel dimension order.
    pub fn stress(&self) -> [f64; STRESS_DIMS] {
        [
            self.inv_temp,
            self.dod,
            self.mid_soc,
            self.c_chg,
            self.c_dchg,
        ]
    }

    /// Flat six-vector (stress dims then delta_ah), used by persistence.
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.inv_temp,
            self.dod,
            self.mid_soc,
            self.c_chg,
            self.c_dchg,
            self.delta_ah,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Result<Self> {
        StressInputVector::new(a[5], a[0], a[1], a[2], a[3], a[4])
    }
}

/// Kernel hyperparameters with a per-parameter frozen mask.
///
/// A frozen parameter is never altered by the optimizer and reports a zero
/// gradient. Freezing a stress length-scale at a very large value removes
/// that dimension from inference, which is how single-valued stress factors
/// are handled until data at other levels arrives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Length-scales for the five stress dimensions [input units].
    pub length_scales: [f64; STRESS_DIMS],
    /// Offset of the linear Ah-throughput factor [Ah].
    pub linear_offset: f64,
    /// Signal variance [%²].
    pub signal_var: f64,
    /// Noise variance [%²].
    pub noise_var: f64,
    /// Frozen mask in canonical parameter order.
    pub frozen: [bool; N_PARAMS],
}

/// Multiplier used when pinning a length-scale so the corresponding
/// dimension drops out of inference.
pub const FROZEN_SCALE_FACTOR: f64 = 1e6;

impl Hyperparameters {
    pub fn new(
        length_scales: [f64; STRESS_DIMS],
        linear_offset: f64,
        signal_var: f64,
        noise_var: f64,
    ) -> Result<Self> {
        let hp = Hyperparameters {
            length_scales,
            linear_offset,
            signal_var,
            noise_var,
            frozen: [false; N_PARAMS],
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &ls) in self.length_scales.iter().enumerate() {
            if !(ls.is_finite() && ls > 0.0) {
                return Err(Error::invalid(format!(
                    "{} must be finite and > 0, got {ls}",
                    PARAM_NAMES[i]
                )));
            }
        }
        if !(self.linear_offset.is_finite() && self.linear_offset > 0.0) {
            return Err(Error::invalid("theta_delta_ah must be finite and > 0"));
        }
        if !(self.signal_var.is_finite() && self.signal_var > 0.0) {
            return Err(Error::invalid("signal_var must be finite and > 0"));
        }
        if !(self.noise_var.is_finite() && self.noise_var >= 0.0) {
            return Err(Error::invalid("noise_var must be finite and >= 0"));
        }
        Ok(())
    }

    /// Parameter value in canonical flat order.
    pub fn get(&self, i: usize) -> f64 {
        match ParamIndex::from_flat(i) {
            ParamIndex::LengthScale(n) => self.length_scales[n],
            ParamIndex::LinearOffset => self.linear_offset,
            ParamIndex::SignalVar => self.signal_var,
            ParamIndex::NoiseVar => self.noise_var,
        }
    }

    pub fn set(&mut self, i: usize, value: f64) {
        match ParamIndex::from_flat(i) {
            ParamIndex::LengthScale(n) => self.length_scales[n] = value,
            ParamIndex::LinearOffset => self.linear_offset = value,
            ParamIndex::SignalVar => self.signal_var = value,
            ParamIndex::NoiseVar => self.noise_var = value,
        }
    }

    /// Indices of parameters the optimizer may move.
    pub fn unfrozen_indices(&self) -> Vec<usize> {
        (0..N_PARAMS).filter(|&i| !self.frozen[i]).collect()
    }

    /// Freeze stress dimension `dim` at a scale that removes it from
    /// inference. `scale` should be the characteristic magnitude of the
    /// dimension (its observed span, or the value magnitude when only a
    /// single level was observed).
    pub fn freeze_stress_dim(&mut self, dim: usize, scale: f64) {
        assert!(dim < STRESS_DIMS);
        let scale = if scale > 0.0 { scale } else { 1.0 };
        self.length_scales[dim] = FROZEN_SCALE_FACTOR * scale;
        self.frozen[dim] = true;
    }
}

/// Matérn-5/2 correlation at distance `r` with length-scale `theta`.
///
/// Value lies in (0, 1] and equals 1 exactly at r = 0.
pub fn matern52(r: f64, theta: f64) -> Result<f64> {
    if !r.is_finite() || r < 0.0 {
        return Err(Error::invalid(format!(
            "distance must be finite and >= 0, got {r}"
        )));
    }
    if !theta.is_finite() || theta <= 0.0 {
        return Err(Error::invalid(format!(
            "length-scale must be finite and > 0, got {theta}"
        )));
    }
    let a = 5.0_f64.sqrt() * r / theta;
    Ok((1.0 + a + a * a / 3.0) * (-a).exp())
}

/// d matern52 / d log(theta); zero at r = 0 and always >= 0.
fn matern52_dlog_theta(r: f64, theta: f64) -> f64 {
    let a = 5.0_f64.sqrt() * r / theta;
    (a * a / 3.0) * (1.0 + a) * (-a).exp()
}

/// Covariance between two inputs. `same_point` marks the Gram diagonal
/// (identity of training-row index, not of value): only there does the
/// noise variance contribute.
pub fn kernel_eval(
    x: &StressInputVector,
    x2: &StressInputVector,
    hp: &Hyperparameters,
    same_point: bool,
) -> Result<f64> {
    let s = x.stress();
    let s2 = x2.stress();
    let mut product = 1.0;
    for n in 0..STRESS_DIMS {
        product *= matern52((s[n] - s2[n]).abs(), hp.length_scales[n])?;
    }
    let linear = x.delta_ah * x2.delta_ah + hp.linear_offset * hp.linear_offset;
    let mut k = hp.signal_var * product * linear;
    if same_point {
        k += hp.noise_var;
    }
    Ok(k)
}

/// Partial derivatives of [`kernel_eval`] with respect to the log of each
/// hyperparameter, in canonical order. Frozen parameters report zero.
pub fn kernel_grad(
    x: &StressInputVector,
    x2: &StressInputVector,
    hp: &Hyperparameters,
    same_point: bool,
) -> Result<[f64; N_PARAMS]> {
    let s = x.stress();
    let s2 = x2.stress();
    let mut factors = [0.0; STRESS_DIMS];
    let mut product = 1.0;
    for n in 0..STRESS_DIMS {
        factors[n] = matern52((s[n] - s2[n]).abs(), hp.length_scales[n])?;
        product *= factors[n];
    }
    let linear = x.delta_ah * x2.delta_ah + hp.linear_offset * hp.linear_offset;
    let signal_part = hp.signal_var * product * linear;

    let mut grad = [0.0; N_PARAMS];
    for n in 0..STRESS_DIMS {
        if hp.frozen[n] {
            continue;
        }
        let r = (s[n] - s2[n]).abs();
        let dfactor = matern52_dlog_theta(r, hp.length_scales[n]);
        // Replace one Matérn factor by its log-theta derivative; guard the
        // division because a factor underflows to 0 at extreme distances.
        let rest = if factors[n] > 0.0 {
            product / factors[n]
        } else {
            let mut p = 1.0;
            for (m, &f) in factors.iter().enumerate() {
                if m != n {
                    p *= f;
                }
            }
            p
        };
        grad[n] = hp.signal_var * rest * dfactor * linear;
    }
    if !hp.frozen[5] {
        // d(linear)/d log(theta6) = 2 theta6^2
        grad[5] = hp.signal_var * product * 2.0 * hp.linear_offset * hp.linear_offset;
    }
    if !hp.frozen[6] {
        grad[6] = signal_part;
    }
    if !hp.frozen[7] && same_point {
        grad[7] = hp.noise_var;
    }
    Ok(grad)
}

/// Noisy Gram matrix K(X, X) + sigma_n^2 I over the given points.
pub fn gram(points: &[StressInputVector], hp: &Hyperparameters) -> Result<DMatrix<f64>> {
    if points.is_empty() {
        return Err(Error::invalid("gram requires at least one point"));
    }
    let n = points.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let k = kernel_eval(&points[i], &points[j], hp, i == j)?;
            m[(i, j)] = k;
            m[(j, i)] = k;
        }
    }
    Ok(m)
}

/// Cross-covariance matrix K(A, B) without any noise term.
pub fn gram_cross(
    rows: &[StressInputVector],
    cols: &[StressInputVector],
    hp: &Hyperparameters,
) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(rows.len(), cols.len());
    for i in 0..rows.len() {
        for j in 0..cols.len() {
            m[(i, j)] = kernel_eval(&rows[i], &cols[j], hp, false)?;
        }
    }
    Ok(m)
}

/// Normalized relevance weights for the five stress dimensions.
///
/// Inverse length-scales rank input relevance, but raw 1/theta values are
/// not commensurable across dimensions with different units, so each is
/// scaled by the observed span of its dimension before normalization.
/// Frozen dimensions report zero.
pub fn relevance(
    hp: &Hyperparameters,
    observed_ranges: &[f64; STRESS_DIMS],
) -> Result<[f64; STRESS_DIMS]> {
    let mut weights = [0.0; STRESS_DIMS];
    let mut total = 0.0;
    for n in 0..STRESS_DIMS {
        if hp.frozen[n] {
            continue;
        }
        if !(observed_ranges[n].is_finite() && observed_ranges[n] > 0.0) {
            return Err(Error::invalid(format!(
                "observed range for unfrozen dimension {} must be > 0",
                STRESS_NAMES[n]
            )));
        }
        weights[n] = observed_ranges[n] / hp.length_scales[n];
        total += weights[n];
    }
    if total == 0.0 {
        return Err(Error::EmptyRelevance);
    }
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// Per-dimension observed spans of a set of inputs (stress dims only).
pub fn observed_ranges(points: &[StressInputVector]) -> [f64; STRESS_DIMS] {
    let mut lo = [f64::INFINITY; STRESS_DIMS];
    let mut hi = [f64::NEG_INFINITY; STRESS_DIMS];
    for p in points {
        let s = p.stress();
        for n in 0..STRESS_DIMS {
            lo[n] = lo[n].min(s[n]);
            hi[n] = hi[n].max(s[n]);
        }
    }
    let mut out = [0.0; STRESS_DIMS];
    for n in 0..STRESS_DIMS {
        out[n] = if points.is_empty() {
            0.0
        } else {
            hi[n] - lo[n]
        };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn test_hp() -> Hyperparameters {
        Hyperparameters::new([2e-4, 40.0, 25.0, 0.8, 0.9], 8000.0, 4.0, 0.01).unwrap()
    }

    fn random_input(rng: &mut StdRng) -> StressInputVector {
        StressInputVector::new(
            rng.gen_range(1000.0..16000.0),
            rng.gen_range(0.0031..0.0037),
            rng.gen_range(10.0..100.0),
            rng.gen_range(20.0..80.0),
            rng.gen_range(0.3..2.0),
            rng.gen_range(0.3..2.0),
        )
        .unwrap()
    }

    fn random_hp(rng: &mut StdRng) -> Hyperparameters {
        Hyperparameters::new(
            [
                rng.gen_range(1e-4..1e-3),
                rng.gen_range(10.0..200.0),
                rng.gen_range(10.0..200.0),
                rng.gen_range(0.2..5.0),
                rng.gen_range(0.2..5.0),
            ],
            rng.gen_range(1000.0..20000.0),
            rng.gen_range(0.1..10.0),
            rng.gen_range(1e-3..0.1),
        )
        .unwrap()
    }

    #[test]
    fn matern_identity_at_zero_distance() {
        for theta in [1e-4, 1.0, 42.0, 1e6] {
            assert_eq!(matern52(0.0, theta).unwrap(), 1.0);
        }
    }

    #[test]
    fn matern_closed_form_at_r_equals_theta() {
        // Oracle: evaluate the closed form numerically at a = sqrt(5).
        let a = 5.0_f64.sqrt();
        let expected = (1.0 + a + a * a / 3.0) * (-a).exp();
        assert_relative_eq!(expected, 0.52399, max_relative = 1e-4);
        for theta in [0.5, 3.0, 77.0] {
            assert_relative_eq!(
                matern52(theta, theta).unwrap(),
                expected,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn matern_decays_monotonically() {
        let v1 = matern52(1.0, 1.0).unwrap();
        let v10 = matern52(10.0, 1.0).unwrap();
        assert!(v10 < v1);
        assert!(v10 < 1e-3);
    }

    #[test]
    fn matern_rejects_bad_inputs() {
        assert!(matern52(-1.0, 1.0).is_err());
        assert!(matern52(f64::NAN, 1.0).is_err());
        assert!(matern52(1.0, 0.0).is_err());
        assert!(matern52(1.0, -2.0).is_err());
    }

    #[test]
    fn kernel_collapses_to_linear_part_at_zero_stress_distance() {
        let hp = test_hp();
        let x = StressInputVector::new(4000.0, 0.0034, 100.0, 50.0, 1.0 / 3.0, 1.0).unwrap();
        let k = kernel_eval(&x, &x, &hp, false).unwrap();
        let expected =
            hp.signal_var * (x.delta_ah * x.delta_ah + hp.linear_offset * hp.linear_offset);
        assert_relative_eq!(k, expected, max_relative = 1e-14);
        let k_noisy = kernel_eval(&x, &x, &hp, true).unwrap();
        assert_relative_eq!(k_noisy, expected + hp.noise_var, max_relative = 1e-14);
    }

    #[test]
    fn kernel_symmetry() {
        let mut rng = StdRng::seed_from_u64(7);
        let hp = test_hp();
        for _ in 0..50 {
            let a = random_input(&mut rng);
            let b = random_input(&mut rng);
            assert_eq!(
                kernel_eval(&a, &b, &hp, false).unwrap(),
                kernel_eval(&b, &a, &hp, false).unwrap()
            );
        }
    }

    #[test]
    fn grad_signal_var_equals_noise_free_kernel() {
        let mut rng = StdRng::seed_from_u64(11);
        let hp = test_hp();
        let a = random_input(&mut rng);
        let b = random_input(&mut rng);
        let g = kernel_grad(&a, &b, &hp, false).unwrap();
        assert_relative_eq!(
            g[6],
            kernel_eval(&a, &b, &hp, false).unwrap(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn grad_length_scale_vanishes_at_zero_distance() {
        let hp = test_hp();
        let x = StressInputVector::new(4000.0, 0.0034, 100.0, 50.0, 1.0, 1.0).unwrap();
        let g = kernel_grad(&x, &x, &hp, false).unwrap();
        for &component in g.iter().take(STRESS_DIMS) {
            assert_eq!(component, 0.0);
        }
    }

    #[test]
    fn grad_matches_central_finite_differences() {
        // O(1) covariance scale keeps the finite-difference oracle itself
        // accurate enough for the stated tolerances
        let mut rng = StdRng::seed_from_u64(42);
        let step = 1e-5;
        for _ in 0..25 {
            let mut hp = random_hp(&mut rng);
            hp.linear_offset = rng.gen_range(0.5..2.0);
            hp.signal_var = rng.gen_range(0.5..4.0);
            let mut a = random_input(&mut rng);
            let mut b = random_input(&mut rng);
            a.delta_ah = rng.gen_range(0.5..3.0);
            b.delta_ah = rng.gen_range(0.5..3.0);
            for &same_point in &[false, true] {
                let g = kernel_grad(&a, &b, &hp, same_point).unwrap();
                for (p, &g_p) in g.iter().enumerate() {
                    let mut hp_plus = hp.clone();
                    let mut hp_minus = hp.clone();
                    hp_plus.set(p, (hp.get(p).ln() + step).exp());
                    hp_minus.set(p, (hp.get(p).ln() - step).exp());
                    let fd = (kernel_eval(&a, &b, &hp_plus, same_point).unwrap()
                        - kernel_eval(&a, &b, &hp_minus, same_point).unwrap())
                        / (2.0 * step);
                    if g_p.abs() < 1e-8 {
                        assert!((g_p - fd).abs() < 1e-10, "param {p}: g {g_p} fd {fd}");
                    } else {
                        assert_relative_eq!(g_p, fd, max_relative = 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn frozen_params_report_zero_gradient() {
        let mut rng = StdRng::seed_from_u64(3);
        let mut hp = test_hp();
        hp.freeze_stress_dim(1, 90.0);
        hp.frozen[7] = true;
        let a = random_input(&mut rng);
        let b = random_input(&mut rng);
        let g = kernel_grad(&a, &b, &hp, true).unwrap();
        assert_eq!(g[1], 0.0);
        assert_eq!(g[7], 0.0);
        assert!(g[6] != 0.0);
    }

    #[test]
    fn gram_single_point() {
        let hp = test_hp();
        let x = StressInputVector::new(4000.0, 0.0034, 100.0, 50.0, 1.0, 1.0).unwrap();
        let g = gram(&[x], &hp).unwrap();
        let expected = hp.signal_var
            * (x.delta_ah * x.delta_ah + hp.linear_offset * hp.linear_offset)
            + hp.noise_var;
        assert_relative_eq!(g[(0, 0)], expected, max_relative = 1e-14);
    }

    #[test]
    fn gram_duplicate_point_differs_only_by_noise() {
        let hp = test_hp();
        let x = StressInputVector::new(4000.0, 0.0034, 80.0, 50.0, 0.5, 1.0).unwrap();
        let g = gram(&[x, x], &hp).unwrap();
        assert_relative_eq!(g[(0, 1)], g[(0, 0)] - hp.noise_var, max_relative = 1e-14);
        assert_eq!(g[(0, 1)], g[(1, 0)]);
    }

    #[test]
    fn gram_of_random_points_is_positive_definite() {
        let mut rng = StdRng::seed_from_u64(99);
        let hp = test_hp();
        let points: Vec<_> = (0..20).map(|_| random_input(&mut rng)).collect();
        let g = gram(&points, &hp).unwrap();
        let eig = nalgebra::SymmetricEigen::new(g);
        let min = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(min > 0.0, "min eigenvalue {min}");
    }

    #[test]
    fn relevance_single_unfrozen_dimension() {
        let mut hp = test_hp();
        for n in 1..STRESS_DIMS {
            hp.freeze_stress_dim(n, 1.0);
        }
        let w = relevance(&hp, &[1e-4, 80.0, 60.0, 1.7, 1.7]).unwrap();
        assert_eq!(w, [1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn relevance_symmetric_pair_splits_evenly() {
        let mut hp = test_hp();
        hp.length_scales[1] = 30.0;
        hp.length_scales[2] = 30.0;
        hp.freeze_stress_dim(0, 1e-3);
        hp.freeze_stress_dim(3, 1.0);
        hp.freeze_stress_dim(4, 1.0);
        let w = relevance(&hp, &[1.0, 60.0, 60.0, 1.0, 1.0]).unwrap();
        assert_relative_eq!(w[1], 0.5, max_relative = 1e-12);
        assert_relative_eq!(w[2], 0.5, max_relative = 1e-12);
    }

    #[test]
    fn relevance_decreases_when_length_scale_doubles() {
        let hp = test_hp();
        let ranges = [2e-4, 80.0, 60.0, 1.7, 1.7];
        let w0 = relevance(&hp, &ranges).unwrap();
        let mut hp2 = hp.clone();
        hp2.length_scales[1] *= 2.0;
        let w1 = relevance(&hp2, &ranges).unwrap();
        assert!(w1[1] < w0[1]);
    }

    #[test]
    fn relevance_all_frozen_is_an_error() {
        let mut hp = test_hp();
        for n in 0..STRESS_DIMS {
            hp.freeze_stress_dim(n, 1.0);
        }
        assert!(matches!(
            relevance(&hp, &[1.0; STRESS_DIMS]),
            Err(Error::EmptyRelevance)
        ));
    }

    proptest! {
        #[test]
        fn matern_is_decreasing_and_bounded(
            // parameterized by r/theta; beyond ratios of a few hundred the
            // value underflows to zero in f64
            ratio in 0.0f64..100.0,
            dratio in 1e-6f64..100.0,
            theta in 1e-3f64..100.0,
        ) {
            let a = matern52(ratio * theta, theta).unwrap();
            let b = matern52((ratio + dratio) * theta, theta).unwrap();
            prop_assert!(a <= 1.0 && a > 0.0);
            prop_assert!(b < a);
        }

        #[test]
        fn kernel_symmetry_holds(
            seed in any::<u64>(),
        ) {
            let mut rng = StdRng::seed_from_u64(seed);
            let hp = random_hp(&mut rng);
            let a = random_input(&mut rng);
            let b = random_input(&mut rng);
            prop_assert_eq!(
                kernel_eval(&a, &b, &hp, false).unwrap(),
                kernel_eval(&b, &a, &hp, false).unwrap()
            );
        }

        #[test]
        fn relevance_invariant_to_joint_rescaling(factor in 0.01f64..100.0) {
            let hp = Hyperparameters::new([2e-4, 40.0, 25.0, 0.8, 0.9], 8000.0, 4.0, 0.01).unwrap();
            let ranges = [2e-4, 80.0, 60.0, 1.7, 1.7];
            let w0 = relevance(&hp, &ranges).unwrap();
            let mut hp2 = hp.clone();
            let mut ranges2 = ranges;
            for (ls, range) in hp2.length_scales.iter_mut().zip(ranges2.iter_mut()) {
                *ls *= factor;
                *range *= factor;
            }
            let w1 = relevance(&hp2, &ranges2).unwrap();
            for n in 0..STRESS_DIMS {
                prop_assert!((w0[n] - w1[n]).abs() < 1e-12);
            }
        }
    }
}
