//! Stationary ARD kernels.
//!
//! Both families are functions of the scaled distance
//! `r² = Σ_i ((x_i - x'_i) / ℓ_i)²` and have radially non-increasing
//! spectral densities, which is what the variance-domination results in
//! [`crate::bounds`] rely on.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Full hyperparameter point: ARD lengthscales plus signal and noise variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperVector {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl HyperVector {
    pub fn new(lengthscales: Vec<f64>, signal_variance: f64, noise_variance: f64) -> Result<Self> {
        let hv = HyperVector {
            lengthscales,
            signal_variance,
            noise_variance,
        };
        hv.validate()?;
        Ok(hv)
    }

    /// Same lengthscale on every one of `dim` inputs.
    pub fn isotropic(dim: usize, lengthscale: f64, signal_variance: f64, noise_variance: f64) -> Result<Self> {
        Self::new(vec![lengthscale; dim], signal_variance, noise_variance)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengthscales.is_empty() {
            return Err(Error::Input("at least one lengthscale is required".into()));
        }
        let all = self.as_vec();
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Input(format!("hyperparameters must be finite and positive: {:?}", all)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Number of scalar hyperparameters (`d + 2`).
    pub fn len(&self) -> usize {
        self.lengthscales.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flattened as `[ℓ_1, …, ℓ_d, σ_f², σ_n²]`.
    pub fn as_vec(&self) -> Vec<f64> {
        let mut v = self.lengthscales.clone();
        v.push(self.signal_variance);
        v.push(self.noise_variance);
        v
    }

    /// Inverse of [`HyperVector::as_vec`]. No validation.
    pub fn from_slice(v: &[f64]) -> Self {
        let d = v.len() - 2;
        HyperVector {
            lengthscales: v[..d].to_vec(),
            signal_variance: v[d],
            noise_variance: v[d + 1],
        }
    }

    pub fn to_log(&self) -> Vec<f64> {
        self.as_vec().into_iter().map(f64::ln).collect()
    }

    pub fn from_log(u: &[f64]) -> Self {
        let v: Vec<f64> = u.iter().map(|x| x.exp()).collect();
        Self::from_slice(&v)
    }

    /// Componentwise `self <= other`.
    pub fn le(&self, other: &HyperVector) -> bool {
        self.as_vec().iter().zip(other.as_vec()).all(|(a, b)| *a <= b)
    }
}

/// Componentwise bounds on a [`HyperVector`]. Coordinates with
/// `lower == upper` are pinned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperBox {
    pub lower: HyperVector,
    pub upper: HyperVector,
}

impl HyperBox {
    pub fn new(lower: HyperVector, upper: HyperVector) -> Result<Self> {
        lower.validate()?;
        upper.validate()?;
        if lower.dim() != upper.dim() {
            return Err(Error::Dimension {
                expected: lower.dim(),
                got: upper.dim(),
            });
        }
        if !lower.le(&upper) {
            return Err(Error::Input("box lower bound exceeds upper bound".into()));
        }
        Ok(HyperBox { lower, upper })
    }

    /// Same bounds for every lengthscale.
    pub fn uniform(dim: usize, lengthscale: (f64, f64), signal: (f64, f64), noise: (f64, f64)) -> Result<Self> {
        Self::new(
            HyperVector::isotropic(dim, lengthscale.0, signal.0, noise.0)?,
            HyperVector::isotropic(dim, lengthscale.1, signal.1, noise.1)?,
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.dim()
    }

    pub fn contains(&self, h: &HyperVector) -> bool {
        h.dim() == self.dim() && self.lower.le(h) && h.le(&self.upper)
    }

    /// [`HyperBox::contains`] with a relative slack of a few ulps, for
    /// points that went through `exp(ln ϑ)`.
    pub fn contains_rounded(&self, h: &HyperVector) -> bool {
        const SLACK: f64 = 1e-12;
        h.dim() == self.dim()
            && h.as_vec()
                .iter()
                .zip(self.lower.as_vec().iter().zip(self.upper.as_vec()))
                .all(|(x, (lo, hi))| *x >= lo * (1.0 - SLACK) && *x <= hi * (1.0 + SLACK))
    }

    pub fn log_lower(&self) -> Vec<f64> {
        self.lower.to_log()
    }

    pub fn log_upper(&self) -> Vec<f64> {
        self.upper.to_log()
    }

    /// Indices of coordinates with a non-degenerate range.
    pub fn free_indices(&self) -> Vec<usize> {
        let lo = self.lower.as_vec();
        let hi = self.upper.as_vec();
        (0..lo.len()).filter(|&i| lo[i] < hi[i]).collect()
    }

    /// Draw uniformly in log space.
    pub fn sample_log_uniform<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> HyperVector {
        let u: Vec<f64> = self
            .log_lower()
            .into_iter()
            .zip(self.log_upper())
            .map(|(lo, hi)| if hi > lo { rng.random_range(lo..hi) } else { lo })
            .collect();
        HyperVector::from_log(&u)
    }

    /// Clamp into the box.
    pub fn clamp(&self, h: &HyperVector) -> HyperVector {
        let v: Vec<f64> = h
            .as_vec()
            .into_iter()
            .zip(self.lower.as_vec().into_iter().zip(self.upper.as_vec()))
            .map(|(x, (lo, hi))| x.clamp(lo, hi))
            .collect();
        HyperVector::from_slice(&v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    SquaredExponential,
    Matern52,
}

impl KernelFamily {
    /// Unit-variance profile as a function of the squared scaled distance.
    #[inline]
    pub fn profile(self, r2: f64) -> f64 {
        match self {
            KernelFamily::SquaredExponential => (-0.5 * r2).exp(),
            KernelFamily::Matern52 => {
                let s = (5.0 * r2).sqrt();
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub hyper: HyperVector,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, hyper: HyperVector) -> Self {
        KernelSpec { family, hyper }
    }

    pub fn dim(&self) -> usize {
        self.hyper.dim()
    }

    pub fn with_hyper(&self, hyper: HyperVector) -> Self {
        KernelSpec {
            family: self.family,
            hyper,
        }
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    #[inline]
    fn eval_iter<'a>(&self, a: impl Iterator<Item = &'a f64>, b: impl Iterator<Item = &'a f64>) -> f64 {
        let r2: f64 = a
            .zip(b)
            .zip(&self.hyper.lengthscales)
            .map(|((p, q), l)| {
                let z = (p - q) / l;
                z * z
            })
            .sum();
        self.hyper.signal_variance * self.family.profile(r2)
    }

    /// `σ_f² · κ(r)` with per-coordinate scaling `(x_i - x2_i) / ℓ_i`.
    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        self.check_dim(x2.len())?;
        Ok(self.eval_iter(x.iter(), x2.iter()))
    }

    /// Gram matrix of the rows of `x` (N×d). Diagonal is exactly `σ_f²`.
    pub fn gram(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x.ncols())?;
        let n = x.nrows();
        let rows = rows_of(x);
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = self.hyper.signal_variance;
            for j in 0..i {
                let v = self.eval_iter(rows[i].iter(), rows[j].iter());
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }

    /// `(k(x_1, x*), …, k(x_N, x*))`.
    pub fn cross(&self, x: &DMatrix<f64>, xstar: &[f64]) -> Result<DVector<f64>> {
        self.check_dim(x.ncols())?;
        self.check_dim(xstar.len())?;
        Ok(DVector::from_iterator(
            x.nrows(),
            x.row_iter().map(|row| self.eval_iter(row.iter(), xstar.iter())),
        ))
    }
}

pub(crate) fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Free-function form of [`KernelSpec::eval`].
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], x2: &[f64]) -> Result<f64> {
    spec.eval(x, x2)
}

pub fn gram_matrix(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.gram(x)
}

pub fn cross_vector(spec: &KernelSpec, x: &DMatrix<f64>, xstar: &[f64]) -> Result<DVector<f64>> {
    spec.cross(x, xstar)
}

/// `γ² = Π ℓ''_i / ℓ'_i`, the variance inflation between two lengthscale vectors.
pub fn lengthscale_gamma_sq(lower: &[f64], upper: &[f64]) -> f64 {
    lower.iter().zip(upper).map(|(lo, hi)| hi / lo).product()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn se(ls: Vec<f64>, sf2: f64) -> KernelSpec {
        KernelSpec::new(KernelFamily::SquaredExponential, HyperVector::new(ls, sf2, 0.1).unwrap())
    }

    #[test]
    fn zero_lag_equals_signal_variance() {
        assert_eq!(se(vec![1.0], 1.0).eval(&[0.0], &[0.0]).unwrap(), 1.0);
        let m = KernelSpec::new(KernelFamily::Matern52, HyperVector::new(vec![1.0], 1.0, 0.1).unwrap());
        assert_eq!(m.eval(&[0.0], &[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn se_closed_form() {
        let k = se(vec![2.0, 2.0], 1.0).eval(&[0.0, 0.0], &[2.0, 0.0]).unwrap();
        assert_relative_eq!(k, (-0.5f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn matern_closed_form_at_unit_distance() {
        let m = KernelSpec::new(KernelFamily::Matern52, HyperVector::new(vec![1.0], 2.0, 0.1).unwrap());
        let s5 = 5f64.sqrt();
        let expected = 2.0 * (1.0 + s5 + 5.0 / 3.0) * (-s5).exp();
        assert_relative_eq!(m.eval(&[0.0], &[1.0]).unwrap(), expected, max_relative = 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let k = se(vec![1.0, 1.0], 1.0);
        assert!(matches!(k.eval(&[0.0], &[0.0, 0.0]), Err(Error::Dimension { .. })));
        assert!(k.cross(&DMatrix::zeros(3, 1), &[0.0, 0.0]).is_err());
    }

    #[test]
    fn invalid_hyper_rejected() {
        assert!(HyperVector::new(vec![1.0, -1.0], 1.0, 1.0).is_err());
        assert!(HyperVector::new(vec![1.0], 0.0, 1.0).is_err());
        assert!(HyperVector::new(vec![], 1.0, 1.0).is_err());
    }

    #[test]
    fn gram_edge_cases() {
        let k = se(vec![1.0], 3.0);
        assert_eq!(k.gram(&DMatrix::from_element(1, 1, 0.4)).unwrap(), DMatrix::from_element(1, 1, 3.0));
        let dup = DMatrix::from_row_slice(2, 1, &[0.7, 0.7]);
        assert_eq!(k.gram(&dup).unwrap(), DMatrix::from_element(2, 2, 3.0));
    }

    #[test]
    fn gram_is_psd_by_eigen_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-2.0..2.0));
        for family in [KernelFamily::SquaredExponential, KernelFamily::Matern52] {
            let spec = KernelSpec::new(family, HyperVector::new(vec![0.8, 1.3], 2.0, 0.1).unwrap());
            let g = spec.gram(&x).unwrap();
            let min = SymmetricEigen::new(g).eigenvalues.min();
            assert!(min >= -1e-10 * 2.0, "{min}");
        }
    }

    #[test]
    fn cross_vector_cases() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let k = se(vec![0.5], 2.0);
        assert_eq!(k.cross(&x, &[1.0]).unwrap()[1], 2.0);
        let far = k.cross(&x, &[100.0]).unwrap();
        assert!(far.iter().all(|v| *v < 1e-6 * 2.0));
        let single = DMatrix::from_row_slice(1, 1, &[0.0]);
        let v = k.cross(&single, &[0.5]).unwrap();
        assert_relative_eq!(v[0], 2.0 * (-0.5f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn hyper_log_roundtrip_ordering() {
        let h = HyperVector::new(vec![0.5, 2.0], 3.0, 0.01).unwrap();
        assert_eq!(h.as_vec(), vec![0.5, 2.0, 3.0, 0.01]);
        let back = HyperVector::from_log(&h.to_log());
        for (a, b) in back.as_vec().iter().zip(h.as_vec()) {
            assert_relative_eq!(*a, b, max_relative = 1e-14);
        }
    }

    /// γ²K_{ℓ'} − K_ℓ is PSD whenever ℓ' ≤ ℓ ≤ ℓ'' (stationary kernels with
    /// radially non-increasing spectral density).
    #[test]
    fn scaled_short_lengthscale_gram_dominates() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..300 {
            let d = rng.random_range(1..=3);
            let n = rng.random_range(1..=15);
            let family = if trial % 2 == 0 { KernelFamily::SquaredExponential } else { KernelFamily::Matern52 };
            let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-3.0..3.0));
            let mut lo = vec![0.0; d];
            let mut mid = vec![0.0; d];
            let mut hi = vec![0.0; d];
            for i in 0..d {
                let mut t: Vec<f64> = (0..3).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect();
                t.sort_by(|a, b| a.partial_cmp(b).unwrap());
                lo[i] = t[0];
                mid[i] = t[1];
                hi[i] = t[2];
            }
            let g2 = lengthscale_gamma_sq(&lo, &hi);
            let k_lo = KernelSpec::new(family, HyperVector::new(lo, 1.0, 0.1).unwrap()).gram(&x).unwrap();
            let k_mid = KernelSpec::new(family, HyperVector::new(mid, 1.0, 0.1).unwrap()).gram(&x).unwrap();
            let diff = k_lo * g2 - k_mid;
            let min = SymmetricEigen::new(diff).eigenvalues.min();
            assert!(min >= -1e-8, "trial {trial}: {min}");
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(
            a in prop::collection::vec(-5.0f64..5.0, 2),
            b in prop::collection::vec(-5.0f64..5.0, 2),
            l0 in 0.05f64..10.0, l1 in 0.05f64..10.0, sf2 in 0.01f64..10.0,
            matern in any::<bool>(),
        ) {
            let fam = if matern { KernelFamily::Matern52 } else { KernelFamily::SquaredExponential };
            let k = KernelSpec::new(fam, HyperVector::new(vec![l0, l1], sf2, 0.1).unwrap());
            let ab = k.eval(&a, &b).unwrap();
            prop_assert_eq!(ab, k.eval(&b, &a).unwrap());
            prop_assert_eq!(k.eval(&a, &a).unwrap(), sf2);
            prop_assert!(ab.abs() <= sf2);
        }

        #[test]
        fn profile_non_increasing(r2a in 0.0f64..50.0, dr in 0.0f64..10.0, matern in any::<bool>()) {
            let fam = if matern { KernelFamily::Matern52 } else { KernelFamily::SquaredExponential };
            prop_assert!(fam.profile(r2a + dr) <= fam.profile(r2a) + 1e-15);
        }
    }
}
