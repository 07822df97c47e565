use crate::error::{Error, Result};

/// Ridge added to every fitted covariance.
pub const COV_RIDGE: f64 = 1e-8;

/// Mean and unbiased covariance (plus [`COV_RIDGE`] on the diagonal).
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianFit {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl GaussianFit {
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        let d = samples.first().map_or(0, Vec::len);
        if d == 0 || samples.iter().any(|s| s.len() != d) {
            return Err(Error::Structural("samples must be non-empty points of equal dimension".into()));
        }
        if samples.len() < d + 1 {
            return Err(Error::Usage(format!("need at least {} samples in dimension {d}, got {}", d + 1, samples.len())));
        }
        let n = samples.len() as f64;
        let mean: Vec<f64> = (0..d).map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / n).collect();
        let mut cov = vec![vec![0.0; d]; d];
        for s in samples {
            for i in 0..d {
                for j in 0..d {
                    cov[i][j] += (s[i] - mean[i]) * (s[j] - mean[j]);
                }
            }
        }
        for (i, row) in cov.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v /= n - 1.0;
            }
            row[i] += COV_RIDGE;
        }
        Ok(Self { mean, cov })
    }
}

/// Principal square root of a 2x2 matrix with non-negative real eigenvalues
/// (such as a product of two SPD matrices), via
/// `sqrt(M) = (M + sqrt(det M) I) / sqrt(tr M + 2 sqrt(det M))`.
pub fn sqrtm_2x2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let s = (m[0][0] * m[1][1] - m[0][1] * m[1][0]).max(0.0).sqrt();
    let t = (m[0][0] + m[1][1] + 2.0 * s).max(0.0).sqrt();
    if t == 0.0 {
        return [[0.0; 2]; 2];
    }
    [[(m[0][0] + s) / t, m[0][1] / t], [m[1][0] / t, (m[1][1] + s) / t]]
}

/// `Tr((a b)^{1/2})` for SPD `a`, `b` of size 1 or 2.
fn trace_sqrt_product(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    match a.len() {
        1 => Ok((a[0][0] * b[0][0]).max(0.0).sqrt()),
        2 => {
            let p = |i: usize, j: usize| a[i][0] * b[0][j] + a[i][1] * b[1][j];
            let r = sqrtm_2x2([[p(0, 0), p(0, 1)], [p(1, 0), p(1, 1)]]);
            Ok(r[0][0] + r[1][1])
        }
        d => Err(Error::Usage(format!("Frechet distance is implemented for dimensions 1 and 2, got {d}"))),
    }
}

/// Squared Frechet distance between Gaussian fits:
/// `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})`, clamped at 0.
pub fn frechet_between(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::Structural("Frechet inputs differ in dimension".into()));
    }
    let d = a.mean.len();
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let traces: f64 = (0..d).map(|i| a.cov[i][i] + b.cov[i][i]).sum();
    Ok((mean_term + traces - 2.0 * trace_sqrt_product(&a.cov, &b.cov)?).max(0.0))
}

/// Squared Frechet distance between the Gaussian fits of two sample sets.
pub fn frechet_distance(samples_a: &[Vec<f64>], samples_b: &[Vec<f64>]) -> Result<f64> {
    frechet_between(&GaussianFit::fit(samples_a)?, &GaussianFit::fit(samples_b)?)
}
