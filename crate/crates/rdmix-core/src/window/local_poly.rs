//! Local polynomial estimators of the outcome probabilities at the
//! threshold: kernel-weighted polynomial fits on each side, contrasted at
//! the cutoff. Fits run on the raw forcing variable (distance from the
//! threshold), not the log transform.

use crate::data::ObservedDataset;
use crate::error::{RdError, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    Uniform,
    Triangular,
}

impl KernelKind {
    fn weight(self, u: f64) -> f64 {
        let a = u.abs();
        match self {
            KernelKind::Uniform => {
                if a <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            KernelKind::Triangular => {
                if a <= 1.0 {
                    1.0 - a
                } else {
                    0.0
                }
            }
        }
    }
}

/// A comparison window around the threshold: explicit bounds on the forcing
/// variable plus the kernel/order/bandwidth tuple of the local fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowSpec {
    pub lower: f64,
    pub upper: f64,
    pub kernel: KernelKind,
    pub order: usize,
    pub bandwidth_left: f64,
    pub bandwidth_right: f64,
}

impl WindowSpec {
    /// Window with bounds s0 − h_left and s0 + h_right.
    pub fn from_bandwidths(
        s0: f64,
        kernel: KernelKind,
        order: usize,
        bandwidth_left: f64,
        bandwidth_right: f64,
    ) -> Result<WindowSpec> {
        let spec = WindowSpec {
            lower: s0 - bandwidth_left,
            upper: s0 + bandwidth_right,
            kernel,
            order,
            bandwidth_left,
            bandwidth_right,
        };
        spec.validate(s0)?;
        Ok(spec)
    }

    pub fn validate(&self, s0: f64) -> Result<()> {
        if !(self.lower < s0 && s0 < self.upper) {
            return Err(RdError::Config(format!(
                "window [{}, {}] must straddle the threshold {s0}",
                self.lower, self.upper
            )));
        }
        if !(self.bandwidth_left > 0.0) || !(self.bandwidth_right > 0.0) {
            return Err(RdError::Config("bandwidths must be positive".into()));
        }
        if self.order == 0 || self.order > 2 {
            return Err(RdError::Config(format!(
                "polynomial order {} unsupported (1 or 2)",
                self.order
            )));
        }
        Ok(())
    }
}

/// Point estimates at the threshold from the two one-sided fits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalPolyEstimate {
    /// Fitted P(Y=1 | s0) on the ineligible side.
    pub p0_hat: f64,
    /// Fitted P(Y=1 | s0) on the eligible side.
    pub p1_hat: f64,
    /// p1_hat / p0_hat; `None` when p0_hat is zero.
    pub rr: Option<f64>,
    pub ate: f64,
    /// Set when a fitted probability left [0, 1]; values are reported raw,
    /// never clipped.
    pub out_of_range: bool,
    pub n_left: usize,
    pub n_right: usize,
}

/// Weighted least-squares polynomial of the given order in (s − s0),
/// fitted separately below and above the threshold; the two intercepts are
/// the probability estimates at the cutoff.
pub fn local_polynomial_rd(data: &ObservedDataset, spec: &WindowSpec) -> Result<LocalPolyEstimate> {
    let s0 = data.s0();
    spec.validate(s0)?;
    let s = data.forcing();
    let y = data.outcome();
    let z = data.eligible();

    let fit_side = |eligible_side: bool, bandwidth: f64| -> Result<(f64, usize)> {
        let mut rows: Vec<(f64, f64, f64)> = Vec::new(); // (s − s0, y, weight)
        for i in 0..data.n() {
            if z[i] != eligible_side {
                continue;
            }
            let d = s[i] - s0;
            if d.abs() > bandwidth {
                continue;
            }
            let w = spec.kernel.weight(d / bandwidth);
            if w > 0.0 {
                rows.push((d, f64::from(y[i]), w));
            }
        }
        let mut distinct: Vec<f64> = rows.iter().map(|r| r.0).collect();
        distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
        distinct.dedup();
        if distinct.len() < spec.order + 1 {
            return Err(RdError::Data(format!(
                "side z={}: {} distinct forcing values inside the bandwidth, need {}",
                u8::from(eligible_side),
                distinct.len(),
                spec.order + 1
            )));
        }
        let k = spec.order + 1;
        let mut xtwx = DMatrix::zeros(k, k);
        let mut xtwy = DVector::zeros(k);
        for &(d, yi, w) in &rows {
            let mut basis = vec![1.0; k];
            for j in 1..k {
                basis[j] = basis[j - 1] * d;
            }
            for a in 0..k {
                xtwy[a] += w * basis[a] * yi;
                for b in 0..k {
                    xtwx[(a, b)] += w * basis[a] * basis[b];
                }
            }
        }
        let coef = xtwx
            .lu()
            .solve(&xtwy)
            .ok_or_else(|| RdError::Numeric("rank-deficient local polynomial design".into()))?;
        Ok((coef[0], rows.len()))
    };

    let (p1_hat, n_left) = fit_side(true, spec.bandwidth_left)?;
    let (p0_hat, n_right) = fit_side(false, spec.bandwidth_right)?;
    let out_of_range = !(0.0..=1.0).contains(&p0_hat) || !(0.0..=1.0).contains(&p1_hat);
    Ok(LocalPolyEstimate {
        p0_hat,
        p1_hat,
        rr: if p0_hat == 0.0 { None } else { Some(p1_hat / p0_hat) },
        ate: p1_hat - p0_hat,
        out_of_range,
        n_left,
        n_right,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IngestOptions;
    use crate::kernels::RngStream;
    use crate::RdError;
    use approx::assert_abs_diff_eq;

    fn dataset(s: Vec<f64>, y: Vec<bool>) -> ObservedDataset {
        let n = s.len();
        ObservedDataset::from_parts(
            (0..n).map(|i| i.to_string()).collect(),
            s,
            y,
            vec![vec![]; n],
            vec![],
            &IngestOptions::new(120.0),
        )
        .unwrap()
    }

    fn spec(kernel: KernelKind, order: usize) -> WindowSpec {
        WindowSpec::from_bandwidths(120.0, kernel, order, 60.0, 60.0).unwrap()
    }

    #[test]
    fn constant_outcome_gives_null_contrast() {
        let s = vec![70.0, 90.0, 100.0, 110.0, 130.0, 150.0, 160.0];
        let y = vec![true; 7];
        let est = local_polynomial_rd(&dataset(s, y), &spec(KernelKind::Uniform, 1)).unwrap();
        assert_abs_diff_eq!(est.ate, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(est.rr.unwrap(), 1.0, epsilon = 1e-12);
        // Identity constraints of the output.
        assert_abs_diff_eq!(est.p1_hat - est.p0_hat, est.ate, epsilon = 1e-15);
        assert_abs_diff_eq!(est.rr.unwrap() * est.p0_hat, est.p1_hat, epsilon = 1e-12);
    }

    #[test]
    fn uniform_linear_fit_matches_ols_oracle() {
        // Uniform-kernel order-1 fits equal plain OLS lines per side.
        let mut rng = RngStream::new(71, 0);
        for _ in 0..10 {
            let n = 60;
            let mut s = Vec::new();
            let mut y = Vec::new();
            for i in 0..n {
                let si = 60.0 + 120.0 * (i as f64 + 0.5) / n as f64;
                s.push(si);
                y.push(rng.bernoulli(0.3 + 0.002 * (si - 120.0)));
            }
            let ds = dataset(s.clone(), y.clone());
            let est = local_polynomial_rd(&ds, &spec(KernelKind::Uniform, 1)).unwrap();

            // Independent normal-equation OLS per side.
            let ols_intercept = |side: bool| -> f64 {
                let pts: Vec<(f64, f64)> = s
                    .iter()
                    .zip(&y)
                    .filter(|(si, _)| ((**si <= 120.0) == side) && (**si - 120.0).abs() <= 60.0)
                    .map(|(si, yi)| (si - 120.0, f64::from(*yi)))
                    .collect();
                let n = pts.len() as f64;
                let sx: f64 = pts.iter().map(|p| p.0).sum();
                let sy: f64 = pts.iter().map(|p| p.1).sum();
                let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
                let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
                let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
                (sy - slope * sx) / n
            };
            assert_abs_diff_eq!(est.p1_hat, ols_intercept(true), epsilon = 1e-8);
            assert_abs_diff_eq!(est.p0_hat, ols_intercept(false), epsilon = 1e-8);
        }
    }

    #[test]
    fn triangular_weight_constant_when_equidistant() {
        // Every unit at the same distance from the threshold: the
        // triangular kernel assigns one constant weight, so the weighted
        // normal equations coincide with the uniform ones. With a single
        // distinct abscissa per side an order-1 fit is rank deficient, and
        // both kernels must fail the same way.
        let k = KernelKind::Triangular;
        let u = 0.4;
        assert_abs_diff_eq!(k.weight(u), k.weight(-u), epsilon = 1e-15);
        let s = vec![100.0, 100.0, 100.0, 140.0, 140.0, 140.0];
        let y = vec![true, false, true, false, false, true];
        let ds = dataset(s, y);
        let err_u = local_polynomial_rd(&ds, &spec(KernelKind::Uniform, 1));
        let err_t = local_polynomial_rd(&ds, &spec(KernelKind::Triangular, 1));
        assert!(matches!(err_u, Err(RdError::Data(_))));
        assert!(matches!(err_t, Err(RdError::Data(_))));
    }

    #[test]
    fn constant_weight_scaling_drops_out_of_the_fit() {
        // Widening a uniform bandwidth without admitting new points leaves
        // the fit bit-identical: in-window weights stay a common constant.
        let s = vec![100.0, 110.0, 115.0, 125.0, 130.0, 140.0];
        let y = vec![true, false, true, true, false, false];
        let ds = dataset(s, y);
        let narrow = WindowSpec::from_bandwidths(120.0, KernelKind::Uniform, 1, 25.0, 25.0).unwrap();
        let wide = WindowSpec::from_bandwidths(120.0, KernelKind::Uniform, 1, 30.0, 30.0).unwrap();
        let a = local_polynomial_rd(&ds, &narrow).unwrap();
        let b = local_polynomial_rd(&ds, &wide).unwrap();
        assert_eq!(a.p0_hat.to_bits(), b.p0_hat.to_bits());
        assert_eq!(a.p1_hat.to_bits(), b.p1_hat.to_bits());
    }

    #[test]
    fn insufficient_support_is_error() {
        let s = vec![119.0, 119.0, 121.0, 122.0];
        let y = vec![true, false, true, false];
        assert!(local_polynomial_rd(&dataset(s, y), &spec(KernelKind::Uniform, 2)).is_err());
    }

    #[test]
    fn out_of_range_probability_is_flagged_not_clipped() {
        // A steep trend extrapolates to a negative intercept at s0.
        let s = vec![121.0, 140.0, 160.0, 180.0, 60.0, 80.0, 100.0, 119.0];
        let y = vec![false, false, true, true, true, true, false, false];
        let est = local_polynomial_rd(&dataset(s, y), &spec(KernelKind::Uniform, 1)).unwrap();
        if est.p0_hat < 0.0 || est.p1_hat < 0.0 {
            assert!(est.out_of_range);
        }
        assert_abs_diff_eq!(est.ate, est.p1_hat - est.p0_hat, epsilon = 1e-12);
    }
}
