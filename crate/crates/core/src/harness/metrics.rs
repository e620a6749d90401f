use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// Running NMSE over windows: the mean, over every (window, cache) pair, of
/// `‖X̂_c(t) − X(t)‖_F² / ‖X(t)‖_F²`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NmseAccumulator {
    sum: f64,
    terms: usize,
    skipped: usize,
}

impl NmseAccumulator {
    /// Adds one window. Windows whose truth has zero energy are skipped.
    pub fn add(&mut self, estimates: &[DMatrix<f64>], truth: &DMatrix<f64>) -> Result<()> {
        if estimates.is_empty() {
            return Err(invalid("no estimates for this window"));
        }
        if let Some(e) = estimates.iter().find(|e| e.shape() != truth.shape()) {
            return Err(invalid(format!(
                "estimate is {:?}, truth is {:?}",
                e.shape(),
                truth.shape()
            )));
        }
        let energy = truth.norm_squared();
        if energy == 0.0 {
            log::warn!("skipping a window whose true field is identically zero");
            self.skipped += 1;
            return Ok(());
        }
        for e in estimates {
            self.sum += (e - truth).norm_squared() / energy;
        }
        self.terms += estimates.len();
        Ok(())
    }

    pub fn value(&self) -> Option<f64> {
        (self.terms > 0).then(|| self.sum / self.terms as f64)
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

/// NMSE of per-window, per-cache estimates against the true windows.
pub fn nmse(estimates: &[Vec<DMatrix<f64>>], truth: &[DMatrix<f64>]) -> Result<f64> {
    if estimates.len() != truth.len() {
        return Err(invalid(format!(
            "{} estimate windows for {} true windows",
            estimates.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(invalid("no windows to score"));
    }
    let mut acc = NmseAccumulator::default();
    for (est, x) in estimates.iter().zip(truth) {
        acc.add(est, x)?;
    }
    acc.value()
        .ok_or_else(|| invalid("every true window has zero energy"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn perfect_and_zero_estimates() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let y = DMatrix::from_row_slice(2, 2, &[0.0, 4.0, 1.0, 1.0]);
        let truth = vec![x.clone(), y.clone()];
        assert_eq!(
            nmse(&[vec![x.clone(); 3], vec![y.clone(); 3]], &truth).unwrap(),
            0.0
        );
        let zeros = vec![vec![DMatrix::zeros(2, 2); 3]; 2];
        assert_abs_diff_eq!(nmse(&zeros, &truth).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn two_caches_one_window_by_hand() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 5.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 1.0, 4.0]);
        // ‖X‖² = 30, errors 1 and 1 + 4 = 5.
        let expect = (1.0 / 30.0 + 5.0 / 30.0) / 2.0;
        assert_abs_diff_eq!(nmse(&[vec![a, b]], &[x]).unwrap(), expect, epsilon = 1e-15);
    }

    #[test]
    fn zero_energy_windows_are_skipped() {
        let x = DMatrix::from_element(2, 1, 1.0);
        let z = DMatrix::zeros(2, 1);
        let est = vec![vec![z.clone()], vec![x.clone()]];
        assert_eq!(nmse(&est, &[z.clone(), x.clone()]).unwrap(), 0.0);
        let mut acc = NmseAccumulator::default();
        acc.add(&[x.clone()], &z).unwrap();
        assert_eq!(acc.skipped(), 1);
        assert_eq!(acc.value(), None);
        assert!(nmse(&[vec![x]], &[z]).is_err());
    }

    #[test]
    fn shape_errors() {
        let x = DMatrix::zeros(2, 2);
        assert!(nmse(&[vec![DMatrix::zeros(2, 3)]], &[x.clone()]).is_err());
        assert!(nmse(&[vec![]], &[x.clone()]).is_err());
        assert!(nmse(&[], &[x]).is_err());
    }
}
