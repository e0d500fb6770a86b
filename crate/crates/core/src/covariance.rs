//! Regularized Gram matrix with an incrementally maintained inverse and
//! determinant, plus the frozen copy used by the current episode.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Number of rank-one updates between from-scratch inverse refreshes.
pub const REFRESH_INTERVAL: usize = 256;

#[derive(Clone, Debug)]
pub struct CovarianceState {
    lambda: f64,
    lambda_bar: DMatrix<f64>,
    inv_bar: DMatrix<f64>,
    det_bar: f64,
    lambda_episode: DMatrix<f64>,
    inv_episode: DMatrix<f64>,
    det_episode: f64,
    since_refresh: usize,
}

impl CovarianceState {
    pub fn new(dim: usize, lambda: f64) -> Self {
        let eye = DMatrix::identity(dim, dim);
        let det = lambda.powi(dim as i32);
        Self {
            lambda,
            lambda_bar: &eye * lambda,
            inv_bar: &eye / lambda,
            det_bar: det,
            lambda_episode: &eye * lambda,
            inv_episode: &eye / lambda,
            det_episode: det,
            since_refresh: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.lambda_bar.nrows()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn lambda_bar(&self) -> &DMatrix<f64> {
        &self.lambda_bar
    }

    pub fn inv_bar(&self) -> &DMatrix<f64> {
        &self.inv_bar
    }

    pub fn det_bar(&self) -> f64 {
        self.det_bar
    }

    pub fn lambda_episode(&self) -> &DMatrix<f64> {
        &self.lambda_episode
    }

    pub fn inv_episode(&self) -> &DMatrix<f64> {
        &self.inv_episode
    }

    pub fn det_episode(&self) -> f64 {
        self.det_episode
    }

    /// `Lambda_bar += phi phi^T`. Returns `phi^T Lambda_bar_prev^{-1} phi`.
    pub fn rank_one_update(&mut self, phi: &DVector<f64>) -> Result<f64> {
        let inv_phi = &self.inv_bar * phi;
        let quad = phi.dot(&inv_phi);
        let ratio = 1.0 + quad;
        if !(ratio > 0.0) || !ratio.is_finite() {
            return Err(Error::NumericalBreakdown(format!(
                "determinant ratio {ratio} after rank-one update"
            )));
        }
        self.lambda_bar.ger(1.0, phi, phi, 1.0);
        self.inv_bar.ger(-1.0 / ratio, &inv_phi, &inv_phi, 1.0);
        self.det_bar *= ratio;
        self.since_refresh += 1;
        if self.since_refresh >= REFRESH_INTERVAL {
            self.refresh_inverse()?;
        }
        Ok(quad)
    }

    /// Recomputes `Lambda_bar^{-1}` from scratch.
    pub fn refresh_inverse(&mut self) -> Result<()> {
        self.inv_bar = spd_inverse(&self.lambda_bar)?;
        self.since_refresh = 0;
        Ok(())
    }

    /// Strict determinant-doubling test `2 det(Lambda_k) < det(Lambda_bar)`.
    pub fn should_advance_episode(&self) -> bool {
        2.0 * self.det_episode < self.det_bar
    }

    /// Starts a new episode: `Lambda_k <- Lambda_bar`.
    pub fn freeze_episode(&mut self) {
        self.lambda_episode.copy_from(&self.lambda_bar);
        self.inv_episode.copy_from(&self.inv_bar);
        self.det_episode = self.det_bar;
    }

    /// `||phi||_{Lambda_k^{-1}}`, guarded against tiny negative rounding.
    pub fn episode_norm(&self, phi: &DVector<f64>) -> f64 {
        quad_form(&self.inv_episode, phi).max(0.0).sqrt()
    }
}

pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::NumericalBreakdown("matrix lost positive definiteness".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn diagonal_update() {
        let mut cov = CovarianceState::new(2, 1.0);
        let quad = cov.rank_one_update(&v(&[1.0, 0.0])).unwrap();
        assert_eq!(quad, 1.0);
        assert_eq!(cov.det_bar(), 2.0);
        assert_eq!(cov.lambda_bar(), &DMatrix::from_diagonal(&v(&[2.0, 1.0])));
        assert_eq!(cov.inv_bar(), &DMatrix::from_diagonal(&v(&[0.5, 1.0])));
        // episode matrices untouched
        assert_eq!(cov.det_episode(), 1.0);
        assert_eq!(cov.lambda_episode(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn zero_feature_is_a_no_op() {
        let mut cov = CovarianceState::new(3, 0.5);
        let before = cov.clone();
        assert_eq!(cov.rank_one_update(&v(&[0.0, 0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(cov.lambda_bar(), before.lambda_bar());
        assert_eq!(cov.det_bar(), before.det_bar());
    }

    #[test]
    fn doubling_boundary_is_strict() {
        let mut cov = CovarianceState::new(2, 1.0);
        assert!(!cov.should_advance_episode());
        cov.rank_one_update(&v(&[1.0, 0.0])).unwrap();
        assert!(!cov.should_advance_episode());
        cov.rank_one_update(&v(&[1.0, 0.0])).unwrap();
        assert_eq!(cov.det_bar(), 3.0);
        assert!(cov.should_advance_episode());
        cov.freeze_episode();
        assert!(!cov.should_advance_episode());
        assert_eq!(cov.det_episode(), 3.0);
    }

    #[test]
    fn indefinite_direction_breaks_down() {
        let mut cov = CovarianceState::new(1, 1.0);
        cov.inv_bar[(0, 0)] = -2.0;
        assert!(matches!(
            cov.rank_one_update(&v(&[1.0])),
            Err(Error::NumericalBreakdown(_))
        ));
    }

    #[test]
    fn refresh_keeps_inverse_accurate() {
        let mut cov = CovarianceState::new(3, 1.0);
        for i in 0..(REFRESH_INTERVAL + 10) {
            let x = (i as f64 * 0.37).sin();
            let y = (i as f64 * 0.11).cos();
            let phi = v(&[x, y, 0.3]).normalize();
            cov.rank_one_update(&phi).unwrap();
        }
        let direct = spd_inverse(cov.lambda_bar()).unwrap();
        assert!((cov.inv_bar() - direct).amax() < 1e-12);
    }
}
