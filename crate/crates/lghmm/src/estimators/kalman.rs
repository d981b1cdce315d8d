//! Kalman filter with intermittent observations: the baseline estimator.
//!
//! Standard time update every step; measurement update only when a packet
//! arrives (`gamma = 1`).  Event information carried by silence is ignored
//! on purpose — that blindness is what the HMM filter is compared against.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimators::ChannelEvent;
use crate::lgss::SsmModel;

/// Mean and covariance of the current state estimate.
#[derive(Debug, Clone)]
pub struct KalmanState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl KalmanState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }
}

/// Filter context: plant matrices plus PSD-repair diagnostics.
#[derive(Debug)]
pub struct KalmanFilter<'a> {
    model: &'a SsmModel,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    clamp_events: u64,
}

impl<'a> KalmanFilter<'a> {
    pub fn new(model: &'a SsmModel) -> Self {
        Self { model, q: model.process_cov(), r: model.measurement_cov(), clamp_events: 0 }
    }

    /// Times the covariance needed an eigenvalue clamp to stay PSD.
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events
    }

    /// One predict(+update) cycle.
    pub fn step(&mut self, state: &KalmanState, event: &ChannelEvent) -> KalmanState {
        let a = self.model.state_matrix();
        let c = self.model.output_matrix();
        let mut mean = a * &state.mean;
        let mut cov = a * &state.cov * a.transpose() + &self.q;
        if event.gamma {
            let y = event.payload.as_ref().expect("gamma implies payload");
            let s = c * &cov * c.transpose() + &self.r;
            let gain = &cov
                * c.transpose()
                * s.try_inverse().expect("innovation covariance is positive definite");
            mean += &gain * (y - c * &mean);
            // Joseph form keeps the update PSD under roundoff
            let ikc = DMatrix::identity(self.model.n(), self.model.n()) - &gain * c;
            cov = &ikc * cov * ikc.transpose() + &gain * &self.r * gain.transpose();
        }
        cov = 0.5 * (&cov + cov.transpose());
        if cov.diagonal().iter().any(|&d| d < 0.0) {
            // repair a numerically indefinite covariance
            let mut eig = nalgebra::SymmetricEigen::new(cov.clone());
            for v in eig.eigenvalues.iter_mut() {
                *v = v.max(0.0);
            }
            cov = &eig.eigenvectors
                * DMatrix::from_diagonal(&eig.eigenvalues)
                * eig.eigenvectors.transpose();
            self.clamp_events += 1;
        }
        KalmanState::new(mean, cov)
    }
}

/// Single-shot step (tests, one-off callers).
pub fn kalman_step(model: &SsmModel, state: &KalmanState, event: &ChannelEvent) -> Result<KalmanState> {
    if state.mean.len() != model.n() {
        return Err(Error::Dimension(format!(
            "estimate has dimension {}, model expects {}",
            state.mean.len(),
            model.n()
        )));
    }
    Ok(KalmanFilter::new(model).step(state, event))
}
