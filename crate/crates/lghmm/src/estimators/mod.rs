//! Remote estimation over an event-triggered, lossy channel.
//!
//! The sensor applies a send-on-delta rule: transmit only when the current
//! output has drifted at least `delta` (Euclidean) from the last transmitted
//! one.  Transmissions cross an i.i.d. Bernoulli erasure channel that
//! delivers with probability `lambda`.  Per step the estimator sees one
//! [`ChannelEvent`] carrying the received measurement when
//! `gamma = xi AND zeta` is 1 and nothing otherwise.
//!
//! The sensor resets its reference on every send (it cannot observe drops);
//! the estimator tracks its own reference from what it actually receives.
//! After a dropped packet the two references genuinely disagree until the
//! next delivery — that asymmetry is part of the modeled system, not a bug.

pub mod hmm_filter;
pub mod kalman;

pub use hmm_filter::{hmm_point_estimate, BeliefVector, HmmFilter};
pub use kalman::{kalman_step, KalmanFilter, KalmanState};

use nalgebra::DVector;

use crate::rng::GaussianStream;

/// What the estimator learned about time step `k`.
#[derive(Debug, Clone)]
pub struct ChannelEvent {
    pub k: usize,
    /// Send-on-delta trigger bit.
    pub xi: bool,
    /// Channel delivery bit (1 = no loss).
    pub zeta: bool,
    /// Reception bit, `gamma = xi && zeta`.
    pub gamma: bool,
    /// The measurement, present exactly when `gamma` is set.
    pub payload: Option<DVector<f64>>,
}

impl ChannelEvent {
    pub fn new(k: usize, xi: bool, zeta: bool, payload: Option<DVector<f64>>) -> Self {
        let gamma = xi && zeta;
        debug_assert_eq!(gamma, payload.is_some(), "payload present iff gamma");
        Self { k, xi, zeta, gamma, payload }
    }

    /// A guaranteed-delivery event (full-communication runs).
    pub fn received(k: usize, y: DVector<f64>) -> Self {
        Self::new(k, true, true, Some(y))
    }
}

/// Send-on-delta trigger: 0 while `||y_k - y_tau||_2 < delta`, else 1.
/// The comparison is strict, so `delta = 0` always triggers.
pub fn send_on_delta(y_k: &DVector<f64>, y_tau: &DVector<f64>, delta: f64) -> bool {
    !((y_k - y_tau).norm() < delta)
}

/// I.i.d. Bernoulli delivery draws on a dedicated stream.
#[derive(Debug, Clone)]
pub struct DropStream {
    stream: GaussianStream,
    lambda: f64,
}

impl DropStream {
    pub fn new(lambda: f64, seed: u64) -> Self {
        Self { stream: GaussianStream::substream(seed, 1), lambda }
    }

    /// One delivery bit: `P(true) = lambda`.
    pub fn next(&mut self) -> bool {
        self.stream.next_bernoulli(self.lambda)
    }
}

/// Sensor-side event generator: trigger rule plus erasure channel.
#[derive(Debug, Clone)]
pub struct EventChannel {
    delta: f64,
    drops: DropStream,
    /// Last output the sensor transmitted (its trigger reference).
    sensor_ref: DVector<f64>,
}

impl EventChannel {
    /// The reference starts at `y0`, treated as known to both ends.
    pub fn new(delta: f64, lambda: f64, y0: DVector<f64>, channel_seed: u64) -> Self {
        Self { delta, drops: DropStream::new(lambda, channel_seed), sensor_ref: y0 }
    }

    /// Process the output at step `k` into the event the estimator sees.
    ///
    /// The delivery bit is drawn every step (the erasure process is i.i.d.
    /// and independent of the trigger), so event streams for different
    /// triggers but one channel seed stay aligned.
    pub fn step(&mut self, k: usize, y_k: &DVector<f64>) -> ChannelEvent {
        let xi = send_on_delta(y_k, &self.sensor_ref, self.delta);
        let zeta = self.drops.next();
        if xi {
            self.sensor_ref = y_k.clone();
        }
        let payload = (xi && zeta).then(|| y_k.clone());
        ChannelEvent::new(k, xi, zeta, payload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn trigger_basics() {
        let y = dvector![1.0, 2.0];
        assert!(!send_on_delta(&y, &y, 0.5), "identical outputs never trigger for delta > 0");
        // exact boundary triggers (strict inequality)
        let y2 = dvector![1.5, 2.0];
        assert!(send_on_delta(&y2, &y, 0.5));
        // delta = 0 always triggers
        assert!(send_on_delta(&y, &y, 0.0));
    }

    #[test]
    fn drop_stream_limits_and_mean() {
        let mut all = DropStream::new(1.0, 9);
        assert!((0..200).all(|_| all.next()));
        let mut none = DropStream::new(0.0, 9);
        assert!((0..200).all(|_| !none.next()));

        let mut s = DropStream::new(0.95, 123);
        let n = 100_000;
        let hits = (0..n).filter(|_| s.next()).count() as f64;
        let mean = hits / n as f64;
        // 3-sigma binomial interval around 0.95
        let sigma = (0.95 * 0.05 / n as f64).sqrt();
        assert!((mean - 0.95).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn channel_resets_reference_on_send_even_when_dropped() {
        // lambda = 0 drops everything; the sensor still resets on send, so a
        // second identical output does not re-trigger.
        let mut ch = EventChannel::new(0.5, 0.0, dvector![0.0], 1);
        let e1 = ch.step(1, &dvector![1.0]);
        assert!(e1.xi && !e1.zeta && !e1.gamma && e1.payload.is_none());
        let e2 = ch.step(2, &dvector![1.0]);
        assert!(!e2.xi, "reference moved to the sent value");
    }
}
