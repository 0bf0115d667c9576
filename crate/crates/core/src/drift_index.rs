//! Drift level index over a stream of prediction outcomes.
//!
//! For every verified record the detector estimates the error rate `p` and
//! its binomial standard error `s`, remembers the pair with the smallest
//! `p + s` seen since the last confirmed drift, and reports the level
//!
//! ```text
//! r = (p + s - p_min) / s_min
//! ```
//!
//! Levels of 2 and 3 correspond to warnings and confirmed drifts. A batch's
//! level is the mean of its records' levels.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Stand-in for an unbounded level when `s_min` is zero.
pub const SATURATED_LEVEL: f64 = 1.0e3;

/// How the error-rate estimate is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Fixed-capacity FIFO of the most recent outcomes. Minima reset on a
    /// confirmed drift while the window contents are kept.
    Sliding,
    /// All outcomes since the last confirmed drift; a confirmation clears
    /// both the counts and the minima.
    SinceReset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Window capacity `n`. In `SinceReset` mode only the warm-up derives
    /// from it.
    pub window: usize,
    pub mode: WindowMode,
    /// Outcomes required before levels are reported.
    pub warmup: usize,
    pub warning_level: f64,
    pub confirm_level: f64,
}

impl DetectorConfig {
    pub fn new(window: usize, mode: WindowMode) -> Self {
        Self {
            window,
            mode,
            warmup: (window / 5).max(1),
            warning_level: 2.0,
            confirm_level: 3.0,
        }
    }
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::new(500, WindowMode::SinceReset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftStatus {
    Stable,
    Warning,
    Confirmed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub level: f64,
    pub status: DriftStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    Warning,
    Confirmed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEvent {
    pub source: String,
    pub segment: usize,
    /// Position of the record in the source's stream.
    pub record_index: usize,
    pub timestamp: i64,
    pub kind: DriftKind,
    pub level: f64,
}

/// `sqrt(p (1 - p) / n)`.
pub fn standard_error(p: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / n as f64).max(0.0).sqrt()
}

/// The drift level for the current `(p, s)` against stored minima,
/// including the guard for an error-free reference (`s_min == 0`).
pub fn drift_level(p: f64, s: f64, p_min: f64, s_min: f64) -> f64 {
    if s_min > 0.0 {
        ((p - p_min + s) / s_min).max(0.0)
    } else if p + s <= p_min {
        0.0
    } else {
        SATURATED_LEVEL
    }
}

/// Mean of the record-level drift levels of a batch; 0 when empty.
pub fn batch_drift_level(levels: &[f64]) -> f64 {
    if levels.is_empty() {
        0.0
    } else {
        levels.iter().sum::<f64>() / levels.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    pub config: DetectorConfig,
    window: VecDeque<bool>,
    errors: usize,
    seen: usize,
    pub p: f64,
    pub s: f64,
    pub p_min: f64,
    pub s_min: f64,
    batch_sum: f64,
    batch_count: usize,
    last_status: DriftStatus,
}

impl DetectorState {
    pub fn new(config: DetectorConfig) -> Self {
        Self {
            config,
            window: VecDeque::with_capacity(config.window.min(1 << 16)),
            errors: 0,
            seen: 0,
            p: 0.0,
            s: 0.0,
            p_min: f64::INFINITY,
            s_min: f64::INFINITY,
            batch_sum: 0.0,
            batch_count: 0,
            last_status: DriftStatus::Stable,
        }
    }

    /// Number of outcomes behind the current estimate.
    pub fn occupancy(&self) -> usize {
        match self.config.mode {
            WindowMode::Sliding => self.window.len(),
            WindowMode::SinceReset => self.seen,
        }
    }

    pub fn has_minima(&self) -> bool {
        self.p_min.is_finite()
    }

    /// Status of the previous observation.
    pub fn last_status(&self) -> DriftStatus {
        self.last_status
    }

    /// Feeds one prediction outcome.
    pub fn observe(&mut self, correct: bool) -> Observation {
        let error = !correct;
        match self.config.mode {
            WindowMode::Sliding => {
                self.window.push_back(error);
                if error {
                    self.errors += 1;
                }
                if self.window.len() > self.config.window && self.window.pop_front() == Some(true) {
                    self.errors -= 1;
                }
            }
            WindowMode::SinceReset => {
                self.seen += 1;
                if error {
                    self.errors += 1;
                }
            }
        }

        let n = self.occupancy();
        self.p = self.errors as f64 / n as f64;
        self.s = standard_error(self.p, n);

        let obs = if n < self.config.warmup {
            Observation { level: 0.0, status: DriftStatus::Stable }
        } else {
            if !self.has_minima() || self.p + self.s < self.p_min + self.s_min {
                self.p_min = self.p;
                self.s_min = self.s;
            }
            let level = drift_level(self.p, self.s, self.p_min, self.s_min);
            let status = if level >= self.config.confirm_level {
                DriftStatus::Confirmed
            } else if level >= self.config.warning_level {
                DriftStatus::Warning
            } else {
                DriftStatus::Stable
            };
            Observation { level, status }
        };

        if obs.status == DriftStatus::Confirmed {
            self.reset_after_confirmation();
        }
        self.batch_sum += obs.level;
        self.batch_count += 1;
        self.last_status = obs.status;
        obs
    }

    fn reset_after_confirmation(&mut self) {
        match self.config.mode {
            WindowMode::Sliding => {
                self.p_min = self.p;
                self.s_min = self.s;
            }
            WindowMode::SinceReset => {
                self.seen = 0;
                self.errors = 0;
                self.p_min = f64::INFINITY;
                self.s_min = f64::INFINITY;
            }
        }
    }

    /// Returns the mean level of outcomes since the previous call and
    /// starts a new batch.
    pub fn finish_batch(&mut self) -> f64 {
        let level = if self.batch_count == 0 {
            0.0
        } else {
            self.batch_sum / self.batch_count as f64
        };
        self.batch_sum = 0.0;
        self.batch_count = 0;
        level
    }

    /// Seeds the stored minima; used to replay a known reference state.
    pub fn set_minima(&mut self, p_min: f64, s_min: f64) {
        self.p_min = p_min;
        self.s_min = s_min;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn level_is_one_at_the_minimum() {
        let s = standard_error(0.2, 500);
        assert_eq!(drift_level(0.2, s, 0.2, s), 1.0);
    }

    #[test]
    fn worked_levels() {
        let s_min = standard_error(0.2, 500);
        assert!(close(s_min, 0.0178885, 1e-7));

        let s = standard_error(0.3, 500);
        assert!(close(s, 0.0204939, 1e-7));
        let r = drift_level(0.3, s, 0.2, s_min);
        // direct evaluation of (p + s - p_min) / s_min
        let oracle = (0.3 + (0.3f64 * 0.7 / 500.0).sqrt() - 0.2) / (0.2f64 * 0.8 / 500.0).sqrt();
        assert!(close(r, oracle, 1e-12));
        assert!(close(r, 6.736, 1e-3));

        let s = standard_error(0.23, 500);
        assert!(close(s, 0.0188202, 1e-7));
        let r = drift_level(0.23, s, 0.2, s_min);
        assert!(close(r, 2.729, 1e-3));
        assert!((2.0..3.0).contains(&r));
    }

    #[test]
    fn zero_reference_guard() {
        assert_eq!(drift_level(0.0, 0.0, 0.0, 0.0), 0.0);
        assert_eq!(drift_level(0.01, 0.004, 0.0, 0.0), SATURATED_LEVEL);
    }

    #[test]
    fn batch_level_is_mean() {
        assert_eq!(batch_drift_level(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(batch_drift_level(&[]), 0.0);
        assert!(close(batch_drift_level(&[2.729, 6.736]), 4.7325, 1e-12));
    }

    #[test]
    fn warmup_suppresses_levels() {
        let mut d = DetectorState::new(DetectorConfig::new(500, WindowMode::Sliding));
        for i in 0..99 {
            let obs = d.observe(i % 2 == 0);
            assert_eq!(obs, Observation { level: 0.0, status: DriftStatus::Stable });
        }
        assert!(!d.has_minima());
        let obs = d.observe(true);
        assert!(d.has_minima());
        assert_eq!(obs.level, 1.0);
    }

    #[test]
    fn sliding_window_evicts_oldest() {
        let mut cfg = DetectorConfig::new(10, WindowMode::Sliding);
        cfg.warmup = 1;
        let mut d = DetectorState::new(cfg);
        for _ in 0..10 {
            d.observe(false);
        }
        assert_eq!(d.p, 1.0);
        for _ in 0..10 {
            d.observe(true);
        }
        assert_eq!(d.occupancy(), 10);
        assert_eq!(d.p, 0.0);
    }

    #[test]
    fn confirmation_replay_from_seeded_minima() {
        let mut cfg = DetectorConfig::new(500, WindowMode::Sliding);
        cfg.warmup = 500;
        let mut d = DetectorState::new(cfg);
        // 150 errors out of 500 -> p = 0.3
        for i in 0..500 {
            d.observe(i % 10 >= 3);
        }
        d.set_minima(0.2, standard_error(0.2, 500));
        // one more correct outcome evicts an error: p = 149/500
        let obs = d.observe(true);
        assert_eq!(obs.status, DriftStatus::Confirmed);
        assert!(close(obs.level, drift_level(0.298, standard_error(0.298, 500), 0.2, standard_error(0.2, 500)), 1e-12));
        // sliding mode keeps the window and rebases the minima
        assert_eq!(d.occupancy(), 500);
        assert_eq!(d.p_min, d.p);
    }

    #[test]
    fn since_reset_clears_on_confirmation() {
        let mut cfg = DetectorConfig::new(50, WindowMode::SinceReset);
        cfg.warmup = 10;
        let mut d = DetectorState::new(cfg);
        for i in 0..200 {
            d.observe(i % 10 != 0);
        }
        let mut confirmed = false;
        for _ in 0..100 {
            if d.observe(false).status == DriftStatus::Confirmed {
                confirmed = true;
                break;
            }
        }
        assert!(confirmed);
        assert_eq!(d.occupancy(), 0);
        assert!(!d.has_minima());
    }

    #[test]
    fn error_burst_raises_level_monotonically() {
        let mut cfg = DetectorConfig::new(200, WindowMode::Sliding);
        cfg.warmup = 200;
        let mut d = DetectorState::new(cfg);
        for i in 0..400 {
            d.observe(i % 10 != 0);
        }
        let (p_min, s_min) = (d.p_min, d.s_min);
        let mut last = f64::NEG_INFINITY;
        let mut errors_before = (d.p * 200.0).round() as usize;
        for _ in 0..20 {
            let obs = d.observe(false);
            let errors = (d.p * 200.0).round() as usize;
            if errors > errors_before && obs.status != DriftStatus::Confirmed {
                assert!(obs.level > last);
            }
            if obs.status == DriftStatus::Confirmed {
                break;
            }
            assert_eq!((d.p_min, d.s_min), (p_min, s_min));
            last = obs.level;
            errors_before = errors;
        }
    }

    #[test]
    fn finish_batch_averages_and_resets() {
        let mut cfg = DetectorConfig::new(10, WindowMode::SinceReset);
        cfg.warmup = 1;
        let mut d = DetectorState::new(cfg);
        d.observe(true);
        d.observe(true);
        assert_eq!(d.finish_batch(), 0.0);
        assert_eq!(d.finish_batch(), 0.0);
    }
}
