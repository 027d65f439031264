//! Artificial delays: the read-phase extension, the adaptive abort backoff,
//! and the fixed NoWaitTT retry wait.

use std::time::Duration;

/// Points in the transaction loop where a policy may inject a wait.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DelayEvent {
    ReadPhaseEnd,
    AbortRetry,
}

/// Number of attempt outcomes folded into one abort-rate estimate before
/// the adaptive backoff adjusts its wait.
const BACKOFF_WINDOW: u32 = 64;

#[derive(Clone, Debug)]
pub enum DelayPolicy {
    None,
    /// Fixed wait appended once per attempt at the end of the read phase.
    ReadPhaseExtension(Duration),
    /// Multiplicative increase/decrease wait before retrying an aborted
    /// transaction, driven by a sliding-window abort-rate estimate.
    AdaptiveBackoff(AdaptiveBackoff),
    /// The wait TicToc's NoWaitTT inserts between validation retries.
    FixedNoWaitTt(Duration),
}

impl DelayPolicy {
    /// The wait to apply for `event`. `None` always produces zero.
    pub fn next(&mut self, event: DelayEvent) -> Duration {
        match (self, event) {
            (DelayPolicy::ReadPhaseExtension(d), DelayEvent::ReadPhaseEnd) => *d,
            (DelayPolicy::AdaptiveBackoff(b), DelayEvent::AbortRetry) => b.current,
            _ => Duration::ZERO,
        }
    }

    /// Feeds one attempt outcome into the adaptive estimator; other kinds
    /// ignore it.
    pub fn observe(&mut self, committed: bool) {
        if let DelayPolicy::AdaptiveBackoff(b) = self {
            b.observe(!committed);
        }
    }

    /// The NoWaitTT retry wait, when this policy configures one.
    pub fn no_wait_tt(&self) -> Option<Duration> {
        match self {
            DelayPolicy::FixedNoWaitTt(d) => Some(*d),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdaptiveBackoff {
    current: Duration,
    min: Duration,
    max: Duration,
    factor: u32,
    window_events: u32,
    window_aborts: u32,
    last_rate: f64,
}

impl AdaptiveBackoff {
    pub fn new(min: Duration, max: Duration, factor: u32) -> AdaptiveBackoff {
        assert!(factor >= 2, "a unit factor never adapts");
        assert!(min <= max);
        AdaptiveBackoff {
            current: min,
            min,
            max,
            factor,
            window_events: 0,
            window_aborts: 0,
            last_rate: 0.0,
        }
    }

    pub fn current(&self) -> Duration {
        self.current
    }

    fn observe(&mut self, aborted: bool) {
        self.window_events += 1;
        self.window_aborts += u32::from(aborted);
        if self.window_events < BACKOFF_WINDOW {
            return;
        }
        let rate = f64::from(self.window_aborts) / f64::from(self.window_events);
        if rate > self.last_rate {
            self.current = (self.current * self.factor).min(self.max);
        } else if rate < self.last_rate {
            self.current = (self.current / self.factor).max(self.min);
        }
        self.last_rate = rate;
        self.window_events = 0;
        self.window_aborts = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const US: Duration = Duration::from_micros(1);

    #[test]
    fn none_is_always_zero() {
        let mut p = DelayPolicy::None;
        assert_eq!(p.next(DelayEvent::ReadPhaseEnd), Duration::ZERO);
        assert_eq!(p.next(DelayEvent::AbortRetry), Duration::ZERO);
    }

    #[test]
    fn extension_fires_only_at_read_phase_end() {
        let mut p = DelayPolicy::ReadPhaseExtension(10 * US);
        assert_eq!(p.next(DelayEvent::ReadPhaseEnd), 10 * US);
        assert_eq!(p.next(DelayEvent::AbortRetry), Duration::ZERO);
    }

    fn run_window(b: &mut AdaptiveBackoff, aborts: u32) {
        for i in 0..BACKOFF_WINDOW {
            b.observe(i < aborts);
        }
    }

    #[test]
    fn three_rising_updates_reach_eight_micros() {
        let mut b = AdaptiveBackoff::new(US, Duration::from_millis(1), 2);
        run_window(&mut b, 4);
        run_window(&mut b, 8);
        run_window(&mut b, 16);
        assert_eq!(b.current(), 8 * US);
    }

    #[test]
    fn falling_rate_shrinks_and_clamps_at_min() {
        let mut b = AdaptiveBackoff::new(US, Duration::from_millis(1), 2);
        run_window(&mut b, 32);
        assert_eq!(b.current(), 2 * US);
        run_window(&mut b, 4);
        run_window(&mut b, 2);
        run_window(&mut b, 1);
        assert_eq!(b.current(), US, "clamped at the floor");
    }

    #[test]
    fn growth_clamps_at_max() {
        let mut b = AdaptiveBackoff::new(US, 4 * US, 2);
        for aborts in [1, 2, 3, 4, 5, 6, 7] {
            run_window(&mut b, aborts);
        }
        assert_eq!(b.current(), 4 * US);
    }

    #[test]
    fn steady_rate_holds_the_wait() {
        let mut b = AdaptiveBackoff::new(US, Duration::from_millis(1), 2);
        run_window(&mut b, 8);
        let after_rise = b.current();
        run_window(&mut b, 8);
        assert_eq!(b.current(), after_rise);
    }

    proptest::proptest! {
        #[test]
        fn waits_stay_within_bounds(aborts in proptest::collection::vec(0u32..=BACKOFF_WINDOW, 1..40)) {
            let (min, max) = (US, Duration::from_micros(64));
            let mut b = AdaptiveBackoff::new(min, max, 2);
            for a in aborts {
                run_window(&mut b, a);
                proptest::prop_assert!(b.current() >= min && b.current() <= max);
            }
        }
    }
}
