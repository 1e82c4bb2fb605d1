use std::collections::VecDeque;
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackoffPolicy {
    pub initial: Duration,
    pub factor: u32,
    pub cap: Duration,
    /// Restarts allowed inside `window`; one more crash is permanent.
    pub max_restarts: usize,
    pub window: Duration,
    /// A run at least this long resets the delay to `initial`.
    pub stable_after: Duration,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        Self {
            initial: Duration::from_millis(500),
            factor: 2,
            cap: Duration::from_secs(30),
            max_restarts: 10,
            window: Duration::from_secs(3600),
            stable_after: Duration::from_secs(60),
        }
    }
}

impl BackoffPolicy {
    /// Delay before restart number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let mut d = self.initial;
        for _ in 0..attempt {
            d = d.saturating_mul(self.factor);
            if d >= self.cap {
                return self.cap;
            }
        }
        d.min(self.cap)
    }
}

/// Restart history of one managed process.
#[derive(Debug, Clone, Default)]
pub struct RestartBudget {
    restarts: VecDeque<Duration>,
    /// Consecutive restarts since the last stable run.
    pub streak: u32,
}

impl RestartBudget {
    /// Whether one more restart fits in the window ending at `now`.
    pub fn allows(&mut self, policy: &BackoffPolicy, now: Duration) -> bool {
        while self.restarts.front().is_some_and(|&t| now.saturating_sub(t) >= policy.window) {
            self.restarts.pop_front();
        }
        self.restarts.len() < policy.max_restarts
    }

    pub fn record(&mut self, now: Duration) {
        self.restarts.push_back(now);
        self.streak += 1;
    }

    pub fn in_window(&self) -> usize {
        self.restarts.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        let p = BackoffPolicy::default();
        let got: Vec<u64> = (0..9).map(|i| p.delay(i).as_millis() as u64).collect();
        assert_eq!(got, vec![500, 1000, 2000, 4000, 8000, 16000, 30000, 30000, 30000]);
        assert_eq!(p.delay(200), Duration::from_secs(30));
    }

    #[test]
    fn budget_window() {
        let p = BackoffPolicy { max_restarts: 2, window: Duration::from_secs(10), ..Default::default() };
        let mut b = RestartBudget::default();
        let s = Duration::from_secs;
        assert!(b.allows(&p, s(0)));
        b.record(s(0));
        b.record(s(1));
        assert!(!b.allows(&p, s(5)));
        assert!(b.allows(&p, s(10)));
    }
}
