use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use crate::clock::Clock;

const WINDOW: Duration = Duration::from_secs(1);

/// Sliding-window request limiter: at most `per_second` dispatches in any
/// half-open one-second window. `0` disables limiting.
pub struct RateLimiter {
    per_second: u32,
    clock: Arc<dyn Clock>,
    recent: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    pub fn new(per_second: u32, clock: Arc<dyn Clock>) -> Self {
        RateLimiter { per_second, clock, recent: Mutex::new(VecDeque::new()) }
    }

    /// Block until a dispatch slot is free, then claim it. Returns the
    /// dispatch time.
    pub fn acquire(&self) -> Duration {
        if self.per_second == 0 {
            return self.clock.now();
        }
        loop {
            let wait = {
                let mut recent = self.recent.lock().unwrap();
                let now = self.clock.now();
                while recent.front().is_some_and(|&t| t + WINDOW <= now) {
                    recent.pop_front();
                }
                if recent.len() < self.per_second as usize {
                    recent.push_back(now);
                    return now;
                }
                *recent.front().unwrap() + WINDOW - now
            };
            self.clock.sleep(wait);
        }
    }
}

/// Counting semaphore bounding in-flight requests.
pub struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightGuard<'a>(&'a InFlight);

impl InFlight {
    pub fn new(limit: usize) -> Self {
        InFlight { limit: limit.max(1), used: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn enter(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.limit {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        InFlightGuard(self)
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}
