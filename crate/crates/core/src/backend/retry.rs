use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;

use super::BackendError;

/// Exponential backoff: `initial * multiplier^attempt`, scaled by a uniform
/// jitter factor in `[1 - jitter, 1 + jitter]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial: Duration,
    pub multiplier: f64,
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, initial: Duration::from_secs(1), multiplier: 2.0, jitter: 0.2 }
    }
}

impl RetryPolicy {
    pub fn with_max_retries(max_retries: u32) -> Self {
        RetryPolicy { max_retries, ..Default::default() }
    }

    /// Delay before retry number `attempt` (0-based), for a jitter sample
    /// `u` in `[-1, 1]`.
    pub fn delay(&self, attempt: u32, u: f64) -> Duration {
        let base = self.initial.as_secs_f64() * self.multiplier.powi(attempt as i32);
        let factor = 1.0 + self.jitter * u.clamp(-1.0, 1.0);
        Duration::from_secs_f64((base * factor).max(0.0))
    }

    /// Runs `op` until it succeeds, fails permanently, or retries run out.
    /// Returns the value and the number of attempts made.
    pub fn run<T>(
        &self,
        mut op: impl FnMut(u32) -> Result<T, BackendError>,
        mut sleep: impl FnMut(Duration),
    ) -> Result<(T, u32), BackendError> {
        let mut rng = rand::thread_rng();
        let mut attempt = 0u32;
        loop {
            match op(attempt) {
                Ok(v) => return Ok((v, attempt + 1)),
                Err(e) if e.is_transient() && attempt < self.max_retries => {
                    let wait = self.delay(attempt, rng.gen_range(-1.0..=1.0));
                    log::warn!("attempt {} failed ({e}); retrying in {:.2}s", attempt + 1, wait.as_secs_f64());
                    sleep(wait);
                    attempt += 1;
                }
                Err(BackendError::RateLimited { prompt_hash, .. }) => {
                    return Err(BackendError::RateLimited { prompt_hash, attempts: attempt + 1 })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Shared token bucket limiting request starts.
#[derive(Debug)]
pub struct TokenBucket {
    rate_per_sec: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn per_minute(requests_per_minute: u32) -> Self {
        let rate = f64::from(requests_per_minute.max(1)) / 60.0;
        Self::new(rate, rate.max(1.0))
    }

    pub fn new(rate_per_sec: f64, capacity: f64) -> Self {
        TokenBucket { rate_per_sec, capacity, state: Mutex::new((capacity, Instant::now())) }
    }

    /// Takes a token at time `now`, or reports how long until one is free.
    pub fn try_take_at(&self, now: Instant) -> Result<(), Duration> {
        let mut state = self.state.lock().expect("token bucket poisoned");
        let (tokens, last) = *state;
        let elapsed = now.saturating_duration_since(last).as_secs_f64();
        let tokens = (tokens + elapsed * self.rate_per_sec).min(self.capacity);
        if tokens >= 1.0 {
            *state = (tokens - 1.0, now.max(last));
            Ok(())
        } else {
            *state = (tokens, now.max(last));
            Err(Duration::from_secs_f64((1.0 - tokens) / self.rate_per_sec))
        }
    }

    pub fn acquire(&self) {
        while let Err(wait) = self.try_take_at(Instant::now()) {
            std::thread::sleep(wait);
        }
    }
}
