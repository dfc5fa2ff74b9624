//! Retry, rate limiting and JSON-over-HTTP plumbing shared by the remote clients.

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;

/// Outcome of a single attempt as seen by [`RetryPolicy::run`].
#[derive(Debug)]
pub enum Attempt<E> {
    /// Worth retrying: transport failures, 429 and 5xx responses.
    Transient(E),
    /// Retrying cannot help.
    Fatal(E),
}

#[derive(Debug, PartialEq, Eq)]
pub enum RetryError<E> {
    Exhausted { attempts: u32, last: E },
    Fatal(E),
}

/// Bounded retries with exponential backoff.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn no_backoff(attempts: u32) -> Self {
        RetryPolicy {
            attempts,
            initial_backoff: Duration::ZERO,
        }
    }

    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        self.initial_backoff
            .saturating_mul(1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX))
    }

    /// Runs `op` until it succeeds, fails fatally or the attempt budget is spent.
    /// `op` receives the 1-based attempt number.
    pub fn run<T, E>(&self, mut op: impl FnMut(u32) -> Result<T, Attempt<E>>) -> Result<T, RetryError<E>> {
        let attempts = self.attempts.max(1);
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(RetryError::Fatal(e)),
                Err(Attempt::Transient(e)) if attempt >= attempts => {
                    return Err(RetryError::Exhausted { attempts, last: e })
                }
                Err(Attempt::Transient(_)) => {
                    let wait = self.backoff(attempt);
                    if !wait.is_zero() {
                        thread::sleep(wait);
                    }
                    attempt += 1;
                }
            }
        }
    }
}

/// Client-side queue that spaces requests at least `1 / rate` seconds apart.
///
/// Callers reserve the next free slot under the lock and sleep outside it, so
/// concurrent callers are served in arrival order.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    /// A non-positive or non-finite rate disables limiting.
    pub fn per_second(rate: f64) -> Self {
        let interval = if rate.is_finite() && rate > 0.0 {
            Duration::from_secs_f64(1.0 / rate)
        } else {
            Duration::ZERO
        };
        RateLimiter {
            interval,
            next_slot: Mutex::new(None),
        }
    }

    pub fn unlimited() -> Self {
        RateLimiter::per_second(0.0)
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    pub fn acquire(&self) {
        if self.interval.is_zero() {
            return;
        }
        let now = Instant::now();
        let slot = {
            let mut next = self.next_slot.lock().unwrap_or_else(|e| e.into_inner());
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot
        };
        if slot > now {
            thread::sleep(slot - now);
        }
    }
}

/// POSTs `body` as JSON and decodes a JSON reply.
///
/// The bearer token, when present, is only placed in the Authorization header.
pub(crate) fn post_json(
    agent: &ureq::Agent,
    url: &str,
    bearer: Option<&str>,
    body: &Value,
) -> Result<Value, Attempt<String>> {
    let mut req = agent.post(url).set("Content-Type", "application/json");
    if let Some(token) = bearer {
        req = req.set("Authorization", &format!("Bearer {token}"));
    }
    match req.send_json(body) {
        Ok(resp) => resp
            .into_json::<Value>()
            .map_err(|e| Attempt::Fatal(format!("response is not JSON: {e}"))),
        Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
            Err(Attempt::Transient(format!("HTTP {code}")))
        }
        Err(ureq::Error::Status(code, _)) => Err(Attempt::Fatal(format!("HTTP {code}"))),
        Err(ureq::Error::Transport(t)) => Err(Attempt::Transient(t.kind().to_string())),
    }
}

pub(crate) fn http_agent() -> ureq::Agent {
    ureq::AgentBuilder::new().timeout(Duration::from_secs(60)).build()
}
