use std::sync::{Condvar, Mutex};

/// Caps concurrent provider calls. Waiters are admitted strictly in arrival
/// order (ticket lock), so a burst of batch calls cannot starve an early one.
#[derive(Debug)]
pub struct InFlightLimiter {
    cap: usize,
    state: Mutex<State>,
    cv: Condvar,
}

#[derive(Debug, Default)]
struct State {
    next_ticket: u64,
    now_serving: u64,
    active: usize,
}

pub struct Permit<'a> {
    limiter: &'a InFlightLimiter,
}

impl InFlightLimiter {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            state: Mutex::new(State::default()),
            cv: Condvar::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let ticket = st.next_ticket;
        st.next_ticket += 1;
        while !(st.now_serving == ticket && st.active < self.cap) {
            st = self.cv.wait(st).unwrap_or_else(|e| e.into_inner());
        }
        st.now_serving += 1;
        st.active += 1;
        drop(st);
        // the next ticket holder may also fit under the cap
        self.cv.notify_all();
        Permit { limiter: self }
    }

    pub fn in_flight(&self) -> usize {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).active
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut st = self
            .limiter
            .state
            .lock()
            .unwrap_or_else(|e| e.into_inner());
        st.active -= 1;
        drop(st);
        self.limiter.cv.notify_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;
    use std::time::Duration;

    #[test]
    fn never_exceeds_cap() {
        let limiter = Arc::new(InFlightLimiter::new(3));
        let peak = Arc::new(AtomicUsize::new(0));
        let current = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..16 {
                let (limiter, peak, current) = (limiter.clone(), peak.clone(), current.clone());
                s.spawn(move || {
                    let _p = limiter.acquire();
                    let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    current.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 3);
        assert_eq!(limiter.in_flight(), 0);
    }

    #[test]
    fn zero_cap_is_clamped() {
        let l = InFlightLimiter::new(0);
        assert_eq!(l.capacity(), 1);
        let _p = l.acquire();
        assert_eq!(l.in_flight(), 1);
    }
}
