use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Mutex, OnceLock};
use std::thread::Thread;
use std::time::{Duration, Instant};

fn epoch() -> Instant {
    static EPOCH: OnceLock<Instant> = OnceLock::new();
    *EPOCH.get_or_init(Instant::now)
}

/// Monotonic nanoseconds since the first call in this process. All trace
/// timestamps share this origin, so they compare across threads.
pub fn now_ns() -> u64 {
    epoch().elapsed().as_nanos() as u64
}

/// Ask the kernel to wake this thread close to the requested time. Linux
/// otherwise rounds short sleeps up by its default 50 us timer slack.
fn tight_timers() {
    #[cfg(target_os = "linux")]
    {
        thread_local!(static SET: std::cell::Cell<bool> = const { std::cell::Cell::new(false) });
        SET.with(|s| {
            if !s.get() {
                s.set(true);
                // SAFETY: PR_SET_TIMERSLACK takes a plain integer and only
                // affects the calling thread.
                unsafe {
                    libc::prctl(libc::PR_SET_TIMERSLACK, 1_000 as libc::c_ulong, 0, 0, 0);
                }
            }
        });
    }
}

/// Sleep for `d` with tight timer slack.
pub fn sleep(d: Duration) {
    tight_timers();
    std::thread::sleep(d);
}

/// Idle strategy for polling loops: spin briefly, then yield the core.
#[derive(Debug, Default)]
pub struct Backoff {
    idle: u32,
}

impl Backoff {
    const SPIN_LIMIT: u32 = 16;
    const YIELD_LIMIT: u32 = 4_000;
    const SLEEP: Duration = Duration::from_micros(50);
    const PARK_AFTER: u32 = 256;
    const PARK_TIMEOUT: Duration = Duration::from_millis(1);

    pub fn reset(&mut self) {
        self.idle = 0;
    }

    /// Like [`Backoff::snooze`], but once spinning and yielding are used up
    /// it calls `park` with a timeout instead of sleeping a fixed interval.
    pub fn snooze_or(&mut self, park: impl FnOnce(Duration)) {
        if self.idle < Self::SPIN_LIMIT {
            std::hint::spin_loop();
        } else if self.idle < Self::PARK_AFTER {
            std::thread::yield_now();
        } else {
            park(Self::PARK_TIMEOUT);
        }
        self.idle = self.idle.saturating_add(1);
    }

    pub fn snooze(&mut self) {
        if self.idle < Self::SPIN_LIMIT {
            std::hint::spin_loop();
        } else if self.idle < Self::YIELD_LIMIT {
            std::thread::yield_now();
        } else {
            sleep(Self::SLEEP);
        }
        self.idle = self.idle.saturating_add(1);
    }
}

/// Occupy the calling thread for `ns`. Long waits sleep and finish with a
/// short spin; `spin_only` burns the core for the whole interval.
pub fn hold_for(ns: u64, spin_only: bool) {
    let deadline = Instant::now() + Duration::from_nanos(ns);
    const SPIN_TAIL: Duration = Duration::from_micros(60);
    if !spin_only {
        let now = Instant::now();
        if deadline > now + SPIN_TAIL {
            sleep(deadline - now - SPIN_TAIL);
        }
    }
    while Instant::now() < deadline {
        if spin_only {
            std::hint::spin_loop();
        } else {
            std::thread::yield_now();
        }
    }
}

/// Wake-up signal from a producer to one idle consumer thread.
///
/// Producers call [`Doorbell::ring`] after publishing work; the consumer
/// parks in [`Doorbell::wait`] once polling finds nothing. A ring that lands
/// before the consumer parks is remembered, so no wake-up is lost.
#[derive(Debug, Default)]
pub struct Doorbell {
    pending: AtomicBool,
    sleeping: AtomicBool,
    waiter: Mutex<Option<Thread>>,
}

impl Doorbell {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ring(&self) {
        self.pending.store(true, Ordering::SeqCst);
        if self.sleeping.load(Ordering::SeqCst) {
            let waiter = self.waiter.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(t) = waiter.as_ref() {
                t.unpark();
            }
        }
    }

    /// Clear and return the rung flag without parking.
    pub fn take(&self) -> bool {
        self.pending.swap(false, Ordering::SeqCst)
    }

    /// Park the calling thread until rung or `timeout` passes. Returns at
    /// once if rung since the last wait.
    pub fn wait(&self, timeout: Duration) {
        {
            let me = std::thread::current();
            let mut waiter = self.waiter.lock().unwrap_or_else(|e| e.into_inner());
            if waiter.as_ref().map(Thread::id) != Some(me.id()) {
                *waiter = Some(me);
            }
        }
        // store-then-check here pairs with store-then-check in ring()
        self.sleeping.store(true, Ordering::SeqCst);
        if !self.pending.swap(false, Ordering::SeqCst) {
            tight_timers();
            std::thread::park_timeout(timeout);
        }
        self.sleeping.store(false, Ordering::SeqCst);
        self.pending.store(false, Ordering::SeqCst);
    }
}
