//! Packet Monitor counters.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

macro_rules! counters {
    ($($name:ident),* $(,)?) => {
        /// Monotonic counters written by the NIC context, readable from anywhere.
        #[derive(Debug, Default)]
        pub struct NicStats {
            $(pub(crate) $name: AtomicU64,)*
        }

        #[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
        pub struct NicStatsSnapshot {
            $(pub $name: u64,)*
        }

        impl NicStats {
            pub fn snapshot(&self) -> NicStatsSnapshot {
                NicStatsSnapshot {
                    $($name: self.$name.load(Ordering::Relaxed),)*
                }
            }
        }

        impl NicStatsSnapshot {
            /// `key=value` lines, one counter per line.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(let _ = writeln!(s, "{}={}", stringify!($name), self.$name);)*
                s
            }

            pub fn accumulate(&mut self, other: &NicStatsSnapshot) {
                $(self.$name += other.$name;)*
            }
        }
    };
}

counters!(
    frames_rx,
    frames_tx,
    frames_delivered,
    rpcs_in,
    rpcs_out,
    drops,
    tx_drops,
    switch_drops,
    cm_hits,
    cm_misses,
    cm_evictions,
    batches_sent,
    partial_batches,
);

impl NicStats {
    #[inline]
    pub(crate) fn bump(counter: &AtomicU64, n: u64) {
        counter.fetch_add(n, Ordering::Relaxed);
    }
}

impl NicStatsSnapshot {
    /// Every frame lost anywhere on this NIC's paths.
    pub fn total_drops(&self) -> u64 {
        self.drops + self.tx_drops + self.switch_drops
    }
}
