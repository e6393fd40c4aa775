//! Request buffer, Free Slot FIFO, per-flow Flow FIFOs and the Flow Scheduler
//! on the network-to-host path.

use std::collections::VecDeque;

use crate::rings::{Entry64, FlowId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcceptError {
    /// The flow's FIFO already holds a full batch worth of frames.
    FlowFull,
    /// No free slot left in the request buffer.
    NoFreeSlot,
    UnknownFlow,
}

/// A batch picked by [`RequestBuffer::schedule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scheduled {
    pub flow: FlowId,
    pub len: usize,
    /// Sent short because the oldest frame hit the flush timeout.
    pub partial: bool,
}

#[derive(Debug)]
pub struct RequestBuffer {
    frames: Vec<Entry64>,
    arrived: Vec<u64>,
    free: VecDeque<u32>,
    fifos: Vec<VecDeque<u32>>,
    fifo_cap: usize,
    cursor: usize,
}

impl RequestBuffer {
    /// `fifo_cap * n_flows` slots, each flow FIFO bounded by `fifo_cap`.
    pub fn new(n_flows: usize, fifo_cap: usize) -> Self {
        let slots = n_flows * fifo_cap;
        RequestBuffer {
            frames: vec![[0; 64]; slots],
            arrived: vec![0; slots],
            free: (0..slots as u32).collect(),
            fifos: (0..n_flows).map(|_| VecDeque::with_capacity(fifo_cap)).collect(),
            fifo_cap,
            cursor: 0,
        }
    }

    pub fn slots(&self) -> usize {
        self.frames.len()
    }

    pub fn free_slots(&self) -> usize {
        self.free.len()
    }

    pub fn queued(&self, flow: FlowId) -> usize {
        self.fifos.get(flow as usize).map_or(0, VecDeque::len)
    }

    pub fn is_empty(&self) -> bool {
        self.free.len() == self.frames.len()
    }

    pub fn accept(&mut self, flow: FlowId, frame: &Entry64, now_ns: u64) -> Result<(), AcceptError> {
        let fifo = self
            .fifos
            .get_mut(flow as usize)
            .ok_or(AcceptError::UnknownFlow)?;
        if fifo.len() >= self.fifo_cap {
            return Err(AcceptError::FlowFull);
        }
        let slot = self.free.pop_front().ok_or(AcceptError::NoFreeSlot)?;
        self.frames[slot as usize] = *frame;
        self.arrived[slot as usize] = now_ns;
        fifo.push_back(slot);
        Ok(())
    }

    /// Pick the next eligible flow round-robin and move its batch into `out`.
    ///
    /// A flow is eligible with `batch` queued frames, or with fewer once its
    /// oldest frame has waited `flush_timeout_ns`. `room(flow)` is the space
    /// left in the flow's RX ring; a batch never exceeds it.
    pub fn schedule(
        &mut self,
        batch: usize,
        flush_timeout_ns: u64,
        now_ns: u64,
        mut room: impl FnMut(FlowId) -> usize,
        out: &mut Vec<Entry64>,
    ) -> Option<Scheduled> {
        let n = self.fifos.len();
        let batch = batch.max(1);
        for k in 0..n {
            let f = (self.cursor + k) % n;
            let queued = self.fifos[f].len();
            if queued == 0 {
                continue;
            }
            let len = if queued >= batch {
                batch
            } else {
                let oldest = self.arrived[self.fifos[f][0] as usize];
                if now_ns.saturating_sub(oldest) < flush_timeout_ns {
                    continue;
                }
                queued
            };
            if room(f as FlowId) < len {
                continue;
            }
            self.cursor = (f + 1) % n;
            self.take(f as FlowId, len, out);
            return Some(Scheduled {
                flow: f as FlowId,
                len,
                partial: len < batch,
            });
        }
        None
    }

    /// Move up to `max` queued frames of `flow` into `out` regardless of
    /// batching. Used to make room when a FIFO is full.
    pub fn drain_flow(&mut self, flow: FlowId, max: usize, out: &mut Vec<Entry64>) -> usize {
        let n = self.queued(flow).min(max);
        self.take(flow, n, out);
        n
    }

    /// Discard everything queued for `flow`; returns how many frames.
    pub fn purge_flow(&mut self, flow: FlowId) -> usize {
        let Some(fifo) = self.fifos.get_mut(flow as usize) else {
            return 0;
        };
        let n = fifo.len();
        self.free.extend(fifo.drain(..));
        n
    }

    fn take(&mut self, flow: FlowId, len: usize, out: &mut Vec<Entry64>) {
        let fifo = &mut self.fifos[flow as usize];
        for _ in 0..len {
            let slot = fifo.pop_front().expect("len <= queued");
            out.push(self.frames[slot as usize]);
            self.free.push_back(slot);
        }
    }

    /// Free slots and FIFO contents partition the slot range.
    pub fn check_partition(&self) -> bool {
        let mut seen = vec![false; self.frames.len()];
        for &s in self.free.iter().chain(self.fifos.iter().flatten()) {
            match seen.get_mut(s as usize) {
                Some(b) if !*b => *b = true,
                _ => return false,
            }
        }
        seen.into_iter().all(|b| b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(tag: u8) -> Entry64 {
        [tag; 64]
    }

    #[test]
    fn full_batches_and_flush() {
        let mut rb = RequestBuffer::new(2, 4);
        let mut out = Vec::new();
        for i in 0..3 {
            rb.accept(0, &frame(i), 100).unwrap();
        }
        assert_eq!(rb.schedule(4, 50, 120, |_| 64, &mut out), None);
        rb.accept(0, &frame(3), 130).unwrap();
        let s = rb.schedule(4, 50, 130, |_| 64, &mut out).unwrap();
        assert_eq!((s.flow, s.len, s.partial), (0, 4, false));
        assert_eq!(out.iter().map(|f| f[0]).collect::<Vec<_>>(), vec![0, 1, 2, 3]);

        rb.accept(1, &frame(9), 200).unwrap();
        assert_eq!(rb.schedule(4, 50, 249, |_| 64, &mut out), None);
        let s = rb.schedule(4, 50, 250, |_| 64, &mut out).unwrap();
        assert_eq!((s.flow, s.len, s.partial), (1, 1, true));
        assert!(rb.is_empty());
        assert!(rb.check_partition());
    }

    #[test]
    fn fifo_bound_and_rx_room() {
        let mut rb = RequestBuffer::new(1, 2);
        rb.accept(0, &frame(0), 0).unwrap();
        rb.accept(0, &frame(1), 0).unwrap();
        assert_eq!(rb.accept(0, &frame(2), 0), Err(AcceptError::FlowFull));
        assert_eq!(rb.accept(5, &frame(2), 0), Err(AcceptError::UnknownFlow));
        let mut out = Vec::new();
        assert_eq!(rb.schedule(2, 0, 0, |_| 1, &mut out), None);
        assert!(rb.schedule(2, 0, 0, |_| 2, &mut out).is_some());
    }

    #[test]
    fn round_robin_between_eligible_flows() {
        let mut rb = RequestBuffer::new(3, 4);
        let mut out = Vec::new();
        let mut order = Vec::new();
        for round in 0..3u8 {
            for f in 0..3 {
                rb.accept(f, &frame(round), 0).unwrap();
            }
        }
        while let Some(s) = rb.schedule(1, 0, 0, |_| 8, &mut out) {
            order.push(s.flow);
        }
        assert_eq!(order, vec![0, 1, 2, 0, 1, 2, 0, 1, 2]);
    }
}
