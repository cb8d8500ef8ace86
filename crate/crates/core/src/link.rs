//! Packets, age-of-information smart receivers, control-sequence buffers and
//! the delayed-measurement compensator.
//!
//! A packet's `sent_at` is the slot its content was generated (sensing slot
//! for measurements, solve slot for control sequences), so `k - sent_at` is
//! the age of the information at slot `k`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vehicle::{self, ControlInput, Measurement, State};

/// Timestamped payload travelling over a link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet<T> {
    pub payload: T,
    pub sent_at: usize,
    pub seq: u64,
}

impl<T> Packet<T> {
    pub fn new(payload: T, sent_at: usize, seq: u64) -> Self {
        Self { payload, sent_at, seq }
    }

    /// Age of the packet's information at slot `k`.
    pub fn age_at(&self, k: usize) -> usize {
        k - self.sent_at
    }
}

/// Optimal state and input sequences solved at `anchor_slot`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSequence {
    pub anchor_slot: usize,
    pub states: Vec<State>,
    pub controls: Vec<ControlInput>,
}

impl ControlSequence {
    /// Prediction horizon `N`; the sequence holds `N + 1` entries.
    pub fn horizon(&self) -> usize {
        self.controls.len().saturating_sub(1)
    }

    /// Control designated for slot `j`, if `j` falls inside the sequence.
    pub fn control_for(&self, j: usize) -> Option<ControlInput> {
        j.checked_sub(self.anchor_slot).and_then(|i| self.controls.get(i).copied())
    }
}

/// Result of one receiver slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reception {
    /// Age of the held information after this slot.
    pub tau: usize,
    /// Whether a fresher packet replaced the held one.
    pub fresh: bool,
}

/// Keeps the packet with the freshest information seen so far.
///
/// A new arrival is accepted only when its generation slot is strictly later
/// than the held one, i.e. `min delay < 1 + tau_{k-1}`. Otherwise the held
/// packet ages by one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SmartReceiver<T> {
    held_delay: usize,
    held: Option<Packet<T>>,
}

impl<T> Default for SmartReceiver<T> {
    fn default() -> Self {
        Self { held_delay: 0, held: None }
    }
}

impl<T> SmartReceiver<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Receiver holding `packet` with information age `held_delay`.
    pub fn with_held(packet: Packet<T>, held_delay: usize) -> Self {
        Self { held_delay, held: Some(packet) }
    }

    pub fn held_delay(&self) -> usize {
        self.held_delay
    }

    pub fn held(&self) -> Option<&Packet<T>> {
        self.held.as_ref()
    }

    /// Processes the packets arriving at slot `k`. Every arrival must satisfy
    /// `sent_at <= k`.
    pub fn step(&mut self, arrivals: impl IntoIterator<Item = Packet<T>>, k: usize) -> Reception {
        // Freshest arrival; equal ages resolve to the lowest sequence number.
        let best = arrivals.into_iter().fold(None::<Packet<T>>, |best, p| {
            debug_assert!(p.sent_at <= k, "packet from the future");
            match best {
                Some(b) if (b.sent_at, std::cmp::Reverse(b.seq)) >= (p.sent_at, std::cmp::Reverse(p.seq)) => Some(b),
                _ => Some(p),
            }
        });
        let aged = self.held_delay + 1;
        match best {
            Some(p) if self.held.is_none() || p.age_at(k) < aged => {
                self.held_delay = p.age_at(k);
                self.held = Some(p);
                Reception { tau: self.held_delay, fresh: true }
            }
            _ => {
                self.held_delay = aged;
                Reception { tau: aged, fresh: false }
            }
        }
    }
}

/// Control sequences keyed by solve slot, oldest evicted first.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    capacity: usize,
    entries: VecDeque<ControlSequence>,
}

impl HistoryBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), entries: VecDeque::with_capacity(capacity.max(1)) }
    }

    /// Capacity covering both link delay caps plus the horizon.
    pub fn for_links(max_delay_sc: usize, max_delay_ca: usize, horizon: usize, processing_delay: usize) -> Self {
        Self::new(max_delay_sc + max_delay_ca + horizon + processing_delay + 2)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stores a sequence, replacing any entry with the same anchor.
    pub fn insert(&mut self, seq: ControlSequence) {
        let pos = self.entries.partition_point(|e| e.anchor_slot < seq.anchor_slot);
        match self.entries.get(pos) {
            Some(e) if e.anchor_slot == seq.anchor_slot => self.entries[pos] = seq,
            _ => self.entries.insert(pos, seq),
        }
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }

    pub fn get(&self, anchor: usize) -> Option<&ControlSequence> {
        let pos = self.entries.partition_point(|e| e.anchor_slot < anchor);
        self.entries.get(pos).filter(|e| e.anchor_slot == anchor)
    }

    /// Newest sequence anchored at or before `slot`.
    pub fn latest_at_or_before(&self, slot: usize) -> Option<&ControlSequence> {
        let pos = self.entries.partition_point(|e| e.anchor_slot <= slot);
        pos.checked_sub(1).map(|i| &self.entries[i])
    }

    pub fn newest(&self) -> Option<&ControlSequence> {
        self.entries.back()
    }

    /// Control the buffered sequences designate for slot `j`: the newest
    /// sequence that could have reached the actuator by then (anchor at most
    /// `j - lag`), indexed at `j - anchor`.
    pub fn designated_control(&self, j: usize, lag: usize) -> Option<ControlInput> {
        let latest = j.checked_sub(lag)?;
        self.latest_at_or_before(latest)?.control_for(j)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no buffered control covers slot {slot}")]
pub struct CompensationUnavailable {
    pub slot: usize,
}

/// Rolls a measurement taken `tau` slots ago forward to slot `k`.
///
/// The anchor pose is the measured position with the heading the estimator
/// held at the sensing slot. It is advanced through the nominal dynamics with
/// the controls the buffer designates for each intervening slot.
pub fn compensate_measurement(
    z_delayed: Measurement,
    tau: usize,
    buffer: &HistoryBuffer,
    belief_at_send: &State,
    k: usize,
    dt: f64,
    lag: usize,
) -> Result<Measurement, CompensationUnavailable> {
    if tau == 0 {
        return Ok(z_delayed);
    }
    let start = k.checked_sub(tau).ok_or(CompensationUnavailable { slot: 0 })?;
    let (x, y) = z_delayed.position();
    let mut s = State::new(x, y, belief_at_send.theta);
    for j in start..k {
        let u = buffer.designated_control(j, lag).ok_or(CompensationUnavailable { slot: j })?;
        s = vehicle::step_unchecked(s, u, dt);
    }
    Ok(vehicle::measure(&s))
}

/// Outcome of one actuator slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Actuation {
    pub input: ControlInput,
    pub tau: usize,
    pub fresh: bool,
    /// No buffered sequence covers this slot; zero input applied.
    pub starved: bool,
}

/// Actuator-side smart receiver plus its control buffer.
#[derive(Debug, Clone)]
pub struct Actuator {
    receiver: SmartReceiver<ControlSequence>,
    buffer: HistoryBuffer,
}

impl Actuator {
    pub fn new(buffer_capacity: usize) -> Self {
        Self { receiver: SmartReceiver::new(), buffer: HistoryBuffer::new(buffer_capacity) }
    }

    pub fn receiver(&self) -> &SmartReceiver<ControlSequence> {
        &self.receiver
    }

    pub fn buffer(&self) -> &HistoryBuffer {
        &self.buffer
    }

    /// Selects the freshest sequence and applies its entry for slot `k`.
    pub fn step(&mut self, arrivals: impl IntoIterator<Item = Packet<ControlSequence>>, k: usize) -> Actuation {
        let rx = self.receiver.step(arrivals, k);
        if rx.fresh {
            if let Some(p) = self.receiver.held() {
                self.buffer.insert(p.payload.clone());
            }
        }
        let input = self.receiver.held().and_then(|p| p.payload.controls.get(rx.tau).copied());
        Actuation { input: input.unwrap_or(ControlInput::ZERO), tau: rx.tau, fresh: rx.fresh, starved: input.is_none() }
    }
}
