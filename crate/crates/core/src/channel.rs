//! One synchronized contention epoch on a single unlicensed channel.
//!
//! All agents begin initial sensing (DIFS for Wi-Fi, ICCA for LTE) at the
//! epoch start, count down a back-off counter drawn from `[0, CW]` over 9 µs
//! slots, and transmit once. The epoch closes when every agent has finished
//! its single transmission.
//!
//! Sensing runs at 1 µs granularity. Within a back-off slot each µs is
//! judged occupied or free; the slot counts as idle when at most
//! [`SLOT_IDLE_MAX_OCCUPIED_US`] µs were judged occupied. A busy slot freezes
//! the counter. Any busy µs during initial sensing restarts the whole window.
//!
//! With `p_e = 0` (or whenever nobody transmits) sensing is deterministic, so
//! the simulator jumps from event to event instead of ticking every µs. The
//! per-µs path is kept and used whenever sensing errors make a µs random.

use rand::Rng;

use crate::config::{AgentKind, SimConfig};
use crate::error::{Error, Result};

/// A back-off slot with at most this many occupied µs is judged idle.
pub const SLOT_IDLE_MAX_OCCUPIED_US: u32 = 5;

/// Duration of one LTE sub-frame.
pub const LTE_SUBFRAME_US: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotAssessment {
    Idle,
    Busy,
}

/// Per-agent outcome of one contention epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentionResult {
    pub kind: AgentKind,
    pub cw: u32,
    /// Back-off counter drawn for this epoch.
    pub backoff_counter: u32,
    /// Time from epoch start until initial sensing completed (includes restarts).
    pub initial_sense_us: u64,
    /// Back-off slots consumed, idle and busy alike.
    pub backoff_slots: u64,
    /// From initial-sensing start to the end of back-off.
    pub wait_duration_us: u64,
    pub tx_duration_us: u64,
    pub payload_bits: u64,
    /// Bits in sub-frames / packets that did not overlap another transmission.
    pub effective_payload_bits: u64,
    /// `wait_duration_us + tx_duration_us`.
    pub total_duration_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochOutcome {
    pub results: Vec<ContentionResult>,
    /// Largest number of simultaneously transmitting agents seen in the epoch.
    pub peak_occupancy: usize,
    /// Epoch length in µs.
    pub span_us: u64,
}

/// How the simulator advances time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stepping {
    /// Jump between events whenever sensing is deterministic.
    #[default]
    EventDriven,
    /// Always tick one µs at a time.
    PerMicrosecond,
}

fn cw_index(cw: u32, cfg: &SimConfig) -> Result<usize> {
    cfg.cw_set
        .iter()
        .position(|&c| c == cw)
        .ok_or_else(|| Error::Config(format!("contention window {cw} is not in cw_set")))
}

/// Channel occupation of one transmission in µs.
pub fn occupation_time(kind: AgentKind, cw: u32, cfg: &SimConfig) -> Result<u32> {
    let idx = cw_index(cw, cfg)?;
    Ok(match kind {
        AgentKind::LteEnb => cfg.lte_occupation_ms[idx] * LTE_SUBFRAME_US,
        AgentKind::WifiAp => cfg.wifi_packet_bytes * 8 / cfg.rate_mbps,
    })
}

pub fn initial_sense_duration(kind: AgentKind, cfg: &SimConfig) -> u32 {
    match kind {
        AgentKind::LteEnb => cfg.icca_us,
        AgentKind::WifiAp => cfg.difs_us,
    }
}

pub fn backoff_slot_duration(kind: AgentKind, cfg: &SimConfig) -> u32 {
    match kind {
        AgentKind::LteEnb => cfg.ecca_slot_us,
        AgentKind::WifiAp => cfg.wifi_slot_us,
    }
}

/// Judges one µs sub-sense while `occupiers` other agents transmit.
///
/// Each occupier is independently missed with probability `p_e`; the µs is
/// judged occupied iff at least one occupier is not missed.
pub fn judge_occupied<R: Rng + ?Sized>(occupiers: usize, p_e: f64, rng: &mut R) -> bool {
    if occupiers == 0 {
        return false;
    }
    if p_e <= 0.0 {
        return true;
    }
    let mut seen = false;
    for _ in 0..occupiers {
        // draw for every occupier so the stream consumption does not depend on order
        seen |= rng.random::<f64>() >= p_e;
    }
    seen
}

/// Assesses one 9 µs back-off slot in which a single agent occupied the
/// channel for `occupied_us` µs.
pub fn assess_backoff_slot<R: Rng + ?Sized>(
    occupied_us: u32,
    p_e: f64,
    rng: &mut R,
) -> SlotAssessment {
    let judged = (0..occupied_us)
        .filter(|_| judge_occupied(1, p_e, rng))
        .count() as u32;
    if judged <= SLOT_IDLE_MAX_OCCUPIED_US {
        SlotAssessment::Idle
    } else {
        SlotAssessment::Busy
    }
}

/// Runs one epoch, drawing each agent's back-off counter uniformly from `[0, CW]`.
pub fn run_contention_epoch<R: Rng + ?Sized>(
    cfg: &SimConfig,
    kinds: &[AgentKind],
    cw_choices: &[u32],
    rng: &mut R,
) -> Result<EpochOutcome> {
    if kinds.len() != cw_choices.len() {
        return Err(Error::InvalidInput(format!(
            "{} agents but {} contention windows",
            kinds.len(),
            cw_choices.len()
        )));
    }
    let counters: Vec<u32> = cw_choices
        .iter()
        .map(|&cw| rng.random_range(0..=cw))
        .collect();
    simulate_epoch(cfg, kinds, cw_choices, &counters, Stepping::EventDriven, rng)
}

#[derive(Debug, Clone, Copy)]
enum Phase {
    Sensing { remaining: u32 },
    Backoff { counter: u32, pos: u32, occupied: u32 },
    Transmitting,
    Done,
}

#[derive(Debug)]
struct Agent {
    kind: AgentKind,
    cw: u32,
    counter: u32,
    sense_len: u32,
    slot_len: u32,
    tx_len: u32,
    phase: Phase,
    initial_sense_end: u64,
    backoff_slots: u64,
    tx_start: u64,
    tx_end: u64,
}

impl Agent {
    fn start_backoff_or_transmit(&mut self, at: u64) {
        if self.counter == 0 {
            self.begin_tx(at);
        } else {
            self.phase = Phase::Backoff {
                counter: self.counter,
                pos: 0,
                occupied: 0,
            };
        }
    }

    fn begin_tx(&mut self, at: u64) {
        self.tx_start = at;
        self.tx_end = at + u64::from(self.tx_len);
        self.phase = Phase::Transmitting;
    }

    /// µs until this agent changes phase if the channel stays as it is.
    fn time_to_event(&self, now: u64, busy: bool) -> Option<u64> {
        match self.phase {
            Phase::Done => None,
            Phase::Transmitting => Some(self.tx_end - now),
            Phase::Sensing { remaining } => (!busy).then_some(u64::from(remaining)),
            Phase::Backoff {
                counter,
                pos,
                occupied,
            } => {
                let slot = u64::from(self.slot_len);
                let rest = slot - u64::from(pos);
                if busy {
                    // A slot that turns busy late can still be judged idle;
                    // if that was the last tick the agent starts transmitting.
                    let idle_anyway = u64::from(occupied) + rest <= u64::from(SLOT_IDLE_MAX_OCCUPIED_US);
                    return (idle_anyway && counter == 1).then_some(rest);
                }
                let after_current = if occupied <= SLOT_IDLE_MAX_OCCUPIED_US {
                    counter - 1
                } else {
                    counter
                };
                Some(rest + slot * u64::from(after_current))
            }
        }
    }

    /// Advances `dt` µs during which every sensed µs is judged `busy`.
    /// `dt` never exceeds [`Agent::time_to_event`].
    fn advance(&mut self, now: u64, dt: u64, busy: bool) {
        let end = now + dt;
        match self.phase {
            Phase::Done => {}
            Phase::Transmitting => {
                if end == self.tx_end {
                    self.phase = Phase::Done;
                }
            }
            Phase::Sensing { remaining } => {
                if busy {
                    self.phase = Phase::Sensing {
                        remaining: self.sense_len,
                    };
                } else {
                    let left = u64::from(remaining) - dt;
                    if left == 0 {
                        self.initial_sense_end = end;
                        self.start_backoff_or_transmit(end);
                    } else {
                        self.phase = Phase::Sensing {
                            remaining: left as u32,
                        };
                    }
                }
            }
            Phase::Backoff {
                mut counter,
                mut pos,
                mut occupied,
            } => {
                let slot = self.slot_len;
                let b = u32::from(busy);
                let mut left = dt;
                let mut t = now;
                if u64::from(pos) + left < u64::from(slot) {
                    pos += left as u32;
                    occupied += b * left as u32;
                    self.phase = Phase::Backoff {
                        counter,
                        pos,
                        occupied,
                    };
                    return;
                }
                // finish the current slot
                let rest = slot - pos;
                occupied += b * rest;
                left -= u64::from(rest);
                t += u64::from(rest);
                self.backoff_slots += 1;
                if occupied <= SLOT_IDLE_MAX_OCCUPIED_US {
                    counter -= 1;
                }
                if counter == 0 {
                    debug_assert_eq!(left, 0);
                    self.begin_tx(t);
                    return;
                }
                // whole slots
                let full = left / u64::from(slot);
                self.backoff_slots += full;
                t += full * u64::from(slot);
                if !busy {
                    counter -= full as u32;
                    if counter == 0 {
                        debug_assert_eq!(t, end);
                        self.begin_tx(t);
                        return;
                    }
                }
                let tail = (left % u64::from(slot)) as u32;
                self.phase = Phase::Backoff {
                    counter,
                    pos: tail,
                    occupied: b * tail,
                };
            }
        }
    }
}

/// Runs one epoch with explicit back-off counters.
pub fn simulate_epoch<R: Rng + ?Sized>(
    cfg: &SimConfig,
    kinds: &[AgentKind],
    cw_choices: &[u32],
    counters: &[u32],
    stepping: Stepping,
    rng: &mut R,
) -> Result<EpochOutcome> {
    if kinds.is_empty() {
        return Err(Error::Config("contention epoch needs at least one agent".into()));
    }
    if kinds.len() != cw_choices.len() || kinds.len() != counters.len() {
        return Err(Error::InvalidInput(
            "kinds, contention windows and counters differ in length".into(),
        ));
    }
    let mut agents = Vec::with_capacity(kinds.len());
    for ((&kind, &cw), &counter) in kinds.iter().zip(cw_choices).zip(counters) {
        let tx_len = occupation_time(kind, cw, cfg)?;
        if counter > cw {
            return Err(Error::InvalidInput(format!(
                "back-off counter {counter} exceeds contention window {cw}"
            )));
        }
        let sense_len = initial_sense_duration(kind, cfg);
        agents.push(Agent {
            kind,
            cw,
            counter,
            sense_len,
            slot_len: backoff_slot_duration(kind, cfg),
            tx_len,
            phase: Phase::Sensing {
                remaining: sense_len,
            },
            initial_sense_end: 0,
            backoff_slots: 0,
            tx_start: 0,
            tx_end: 0,
        });
    }

    let p_e = cfg.sense_error_prob;
    let mut now = 0u64;
    let mut peak = 0usize;
    let mut judged = vec![false; agents.len()];
    loop {
        let occupiers = agents
            .iter()
            .filter(|a| matches!(a.phase, Phase::Transmitting))
            .count();
        peak = peak.max(occupiers);
        if agents.iter().all(|a| matches!(a.phase, Phase::Done)) {
            break;
        }
        let busy = occupiers > 0;
        let sensing = agents
            .iter()
            .any(|a| matches!(a.phase, Phase::Sensing { .. } | Phase::Backoff { .. }));
        let deterministic = p_e <= 0.0 || !busy || !sensing;

        if stepping == Stepping::EventDriven && deterministic {
            let dt = agents
                .iter()
                .filter_map(|a| a.time_to_event(now, busy))
                .min()
                .expect("a busy channel always has a transmitter that ends");
            for a in agents.iter_mut() {
                a.advance(now, dt, busy);
            }
            now += dt;
        } else {
            for (a, j) in agents.iter().zip(judged.iter_mut()) {
                *j = match a.phase {
                    Phase::Sensing { .. } | Phase::Backoff { .. } => {
                        judge_occupied(occupiers, p_e, rng)
                    }
                    _ => false,
                };
            }
            for (a, &j) in agents.iter_mut().zip(&judged) {
                a.advance(now, 1, j);
            }
            now += 1;
        }
    }

    let rate = u64::from(cfg.rate_mbps);
    let results = agents
        .iter()
        .enumerate()
        .map(|(idx, a)| {
            let unit_us = match a.kind {
                AgentKind::LteEnb => LTE_SUBFRAME_US,
                AgentKind::WifiAp => a.tx_len,
            };
            let mut effective = 0u64;
            let mut start = a.tx_start;
            while start < a.tx_end {
                let end = (start + u64::from(unit_us)).min(a.tx_end);
                let collided = agents.iter().enumerate().any(|(j, b)| {
                    j != idx && start.max(b.tx_start) < end.min(b.tx_end)
                });
                if !collided {
                    effective += (end - start) * rate;
                }
                start = end;
            }
            ContentionResult {
                kind: a.kind,
                cw: a.cw,
                backoff_counter: a.counter,
                initial_sense_us: a.initial_sense_end,
                backoff_slots: a.backoff_slots,
                wait_duration_us: a.tx_start,
                tx_duration_us: u64::from(a.tx_len),
                payload_bits: u64::from(a.tx_len) * rate,
                effective_payload_bits: effective,
                total_duration_us: a.tx_end,
            }
        })
        .collect();

    Ok(EpochOutcome {
        results,
        peak_occupancy: peak,
        span_us: now,
    })
}
