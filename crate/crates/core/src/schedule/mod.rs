//! Switching-schedule generation with grouped balanced Gray traversals.
//!
//! Appliances are partitioned once into groups; each round a balanced subset
//! of groups executes a full cyclic Gray traversal of its members' on/off
//! subcube, entered at a random rotation and direction, with the active
//! groups' events interleaved round-robin. Every event occupies its own
//! dwell slot, so consecutive events are spaced exactly `dwell_cycles`
//! apart. A full traversal flips every member an even number of times, so
//! all appliances return to OFF at the end of every round, and the balanced
//! code plus balanced group activation keep per-appliance event counts
//! uniform when the round count divides evenly.

mod gray;

pub use gray::{
    balanced_gray_code, check_balanced_cycle, check_gray_cycle, reflected_gray_code,
    GrayCodeSequence,
};

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{degenerate, format_err, param, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub n_appliances: u32,
    /// Even group width in `2..=16`; a smaller remainder group is allowed
    /// when it does not divide `n_appliances`.
    pub group_size: u32,
    pub groups_active_per_round: u32,
    pub rounds: u32,
    /// Mains cycles between consecutive events (1000 = 20 s at 50 Hz).
    pub dwell_cycles: u64,
    pub rng_seed: u64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            n_appliances: 18,
            group_size: 2,
            groups_active_per_round: 3,
            rounds: 30,
            dwell_cycles: 1000,
            rng_seed: 1,
        }
    }
}

impl ScheduleParams {
    pub fn n_groups(&self) -> u32 {
        self.n_appliances.div_ceil(self.group_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_appliances == 0 || self.n_appliances > 64 {
            return Err(param("n_appliances must be in 1..=64"));
        }
        if self.group_size < 2 || self.group_size > 16 || self.group_size % 2 != 0 {
            return Err(param("group_size must be a positive even integer in 2..=16"));
        }
        let n_groups = self.n_groups();
        if self.groups_active_per_round == 0 || self.groups_active_per_round > n_groups {
            return Err(param(format!(
                "groups_active_per_round must be in 1..={n_groups}"
            )));
        }
        if self.rounds == 0 {
            return Err(param("rounds must be positive"));
        }
        if self.dwell_cycles == 0 {
            return Err(param("dwell_cycles must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchAction {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleEvent {
    pub time_cycle: u64,
    pub appliance_id: u32,
    pub action: SwitchAction,
}

#[derive(Debug, Clone)]
pub struct EventSchedule {
    pub n_appliances: u32,
    pub dwell_cycles: u64,
    pub rng_seed: u64,
    pub params: Option<ScheduleParams>,
    pub events: Vec<ScheduleEvent>,
}

impl EventSchedule {
    /// Simulation horizon: one dwell past the last event.
    pub fn horizon_cycles(&self) -> u64 {
        self.events
            .last()
            .map(|e| e.time_cycle + self.dwell_cycles)
            .unwrap_or(self.dwell_cycles)
    }

    /// Distinct appliance-state bitmasks visited during replay, including
    /// the initial all-OFF state.
    pub fn state_set(&self) -> HashSet<u64> {
        let mut states = HashSet::new();
        let mut current = 0u64;
        states.insert(current);
        for e in &self.events {
            current ^= 1 << e.appliance_id;
            states.insert(current);
        }
        states
    }
}

fn gray_for_width(width: u32) -> Result<GrayCodeSequence> {
    if width >= 2 && width % 2 == 0 {
        balanced_gray_code(width)
    } else {
        reflected_gray_code(width)
    }
}

/// Generate a randomized, balanced switching schedule.
///
/// Randomization covers the appliance-to-group partition, the per-round
/// choice of active groups (kept balanced: activation frequencies differ by
/// at most 1), and each traversal's entry rotation and direction. The
/// per-appliance event-count multiset depends only on the parameters, not
/// the seed.
pub fn generate_schedule(params: &ScheduleParams) -> Result<EventSchedule> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let n = params.n_appliances as usize;

    let mut ids: Vec<u32> = (0..params.n_appliances).collect();
    ids.shuffle(&mut rng);
    let groups: Vec<Vec<u32>> = ids
        .chunks(params.group_size as usize)
        .map(|c| c.to_vec())
        .collect();
    let transitions: Vec<Vec<u32>> = groups
        .iter()
        .map(|g| Ok(gray_for_width(g.len() as u32)?.transitions()))
        .collect::<Result<_>>()?;

    let k = params.groups_active_per_round as usize;
    let mut activations = vec![0u32; groups.len()];
    let mut on_state = vec![false; n];
    let mut events = Vec::new();
    let mut t = params.dwell_cycles;

    for _ in 0..params.rounds {
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.shuffle(&mut rng);
        order.sort_by_key(|&g| activations[g]);
        let mut active: Vec<usize> = order[..k].to_vec();
        active.sort_unstable();

        struct Plan {
            group: usize,
            len: usize,
            rot: usize,
            reverse: bool,
        }
        let plans: Vec<Plan> = active
            .iter()
            .map(|&g| {
                let len = transitions[g].len();
                Plan {
                    group: g,
                    len,
                    rot: rng.gen_range(0..len),
                    reverse: rng.gen_bool(0.5),
                }
            })
            .collect();
        for &g in &active {
            activations[g] += 1;
        }

        let longest = plans.iter().map(|p| p.len).max().unwrap_or(0);
        for step in 0..longest {
            for plan in &plans {
                if step >= plan.len {
                    continue;
                }
                let idx = if plan.reverse {
                    (plan.rot + plan.len - 1 - step) % plan.len
                } else {
                    (plan.rot + step) % plan.len
                };
                let bit = transitions[plan.group][idx] as usize;
                let appliance_id = groups[plan.group][bit];
                let slot = appliance_id as usize;
                let action = if on_state[slot] {
                    SwitchAction::Off
                } else {
                    SwitchAction::On
                };
                on_state[slot] = !on_state[slot];
                events.push(ScheduleEvent {
                    time_cycle: t,
                    appliance_id,
                    action,
                });
                t += params.dwell_cycles;
            }
        }
    }
    debug_assert!(on_state.iter().all(|&s| !s), "round left appliances ON");

    Ok(EventSchedule {
        n_appliances: params.n_appliances,
        dwell_cycles: params.dwell_cycles,
        rng_seed: params.rng_seed,
        params: Some(params.clone()),
        events,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScheduleStats {
    pub events_total: usize,
    pub events_per_appliance: Vec<u64>,
    pub on_events: Vec<u64>,
    pub off_events: Vec<u64>,
    pub unique_states: usize,
    /// min/max per-appliance event count.
    pub event_br: f64,
    /// min/max per-appliance total ON cycles.
    pub state_br: f64,
    /// Mean over appliances of min(on,off)/max(on,off) event counts.
    pub avg_on_off_br: f64,
    pub horizon_cycles: u64,
}

/// Replay a schedule and report balance and diversity statistics.
pub fn schedule_stats(schedule: &EventSchedule) -> Result<ScheduleStats> {
    if schedule.events.is_empty() {
        return Err(degenerate("schedule has no events"));
    }
    let n = schedule.n_appliances as usize;
    let mut per_app = vec![0u64; n];
    let mut on_events = vec![0u64; n];
    let mut off_events = vec![0u64; n];
    let mut on_cycles = vec![0u64; n];
    let mut on_since = vec![None::<u64>; n];
    let mut states = HashSet::new();
    let mut current = 0u64;
    states.insert(current);
    let mut last_t = None;
    for e in &schedule.events {
        if e.appliance_id >= schedule.n_appliances {
            return Err(param(format!("appliance id {} out of range", e.appliance_id)));
        }
        if let Some(prev) = last_t {
            if e.time_cycle <= prev {
                return Err(param("event times must be strictly increasing"));
            }
        }
        last_t = Some(e.time_cycle);
        let a = e.appliance_id as usize;
        per_app[a] += 1;
        match e.action {
            SwitchAction::On => {
                on_events[a] += 1;
                on_since[a] = Some(e.time_cycle);
            }
            SwitchAction::Off => {
                off_events[a] += 1;
                if let Some(start) = on_since[a].take() {
                    on_cycles[a] += e.time_cycle - start;
                }
            }
        }
        current ^= 1 << e.appliance_id;
        states.insert(current);
    }
    let horizon = schedule.horizon_cycles();
    for a in 0..n {
        if let Some(start) = on_since[a].take() {
            on_cycles[a] += horizon - start;
        }
    }

    let ratio = |min: u64, max: u64| if max == 0 { 0.0 } else { min as f64 / max as f64 };
    let event_br = ratio(
        per_app.iter().min().copied().unwrap_or(0),
        per_app.iter().max().copied().unwrap_or(0),
    );
    let state_br = ratio(
        on_cycles.iter().min().copied().unwrap_or(0),
        on_cycles.iter().max().copied().unwrap_or(0),
    );
    let avg_on_off_br = (0..n)
        .map(|a| ratio(on_events[a].min(off_events[a]), on_events[a].max(off_events[a])))
        .sum::<f64>()
        / n as f64;

    Ok(ScheduleStats {
        events_total: schedule.events.len(),
        events_per_appliance: per_app,
        on_events,
        off_events,
        unique_states: states.len(),
        event_br,
        state_br,
        avg_on_off_br,
        horizon_cycles: horizon,
    })
}

/// Fraction of the test schedule's visited states also visited in training.
pub fn overlap_ratio(train: &EventSchedule, test: &EventSchedule) -> Result<f64> {
    if train.n_appliances != test.n_appliances {
        return Err(param("schedules cover different appliance counts"));
    }
    let train_states = train.state_set();
    let test_states = test.state_set();
    let shared = test_states.iter().filter(|s| train_states.contains(s)).count();
    Ok(shared as f64 / test_states.len() as f64)
}

// ---- JSON-lines persistence ----

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    n_appliances: u32,
    dwell_cycles: u64,
    seed: u64,
    params: Option<ScheduleParams>,
}

#[derive(Serialize, Deserialize)]
struct EventLine {
    t: u64,
    a: u32,
    op: SwitchAction,
}

/// Write a schedule as JSON lines: one header object, then one object per
/// event. Identical schedules serialize to identical bytes.
pub fn write_schedule_jsonl<W: Write>(schedule: &EventSchedule, mut out: W) -> Result<()> {
    let header = HeaderLine {
        n_appliances: schedule.n_appliances,
        dwell_cycles: schedule.dwell_cycles,
        seed: schedule.rng_seed,
        params: schedule.params.clone(),
    };
    serde_json::to_writer(&mut out, &header).map_err(|e| format_err(e.to_string()))?;
    out.write_all(b"\n")?;
    for e in &schedule.events {
        let line = EventLine {
            t: e.time_cycle,
            a: e.appliance_id,
            op: e.action,
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| format_err(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Read a schedule written by [`write_schedule_jsonl`], enforcing the
/// alternation invariant (every appliance alternates ON/OFF from OFF).
pub fn read_schedule_jsonl<R: BufRead>(reader: R) -> Result<EventSchedule> {
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| format_err("schedule file is empty"))??;
    let header: HeaderLine = serde_json::from_str(&header_line)
        .map_err(|e| format_err(format!("bad schedule header: {e}")))?;
    if header.n_appliances == 0 || header.n_appliances > 64 {
        return Err(format_err("header n_appliances out of range"));
    }
    let mut events = Vec::new();
    let mut on_state = vec![false; header.n_appliances as usize];
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let ev: EventLine = serde_json::from_str(&line)
            .map_err(|e| format_err(format!("bad event on line {}: {e}", idx + 2)))?;
        if ev.a >= header.n_appliances {
            return Err(format_err(format!("appliance id {} out of range", ev.a)));
        }
        let want_on = ev.op == SwitchAction::On;
        if on_state[ev.a as usize] == want_on {
            return Err(format_err(format!(
                "appliance {} violates ON/OFF alternation at t={}",
                ev.a, ev.t
            )));
        }
        on_state[ev.a as usize] = want_on;
        events.push(ScheduleEvent {
            time_cycle: ev.t,
            appliance_id: ev.a,
            action: ev.op,
        });
    }
    Ok(EventSchedule {
        n_appliances: header.n_appliances,
        dwell_cycles: header.dwell_cycles,
        rng_seed: header.seed,
        params: header.params,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_two_group_schedule() {
        let params = ScheduleParams {
            n_appliances: 4,
            group_size: 2,
            groups_active_per_round: 2,
            rounds: 1,
            dwell_cycles: 10,
            rng_seed: 7,
        };
        let sched = generate_schedule(&params).unwrap();
        assert_eq!(sched.events.len(), 8);
        let stats = schedule_stats(&sched).unwrap();
        assert_eq!(stats.events_per_appliance, vec![2, 2, 2, 2]);
        assert_eq!(stats.event_br, 1.0);
        for t in sched.events.windows(2) {
            assert_eq!(t[1].time_cycle - t[0].time_cycle, 10);
        }
    }

    #[test]
    fn count_multiset_is_seed_independent() {
        let mut base = ScheduleParams {
            n_appliances: 6,
            group_size: 2,
            groups_active_per_round: 2,
            rounds: 5,
            dwell_cycles: 3,
            rng_seed: 1,
        };
        let mut counts_by_seed = Vec::new();
        for seed in [1u64, 99] {
            base.rng_seed = seed;
            let stats = schedule_stats(&generate_schedule(&base).unwrap()).unwrap();
            let mut counts = stats.events_per_appliance.clone();
            counts.sort_unstable();
            counts_by_seed.push(counts);
        }
        assert_eq!(counts_by_seed[0], counts_by_seed[1]);
    }

    #[test]
    fn alternation_and_return_to_off() {
        let params = ScheduleParams {
            n_appliances: 10,
            group_size: 4,
            groups_active_per_round: 2,
            rounds: 6,
            dwell_cycles: 5,
            rng_seed: 42,
        };
        let sched = generate_schedule(&params).unwrap();
        let mut on = vec![false; 10];
        for e in &sched.events {
            let s = e.appliance_id as usize;
            match e.action {
                SwitchAction::On => assert!(!on[s]),
                SwitchAction::Off => assert!(on[s]),
            }
            on[s] = !on[s];
        }
        assert!(on.iter().all(|&x| !x));
        let stats = schedule_stats(&sched).unwrap();
        assert_eq!(stats.on_events, stats.off_events);
    }

    #[test]
    fn activation_balance_within_one() {
        // 5 groups, 2 active per round, 7 rounds: 14 activations over 5
        // groups can differ by at most 1.
        let params = ScheduleParams {
            n_appliances: 10,
            group_size: 2,
            groups_active_per_round: 2,
            rounds: 7,
            dwell_cycles: 2,
            rng_seed: 3,
        };
        let sched = generate_schedule(&params).unwrap();
        let stats = schedule_stats(&sched).unwrap();
        // Each activation of a 2-appliance group contributes 2 events per
        // appliance, so per-appliance event counts differ by at most 2.
        let min = stats.events_per_appliance.iter().min().unwrap();
        let max = stats.events_per_appliance.iter().max().unwrap();
        assert!(max - min <= 2, "counts {:?}", stats.events_per_appliance);
    }

    #[test]
    fn jsonl_round_trip_is_byte_identical() {
        let sched = generate_schedule(&ScheduleParams::default()).unwrap();
        let mut buf = Vec::new();
        write_schedule_jsonl(&sched, &mut buf).unwrap();
        let loaded = read_schedule_jsonl(&buf[..]).unwrap();
        let mut buf2 = Vec::new();
        write_schedule_jsonl(&loaded, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn read_rejects_alternation_violation() {
        let text = concat!(
            "{\"n_appliances\":2,\"dwell_cycles\":5,\"seed\":0,\"params\":null}\n",
            "{\"t\":5,\"a\":0,\"op\":\"on\"}\n",
            "{\"t\":10,\"a\":0,\"op\":\"on\"}\n",
        );
        let err = read_schedule_jsonl(text.as_bytes()).unwrap_err();
        assert!(matches!(err, crate::HawkError::Format(_)));
    }

    #[test]
    fn empty_schedule_stats_is_degenerate() {
        let sched = EventSchedule {
            n_appliances: 3,
            dwell_cycles: 10,
            rng_seed: 0,
            params: None,
            events: vec![],
        };
        assert!(matches!(
            schedule_stats(&sched),
            Err(crate::HawkError::Degenerate(_))
        ));
    }

    #[test]
    fn overlap_is_a_fraction() {
        let mut params = ScheduleParams::default();
        params.rounds = 6;
        params.dwell_cycles = 2;
        let train = generate_schedule(&params).unwrap();
        params.rng_seed = 77;
        let test = generate_schedule(&params).unwrap();
        let r = overlap_ratio(&train, &test).unwrap();
        assert!((0.0..=1.0).contains(&r));
    }
}
