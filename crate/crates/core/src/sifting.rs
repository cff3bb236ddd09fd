//! Timestamp sifting.
//!
//! Bob maps every click to the emission slot it belongs to,
//! `t_b = t_a0 + t_d + n T +/- T_f`, drops clicks outside the temporal
//! filter, drops slots where more than one detector fired, and announces
//! `(slot, basis)` for the rest. Alice answers with the subset where her
//! preparation basis matched and the pulse was a signal pulse. Bit values
//! never leave either side.
//!
//! Timestamps come from a counter running at `clock_tick`, so expected
//! arrival times are compared on the same tick grid.

use rayon::prelude::*;
use thiserror::Error;

use crate::bits::{hamming_distance, BitString};
use crate::sim::params::PulseClass;
use crate::sim::records::{DetectionEvent, PulseRecord};
use crate::states::{Basis, State};
use crate::time::TimePs;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SiftError {
    #[error("pulse period must be positive, got {0}")]
    BadPeriod(TimePs),
    #[error("filter half-width {t_f} outside [0, T/2] for T = {period}")]
    BadWindow { t_f: TimePs, period: TimePs },
    #[error("detection log not sorted at index {0}")]
    Unsorted(usize),
    #[error("window list must be ascending")]
    WindowsNotAscending,
    #[error("keep list has {got} entries for {expected} announced slots")]
    KeepListLength { expected: usize, got: usize },
}

/// Timing reference shared by both ends after the SYNC exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncParams {
    pub t_a0: TimePs,
    pub t_d: TimePs,
    pub period: TimePs,
    pub clock_tick: TimePs,
}

impl SyncParams {
    fn check(&self, t_f: TimePs) -> Result<(), SiftError> {
        check_window(self.period, t_f)
    }

    /// Expected arrival of slot `n` as the time-tagger would record it.
    pub fn expected(&self, slot: u64) -> TimePs {
        (self.t_a0 + self.t_d + self.period * slot as i64).floor_to(self.clock_tick.max(TimePs(1)))
    }

    /// Slot assignment against the tick-grid expected arrival times.
    pub fn assign(&self, t_b: TimePs, t_f: TimePs) -> SlotAssignment {
        let slot = nearest_slot(t_b - self.t_a0 - self.t_d, self.period);
        let residual = t_b - self.expected(slot);
        SlotAssignment { slot, residual, accepted: residual.abs() <= t_f }
    }
}

fn check_window(period: TimePs, t_f: TimePs) -> Result<(), SiftError> {
    if period.ps() <= 0 {
        return Err(SiftError::BadPeriod(period));
    }
    if t_f.ps() < 0 || 2 * t_f.ps() > period.ps() {
        return Err(SiftError::BadWindow { t_f, period });
    }
    Ok(())
}

/// `round(x / T)`, half away from zero, clamped at 0.
fn nearest_slot(x: TimePs, period: TimePs) -> u64 {
    let (x, t) = (x.ps() as i128, period.ps() as i128);
    let n = if x >= 0 { (2 * x + t) / (2 * t) } else { -((-2 * x + t) / (2 * t)) };
    n.max(0) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotAssignment {
    pub slot: u64,
    pub residual: TimePs,
    pub accepted: bool,
}

/// Nearest-slot assignment of one timestamp.
pub fn assign_slot(t_b: TimePs, t_a0: TimePs, t_d: TimePs, period: TimePs, t_f: TimePs) -> Result<SlotAssignment, SiftError> {
    check_window(period, t_f)?;
    let slot = nearest_slot(t_b - t_a0 - t_d, period);
    let residual = t_b - (t_a0 + t_d + period * slot as i64);
    Ok(SlotAssignment { slot, residual, accepted: residual.abs() <= t_f })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SiftStats {
    pub raw_detections: usize,
    /// Clicks inside the temporal filter.
    pub slot_matched: usize,
    pub basis_matched: usize,
    /// Slots dropped because two or more detectors fired.
    pub double_discarded: usize,
    /// Basis-matched slots excluded because the pulse was a decoy.
    pub decoy_excluded: usize,
    pub entrapped_excluded: usize,
}

/// Bob's slot-level view before the basis exchange.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BobSlots {
    /// Slots with exactly one firing detector, ascending.
    pub singles: Vec<(u64, State)>,
    /// Slots where two or more distinct detectors fired.
    pub multiples: Vec<(u64, Vec<State>)>,
    pub raw_detections: usize,
    pub slot_matched: usize,
}

impl BobSlots {
    pub fn announcement(&self) -> Vec<(u64, Basis)> {
        self.singles.iter().map(|&(s, d)| (s, d.basis())).collect()
    }
}

/// Groups accepted clicks by slot. Repeat clicks of one detector in a slot
/// count once.
pub fn bob_slots(bob_log: &[DetectionEvent], sync: &SyncParams, t_f: TimePs) -> Result<BobSlots, SiftError> {
    sync.check(t_f)?;
    if let Some(i) = bob_log.windows(2).position(|w| w[1].timestamp < w[0].timestamp) {
        return Err(SiftError::Unsorted(i + 1));
    }
    let mut out = BobSlots { raw_detections: bob_log.len(), ..Default::default() };
    let mut current: Option<(u64, Vec<State>)> = None;
    let flush = |cur: Option<(u64, Vec<State>)>, out: &mut BobSlots| {
        if let Some((slot, dets)) = cur {
            if dets.len() == 1 {
                out.singles.push((slot, dets[0]));
            } else {
                out.multiples.push((slot, dets));
            }
        }
    };
    for e in bob_log {
        let a = sync.assign(e.timestamp, t_f);
        if !a.accepted {
            continue;
        }
        out.slot_matched += 1;
        match &mut current {
            Some((slot, dets)) if *slot == a.slot => {
                if !dets.contains(&e.detector) {
                    dets.push(e.detector);
                }
            }
            _ => {
                let prev = current.replace((a.slot, vec![e.detector]));
                flush(prev, &mut out);
            }
        }
    }
    flush(current, &mut out);
    Ok(out)
}

/// Alice's answer to Bob's announcement: one flag per announced entry.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeepDecision {
    pub keep: Vec<bool>,
    pub basis_matched: usize,
    pub decoy_excluded: usize,
    pub entrapped_excluded: usize,
}

pub fn alice_keep_list(alice_log: &[PulseRecord], announced: &[(u64, Basis)]) -> KeepDecision {
    let mut d = KeepDecision { keep: Vec::with_capacity(announced.len()), ..Default::default() };
    for &(slot, basis) in announced {
        let rec = alice_log.get(slot as usize);
        let matched = rec.is_some_and(|r| r.basis() == basis);
        let keep = match rec {
            Some(r) if matched => {
                d.basis_matched += 1;
                match r.class {
                    PulseClass::Signal => true,
                    PulseClass::Decoy => {
                        d.decoy_excluded += 1;
                        false
                    }
                    PulseClass::Entrapped => {
                        d.entrapped_excluded += 1;
                        false
                    }
                }
            }
            _ => false,
        };
        d.keep.push(keep);
    }
    d
}

/// One party's sifted key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SiftView {
    pub key: BitString,
    pub slots: Vec<u64>,
    pub bases: Vec<Basis>,
    pub stats: SiftStats,
}

/// Alice's sifted key from the kept slots.
pub fn alice_view(alice_log: &[PulseRecord], announced: &[(u64, Basis)], keep: &KeepDecision, stats: SiftStats) -> SiftView {
    let mut v = SiftView { stats, ..Default::default() };
    for (&(slot, basis), &k) in announced.iter().zip(&keep.keep) {
        if k {
            v.slots.push(slot);
            v.bases.push(basis);
            v.key.push(alice_log[slot as usize].bit());
        }
    }
    v
}

/// Bob's sifted key from the kept slots.
pub fn bob_view(slots: &BobSlots, keep: &[bool], stats: SiftStats) -> Result<SiftView, SiftError> {
    if keep.len() != slots.singles.len() {
        return Err(SiftError::KeepListLength { expected: slots.singles.len(), got: keep.len() });
    }
    let mut v = SiftView { stats, ..Default::default() };
    for (&(slot, det), &k) in slots.singles.iter().zip(keep) {
        if k {
            v.slots.push(slot);
            v.bases.push(det.basis());
            v.key.push(det.bit());
        }
    }
    Ok(v)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SiftPair {
    pub alice: SiftView,
    pub bob: SiftView,
    pub session_id: Option<u64>,
    /// Slots with two or more firing detectors (input to coincidence monitoring).
    pub multiples: Vec<(u64, Vec<State>)>,
}

impl SiftPair {
    pub fn len(&self) -> usize {
        self.alice.key.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice.key.is_empty()
    }

    /// Exact error fraction between the two keys (`None` when empty).
    pub fn qber(&self) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        let d = hamming_distance(&self.alice.key, &self.bob.key).expect("views have equal length");
        Some(d as f64 / self.len() as f64)
    }
}

/// Both sides of sifting, run locally on a pair of logs.
pub fn sift_session(alice_log: &[PulseRecord], bob_log: &[DetectionEvent], sync: &SyncParams, t_f: TimePs) -> Result<SiftPair, SiftError> {
    let slots = bob_slots(bob_log, sync, t_f)?;
    let announced = slots.announcement();
    let keep = alice_keep_list(alice_log, &announced);
    let stats = SiftStats {
        raw_detections: slots.raw_detections,
        slot_matched: slots.slot_matched,
        basis_matched: keep.basis_matched,
        double_discarded: slots.multiples.len(),
        decoy_excluded: keep.decoy_excluded,
        entrapped_excluded: keep.entrapped_excluded,
    };
    let alice = alice_view(alice_log, &announced, &keep, stats);
    let bob = bob_view(&slots, &keep.keep, stats)?;
    Ok(SiftPair { alice, bob, session_id: None, multiples: slots.multiples })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowRow {
    /// Full acceptance width (2 * T_f).
    pub window: TimePs,
    pub qber: Option<f64>,
    pub sift_rate_bps: f64,
}

/// Sifts the same logs once per window.
///
/// `windows` are full acceptance widths, each at most one pulse period; a
/// window `W` filters at `T_f = W / 2`.
pub fn sweep_window(alice_log: &[PulseRecord], bob_log: &[DetectionEvent], sync: &SyncParams, windows: &[TimePs]) -> Result<Vec<WindowRow>, SiftError> {
    if windows.windows(2).any(|w| w[1] < w[0]) {
        return Err(SiftError::WindowsNotAscending);
    }
    for &w in windows {
        sync.check(TimePs(w.ps() / 2))?;
    }
    let duration = (sync.period * alice_log.len() as i64).as_secs_f64();
    windows
        .par_iter()
        .map(|&w| {
            let pair = sift_session(alice_log, bob_log, sync, TimePs(w.ps() / 2))?;
            Ok(WindowRow { window: w, qber: pair.qber(), sift_rate_bps: pair.len() as f64 / duration })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SessionConfig;
    use crate::randomness::RngSeed;
    use crate::sim::simulate_session;

    const T: TimePs = TimePs(200_000);
    const TD: TimePs = TimePs(666_000);

    #[test]
    fn assign_slot_examples() {
        let a = assign_slot(TimePs(666_000), TimePs::ZERO, TD, T, TimePs(5_000)).unwrap();
        assert_eq!((a.slot, a.residual, a.accepted), (0, TimePs(0), true));
        let a = assign_slot(TimePs(1_466_000), TimePs::ZERO, TD, T, TimePs(5_000)).unwrap();
        assert_eq!((a.slot, a.residual, a.accepted), (4, TimePs(0), true));
        let a = assign_slot(TimePs(1_479_000), TimePs::ZERO, TD, T, TimePs(5_000)).unwrap();
        assert_eq!((a.slot, a.residual, a.accepted), (4, TimePs(13_000), false));
    }

    #[test]
    fn assign_slot_rounding_and_clamp() {
        // exactly half a period rounds away from zero
        let a = assign_slot(TD + TimePs(100_000), TimePs::ZERO, TD, T, TimePs(100_000)).unwrap();
        assert_eq!((a.slot, a.residual), (1, TimePs(-100_000)));
        // before the first slot clamps to slot 0
        let a = assign_slot(TimePs(0), TimePs::ZERO, TD, T, TimePs(5_000)).unwrap();
        assert_eq!(a.slot, 0);
        assert!(!a.accepted);
    }

    #[test]
    fn assign_slot_preconditions() {
        assert!(matches!(assign_slot(TD, TimePs::ZERO, TD, TimePs(0), TimePs(0)), Err(SiftError::BadPeriod(_))));
        assert!(matches!(assign_slot(TD, TimePs::ZERO, TD, T, TimePs(100_001)), Err(SiftError::BadWindow { .. })));
        assert!(matches!(assign_slot(TD, TimePs::ZERO, TD, T, TimePs(-1)), Err(SiftError::BadWindow { .. })));
    }

    #[test]
    fn grid_assignment_matches_plain_for_unit_tick() {
        let sync = SyncParams { t_a0: TimePs(17), t_d: TD, period: T, clock_tick: TimePs(1) };
        for t in (0..3_000_000).step_by(7_919) {
            let a = sync.assign(TimePs(t), TimePs(9_000));
            let b = assign_slot(TimePs(t), TimePs(17), TD, T, TimePs(9_000)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn empty_logs_yield_empty_result() {
        let sync = SessionConfig::default().sync();
        let pair = sift_session(&[], &[], &sync, TimePs(5_000)).unwrap();
        assert!(pair.is_empty());
        assert_eq!(pair.qber(), None);
    }

    #[test]
    fn unsorted_log_rejected() {
        let sync = SessionConfig::default().sync();
        let log = [
            DetectionEvent { timestamp: TimePs(870_000), detector: State::H },
            DetectionEvent { timestamp: TimePs(670_000), detector: State::V },
        ];
        assert_eq!(sift_session(&[], &log, &sync, TimePs(5_000)).unwrap_err(), SiftError::Unsorted(1));
    }

    fn noiseless(e_opt: f64) -> SessionConfig {
        let mut cfg = SessionConfig::default();
        cfg.detector.dark_rate_cps = 0.0;
        cfg.channel.background_rate_cps = 0.0;
        cfg.source.intrinsic_error = crate::math::Probability::new(e_opt).unwrap();
        cfg
    }

    #[test]
    fn zero_error_channel_gives_identical_keys() {
        let cfg = noiseless(0.0);
        let out = simulate_session(&cfg, RngSeed(8), 200_000).unwrap();
        let pair = sift_session(&out.alice_log, &out.bob_log, &cfg.sync(), TimePs(5_000)).unwrap();
        assert!(pair.len() > 1000);
        assert_eq!(pair.alice.key, pair.bob.key);
        assert_eq!(pair.alice.slots, pair.bob.slots);
        assert!(pair.alice.slots.windows(2).all(|w| w[0] < w[1]));
    }

    /// Scans every (click, slot) pair within +/- T_f of the grid arrival time.
    fn brute_force(alice_log: &[PulseRecord], bob_log: &[DetectionEvent], sync: &SyncParams, t_f: TimePs) -> Vec<(u64, bool, bool)> {
        let mut per_slot: std::collections::BTreeMap<u64, Vec<State>> = Default::default();
        for e in bob_log {
            for r in alice_log {
                if (e.timestamp - sync.expected(r.slot)).abs() <= t_f {
                    let v = per_slot.entry(r.slot).or_default();
                    if !v.contains(&e.detector) {
                        v.push(e.detector);
                    }
                }
            }
        }
        per_slot
            .into_iter()
            .filter(|(_, d)| d.len() == 1)
            .filter(|(s, d)| alice_log[*s as usize].basis() == d[0].basis())
            .map(|(s, d)| (s, alice_log[s as usize].bit(), d[0].bit()))
            .collect()
    }

    #[test]
    fn matches_brute_force_matcher() {
        let mut cfg = noiseless(0.03);
        cfg.source.mu_signal = 1.0;
        let out = simulate_session(&cfg, RngSeed(21), 3_000).unwrap();
        let sync = cfg.sync();
        for t_f in [TimePs(0), TimePs(5_000), TimePs(20_000)] {
            let pair = sift_session(&out.alice_log, &out.bob_log, &sync, t_f).unwrap();
            let fast: Vec<_> = (0..pair.len())
                .map(|i| (pair.alice.slots[i], pair.alice.key.get(i), pair.bob.key.get(i)))
                .collect();
            assert_eq!(fast, brute_force(&out.alice_log, &out.bob_log, &sync, t_f));
        }
    }

    #[test]
    fn desynchronised_clock_matches_nothing() {
        let cfg = noiseless(0.025);
        let out = simulate_session(&cfg, RngSeed(9), 100_000).unwrap();
        let mut sync = cfg.sync();
        sync.t_d += TimePs(100_000);
        let pair = sift_session(&out.alice_log, &out.bob_log, &sync, TimePs(5_000)).unwrap();
        assert_eq!(pair.alice.stats.slot_matched, 0);
    }

    #[test]
    fn decoy_slots_excluded_and_reported() {
        let mut cfg = SessionConfig::decoy_defaults();
        cfg.detector.dark_rate_cps = 0.0;
        cfg.channel.background_rate_cps = 0.0;
        let out = simulate_session(&cfg, RngSeed(10), 200_000).unwrap();
        let pair = sift_session(&out.alice_log, &out.bob_log, &cfg.sync(), TimePs(5_000)).unwrap();
        assert!(pair.alice.stats.decoy_excluded > 0 && pair.alice.stats.entrapped_excluded > 0);
        assert!(pair.alice.slots.iter().all(|&s| out.alice_log[s as usize].class == PulseClass::Signal));
        let s = pair.alice.stats;
        assert_eq!(s.basis_matched, pair.len() + s.decoy_excluded + s.entrapped_excluded);
    }

    #[test]
    fn noiseless_window_sweep_is_flat() {
        let cfg = noiseless(0.025);
        let out = simulate_session(&cfg, RngSeed(12), 400_000).unwrap();
        let windows: Vec<TimePs> = [1, 2, 5, 10, 50, 100, 200].iter().map(|&ns| TimePs::from_ns(ns)).collect();
        let rows = sweep_window(&out.alice_log, &out.bob_log, &cfg.sync(), &windows).unwrap();
        let q0 = rows[0].qber.unwrap();
        for r in &rows {
            assert_eq!(r.qber.unwrap(), q0);
        }
        assert!((q0 - 0.025).abs() < 0.005);
    }

    #[test]
    fn sweep_rejects_bad_windows() {
        let sync = SessionConfig::default().sync();
        assert_eq!(sweep_window(&[], &[], &sync, &[TimePs(10), TimePs(5)]).unwrap_err(), SiftError::WindowsNotAscending);
        assert!(matches!(sweep_window(&[], &[], &sync, &[TimePs(300_000)]), Err(SiftError::BadWindow { .. })));
    }

    #[test]
    fn sift_rate_monotone_in_window() {
        let cfg = SessionConfig::default();
        let out = simulate_session(&cfg, RngSeed(13), 300_000).unwrap();
        let sync = cfg.sync();
        let mut prev_matched = 0;
        for tf in (0..=100_000).step_by(10_000) {
            let pair = sift_session(&out.alice_log, &out.bob_log, &sync, TimePs(tf)).unwrap();
            assert!(pair.alice.stats.slot_matched >= prev_matched);
            prev_matched = pair.alice.stats.slot_matched;
        }
    }

    #[test]
    fn key_error_rate_tracks_channel_errors() {
        let cfg = noiseless(0.04);
        let out = simulate_session(&cfg, RngSeed(14), 1_000_000).unwrap();
        let pair = sift_session(&out.alice_log, &out.bob_log, &cfg.sync(), TimePs(5_000)).unwrap();
        let n = pair.len() as f64;
        let sigma = (0.04 * 0.96 / n).sqrt();
        assert!((pair.qber().unwrap() - 0.04).abs() < 3.0 * sigma);
    }
}
