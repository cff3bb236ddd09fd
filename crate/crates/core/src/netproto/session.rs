//! Endpoint state machines.
//!
//! Turn order (A = Alice, B = Bob):
//!
//! ```text
//! A HELLO, B HELLO, A SYNC, B BASIS_ANNOUNCE, A KEEP_LIST, B SAMPLE_IDX,
//! A SAMPLE_BITS, B SAMPLE_BITS, B QBER_REPORT,
//! per block: A SYNDROME, B BLOCK_VERDICT,
//! A PA_PARAMS, A KEY_HASH, B VERIFY_OK
//! ```
//!
//! Either side may replace its next frame with ABORT. A side that detects a
//! failure sends ABORT (when the stream still works) and stops.

use std::io::{ErrorKind, Read, Write};
use std::time::Duration;

use crate::bits::BitString;
use crate::config::{PaSeedSource, SampleMode, SessionConfig};
use crate::ecc::{self, build_code, decode_block, BlockVerdict, LdpcCode};
use crate::estimation::{estimate_qber, select_sample, QberEstimate};
use crate::pa::{secret_length, toeplitz_hash, LeakageLedger, ToeplitzSpec};
use crate::randomness::RngSeed;
use crate::sifting::{alice_keep_list, alice_view, bob_slots, bob_view, SiftStats, SyncParams};
use crate::sim::records::{DetectionEvent, PulseRecord};
use crate::states::Basis;
use crate::time::TimePs;

use super::frame::{read_frame, write_frame, FrameError, Message, MsgType};
use super::transport::loopback_pair;
use super::{key_hash, AbortReason, Phase, Role, TranscriptEntry};

/// Everything an endpoint needs besides its log.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionParams {
    pub sync: SyncParams,
    pub t_f: TimePs,
    pub sample_fraction: f64,
    pub sample_mode: SampleMode,
    pub sample_seed: RngSeed,
    pub abort_threshold: f64,
    pub security_parameter: u32,
    pub ldpc_seed: RngSeed,
    pub max_iterations: usize,
    pub pa_seed: RngSeed,
    pub min_sifted_bits: usize,
    pub timeout: Option<Duration>,
    /// Flips one bit of this endpoint's final key (exercises hash mismatch).
    pub(crate) tamper_final_key: bool,
}

impl SessionParams {
    pub fn from_config(cfg: &SessionConfig) -> Self {
        let p = &cfg.protocol;
        let pa_seed = match p.pa_seed_source {
            PaSeedSource::Rng => cfg.seed(),
            PaSeedSource::Fixed { seed } => RngSeed(seed),
        };
        SessionParams {
            sync: cfg.sync(),
            t_f: p.t_f,
            sample_fraction: p.sample_fraction,
            sample_mode: p.sample_mode,
            sample_seed: cfg.seed(),
            abort_threshold: p.abort_threshold,
            security_parameter: p.security_parameter,
            ldpc_seed: RngSeed(p.ldpc_seed),
            max_iterations: p.ldpc_max_iterations as usize,
            pa_seed,
            min_sifted_bits: p.min_sifted_bits,
            timeout: (p.timeout_ms > 0).then(|| Duration::from_millis(p.timeout_ms)),
            tamper_final_key: false,
        }
    }
}

/// An endpoint's private input.
#[derive(Debug, Clone, Copy)]
pub enum RoleInput<'a> {
    Alice(&'a [PulseRecord]),
    Bob(&'a [DetectionEvent]),
}

/// What an endpoint learned, for reporting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionReport {
    /// Known to Bob only.
    pub sift_stats: Option<SiftStats>,
    pub sifted_bits: usize,
    pub estimate: Option<QberEstimate>,
    /// Key bits left after removing the disclosed sample.
    pub after_sample_bits: usize,
    pub blocks: usize,
    pub discarded_blocks: usize,
    pub iterations: Vec<u32>,
    pub parity_leakage: usize,
    pub reconciled_bits: usize,
    pub security_parameter: u32,
    pub secret_bits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub role: Role,
    pub phase: Phase,
    pub abort: Option<AbortReason>,
    pub final_key: Option<BitString>,
    pub reconciled_key: Option<BitString>,
    pub report: SessionReport,
    pub transcript: Vec<TranscriptEntry>,
}

impl SessionOutcome {
    pub fn verified(&self) -> bool {
        self.phase == Phase::Verified
    }
}

struct Fail {
    reason: AbortReason,
    /// Tell the peer with an ABORT frame.
    notify: bool,
}

impl Fail {
    fn local(reason: AbortReason) -> Self {
        Fail { reason, notify: true }
    }
}

struct Endpoint<S> {
    stream: S,
    role: Role,
    phase: Phase,
    transcript: Vec<TranscriptEntry>,
    report: SessionReport,
    reconciled: Option<BitString>,
}

impl<S: Read + Write> Endpoint<S> {
    fn peer(&self) -> Role {
        match self.role {
            Role::Alice => Role::Bob,
            Role::Bob => Role::Alice,
        }
    }

    fn record(&mut self, sender: Role, msg_type: MsgType, bytes: Vec<u8>) {
        let seq = self.transcript.len();
        self.transcript.push(TranscriptEntry { seq, sender, msg_type, bytes });
    }

    fn send(&mut self, msg: Message) -> Result<(), Fail> {
        let bytes = write_frame(&mut self.stream, &msg).map_err(|e| Fail { reason: io_reason(&e), notify: false })?;
        self.record(self.role, msg.msg_type(), bytes);
        Ok(())
    }

    fn recv(&mut self) -> Result<Message, Fail> {
        match read_frame(&mut self.stream) {
            Ok((msg, bytes)) => {
                self.record(self.peer(), msg.msg_type(), bytes);
                if let Message::Abort { reason } = msg {
                    return Err(Fail { reason, notify: false });
                }
                Ok(msg)
            }
            Err(FrameError::Io(e)) if matches!(e.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock) => Err(Fail::local(AbortReason::Timeout)),
            Err(FrameError::Truncated { available: 0, .. }) => Err(Fail { reason: AbortReason::ProtocolViolation, notify: false }),
            Err(e) => Err(Fail { reason: io_reason(&e), notify: true }),
        }
    }

    fn advance(&mut self, to: Phase) -> Result<(), Fail> {
        if to <= self.phase {
            return Err(Fail::local(AbortReason::ProtocolViolation));
        }
        self.phase = to;
        Ok(())
    }

    fn finish(mut self, result: Result<BitString, Fail>) -> SessionOutcome {
        let (final_key, abort) = match result {
            Ok(key) => (Some(key), None),
            Err(fail) => {
                if fail.notify {
                    // best effort: the peer may already be gone
                    let _ = self.send(Message::Abort { reason: fail.reason });
                }
                self.phase = Phase::Aborted;
                (None, Some(fail.reason))
            }
        };
        SessionOutcome {
            role: self.role,
            phase: self.phase,
            abort,
            final_key,
            reconciled_key: self.reconciled.filter(|_| abort.is_none()),
            report: self.report,
            transcript: self.transcript,
        }
    }
}

fn io_reason(e: &FrameError) -> AbortReason {
    match e {
        FrameError::Io(io) if matches!(io.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock) => AbortReason::Timeout,
        FrameError::Io(_) => AbortReason::ProtocolViolation,
        _ => AbortReason::MalformedFrame,
    }
}

fn violation() -> Fail {
    Fail::local(AbortReason::ProtocolViolation)
}

/// Runs one endpoint to completion over `stream`.
pub fn run_session<S: Read + Write>(stream: S, input: RoleInput<'_>, params: &SessionParams) -> SessionOutcome {
    let role = match input {
        RoleInput::Alice(_) => Role::Alice,
        RoleInput::Bob(_) => Role::Bob,
    };
    let mut ep = Endpoint { stream, role, phase: Phase::Idle, transcript: Vec::new(), report: SessionReport::default(), reconciled: None };
    let result = match input {
        RoleInput::Alice(log) => alice(&mut ep, log, params),
        RoleInput::Bob(log) => bob(&mut ep, log, params),
    };
    ep.finish(result)
}

pub fn run_alice<S: Read + Write>(stream: S, log: &[PulseRecord], params: &SessionParams) -> SessionOutcome {
    run_session(stream, RoleInput::Alice(log), params)
}

pub fn run_bob<S: Read + Write>(stream: S, log: &[DetectionEvent], params: &SessionParams) -> SessionOutcome {
    run_session(stream, RoleInput::Bob(log), params)
}

/// Both endpoints on threads joined by an in-memory stream.
pub fn run_loopback(alice_log: &[PulseRecord], bob_log: &[DetectionEvent], params: &SessionParams) -> (SessionOutcome, SessionOutcome) {
    let (sa, sb) = loopback_pair(params.timeout);
    std::thread::scope(|scope| {
        let a = scope.spawn(move || run_alice(sa, alice_log, params));
        let b = run_bob(sb, bob_log, params);
        (a.join().expect("alice endpoint panicked"), b)
    })
}

fn decoder_error_rate(e_hat: f64) -> f64 {
    e_hat.clamp(1e-3, 0.499)
}

fn valid_sample(indices: &[u32], n: usize) -> bool {
    indices.windows(2).all(|w| w[0] < w[1]) && indices.last().is_none_or(|&i| (i as usize) < n)
}

fn code_for(params: &SessionParams) -> Result<LdpcCode, Fail> {
    build_code(params.ldpc_seed).map_err(|_| Fail::local(AbortReason::ParameterMismatch))
}

fn finish_key(params: &SessionParams, spec: &ToeplitzSpec, reconciled: &BitString) -> BitString {
    let mut key = toeplitz_hash(spec, reconciled).expect("spec sized to the key");
    if params.tamper_final_key && !key.is_empty() {
        key.flip(0);
    }
    key
}

fn alice<S: Read + Write>(ep: &mut Endpoint<S>, log: &[PulseRecord], params: &SessionParams) -> Result<BitString, Fail> {
    ep.send(Message::Hello)?;
    let Message::Hello = ep.recv()? else { return Err(violation()) };
    let sync = params.sync;
    ep.send(Message::Sync { t_a0: sync.t_a0.ps(), t_d: sync.t_d.ps(), period: sync.period.ps(), t_f: params.t_f.ps() })?;
    ep.advance(Phase::Synced)?;

    let Message::BasisAnnounce { slots, bases } = ep.recv()? else { return Err(violation()) };
    if slots.windows(2).any(|w| w[0] >= w[1]) {
        return Err(violation());
    }
    let announced: Vec<(u64, Basis)> = slots.into_iter().zip(bases).collect();
    let decision = alice_keep_list(log, &announced);
    let view = alice_view(log, &announced, &decision, SiftStats::default());
    if view.key.len() < params.min_sifted_bits.max(1) {
        return Err(Fail::local(AbortReason::NoDetections));
    }
    ep.send(Message::KeepList { keep: BitString::from_bools(decision.keep.iter().copied()) })?;
    ep.advance(Phase::Sifted)?;
    ep.report.sifted_bits = view.key.len();

    let Message::SampleIdx { indices } = ep.recv()? else { return Err(violation()) };
    if indices.is_empty() || !valid_sample(&indices, view.key.len()) {
        return Err(violation());
    }
    let positions: Vec<usize> = indices.iter().map(|&i| i as usize).collect();
    let mine = view.key.select(&positions);
    ep.send(Message::SampleBits { bits: mine.clone() })?;
    let Message::SampleBits { bits: theirs } = ep.recv()? else { return Err(violation()) };
    if theirs.len() != mine.len() {
        return Err(violation());
    }
    let est = estimate_qber(&mine, &theirs).map_err(|_| violation())?;
    let Message::QberReport { qber } = ep.recv()? else { return Err(violation()) };
    if qber.to_bits() != est.e_hat.value().to_bits() {
        return Err(violation());
    }
    ep.report.estimate = Some(est);
    if est.e_hat.value() > params.abort_threshold {
        return Err(Fail::local(AbortReason::QberExceedsThreshold));
    }
    ep.advance(Phase::Estimated)?;

    let key = view.key.remove_sorted(&positions);
    ep.report.after_sample_bits = key.len();
    let code = code_for(params)?;
    let blocks = ecc::block_count(key.len(), code.n());
    let mut reconciled = BitString::with_capacity(key.len());
    for i in 0..blocks {
        let (block, real) = ecc::key_block(&key, i, code.n());
        let syndrome = code.syndrome(&block).expect("block sized to the code");
        ep.send(Message::Syndrome { block: i as u32, syndrome })?;
        let Message::BlockVerdict { block: id, corrected, iterations } = ep.recv()? else { return Err(violation()) };
        if id as usize != i {
            return Err(violation());
        }
        ep.report.iterations.push(iterations);
        if corrected {
            reconciled.extend_from(&block.slice(0..real).expect("real part"));
        } else {
            ep.report.discarded_blocks += 1;
        }
    }
    ep.report.blocks = blocks;
    ep.report.parity_leakage = ecc::parity_leakage(blocks);
    ep.report.reconciled_bits = reconciled.len();
    ep.advance(Phase::Reconciled)?;

    let s = params.security_parameter;
    let ledger = LeakageLedger { n: reconciled.len(), e: est.e_hat.value(), p: ep.report.parity_leakage, s };
    let r = secret_length(&ledger).map_err(|_| Fail::local(AbortReason::QberExceedsThreshold))?;
    ep.report.security_parameter = s;
    ep.report.secret_bits = r;
    if r == 0 {
        return Err(Fail::local(AbortReason::NoSecretKey));
    }
    let spec = ToeplitzSpec::random(params.pa_seed, reconciled.len(), r);
    ep.send(Message::PaParams { n: reconciled.len() as u64, r: r as u64, s: s as u64, seed: spec.seed_bits().clone() })?;
    ep.advance(Phase::Amplified)?;
    let final_key = finish_key(params, &spec, &reconciled);
    ep.reconciled = Some(reconciled);

    ep.send(Message::KeyHash { hash: key_hash(&final_key) })?;
    let Message::VerifyOk = ep.recv()? else { return Err(violation()) };
    ep.advance(Phase::Verified)?;
    Ok(final_key)
}

fn bob<S: Read + Write>(ep: &mut Endpoint<S>, log: &[DetectionEvent], params: &SessionParams) -> Result<BitString, Fail> {
    let Message::Hello = ep.recv()? else { return Err(violation()) };
    ep.send(Message::Hello)?;

    let Message::Sync { t_a0, t_d, period, t_f } = ep.recv()? else { return Err(violation()) };
    if period != params.sync.period.ps() || t_f < 0 || 2 * t_f > period {
        return Err(Fail::local(AbortReason::ParameterMismatch));
    }
    let sync = SyncParams { t_a0: TimePs(t_a0), t_d: TimePs(t_d), period: TimePs(period), clock_tick: params.sync.clock_tick };
    ep.advance(Phase::Synced)?;

    let slots = bob_slots(log, &sync, TimePs(t_f)).map_err(|_| Fail::local(AbortReason::ParameterMismatch))?;
    let announced = slots.announcement();
    ep.send(Message::BasisAnnounce { slots: announced.iter().map(|a| a.0).collect(), bases: announced.iter().map(|a| a.1).collect() })?;

    let Message::KeepList { keep } = ep.recv()? else { return Err(violation()) };
    if keep.len() != announced.len() {
        return Err(violation());
    }
    let keep: Vec<bool> = keep.iter().collect();
    let kept = keep.iter().filter(|&&k| k).count();
    let stats = SiftStats {
        raw_detections: slots.raw_detections,
        slot_matched: slots.slot_matched,
        basis_matched: kept,
        double_discarded: slots.multiples.len(),
        ..SiftStats::default()
    };
    let view = bob_view(&slots, &keep, stats).map_err(|_| violation())?;
    ep.advance(Phase::Sifted)?;
    ep.report.sift_stats = Some(stats);
    ep.report.sifted_bits = view.key.len();

    let plan = select_sample(view.key.len(), params.sample_fraction, params.sample_mode, params.sample_seed)
        .map_err(|_| Fail::local(AbortReason::ParameterMismatch))?;
    if plan.indices.is_empty() {
        return Err(Fail::local(AbortReason::NoDetections));
    }
    ep.send(Message::SampleIdx { indices: plan.indices.iter().map(|&i| i as u32).collect() })?;
    let Message::SampleBits { bits: theirs } = ep.recv()? else { return Err(violation()) };
    let mine = view.key.select(&plan.indices);
    if theirs.len() != mine.len() {
        return Err(violation());
    }
    ep.send(Message::SampleBits { bits: mine.clone() })?;
    let est = estimate_qber(&theirs, &mine).map_err(|_| violation())?;
    ep.send(Message::QberReport { qber: est.e_hat.value() })?;
    ep.report.estimate = Some(est);
    ep.advance(Phase::Estimated)?;

    let key = view.key.remove_sorted(&plan.indices);
    ep.report.after_sample_bits = key.len();
    let code = code_for(params)?;
    let blocks = ecc::block_count(key.len(), code.n());
    let e_dec = decoder_error_rate(est.e_hat.value());
    let mut reconciled = BitString::with_capacity(key.len());
    for i in 0..blocks {
        let Message::Syndrome { block: id, syndrome } = ep.recv()? else { return Err(violation()) };
        if id as usize != i || syndrome.len() != code.m() {
            return Err(violation());
        }
        let (block, real) = ecc::key_block(&key, i, code.n());
        let (fixed, verdict): (BitString, BlockVerdict) =
            decode_block(&code, &block, &syndrome, e_dec, params.max_iterations).map_err(|_| violation())?;
        ep.send(Message::BlockVerdict { block: id, corrected: verdict.is_corrected(), iterations: verdict.iterations as u32 })?;
        ep.report.iterations.push(verdict.iterations as u32);
        if verdict.is_corrected() {
            reconciled.extend_from(&fixed.slice(0..real).expect("real part"));
        } else {
            ep.report.discarded_blocks += 1;
        }
    }
    ep.report.blocks = blocks;
    ep.report.parity_leakage = ecc::parity_leakage(blocks);
    ep.report.reconciled_bits = reconciled.len();
    ep.advance(Phase::Reconciled)?;

    let Message::PaParams { n, r, s, seed } = ep.recv()? else { return Err(violation()) };
    let ledger = LeakageLedger { n: reconciled.len(), e: est.e_hat.value(), p: ep.report.parity_leakage, s: params.security_parameter };
    let expected_r = secret_length(&ledger).map_err(|_| Fail::local(AbortReason::ParameterMismatch))?;
    if n as usize != reconciled.len() || s != params.security_parameter as u64 || r as usize != expected_r || r == 0 {
        return Err(Fail::local(AbortReason::ParameterMismatch));
    }
    let spec = ToeplitzSpec::new(seed, n as usize, r as usize).map_err(|_| Fail::local(AbortReason::ParameterMismatch))?;
    ep.report.security_parameter = params.security_parameter;
    ep.report.secret_bits = expected_r;
    ep.advance(Phase::Amplified)?;
    let final_key = finish_key(params, &spec, &reconciled);
    ep.reconciled = Some(reconciled);

    let Message::KeyHash { hash } = ep.recv()? else { return Err(violation()) };
    if hash != key_hash(&final_key) {
        return Err(Fail::local(AbortReason::HashMismatch));
    }
    ep.send(Message::VerifyOk)?;
    ep.advance(Phase::Verified)?;
    Ok(final_key)
}
