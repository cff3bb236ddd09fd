//! Batch orchestration: simulate, run both endpoints, sweep, write CSVs.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, SessionConfig};
use crate::estimation::{leakage_mutual_information, security_parameter, EstimationError, Leakage};
use crate::keyrate::{decoy_rate, epcd_rate, ideal_bb84_rate, tally_yields, KeyrateError, YieldStats};
use crate::math::DomainError;
use crate::netproto::{run_loopback, write_transcript_csv, AbortReason, SessionOutcome, SessionParams};
use crate::randomness::RngSeed;
use crate::sifting::{sift_session, sweep_window, SiftError, WindowRow};
use crate::sim::logs::{write_alice_log, write_bob_log, write_truth, LogError};
use crate::sim::{simulate_session, SimOutput};
use crate::time::TimePs;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Sift(#[from] SiftError),
    #[error(transparent)]
    Keyrate(#[from] KeyrateError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineSummary {
    pub session_id: u64,
    pub n_slots: u64,
    pub duration_s: f64,
    pub raw_detections: usize,
    pub sifted_bits: usize,
    pub sift_rate_bps: f64,
    /// QBER over the whole sifted key (both logs are visible here).
    pub sifted_qber: Option<f64>,
    /// QBER estimated by the endpoints from the disclosed sample.
    pub qber: Option<f64>,
    pub disclosed_bits: usize,
    pub blocks: usize,
    pub discarded_blocks: usize,
    pub median_iterations: Option<u32>,
    /// Reconciled bits entering privacy amplification.
    pub n: usize,
    pub p: usize,
    pub s: u32,
    pub secret_bits: usize,
    pub secure_rate_bps: f64,
    pub verdict: String,
}

impl PipelineSummary {
    pub fn verified(&self) -> bool {
        self.verdict == "verified"
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub sim: SimOutput,
    pub alice: SessionOutcome,
    pub bob: SessionOutcome,
    pub summary: PipelineSummary,
}

impl PipelineRun {
    pub fn abort(&self) -> Option<AbortReason> {
        self.alice.abort.or(self.bob.abort)
    }
}

fn median(v: &[u32]) -> Option<u32> {
    let mut v = v.to_vec();
    v.sort_unstable();
    v.get(v.len() / 2).copied()
}

/// Simulates `cfg.run.n_slots` slots and runs both endpoints over an
/// in-memory stream.
pub fn run_pipeline(cfg: &SessionConfig) -> Result<PipelineRun, PipelineError> {
    cfg.validate()?;
    let sim = simulate_session(cfg, cfg.seed(), cfg.run.n_slots)?;
    let params = SessionParams::from_config(cfg);
    let (alice, bob) = run_loopback(&sim.alice_log, &sim.bob_log, &params);
    let pair = sift_session(&sim.alice_log, &sim.bob_log, &params.sync, params.t_f)?;

    let duration_s = sim.duration(cfg.source.pulse_period).as_secs_f64();
    let rep = &alice.report;
    let stats = bob.report.sift_stats.unwrap_or_default();
    let verdict = match alice.abort.or(bob.abort) {
        None if alice.verified() && bob.verified() => "verified".to_string(),
        None => "incomplete".to_string(),
        Some(r) => format!("aborted:{r}"),
    };
    let summary = PipelineSummary {
        session_id: sim.session_id,
        n_slots: cfg.run.n_slots,
        duration_s,
        raw_detections: stats.raw_detections,
        sifted_bits: bob.report.sifted_bits,
        sift_rate_bps: bob.report.sifted_bits as f64 / duration_s,
        sifted_qber: pair.qber(),
        qber: rep.estimate.map(|e| e.e_hat.value()),
        disclosed_bits: rep.estimate.map_or(0, |e| e.disclosed),
        blocks: rep.blocks,
        discarded_blocks: rep.discarded_blocks,
        median_iterations: median(&rep.iterations),
        n: rep.reconciled_bits,
        p: rep.parity_leakage,
        s: rep.security_parameter,
        secret_bits: if alice.verified() { rep.secret_bits } else { 0 },
        secure_rate_bps: if alice.verified() { rep.secret_bits as f64 / duration_s } else { 0.0 },
        verdict,
    };
    Ok(PipelineRun { sim, alice, bob, summary })
}

pub fn write_summary_csv<W: Write>(w: W, summary: &PipelineSummary) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.serialize(summary)?;
    wr.flush()?;
    Ok(())
}

/// Files written by [`write_run`], relative to the output directory.
pub const RUN_FILES: [&str; 5] = ["alice_log.csv", "bob_log.csv", "truth.csv", "transcript.csv", "summary.csv"];

pub fn write_simulation(sim: &SimOutput, out_dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_alice_log(create(&out_dir.join("alice_log.csv"))?, &sim.alice_log)?;
    write_bob_log(create(&out_dir.join("bob_log.csv"))?, &sim.bob_log)?;
    write_truth(create(&out_dir.join("truth.csv"))?, &sim.truth.slots)?;
    Ok(())
}

/// Logs, Alice's transcript and the summary.
pub fn write_run(run: &PipelineRun, out_dir: &Path) -> Result<(), PipelineError> {
    write_simulation(&run.sim, out_dir)?;
    write_transcript_csv(create(&out_dir.join("transcript.csv"))?, &run.alice.transcript)?;
    write_summary_csv(create(&out_dir.join("summary.csv"))?, &run.summary)?;
    Ok(())
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, PipelineError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(PipelineError::Usage("--jobs must be at least 1".into()));
        }
        b = b.num_threads(j);
    }
    b.build().map_err(|e| PipelineError::Usage(format!("thread pool: {e}")))
}

/// Window sweep over one simulated log pair. Windows are full acceptance
/// widths; they are sorted and deduplicated first.
pub fn sweep_windows(cfg: &SessionConfig, windows: &[TimePs], jobs: Option<usize>) -> Result<Vec<WindowRow>, PipelineError> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(PipelineError::Usage("empty window list".into()));
    }
    let mut windows = windows.to_vec();
    windows.sort_unstable();
    windows.dedup();
    let sim = simulate_session(cfg, cfg.seed(), cfg.run.n_slots)?;
    let sync = cfg.sync();
    let rows = pool(jobs)?.install(|| sweep_window(&sim.alice_log, &sim.bob_log, &sync, &windows))?;
    Ok(rows)
}

pub fn write_window_csv<W: Write>(w: W, rows: &[WindowRow]) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["window_ps", "qber", "sift_rate_bps"])?;
    for r in rows {
        let q = r.qber.map(|q| q.to_string()).unwrap_or_default();
        wr.write_record([r.window.ps().to_string(), q, r.sift_rate_bps.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MuRow {
    pub mu: f64,
    /// `Q_mu/2 * max(0, 1 - 2 H(E_mu))`, bits per pulse.
    pub bb84_rate: f64,
    pub decoy_rate: f64,
    pub epcd_rate: f64,
    #[serde(skip)]
    pub yields: YieldStats,
}

/// Seed for one sweep point; depends on the point's value, not its position.
pub fn mu_point_seed(base: RngSeed, mu: f64) -> RngSeed {
    base.child(mu.to_bits())
}

/// One simulation per `mu`, run concurrently.
pub fn sweep_mu(cfg: &SessionConfig, mus: &[f64], jobs: Option<usize>) -> Result<Vec<MuRow>, PipelineError> {
    cfg.validate()?;
    if mus.is_empty() {
        return Err(PipelineError::Usage("empty mu list".into()));
    }
    if let Some(bad) = mus.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
        return Err(PipelineError::Usage(format!("mu must be positive, got {bad}")));
    }
    let f = cfg.protocol.ec_inefficiency;
    pool(jobs)?.install(|| {
        mus.par_iter()
            .map(|&mu| {
                let mut c = cfg.clone();
                c.source.mu_signal = mu;
                c.validate()?;
                let sim = simulate_session(&c, mu_point_seed(cfg.seed(), mu), c.run.n_slots)?;
                let pair = sift_session(&sim.alice_log, &sim.bob_log, &c.sync(), c.protocol.t_f)?;
                let y = tally_yields(&sim.truth, &pair, f)?;
                let bb84 = 0.5 * y.q_mu * ideal_bb84_rate(y.e_mu).map_err(KeyrateError::from)?;
                Ok(MuRow { mu, bb84_rate: bb84, decoy_rate: decoy_rate(&y)?, epcd_rate: epcd_rate(&y)?, yields: y })
            })
            .collect()
    })
}

pub fn write_mu_csv<W: Write>(w: W, rows: &[MuRow]) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    if rows.is_empty() {
        wr.write_record(["mu", "bb84_rate", "decoy_rate", "epcd_rate"])?;
    }
    wr.flush()?;
    Ok(())
}

/// Source characterisation: one row per source parameter value `a`.
///
/// Header `a,p_a,<b_1>,...,<b_k>`; the column under `b_j` holds `p(a|b_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Characterization {
    pub labels: Vec<String>,
    pub outcomes: Vec<String>,
    pub p_a: Vec<f64>,
    /// Indexed by outcome, then by `a`.
    pub p_a_given_b: Vec<Vec<f64>>,
}

pub fn read_characterization<R: Read>(r: R) -> Result<Characterization, PipelineError> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rd.headers()?.clone();
    if header.len() < 3 || &header[0] != "a" || &header[1] != "p_a" {
        return Err(PipelineError::Usage("characterization header must be a,p_a,<outcome>,...".into()));
    }
    let outcomes: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut c = Characterization { labels: Vec::new(), outcomes, p_a: Vec::new(), p_a_given_b: vec![Vec::new(); header.len() - 2] };
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64, PipelineError> {
            rec[i].parse().map_err(|_| PipelineError::Usage(format!("row {}: column {} is not a number: {:?}", row + 1, &header[i], &rec[i])))
        };
        c.labels.push(rec[0].to_string());
        c.p_a.push(num(1)?);
        for j in 0..c.outcomes.len() {
            c.p_a_given_b[j].push(num(j + 2)?);
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeakageReport {
    pub leakage: Leakage,
    /// `None` when there is no leakage (any `s` holds).
    pub security_parameter: Option<u32>,
}

pub fn leakage_report(c: &Characterization) -> Result<LeakageReport, PipelineError> {
    let leakage = leakage_mutual_information(&c.p_a, &c.p_a_given_b)?;
    let s = match security_parameter(leakage.bits) {
        Ok(s) => Some(s),
        Err(DomainError::OutOfRange { .. }) if leakage.bits <= 0.0 => None,
        Err(e) => return Err(EstimationError::from(e).into()),
    };
    Ok(LeakageReport { leakage, security_parameter: s })
}

pub fn write_leakage_csv<W: Write>(w: W, r: &LeakageReport) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["leakage_bits", "raw", "experimental", "security_parameter"])?;
    wr.write_record([
        r.leakage.bits.to_string(),
        r.leakage.raw.to_string(),
        r.leakage.experimental.to_string(),
        r.security_parameter.map(|s| s.to_string()).unwrap_or_default(),
    ])?;
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Probability;

    fn small(n: u64) -> SessionConfig {
        let mut cfg = SessionConfig::default();
        cfg.run.n_slots = n;
        cfg
    }

    #[test]
    fn summary_is_internally_consistent() {
        let run = run_pipeline(&small(1_000_000)).unwrap();
        let s = &run.summary;
        assert!(s.verified(), "{}", s.verdict);
        let ledger = crate::pa::LeakageLedger { n: s.n, e: s.qber.unwrap(), p: s.p, s: s.s };
        let r = crate::pa::secret_length(&ledger).unwrap();
        assert_eq!(r, s.secret_bits);
        assert_eq!(s.secure_rate_bps, r as f64 / s.duration_s);
        assert_eq!(s.p, 512 * s.blocks);
    }

    #[test]
    fn zero_mu_aborts_no_detections() {
        let mut cfg = small(100_000);
        cfg.source.mu_signal = 0.0;
        let run = run_pipeline(&cfg).unwrap();
        assert_eq!(run.abort(), Some(AbortReason::NoDetections));
        assert_eq!(run.summary.verdict, "aborted:no_detections");
        assert_eq!(run.summary.secure_rate_bps, 0.0);
    }

    #[test]
    fn single_window_matches_pipeline() {
        let cfg = small(500_000);
        let rows = sweep_windows(&cfg, &[TimePs(2 * cfg.protocol.t_f.ps())], None).unwrap();
        let run = run_pipeline(&cfg).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].sift_rate_bps, run.summary.sift_rate_bps);
        assert_eq!(rows[0].qber, run.summary.sifted_qber);
    }

    #[test]
    fn noiseless_window_sweep_is_flat() {
        let mut cfg = small(300_000);
        cfg.detector.dark_rate_cps = 0.0;
        cfg.channel.background_rate_cps = 0.0;
        cfg.source.intrinsic_error = Probability::new(0.0).unwrap();
        let ws: Vec<TimePs> = [1_000, 10_000, 200_000].map(TimePs).to_vec();
        let rows = sweep_windows(&cfg, &ws, Some(2)).unwrap();
        assert!(rows.iter().all(|r| r.qber == Some(0.0)));
    }

    #[test]
    fn mu_sweep_orders_rates() {
        let cfg = small(400_000);
        let rows = sweep_mu(&cfg, &[0.14, 0.5], Some(2)).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert!(r.epcd_rate >= r.decoy_rate, "{r:?}");
        }
        assert!(rows[0].decoy_rate > 0.0);
        // per-point seeds: the same mu gives the same row wherever it sits
        let again = sweep_mu(&cfg, &[0.5], Some(1)).unwrap();
        assert_eq!(again[0], rows[1]);
    }

    #[test]
    fn sweep_usage_errors() {
        let cfg = small(1000);
        assert!(matches!(sweep_mu(&cfg, &[], None), Err(PipelineError::Usage(_))));
        assert!(matches!(sweep_mu(&cfg, &[0.0], None), Err(PipelineError::Usage(_))));
        assert!(matches!(sweep_windows(&cfg, &[], None), Err(PipelineError::Usage(_))));
        assert!(matches!(sweep_mu(&cfg, &[0.1], Some(0)), Err(PipelineError::Usage(_))));
    }

    #[test]
    fn characterization_roundtrip() {
        let text = "a,p_a,b1,b2\nH,0.5,0.5,0.5\nV,0.5,0.5,0.5\n";
        let c = read_characterization(text.as_bytes()).unwrap();
        assert_eq!(c.outcomes, ["b1", "b2"]);
        let rep = leakage_report(&c).unwrap();
        assert_eq!(rep.leakage.bits, 0.0);
        assert_eq!(rep.security_parameter, None);

        let text = "a,p_a,b1,b2\nH,0.5,0.501,0.499\nV,0.5,0.499,0.501\n";
        let rep = leakage_report(&read_characterization(text.as_bytes()).unwrap()).unwrap();
        assert!(rep.leakage.bits > 0.0 && rep.security_parameter.unwrap() > 10);
        assert!(read_characterization("x,y\n1,2\n".as_bytes()).is_err());
        assert!(read_characterization("a,p_a,b\nH,zz,1\n".as_bytes()).is_err());
    }
}
