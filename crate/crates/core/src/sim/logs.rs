//! CSV event-log files.
//!
//! | file        | columns                                         |
//! |-------------|-------------------------------------------------|
//! | Alice log   | `slot,state,basis,bit,class,emitted_photons`    |
//! | Bob log     | `timestamp_ps,detector`                         |
//! | ground truth| `slot,class,emitted_photons,detected_photons`   |

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::states::{Basis, State};
use crate::time::TimePs;

use super::params::PulseClass;
use super::records::{DetectionEvent, PulseRecord, SlotTruth};

#[derive(Debug, Error)]
pub enum LogError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("row {row}: {message}")]
    Inconsistent { row: usize, message: String },
}

#[derive(Serialize, Deserialize)]
struct AliceRow {
    slot: u64,
    state: State,
    basis: Basis,
    bit: u8,
    class: PulseClass,
    emitted_photons: u32,
}

#[derive(Serialize, Deserialize)]
struct BobRow {
    timestamp_ps: i64,
    detector: State,
}

#[derive(Serialize, Deserialize)]
struct TruthRow {
    slot: u64,
    class: PulseClass,
    emitted_photons: u32,
    detected_photons: u32,
}

fn write_rows<W: Write, T: Serialize>(w: W, rows: impl Iterator<Item = T>) -> Result<(), LogError> {
    let mut wr = csv::Writer::from_writer(w);
    for row in rows {
        wr.serialize(row)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_alice_log<W: Write>(w: W, log: &[PulseRecord]) -> Result<(), LogError> {
    write_rows(
        w,
        log.iter().map(|r| AliceRow {
            slot: r.slot,
            state: r.state,
            basis: r.basis(),
            bit: r.bit() as u8,
            class: r.class,
            emitted_photons: r.emitted_photons,
        }),
    )
}

/// Reads an Alice log, checking that the basis and bit columns agree with
/// the state column.
pub fn read_alice_log<R: Read>(r: R) -> Result<Vec<PulseRecord>, LogError> {
    let mut out = Vec::new();
    for (i, row) in csv::Reader::from_reader(r).deserialize::<AliceRow>().enumerate() {
        let row = row?;
        if row.bit > 1 || State::new(row.basis, row.bit == 1) != row.state {
            return Err(LogError::Inconsistent { row: i + 1, message: format!("state {} does not match basis/bit", row.state) });
        }
        out.push(PulseRecord { slot: row.slot, state: row.state, class: row.class, emitted_photons: row.emitted_photons });
    }
    Ok(out)
}

pub fn write_bob_log<W: Write>(w: W, log: &[DetectionEvent]) -> Result<(), LogError> {
    write_rows(w, log.iter().map(|e| BobRow { timestamp_ps: e.timestamp.ps(), detector: e.detector }))
}

pub fn read_bob_log<R: Read>(r: R) -> Result<Vec<DetectionEvent>, LogError> {
    csv::Reader::from_reader(r)
        .deserialize::<BobRow>()
        .map(|row| {
            let row = row?;
            Ok(DetectionEvent { timestamp: TimePs(row.timestamp_ps), detector: row.detector })
        })
        .collect()
}

pub fn write_truth<W: Write>(w: W, slots: &[SlotTruth]) -> Result<(), LogError> {
    write_rows(
        w,
        slots.iter().enumerate().map(|(i, s)| TruthRow {
            slot: i as u64,
            class: s.class,
            emitted_photons: s.emitted_photons,
            detected_photons: s.detected_photons,
        }),
    )
}

pub fn read_truth<R: Read>(r: R) -> Result<Vec<SlotTruth>, LogError> {
    let mut out = Vec::new();
    for (i, row) in csv::Reader::from_reader(r).deserialize::<TruthRow>().enumerate() {
        let row = row?;
        if row.slot != i as u64 {
            return Err(LogError::Inconsistent { row: i + 1, message: format!("expected slot {i}, found {}", row.slot) });
        }
        out.push(SlotTruth { class: row.class, emitted_photons: row.emitted_photons, detected_photons: row.detected_photons });
    }
    Ok(out)
}
