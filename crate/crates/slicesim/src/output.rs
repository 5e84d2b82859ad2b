//! Result CSV, action log and plan-trace files.

use std::fmt::Write as _;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::Deserialize;
use slicesim_core::domain::{Mbps, RejectReason, SliceKind, UserId};
use slicesim_core::memory::MemoryStore;
use slicesim_core::planning::PlanTrace;
use slicesim_core::sim::{StepOutcome, StepRecord};

pub const CSV_COLUMNS: [&str; 14] = [
    "arrival_index",
    "user_id",
    "intent_class",
    "outcome",
    "slice",
    "rate_mbps",
    "rbs",
    "embb_occ",
    "urllc_occ",
    "aggregate_occ",
    "handovers_this_step",
    "embb_users",
    "urllc_users",
    "blocked_total",
];

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {msg}")]
    BadRow { row: usize, msg: String },
}

impl OutputError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        OutputError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

fn occ(x: f64) -> String {
    format!("{x:.4}")
}

/// Rounds to the four fraction digits the CSV carries.
pub fn quantize(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn outcome_cells(o: &StepOutcome) -> [String; 4] {
    match o {
        StepOutcome::Admitted { slice, rate, rbs } => [
            "admitted".into(),
            slice.to_string(),
            rate.0.to_string(),
            rbs.to_string(),
        ],
        StepOutcome::Blocked(reason) => [format!("blocked:{reason}"), String::new(), String::new(), String::new()],
    }
}

pub fn write_csv<W: Write>(steps: &[StepRecord], out: W) -> Result<(), OutputError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for s in steps {
        let [outcome, slice, rate, rbs] = outcome_cells(&s.outcome);
        w.write_record([
            s.arrival_index.to_string(),
            s.user.0.to_string(),
            s.intent_class.clone(),
            outcome,
            slice,
            rate,
            rbs,
            occ(s.embb_occ),
            occ(s.urllc_occ),
            occ(s.aggregate_occ),
            s.handovers.to_string(),
            s.embb_users.to_string(),
            s.urllc_users.to_string(),
            s.blocked_total.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn emit_csv(steps: &[StepRecord], path: &Path) -> Result<(), OutputError> {
    let file = std::fs::File::create(path).map_err(|e| OutputError::io(path, e))?;
    write_csv(steps, io::BufWriter::new(file))
}

#[derive(Deserialize)]
struct Row {
    arrival_index: u64,
    user_id: u32,
    intent_class: String,
    outcome: String,
    slice: String,
    rate_mbps: Option<u32>,
    rbs: Option<u32>,
    embb_occ: f64,
    urllc_occ: f64,
    aggregate_occ: f64,
    handovers_this_step: u32,
    embb_users: u32,
    urllc_users: u32,
    blocked_total: u32,
}

impl Row {
    fn into_step(self, row: usize) -> Result<StepRecord, OutputError> {
        let bad = |msg: String| OutputError::BadRow { row, msg };
        let outcome = if self.outcome == "admitted" {
            let slice = SliceKind::parse(&self.slice).ok_or_else(|| bad(format!("slice {:?}", self.slice)))?;
            StepOutcome::Admitted {
                slice,
                rate: Mbps(self.rate_mbps.ok_or_else(|| bad("missing rate".into()))?),
                rbs: self.rbs.ok_or_else(|| bad("missing rbs".into()))?,
            }
        } else if let Some(reason) = self.outcome.strip_prefix("blocked:") {
            StepOutcome::Blocked(RejectReason::parse(reason).ok_or_else(|| bad(format!("reason {reason:?}")))?)
        } else {
            return Err(bad(format!("outcome {:?}", self.outcome)));
        };
        Ok(StepRecord {
            arrival_index: self.arrival_index,
            user: UserId(self.user_id),
            intent_class: self.intent_class,
            outcome,
            embb_occ: self.embb_occ,
            urllc_occ: self.urllc_occ,
            aggregate_occ: self.aggregate_occ,
            handovers: self.handovers_this_step,
            moves: Vec::new(),
            embb_users: self.embb_users,
            urllc_users: self.urllc_users,
            blocked_total: self.blocked_total,
        })
    }
}

/// Reads a result CSV back. Occupancies come back at CSV precision and
/// handover moves are not recovered.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<StepRecord>, OutputError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().ne(CSV_COLUMNS) {
        return Err(OutputError::BadRow {
            row: 0,
            msg: format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    r.deserialize::<Row>()
        .enumerate()
        .map(|(i, row)| row.map_err(OutputError::from).and_then(|row| row.into_step(i + 1)))
        .collect()
}

pub fn load_csv(path: &Path) -> Result<Vec<StepRecord>, OutputError> {
    let file = std::fs::File::open(path).map_err(|e| OutputError::io(path, e))?;
    read_csv(io::BufReader::new(file))
}

/// The steps as they would read back from CSV.
pub fn csv_view(steps: &[StepRecord]) -> Vec<StepRecord> {
    steps
        .iter()
        .map(|s| StepRecord {
            embb_occ: quantize(s.embb_occ),
            urllc_occ: quantize(s.urllc_occ),
            aggregate_occ: quantize(s.aggregate_occ),
            moves: Vec::new(),
            ..s.clone()
        })
        .collect()
}

/// `arrival_index,subtask,key,digest,outcome`, oldest first.
pub fn write_action_log<W: Write>(memory: &MemoryStore, out: W) -> Result<(), OutputError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["arrival_index", "subtask", "key", "digest", "outcome"])?;
    for r in memory.log() {
        w.write_record([
            r.arrival_index.to_string(),
            r.subtask.to_string(),
            r.key.to_string(),
            r.decision_digest.clone(),
            r.outcome.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One tab-separated line per workflow step, grouped by arrival.
pub fn render_traces(traces: &[PlanTrace]) -> String {
    let mut out = String::from("arrival_index\tstep\tstate\tinput\toutput\n");
    for (i, trace) in traces.iter().enumerate() {
        for (j, step) in trace.steps.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                i + 1,
                j + 1,
                step.state,
                step.input.replace('\t', " "),
                step.output.replace('\t', " ")
            );
        }
    }
    out
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<(), OutputError> {
    std::fs::write(path, contents).map_err(|e| OutputError::io(path, e))
}
