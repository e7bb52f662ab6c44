//! Convergence traces: one record per solver iteration (or SAGA epoch).

use std::io;
use std::path::Path;
use std::time::{Duration, Instant};

use dynanewton_core::objective::RegularizedObjective;
use dynanewton_core::work::{Monitor, Progress};
use serde::{Deserialize, Serialize};

pub const TRACE_HEADER: &str = "epoch,time_s,train_value,subopt,test_risk,lambda,stage";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: f64,
    pub time_s: f64,
    pub train_value: f64,
    pub subopt: f64,
    pub test_risk: f64,
    pub lambda: Option<f64>,
    pub stage: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    /// First effective epoch at which the suboptimality is at most `level`.
    pub fn epochs_to(&self, level: f64) -> Option<f64> {
        self.records.iter().find(|r| r.subopt <= level).map(|r| r.epoch)
    }

    pub fn seconds_to(&self, level: f64) -> Option<f64> {
        self.records.iter().find(|r| r.subopt <= level).map(|r| r.time_s)
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)?;
        }
        if self.records.is_empty() {
            w.write_record(TRACE_HEADER.split(','))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: io::Read>(input: R) -> csv::Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let records = r.deserialize().collect::<csv::Result<Vec<TraceRecord>>>()?;
        Ok(Self { records })
    }

    pub fn read_path(path: &Path) -> csv::Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Monitor that evaluates the full training objective and the test risk at
/// every observation. Time spent recording is excluded from `time_s`.
pub struct Recorder<'a> {
    train: RegularizedObjective<'a>,
    test: Option<RegularizedObjective<'a>>,
    f_ref: f64,
    solver_time: Duration,
    resumed: Instant,
    clock: bool,
    pub trace: Trace,
}

impl<'a> Recorder<'a> {
    /// `train` is the full regularized objective; `test` is evaluated as the
    /// unregularized mean loss.
    pub fn new(train: RegularizedObjective<'a>, test: Option<RegularizedObjective<'a>>, f_ref: f64) -> Self {
        Self {
            train,
            test,
            f_ref,
            solver_time: Duration::ZERO,
            resumed: Instant::now(),
            clock: true,
            trace: Trace::default(),
        }
    }

    /// Record `time_s = 0` throughout.
    pub fn without_clock(mut self) -> Self {
        self.clock = false;
        self
    }

    /// Restart the clock, e.g. after setup work that should not count.
    pub fn start_clock(&mut self) {
        self.solver_time = Duration::ZERO;
        self.resumed = Instant::now();
    }
}

impl Monitor for Recorder<'_> {
    fn observe(&mut self, p: &Progress<'_>) {
        self.solver_time += self.resumed.elapsed();
        let train_value = self.train.value(p.x).unwrap_or(f64::INFINITY);
        let test_risk = self
            .test
            .as_ref()
            .map_or(f64::NAN, |t| t.mean_loss(p.x).unwrap_or(f64::INFINITY));
        self.trace.records.push(TraceRecord {
            epoch: p.epochs,
            time_s: if self.clock { self.solver_time.as_secs_f64() } else { 0.0 },
            train_value,
            subopt: train_value - self.f_ref,
            test_risk,
            lambda: p.lambda,
            stage: p.stage,
        });
        self.resumed = Instant::now();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Trace {
        Trace {
            records: vec![
                TraceRecord {
                    epoch: 0.0,
                    time_s: 0.0,
                    train_value: 0.69,
                    subopt: 0.3,
                    test_risk: 0.7,
                    lambda: None,
                    stage: Some(0),
                },
                TraceRecord {
                    epoch: 1.5,
                    time_s: 0.01,
                    train_value: 0.39,
                    subopt: 1e-9,
                    test_risk: 0.4,
                    lambda: Some(0.1),
                    stage: None,
                },
            ],
        }
    }

    #[test]
    fn csv_round_trip_with_header() {
        let mut buf = Vec::new();
        sample().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), TRACE_HEADER);
        assert_eq!(Trace::read_csv(buf.as_slice()).unwrap(), sample());
        let mut empty = Vec::new();
        Trace::default().write_csv(&mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().trim(), TRACE_HEADER);
    }

    #[test]
    fn level_crossings() {
        let t = sample();
        assert_eq!(t.epochs_to(1e-8), Some(1.5));
        assert_eq!(t.epochs_to(0.5), Some(0.0));
        assert_eq!(t.epochs_to(1e-12), None);
    }
}
