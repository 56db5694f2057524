//! Per-iteration history of a fit and its CSV form.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{GmmError, Result};

/// How an iterate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolutionChoice {
    /// The starting model; only used for the row at iteration 0.
    Initial,
    Em,
    Aa,
    EmFallbackPositivity,
    EmFallbackMonotonicity,
    FinalConservativeEm,
}

impl SolutionChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            SolutionChoice::Initial => "initial",
            SolutionChoice::Em => "em",
            SolutionChoice::Aa => "aa",
            SolutionChoice::EmFallbackPositivity => "em_fallback_positivity",
            SolutionChoice::EmFallbackMonotonicity => "em_fallback_monotonicity",
            SolutionChoice::FinalConservativeEm => "final_conservative_em",
        }
    }
}

impl fmt::Display for SolutionChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolutionChoice {
    type Err = GmmError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "initial" => SolutionChoice::Initial,
            "em" => SolutionChoice::Em,
            "aa" => SolutionChoice::Aa,
            "em_fallback_positivity" => SolutionChoice::EmFallbackPositivity,
            "em_fallback_monotonicity" => SolutionChoice::EmFallbackMonotonicity,
            "final_conservative_em" => SolutionChoice::FinalConservativeEm,
            other => return Err(GmmError::Parse(format!("unknown solution choice `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Log-likelihood for standard and line-search EM, penalized
    /// log-likelihood for the adaptive solvers.
    pub objective: f64,
    pub k_active: usize,
    pub choice: SolutionChoice,
    pub kills: usize,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitTrace {
    /// Row 0 is the starting model; the optional last row is the final
    /// conservative step.
    pub records: Vec<IterationRecord>,
    /// Solver iterations, excluding the final conservative step.
    pub iterations: usize,
    pub converged: bool,
    pub elapsed_s: f64,
    /// Set when the run aborted; the records hold the history up to then.
    pub failure: Option<String>,
}

impl FitTrace {
    pub(crate) fn start(objective: f64, k: usize) -> Self {
        Self {
            records: vec![IterationRecord { iter: 0, objective, k_active: k, choice: SolutionChoice::Initial, kills: 0, elapsed_s: 0.0 }],
            ..Self::default()
        }
    }

    pub(crate) fn push(&mut self, objective: f64, k_active: usize, choice: SolutionChoice, kills: usize, elapsed_s: f64) {
        let iter = self.records.len();
        self.records.push(IterationRecord { iter, objective, k_active, choice, kills, elapsed_s });
        if choice != SolutionChoice::FinalConservativeEm {
            self.iterations += 1;
        }
    }

    /// Objective of the last recorded iterate.
    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.objective)
    }

    /// Objective at the point of convergence, before any final conservative step.
    pub fn converged_objective(&self) -> f64 {
        self.records
            .iter()
            .rev()
            .find(|r| r.choice != SolutionChoice::FinalConservativeEm)
            .map_or(f64::NAN, |r| r.objective)
    }

    pub fn final_k(&self) -> usize {
        self.records.last().map_or(0, |r| r.k_active)
    }

    pub fn total_kills(&self) -> usize {
        self.records.iter().map(|r| r.kills).sum()
    }

    pub fn count(&self, choice: SolutionChoice) -> usize {
        self.records.iter().filter(|r| r.choice == choice).count()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    /// Writes `iter,objective,K_active,choice,kills,elapsed_s` with reals at
    /// 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["iter", "objective", "K_active", "choice", "kills", "elapsed_s"])?;
        for r in &self.records {
            wtr.write_record([
                r.iter.to_string(),
                format!("{:.16e}", r.objective),
                r.k_active.to_string(),
                r.choice.to_string(),
                r.kills.to_string(),
                format!("{:.16e}", r.elapsed_s),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads a trace written by [`Self::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["iter", "objective", "K_active", "choice", "kills", "elapsed_s"];
        if headers.iter().ne(expected.iter().copied()) {
            return Err(GmmError::Parse("trace header must be iter,objective,K_active,choice,kills,elapsed_s".into()));
        }
        let mut trace = FitTrace::default();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != expected.len() {
                return Err(GmmError::Parse(format!("trace row {} has {} fields", row + 1, rec.len())));
            }
            let num = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|_| GmmError::Parse(format!("trace row {}: bad number `{}`", row + 1, &rec[i])))
            };
            let int = |i: usize| -> Result<usize> {
                rec[i].parse::<usize>().map_err(|_| GmmError::Parse(format!("trace row {}: bad integer `{}`", row + 1, &rec[i])))
            };
            let record = IterationRecord {
                iter: int(0)?,
                objective: num(1)?,
                k_active: int(2)?,
                choice: rec[3].parse()?,
                kills: int(4)?,
                elapsed_s: num(5)?,
            };
            if let Some(prev) = trace.records.last() {
                if record.iter <= prev.iter {
                    return Err(GmmError::Parse(format!("trace row {}: iteration indices must increase", row + 1)));
                }
            }
            if !matches!(record.choice, SolutionChoice::Initial | SolutionChoice::FinalConservativeEm) {
                trace.iterations += 1;
            }
            trace.records.push(record);
        }
        trace.elapsed_s = trace.records.last().map_or(0.0, |r| r.elapsed_s);
        trace.converged = true;
        Ok(trace)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}
