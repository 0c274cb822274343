//! Per-epoch architecture probabilities and their CSV form.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ops::Activation;
use crate::searchspace::{CandidateOp, NUM_CANDIDATES};

/// Decimal rendering with nine significant digits.
pub fn format_sig(v: f64) -> String {
    const SIG: i32 = 9;
    if v == 0.0 || !v.is_finite() {
        return format!("{:.*}", (SIG - 1) as usize, v);
    }
    let magnitude = v.abs().log10().floor() as i32;
    format!("{:.*}", (SIG - 1 - magnitude).max(0) as usize, v)
}

const HEADER: &str = "epoch,block_id,candidate_id,kernel,activation,probability";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub epoch: usize,
    pub block_id: usize,
    pub candidate_id: usize,
    pub probability: f64,
}

/// Rows ordered by epoch, block, candidate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    rows: Vec<TrajectoryRow>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends one epoch: `blocks` pairs a network block index with its
    /// probability vector.
    pub fn push_epoch(&mut self, epoch: usize, blocks: &[(usize, Vec<f64>)]) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if epoch <= last.epoch {
                return Err(Error::Config(format!("epoch {epoch} recorded after epoch {}", last.epoch)));
            }
        }
        for (block_id, probs) in blocks {
            if probs.len() != NUM_CANDIDATES {
                return Err(Error::Config(format!("{} probabilities for block {block_id}", probs.len())));
            }
            for (candidate_id, &probability) in probs.iter().enumerate() {
                self.rows.push(TrajectoryRow {
                    epoch,
                    block_id: *block_id,
                    candidate_id,
                    probability,
                });
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> &[TrajectoryRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct epochs in order.
    pub fn epochs(&self) -> Vec<usize> {
        let mut e: Vec<usize> = self.rows.iter().map(|r| r.epoch).collect();
        e.dedup();
        e
    }

    pub fn block_ids(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self.rows.iter().map(|r| r.block_id).collect();
        b.sort_unstable();
        b.dedup();
        b
    }

    /// Probability vectors of one epoch keyed by block.
    pub fn epoch_probabilities(&self, epoch: usize) -> BTreeMap<usize, Vec<f64>> {
        let mut out: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| r.epoch == epoch) {
            let v = out.entry(r.block_id).or_insert_with(|| vec![0.0; NUM_CANDIDATES]);
            v[r.candidate_id] = r.probability;
        }
        out
    }

    /// `(epoch, probabilities)` series of one block.
    pub fn block_series(&self, block_id: usize) -> Vec<(usize, Vec<f64>)> {
        let mut out: Vec<(usize, Vec<f64>)> = Vec::new();
        for r in self.rows.iter().filter(|r| r.block_id == block_id) {
            if out.last().map(|(e, _)| *e) != Some(r.epoch) {
                out.push((r.epoch, vec![0.0; NUM_CANDIDATES]));
            }
            out.last_mut().expect("pushed above").1[r.candidate_id] = r.probability;
        }
        out
    }

    /// Largest deviation of any (epoch, block) probability sum from one.
    pub fn max_sum_deviation(&self) -> f64 {
        let mut sums: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for r in &self.rows {
            *sums.entry((r.epoch, r.block_id)).or_default() += r.probability;
        }
        sums.values().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(HEADER.len() + 1 + self.rows.len() * 40);
        s.push_str(HEADER);
        s.push('\n');
        for r in &self.rows {
            let op = CandidateOp::from_id(r.candidate_id).expect("row candidate ids are valid");
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch,
                r.block_id,
                r.candidate_id,
                op.kernel,
                op.activation.name(),
                format_sig(r.probability)
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, detail: String| Error::format("trajectory csv", format!("line {line}: {detail}"));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == HEADER => {}
            other => return Err(bad(1, format!("expected header {HEADER:?}, found {:?}", other.map(|(_, h)| h)))),
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 6 {
                return Err(bad(i + 1, format!("{} fields", f.len())));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|e| bad(i + 1, format!("{s:?}: {e}")));
            let (epoch, block_id, candidate_id, kernel) = (int(f[0])?, int(f[1])?, int(f[2])?, int(f[3])?);
            let activation: Activation = f[4].parse().map_err(|_| bad(i + 1, format!("activation {:?}", f[4])))?;
            let probability: f64 = f[5].parse().map_err(|e| bad(i + 1, format!("{:?}: {e}", f[5])))?;
            let op = CandidateOp::from_id(candidate_id).ok_or_else(|| bad(i + 1, format!("candidate {candidate_id}")))?;
            if op.kernel != kernel || op.activation != activation {
                return Err(bad(i + 1, format!("candidate {candidate_id} is {}", op.label())));
            }
            rows.push(TrajectoryRow {
                epoch,
                block_id,
                candidate_id,
                probability,
            });
        }
        Ok(Trajectory { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut t = Trajectory::new();
        t.push_epoch(0, &[(13, vec![1.0 / 6.0; 6]), (14, vec![0.5, 0.1, 0.1, 0.1, 0.1, 0.1])]).unwrap();
        t.push_epoch(1, &[(13, vec![0.2, 0.2, 0.2, 0.2, 0.1, 0.1]), (14, vec![1.0 / 6.0; 6])]).unwrap();
        let csv = t.to_csv();
        assert!(csv.starts_with("epoch,block_id,candidate_id,kernel,activation,probability\n0,13,0,3,relu,"));
        let back = Trajectory::from_csv(&csv).unwrap();
        assert_eq!(back.rows().len(), 24);
        for (a, b) in back.rows().iter().zip(t.rows()) {
            assert!((a.probability - b.probability).abs() <= 1e-8 * b.probability);
        }
        assert_eq!(back.epochs(), vec![0, 1]);
        assert_eq!(back.block_series(14)[0].1[0], 0.5);
        assert!(back.max_sum_deviation() < 1e-8);
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_sig(1.0 / 6.0), "0.166666667");
        assert_eq!(format_sig(1.0), "1.00000000");
        assert_eq!(format_sig(0.0), "0.00000000");
        assert_eq!(format_sig(2.5e-5), "0.0000250000000");
        assert_eq!(format_sig(123.456), "123.456000");
    }

    #[test]
    fn rejects_mislabelled_rows() {
        let csv = format!("{HEADER}\n0,13,1,5,relu,0.5\n");
        assert!(Trajectory::from_csv(&csv).is_err());
        assert!(Trajectory::from_csv("nope\n").is_err());
    }
}
