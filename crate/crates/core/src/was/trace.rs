use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax, Tensor};

/// One epoch of per-node selection state, every tensor `n x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub omega: Tensor,
    pub kappa_norm: Tensor,
    pub kappa: Tensor,
    pub lambda: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelectionTrace {
    records: Vec<EpochRecord>,
}

impl SelectionTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: EpochRecord) {
        if let Some(first) = self.records.first() {
            assert_eq!(first.omega.shape(), record.omega.shape(), "trace records must share one shape");
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV with header `epoch,node,teacher,omega,kappa_norm,kappa,lambda`.
    pub fn write_csv(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "epoch,node,teacher,omega,kappa_norm,kappa,lambda")?;
        for r in &self.records {
            for i in 0..r.omega.rows() {
                for k in 0..r.omega.cols() {
                    writeln!(
                        out,
                        "{},{},{},{:?},{:?},{},{:?}",
                        r.epoch,
                        i,
                        k,
                        r.omega.at(i, k),
                        r.kappa_norm.at(i, k),
                        r.kappa.at(i, k) as u8,
                        r.lambda.at(i, k)
                    )?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionStats {
    /// Mean number of selected teachers per (epoch, node).
    pub avg_selected: f64,
    /// Fraction of (epoch, node) whose highest-ω teacher is selected.
    pub top1_selected_ratio: f64,
    /// Fraction of (epoch, node) where the argmax of `κ_norm` is not the
    /// argmax of ω.
    pub decoupled_ratio: f64,
}

/// Streaming accumulator behind [`SelectionStats`]; lets long runs report
/// statistics without keeping the trace.
#[derive(Debug, Clone, Default)]
pub struct SelectionCounter {
    records: usize,
    selected: f64,
    top1: usize,
    decoupled: usize,
}

impl SelectionCounter {
    pub fn add(&mut self, omega: &Tensor, kappa_norm: &Tensor, kappa: &Tensor) {
        for i in 0..omega.rows() {
            let top = argmax(omega.row(i));
            self.records += 1;
            self.selected += kappa.row(i).iter().sum::<f64>();
            if kappa.at(i, top) == 1.0 {
                self.top1 += 1;
            }
            if argmax(kappa_norm.row(i)) != top {
                self.decoupled += 1;
            }
        }
    }

    pub fn finish(&self) -> Result<SelectionStats> {
        if self.records == 0 {
            return Err(Error::invalid("selection statistics need a non-empty trace"));
        }
        let n = self.records as f64;
        Ok(SelectionStats {
            avg_selected: self.selected / n,
            top1_selected_ratio: self.top1 as f64 / n,
            decoupled_ratio: self.decoupled as f64 / n,
        })
    }
}

pub fn selection_stats(trace: &SelectionTrace) -> Result<SelectionStats> {
    let mut counter = SelectionCounter::default();
    for r in trace.records() {
        counter.add(&r.omega, &r.kappa_norm, &r.kappa);
    }
    counter.finish()
}
