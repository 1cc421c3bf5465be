//! Layer-selection penalties on relaxed gates `z in [0,1]^L`.
//!
//! * `R0 = ||z||_0` (reporting only)
//! * `R1 = ||z||_1`
//! * `R2 = [||z||_0 > lambda1] * ||z||_1`
//! * `R3 = R2 + ||z (1 - z)||_1`

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegKind {
    R0,
    R1,
    R2,
    R3,
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegKind::R0 => "R0",
            RegKind::R1 => "R1",
            RegKind::R2 => "R2",
            RegKind::R3 => "R3",
        })
    }
}

impl FromStr for RegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "R0" => Ok(RegKind::R0),
            "R1" => Ok(RegKind::R1),
            "R2" => Ok(RegKind::R2),
            "R3" => Ok(RegKind::R3),
            _ => Err(Error::Config(format!("unknown regularizer {s:?} (expected R0..R3)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizerSpec {
    pub kind: RegKind,
    /// Weight of the penalty against the task loss.
    pub lambda0: f64,
    /// Target number of active layers for the sparsity gate.
    pub lambda1: usize,
}

impl RegularizerSpec {
    pub fn validate(&self, layers: usize) -> Result<()> {
        if !(self.lambda0 >= 0.0) || !self.lambda0.is_finite() {
            return Err(Error::Config(format!("lambda0 must be finite and >= 0, got {}", self.lambda0)));
        }
        if self.lambda1 > layers {
            return Err(Error::Config(format!("lambda1 {} exceeds depth {layers}", self.lambda1)));
        }
        Ok(())
    }
}

/// Count of strictly positive components.
pub fn l0(z: &[f64]) -> usize {
    z.iter().filter(|&&v| v > 0.0).count()
}

fn check_box(z: &[f64]) -> Result<()> {
    match z.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::Contract(format!("gate value {v} outside [0, 1]"))),
        None => Ok(()),
    }
}

fn l1(z: &[f64]) -> f64 {
    z.iter().sum()
}

fn binary_term(z: &[f64]) -> f64 {
    z.iter().map(|&v| v * (1.0 - v)).sum()
}

/// Whether the sparsity gate of R2/R3 is on for this `z`.
pub fn gate_active(spec: &RegularizerSpec, z: &[f64]) -> bool {
    l0(z) > spec.lambda1
}

/// Penalty value (without the `lambda0` weight).
pub fn penalty(spec: &RegularizerSpec, z: &[f64]) -> Result<f64> {
    check_box(z)?;
    let gate = if gate_active(spec, z) { 1.0 } else { 0.0 };
    Ok(match spec.kind {
        RegKind::R0 => l0(z) as f64,
        RegKind::R1 => l1(z),
        RegKind::R2 => gate * l1(z),
        RegKind::R3 => gate * l1(z) + binary_term(z),
    })
}

/// Subgradient of [`penalty`] with the gate held fixed at the current `z`.
/// The L1 part contributes only on strictly positive components.
pub fn penalty_grad(spec: &RegularizerSpec, z: &[f64]) -> Result<Vec<f64>> {
    check_box(z)?;
    let gate = gate_active(spec, z);
    let l1_part = |v: f64| if v > 0.0 { 1.0 } else { 0.0 };
    match spec.kind {
        RegKind::R0 => Err(Error::Contract("R0 is not differentiable; it is a reporting metric".into())),
        RegKind::R1 => Ok(z.iter().map(|&v| l1_part(v)).collect()),
        RegKind::R2 => Ok(z
            .iter()
            .map(|&v| if gate { l1_part(v) } else { 0.0 })
            .collect()),
        RegKind::R3 => Ok(z
            .iter()
            .map(|&v| (if gate { l1_part(v) } else { 0.0 }) + 1.0 - 2.0 * v)
            .collect()),
    }
}
