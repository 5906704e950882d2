use std::io::Write;

use serde::{Deserialize, Serialize};

use super::ekf::GateDecision;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    MsckfPlane,
    SlamPlane,
    PlanePromotion,
    MsckfPoint,
    SlamPoint,
    PointPromotion,
}

/// One line of the update log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub time: f64,
    pub kind: UpdateKind,
    /// Track, plane or point id the update belongs to.
    pub id: u64,
    pub rows: usize,
    pub residual_norm: f64,
    pub nis: f64,
    pub threshold: f64,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl UpdateRecord {
    pub fn from_gate(time: f64, kind: UpdateKind, id: u64, residual_norm: f64, gate: &GateDecision) -> Self {
        Self {
            time,
            kind,
            id,
            rows: gate.dof,
            residual_norm,
            nis: gate.nis,
            threshold: gate.threshold,
            accepted: gate.accepted,
            note: None,
        }
    }
}

/// Appends update records as JSON lines.
pub struct DiagnosticsLog<W: Write> {
    out: W,
}

impl<W: Write> DiagnosticsLog<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, record: &UpdateRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
