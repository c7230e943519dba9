//! Evaluation report and per-frame plot data.

use std::path::Path;

use mocap_core::{MotionMap, SkeletonModel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::metrics::{pck, per_frame_mpjpe};

pub const REPORT_FORMAT: &str = "report/1";
pub const STAGES: [&str; 3] = ["init", "hybrid", "refined"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub stage: String,
    pub mpjpe_mm: f64,
    pub pck_0_5: f64,
    pub pck_0_3: f64,
    pub per_frame_mpjpe_mm: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub frames: usize,
    pub joints: usize,
    pub stages: Vec<StageMetrics>,
    /// Silhouette overlap needs mesh rasterization, which is not built.
    pub miou: String,
}

impl EvalReport {
    pub fn stage(&self, name: &str) -> Option<&StageMetrics> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: EvalReport = serde_json::from_str(text).map_err(|e| CliError::Config(format!("report: {e}")))?;
        if r.format != REPORT_FORMAT {
            return Err(CliError::Config(format!("unsupported report format {:?}", r.format)));
        }
        Ok(r)
    }

    /// One row per frame and stage: `frame,stage,mpjpe_mm`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| CliError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["frame", "stage", "mpjpe_mm"]).map_err(csv_err)?;
        for s in &self.stages {
            for (t, e) in s.per_frame_mpjpe_mm.iter().enumerate() {
                w.write_record([t.to_string(), s.stage.clone(), e.to_string()]).map_err(csv_err)?;
            }
        }
        w.flush().map_err(|e| CliError::io(path, e))
    }
}

pub fn evaluate(stages: &[(&str, &MotionMap)], gt: &MotionMap, skeleton: &SkeletonModel) -> Result<EvalReport> {
    let mut out = Vec::new();
    for &(name, motion) in stages {
        let per_frame = per_frame_mpjpe(motion, gt, skeleton)?;
        out.push(StageMetrics {
            stage: name.to_string(),
            mpjpe_mm: per_frame.iter().sum::<f64>() / per_frame.len().max(1) as f64,
            pck_0_5: pck(motion, gt, skeleton, 0.5)?,
            pck_0_3: pck(motion, gt, skeleton, 0.3)?,
            per_frame_mpjpe_mm: per_frame,
        });
    }
    Ok(EvalReport {
        format: REPORT_FORMAT.to_string(),
        frames: gt.frames(),
        joints: gt.n_joints(),
        stages: out,
        miou: "n/a".to_string(),
    })
}
