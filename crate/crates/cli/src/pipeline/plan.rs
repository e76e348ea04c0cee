//! Edge scoring and plan deduction from the calibrated generators.

use std::collections::BTreeMap;

use yoas_core::biasing::reconstruct;
use yoas_core::paths::{optimize_paths, paradigm1, paradigm2};
use yoas_core::Error as CoreError;

use super::data::{divisions, Segments};
use super::train::{all_pairs, calibration_path, CalibrationRecord};
use super::{read_json, write_json, Runner};
use crate::error::Result;

/// Scores every pair on the validation segments. The generated samples are
/// the ones the diffusion stage produced while calibrating its stop step,
/// so no generator runs again here.
pub(super) fn deduce(r: &Runner) -> Result<()> {
    let montage = r.cfg.montage.load()?;
    let segs = Segments::load(r)?;
    let mut observed: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for name in montage.names() {
        observed.insert(name.clone(), segs.val.iter().map(|&i| segs.channel(&name).map(|c| c[i].clone())).collect::<Result<_>>()?);
    }
    let mut generated: BTreeMap<(String, String), Vec<Vec<f64>>> = BTreeMap::new();
    for (s, t) in all_pairs(&montage) {
        let cal: CalibrationRecord = read_json(&calibration_path(r, &s, &t))?;
        let rows = cal
            .biases
            .iter()
            .zip(&observed[&s])
            .map(|(b, o)| reconstruct(b, o))
            .collect::<yoas_core::Result<Vec<_>>>()?;
        generated.insert((s, t), rows);
    }
    let oracle = |s: &str, t: &str| -> yoas_core::Result<Vec<Vec<f64>>> {
        generated
            .get(&(s.to_string(), t.to_string()))
            .cloned()
            .ok_or_else(|| CoreError::ModelMissing { source_channel: s.into(), target: t.into() })
    };
    let th = r.cfg.thresholds.resolve(&montage);
    let p1 = paradigm1(&montage.names(), &observed, &oracle, &montage, &th, segs.val.len())?;
    let merged = paradigm2(&divisions(r)?, &p1.edges)?;
    let plan = optimize_paths(&merged)?;
    log::info!(
        "plan: {} feasible edges, {} divisions, references {:?}",
        p1.edges.len(),
        plan.divisions.len(),
        plan.reference_set
    );
    write_json(&r.path("edges.json"), &p1)?;
    write_json(&r.path("plan.json"), &plan)
}
