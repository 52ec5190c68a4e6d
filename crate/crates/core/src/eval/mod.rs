//! Detection metrics and attack evaluation.

mod metrics;
mod scenario;

pub use metrics::{average_precision, mdr, ApReport, ClassAp, MdrEntry, PrPoint, DEFAULT_MATCH_IOU};
pub use scenario::{
    detect, detect_condition, eval_offsets, evaluate_condition, ota_receive, run_scenario,
    simulated_ota_eval, spr_sweep, Condition, ConditionMetrics, MdrPair, ModelKey, ModelRole,
    OtaChannel, OtaReport, ScenarioKind, ScenarioRow, ScenarioSpec, SweepPoint,
};
