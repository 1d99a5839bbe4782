//! Convergence comparison: how many rounds each aggregation rule needs to
//! push the global fused head past a validation target, everything else
//! held identical.

use crate::client::HeadKind;
use crate::error::{Error, Result};

use super::{
    rounds_to_target, run_blendfl_stopping, Fleet, ProtocolConfig, StopRule,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedupOutcome {
    /// Rounds the baseline rule needed, if it got there at all.
    pub rounds_baseline: Option<usize>,
    pub rounds_contender: Option<usize>,
    /// baseline rounds / contender rounds; present only when both reached
    /// the target.
    pub speedup: Option<f64>,
}

/// Runs the blended protocol twice from identical cloned state, once per
/// aggregation rule, and reports rounds-to-target for each. The two
/// configs must agree on everything except the aggregation rule.
pub fn measure_speedup(
    fleet: &Fleet,
    baseline: &ProtocolConfig,
    contender: &ProtocolConfig,
    target: f64,
    max_rounds: usize,
) -> Result<SpeedupOutcome> {
    baseline.validate()?;
    contender.validate()?;
    let mut comparable = baseline.clone();
    comparable.aggregation = contender.aggregation;
    if comparable != *contender {
        return Err(Error::Config(
            "speedup arms must differ only in the aggregation rule".to_string(),
        ));
    }
    if !target.is_finite() || target <= 0.0 || target > 1.0 {
        return Err(Error::Config(format!(
            "speedup target must lie in (0, 1], got {target}"
        )));
    }
    if max_rounds < 1 {
        return Err(Error::Config("max_rounds must be at least 1".to_string()));
    }

    let stop = StopRule {
        head: HeadKind::Multimodal,
        target,
    };
    let run_arm = |config: &ProtocolConfig| -> Result<Option<usize>> {
        let mut arm = fleet.clone();
        let mut config = config.clone();
        config.rounds = max_rounds;
        let out = run_blendfl_stopping(&mut arm, &config, Some(stop))?;
        Ok(rounds_to_target(
            &out.reports,
            HeadKind::Multimodal.label(),
            target,
        ))
    };
    let rounds_baseline = run_arm(baseline)?;
    let rounds_contender = run_arm(contender)?;
    let speedup = match (rounds_baseline, rounds_contender) {
        (Some(b), Some(c)) => Some(b as f64 / c as f64),
        _ => None,
    };
    Ok(SpeedupOutcome {
        rounds_baseline,
        rounds_contender,
        speedup,
    })
}
