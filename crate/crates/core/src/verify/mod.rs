//! Gradient checks and the invariant suite run by `bbg check`.

mod gradcheck;
mod invariants;

pub use gradcheck::{
    check_centering_gradient, check_gradients, check_ste_layer, rel_err, GradCheckReport, GradEntry, GRAD_TOLERANCE,
};
pub use invariants::{
    centering_balance, centering_idempotence, exclusion_rule, gated_equals_bireal_at_init, packed_engine,
    quantization_levels,
};

use std::fmt;
use std::time::Instant;

use crate::error::Result;
use crate::layers::{BlockVariant, Model, ModelSpec};
use crate::quant::WeightQuant;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckOutcome {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag}  {:<34} {}", self.name, self.detail)
    }
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub checks: Vec<CheckOutcome>,
    pub elapsed_s: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let n = self.checks.iter().filter(|c| c.passed).count();
        write!(f, "{n}/{} checks passed in {:.1} s", self.checks.len(), self.elapsed_s)
    }
}

/// Tiny models (widths ≤ 8) for finite-difference checks.
pub fn gradcheck_specs() -> Vec<(String, ModelSpec)> {
    let mut out = Vec::new();
    for variant in [BlockVariant::Vanilla, BlockVariant::VanillaGated, BlockVariant::Bireal, BlockVariant::Gated] {
        for quant in [WeightQuant::Balanced, WeightQuant::Vanilla] {
            let mut spec = ModelSpec::resnet20().with_variant(variant).with_quant(quant).with_input([3, 8, 8], 4);
            spec.kernel_stage = [4, 8, 8];
            out.push((format!("resnet20 {variant} {quant}"), spec));
        }
    }
    let mut cnn = ModelSpec::basiccnn().with_input([1, 8, 8], 3);
    cnn.kernel_stage = [6, 8, 8];
    out.push(("basiccnn gated balanced".into(), cnn));
    out
}

/// Every gradient and invariant check.
pub fn run_suite(seed: u64) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut checks = Vec::new();
    for (name, spec) in gradcheck_specs() {
        let mut model = Model::new(&spec, seed)?;
        let r = check_gradients(&mut model, seed, 4)?;
        let detail = match (r.failures().first(), r.worst()) {
            (Some(e), _) => format!(
                "{} [{}]: analytic {:.6e} vs numeric {:.6e} ({} of {} failed)",
                e.param,
                e.index,
                e.analytic,
                e.numeric,
                r.failures().len(),
                r.entries.len()
            ),
            (None, Some(w)) => format!("{} coordinates, worst rel err {:.1e}", r.entries.len(), w.rel_err),
            (None, None) => "no coordinates checked".into(),
        };
        checks.push(CheckOutcome::new(format!("gradients {name}"), r.passed(), detail));
    }
    for quant in [WeightQuant::Balanced, WeightQuant::Vanilla] {
        checks.push(check_ste_layer(quant, seed)?);
    }
    checks.push(check_centering_gradient(seed)?);
    checks.push(centering_balance(seed));
    checks.push(centering_idempotence(seed));
    checks.push(quantization_levels(seed));
    checks.push(gated_equals_bireal_at_init(seed)?);
    checks.push(exclusion_rule(seed)?);
    checks.push(packed_engine(seed)?);
    Ok(SuiteReport {
        checks,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}
