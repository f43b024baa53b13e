use crate::error::{CliError, CliResult};
use detdiv_core::verify::{gradcheck_suite, CheckResult, VerifyOptions};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct GradcheckReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

pub fn gradcheck(opts: &VerifyOptions) -> CliResult<GradcheckReport> {
    let checks = gradcheck_suite(opts)?;
    Ok(GradcheckReport { passed: checks.iter().all(|c| c.passed), checks })
}

pub fn format_report(report: &GradcheckReport) -> String {
    report
        .checks
        .iter()
        .map(|c| {
            format!(
                "{:<28} {:<10} max_rel_error {:.3e} threshold {:.0e} {}",
                c.name,
                serde_json::to_value(c.group).expect("serializable").as_str().unwrap_or(""),
                c.max_rel_error,
                c.threshold,
                if c.passed { "ok" } else { "FAIL" }
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// `Err` with exit status 4 naming the failing checks.
pub fn require_pass(report: &GradcheckReport) -> CliResult<()> {
    let failing: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("gradient check failed for {}", failing.join(", "))))
    }
}
