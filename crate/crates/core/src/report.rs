//! Machine-readable run reports.

use serde::Serialize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// Reported but not counted.
    Info,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    /// Threshold the worst value is compared against, if any.
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Check {
    /// Passes when `worst <= tol`.
    pub fn at_most(name: impl Into<String>, worst: f64, tol: f64) -> Self {
        Check {
            name: name.into(),
            status: if worst <= tol { Status::Pass } else { Status::Fail },
            worst,
            tol: Some(tol),
            detail: String::new(),
        }
    }

    /// Passes when `worst >= tol`.
    pub fn at_least(name: impl Into<String>, worst: f64, tol: f64) -> Self {
        Check {
            name: name.into(),
            status: if worst >= tol { Status::Pass } else { Status::Fail },
            worst,
            tol: Some(tol),
            detail: String::new(),
        }
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        Check {
            name: name.into(),
            status: if ok { Status::Pass } else { Status::Fail },
            worst: if ok { 0.0 } else { 1.0 },
            tol: None,
            detail: String::new(),
        }
    }

    pub fn info(name: impl Into<String>, value: f64) -> Self {
        Check {
            name: name.into(),
            status: Status::Info,
            worst: value,
            tol: None,
            detail: String::new(),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    pub fn failed(&self) -> bool {
        self.status == Status::Fail
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    /// SHA-256 of the inputs and flags.
    pub inputs_digest: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<serde_json::Value>,
}

impl RunReport {
    pub fn new(command: impl Into<String>, inputs_digest: impl Into<String>, seed: u64, checks: Vec<Check>) -> Self {
        let passed = checks.iter().all(|c| !c.failed());
        RunReport {
            command: command.into(),
            inputs_digest: inputs_digest.into(),
            seed,
            checks,
            passed,
            wall_time_seconds: None,
            data: None,
        }
    }

    pub fn with_data(mut self, data: serde_json::Value) -> Self {
        self.data = Some(data);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statuses() {
        assert_eq!(Check::at_most("a", 1e-10, 1e-9).status, Status::Pass);
        assert_eq!(Check::at_most("a", f64::NAN, 1e-9).status, Status::Fail);
        assert_eq!(Check::at_least("b", 0.4, 0.5).status, Status::Fail);
        let r = RunReport::new("x", "d", 1, vec![Check::info("i", 3.0), Check::flag("f", true)]);
        assert!(r.passed);
        assert!(!r.to_json().contains("wall_time"));
    }
}
