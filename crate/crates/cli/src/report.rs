use std::fmt;
use std::path::Path;

pub const REPORT_HEADER: &str = "check,status,measured,tolerance,claim";

/// One verification outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: String,
    pub tolerance: String,
    /// The property being checked, in words.
    pub claim: String,
}

impl Check {
    pub fn new(
        name: impl Into<String>,
        passed: bool,
        measured: impl Into<String>,
        tolerance: impl Into<String>,
        claim: impl Into<String>,
    ) -> Self {
        Check {
            name: name.into(),
            passed,
            measured: measured.into(),
            tolerance: tolerance.into(),
            claim: claim.into(),
        }
    }

    pub fn status(&self) -> &'static str {
        if self.passed {
            "pass"
        } else {
            "fail"
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn extend(&mut self, other: VerificationReport) {
        self.checks.extend(other.checks);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for c in &self.checks {
            let row = [
                c.name.as_str(),
                c.status(),
                &c.measured,
                &c.tolerance,
                &c.claim,
            ]
            .map(csv_field);
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "[{}] {}: measured {} (tolerance {}); {}",
                c.status().to_uppercase(),
                c.name,
                c.measured,
                c.tolerance,
                c.claim
            )?;
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        write!(f, "{passed}/{} checks passed", self.checks.len())
    }
}
