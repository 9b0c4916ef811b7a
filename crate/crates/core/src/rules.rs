//! Update-rule descriptors shared by the exact operator algebra and the sampler.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleKind {
    /// n-step return bootstrapping from the target policy, no correction.
    NStepUncorrected,
    /// n-step return with products of importance ratios.
    NStepImportanceWeighted,
    /// Retrace applied to the mixture target `alpha pi + (1 - alpha) mu`.
    Retrace,
    /// TreeBackup applied to the same mixture target.
    TreeBackup,
}

impl RuleKind {
    pub fn name(self) -> &'static str {
        match self {
            RuleKind::NStepUncorrected => "uncorrected",
            RuleKind::NStepImportanceWeighted => "importance",
            RuleKind::Retrace => "retrace",
            RuleKind::TreeBackup => "treebackup",
        }
    }

    pub fn is_n_step(self) -> bool {
        matches!(self, RuleKind::NStepUncorrected | RuleKind::NStepImportanceWeighted)
    }

    pub fn is_trace(self) -> bool {
        !self.is_n_step()
    }
}

/// An off-policy update rule and its parameters.
///
/// `n` is meaningful for the n-step kinds only; `alpha` and `lambda` for the
/// trace kinds only. Unused fields hold their neutral values (`n = 1`,
/// `alpha = lambda = 1`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRule {
    pub kind: RuleKind,
    pub n: usize,
    pub alpha: f64,
    pub lambda: f64,
}

impl UpdateRule {
    pub fn uncorrected(n: usize) -> Self {
        Self {
            kind: RuleKind::NStepUncorrected,
            n,
            alpha: 1.0,
            lambda: 1.0,
        }
    }

    pub fn importance(n: usize) -> Self {
        Self {
            kind: RuleKind::NStepImportanceWeighted,
            n,
            alpha: 1.0,
            lambda: 1.0,
        }
    }

    pub fn retrace(alpha: f64) -> Self {
        Self {
            kind: RuleKind::Retrace,
            n: 1,
            alpha,
            lambda: 1.0,
        }
    }

    pub fn tree_backup(alpha: f64) -> Self {
        Self {
            kind: RuleKind::TreeBackup,
            n: 1,
            alpha,
            lambda: 1.0,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::OutOfRange {
                name: "n",
                value: 0.0,
                range: "n >= 1",
            });
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::OutOfRange {
                name: "alpha",
                value: self.alpha,
                range: "[0, 1]",
            });
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::OutOfRange {
                name: "lambda",
                value: self.lambda,
                range: "[0, 1]",
            });
        }
        Ok(())
    }

    /// Rules whose operator fixed point is `Q^pi` for every MDP and policy pair.
    pub fn is_unbiased(&self) -> bool {
        match self.kind {
            RuleKind::NStepImportanceWeighted => true,
            RuleKind::Retrace | RuleKind::TreeBackup => self.alpha == 1.0,
            RuleKind::NStepUncorrected => false,
        }
    }

    /// Trace coefficient at a visited pair given target and behaviour
    /// probabilities of the observed action.
    ///
    /// Retrace: `lambda ((1 - alpha) + alpha min(1, pi/mu))`, with the clipped
    /// ratio taken as 1 when `mu = 0`. TreeBackup: `lambda pi_alpha`.
    #[inline]
    pub fn trace_coefficient(&self, pi: f64, mu: f64) -> f64 {
        match self.kind {
            RuleKind::Retrace => {
                let clipped = if mu > 0.0 { (pi / mu).min(1.0) } else { 1.0 };
                self.lambda * ((1.0 - self.alpha) + self.alpha * clipped)
            }
            RuleKind::TreeBackup => self.lambda * (self.alpha * pi + (1.0 - self.alpha) * mu),
            RuleKind::NStepUncorrected | RuleKind::NStepImportanceWeighted => 1.0,
        }
    }

    /// The parameter that distinguishes members of a family (`n` or `alpha`).
    pub fn param(&self) -> f64 {
        if self.kind.is_n_step() {
            self.n as f64
        } else {
            self.alpha
        }
    }
}

impl fmt::Display for UpdateRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            RuleKind::NStepUncorrected | RuleKind::NStepImportanceWeighted => {
                write!(f, "{}({})", self.kind.name(), self.n)
            }
            RuleKind::Retrace | RuleKind::TreeBackup => {
                if self.lambda == 1.0 {
                    write!(f, "{}({})", self.kind.name(), self.alpha)
                } else {
                    write!(f, "{}({}, {})", self.kind.name(), self.alpha, self.lambda)
                }
            }
        }
    }
}

/// Parses `uncorrected(5)`, `importance(2)`, `retrace(0.5)`,
/// `retrace(0.5, 0.9)` and `treebackup(1)`.
impl FromStr for UpdateRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::ParseRule(s.to_string());
        let s_trim = s.trim();
        let open = s_trim.find('(').ok_or_else(bad)?;
        if !s_trim.ends_with(')') {
            return Err(bad());
        }
        let name = s_trim[..open].trim().to_ascii_lowercase();
        let args: Vec<&str> = s_trim[open + 1..s_trim.len() - 1]
            .split(',')
            .map(str::trim)
            .collect();
        let rule = match (name.as_str(), args.as_slice()) {
            ("uncorrected", [n]) => UpdateRule::uncorrected(n.parse().map_err(|_| bad())?),
            ("importance", [n]) => UpdateRule::importance(n.parse().map_err(|_| bad())?),
            ("retrace", [a]) => UpdateRule::retrace(a.parse().map_err(|_| bad())?),
            ("retrace", [a, l]) => {
                UpdateRule::retrace(a.parse().map_err(|_| bad())?).with_lambda(l.parse().map_err(|_| bad())?)
            }
            ("treebackup", [a]) => UpdateRule::tree_backup(a.parse().map_err(|_| bad())?),
            ("treebackup", [a, l]) => UpdateRule::tree_backup(a.parse().map_err(|_| bad())?)
                .with_lambda(l.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        rule.validate()?;
        Ok(rule)
    }
}
