//! Named scenario presets.

use std::fmt;
use std::str::FromStr;

use super::config::RunConfig;
use super::sweep::SweepAxis;
use super::ExperimentError;
use crate::data::Scenario;
use crate::federation::Baseline;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioPreset {
    /// H2Fed on RSU-level label skew, CSR 0.1, SCD 1 s.
    Scenario1,
    /// H2Fed on agent-level label skew, CSR 0.1, SCD 1 s.
    Scenario2,
    /// mu1 in {0, 0.001} at CSR 0.2 with mu2 = 0.
    Mu1Sweep,
    /// mu2 in {0, 0.001, 0.005} at CSR 0.1.
    Mu2Sweep,
    /// FedAvg, FedProx, HierFAVG and H2Fed at CSR 0.1, SCD 1 s.
    Baselines,
}

impl ScenarioPreset {
    pub const ALL: [ScenarioPreset; 5] =
        [ScenarioPreset::Scenario1, ScenarioPreset::Scenario2, ScenarioPreset::Mu1Sweep, ScenarioPreset::Mu2Sweep, ScenarioPreset::Baselines];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioPreset::Scenario1 => "scenario1",
            ScenarioPreset::Scenario2 => "scenario2",
            ScenarioPreset::Mu1Sweep => "mu1-sweep",
            ScenarioPreset::Mu2Sweep => "mu2-sweep",
            ScenarioPreset::Baselines => "baselines",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ScenarioPreset::Scenario1 => "h2fed, Non-IID across RSUs, csr=0.1, scd=1",
            ScenarioPreset::Scenario2 => "h2fed, Non-IID across agents, csr=0.1, scd=1",
            ScenarioPreset::Mu1Sweep => "mu1 in {0, 0.001}, mu2=0, csr=0.2, scd=1",
            ScenarioPreset::Mu2Sweep => "mu2 in {0, 0.001, 0.005}, mu1=0.001, csr=0.1, scd=1",
            ScenarioPreset::Baselines => "fedavg, fedprox, hierfavg, h2fed at csr=0.1, scd=1",
        }
    }

    /// Applies the preset's overrides to `cfg`.
    pub fn apply(self, cfg: &mut RunConfig) {
        cfg.heterogeneity.scd_seconds = 1;
        match self {
            ScenarioPreset::Scenario1 | ScenarioPreset::Scenario2 => {
                cfg.partition.scenario = if self == ScenarioPreset::Scenario1 { Scenario::ScenarioI } else { Scenario::ScenarioII };
                cfg.apply_baseline(Baseline::H2Fed);
                cfg.heterogeneity.csr = 0.1;
            }
            ScenarioPreset::Mu1Sweep => {
                cfg.apply_baseline(Baseline::H2Fed);
                cfg.federation.mu2 = 0.0;
                cfg.heterogeneity.csr = 0.2;
            }
            ScenarioPreset::Mu2Sweep => {
                cfg.apply_baseline(Baseline::H2Fed);
                cfg.heterogeneity.csr = 0.1;
            }
            ScenarioPreset::Baselines => {
                cfg.heterogeneity.csr = 0.1;
            }
        }
    }

    /// The sweep a preset implies, if any.
    pub fn sweep(self) -> Option<(SweepAxis, Vec<String>)> {
        let owned = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        match self {
            ScenarioPreset::Scenario1 | ScenarioPreset::Scenario2 => None,
            ScenarioPreset::Mu1Sweep => Some((SweepAxis::Mu1, owned(&["0", "0.001"]))),
            ScenarioPreset::Mu2Sweep => Some((SweepAxis::Mu2, owned(&["0", "0.001", "0.005"]))),
            ScenarioPreset::Baselines => Some((SweepAxis::Framework, Baseline::ALL.iter().map(|b| b.name().to_string()).collect())),
        }
    }
}

impl fmt::Display for ScenarioPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioPreset {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ExperimentError::Config(format!("unknown preset {s:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for p in ScenarioPreset::ALL {
            assert_eq!(p.name().parse::<ScenarioPreset>().unwrap(), p);
        }
        assert!("scenario3".parse::<ScenarioPreset>().is_err());
    }

    #[test]
    fn presets_set_connectivity() {
        let mut cfg = RunConfig::default();
        ScenarioPreset::Scenario2.apply(&mut cfg);
        assert_eq!(cfg.partition.scenario, Scenario::ScenarioII);
        assert_eq!((cfg.heterogeneity.csr, cfg.heterogeneity.scd_seconds), (0.1, 1));
        let mut cfg = RunConfig::default();
        ScenarioPreset::Mu1Sweep.apply(&mut cfg);
        assert_eq!((cfg.heterogeneity.csr, cfg.federation.mu2), (0.2, 0.0));
        assert_eq!(ScenarioPreset::Baselines.sweep().unwrap().1.len(), 4);
    }
}
