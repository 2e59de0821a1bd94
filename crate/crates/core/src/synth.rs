//! Seeded synthetic multi-source populations.
//!
//! Each source is a mixture of subgroups; each subgroup has its own weight,
//! base rate and class-conditional Gaussian feature means with a shared
//! isotropic spread. Sample `i` of source `s` is drawn from its own counter
//! stream keyed by `(seed, s)`, so sources are independent of one another and
//! a smaller draw is always a prefix of a larger one.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{DataSet, LabeledSample, SourceRegistry};
use crate::error::{AuditError, Result};
use crate::seeding::{self, Label};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSpec {
    pub name: String,
    pub weight: f64,
    pub base_rate: f64,
    pub mean_0: Vec<f64>,
    pub mean_1: Vec<f64>,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub name: String,
    pub subgroups: Vec<SubgroupSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub feature_dim: usize,
    pub seed: u64,
    pub sources: Vec<SourceSpec>,
}

const WEIGHT_TOL: f64 = 1e-9;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(AuditError::domain("feature_dim must be positive"));
        }
        let mut names = std::collections::HashSet::new();
        for src in &self.sources {
            if !names.insert(src.name.as_str()) {
                return Err(AuditError::domain(format!("duplicate source `{}`", src.name)));
            }
            if src.subgroups.is_empty() {
                return Err(AuditError::domain(format!("source `{}` has no subgroups", src.name)));
            }
            let total: f64 = src.subgroups.iter().map(|g| g.weight).sum();
            if (total - 1.0).abs() > WEIGHT_TOL {
                return Err(AuditError::domain(format!(
                    "subgroup weights of `{}` sum to {total}, expected 1",
                    src.name
                )));
            }
            for g in &src.subgroups {
                let ctx = format!("{}/{}", src.name, g.name);
                if !(g.weight > 0.0 && g.weight <= 1.0) {
                    return Err(AuditError::domain(format!("{ctx}: weight must be in (0, 1]")));
                }
                if !(0.0..=1.0).contains(&g.base_rate) {
                    return Err(AuditError::domain(format!("{ctx}: base_rate must be in [0, 1]")));
                }
                if !(g.scale > 0.0 && g.scale.is_finite()) {
                    return Err(AuditError::domain(format!("{ctx}: scale must be positive")));
                }
                if g.mean_0.len() != self.feature_dim || g.mean_1.len() != self.feature_dim {
                    return Err(AuditError::domain(format!(
                        "{ctx}: class means must have dimension {}",
                        self.feature_dim
                    )));
                }
                if g.mean_0.iter().chain(&g.mean_1).any(|v| !v.is_finite()) {
                    return Err(AuditError::domain(format!("{ctx}: class means must be finite")));
                }
            }
        }
        Ok(())
    }

    pub fn source(&self, token: &str) -> Option<&SourceSpec> {
        self.sources.iter().find(|s| s.name == token)
    }
}

/// Draws `n` samples of `source`. Per sample the subgroup is chosen by weight,
/// then the label, then the features; the label draw never depends on means.
pub fn generate_source(spec: &SyntheticSpec, source: &str, n: usize) -> Result<DataSet> {
    spec.validate()?;
    let src = spec
        .source(source)
        .ok_or_else(|| AuditError::domain(format!("unknown synthetic source `{source}`")))?;
    if n == 0 {
        return Err(AuditError::domain(format!("source `{source}`: sample count must be at least 1")));
    }
    let d = spec.feature_dim;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = seeding::counter_stream(spec.seed, &[Label::Str("synth"), Label::Str(source)], i as u64);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut group = &src.subgroups[src.subgroups.len() - 1];
        for g in &src.subgroups {
            acc += g.weight;
            if u < acc {
                group = g;
                break;
            }
        }
        let label = u8::from(rng.random::<f64>() < group.base_rate);
        let mean = if label == 1 { &group.mean_1 } else { &group.mean_0 };
        let features = (0..d)
            .map(|j| {
                let z: f64 = rng.sample(StandardNormal);
                mean[j] + group.scale * z
            })
            .collect();
        samples.push(LabeledSample {
            features,
            label,
            subgroup: group.name.clone(),
            source: source.to_string(),
        });
    }
    DataSet::new(samples, d)
}

/// Generates every source listed in `sizes`, in that order.
pub fn generate_registry(spec: &SyntheticSpec, sizes: &[(String, usize)]) -> Result<SourceRegistry> {
    let mut registry = SourceRegistry::new();
    for (token, n) in sizes {
        registry.insert(token.clone(), generate_source(spec, token, *n)?)?;
    }
    Ok(registry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::subgroup_ratio;
    use crate::ingest::registry_summary;

    fn group(name: &str, weight: f64, base_rate: f64, shift: f64) -> SubgroupSpec {
        SubgroupSpec {
            name: name.into(),
            weight,
            base_rate,
            mean_0: vec![shift, 0.0],
            mean_1: vec![shift + 1.0, 0.5],
            scale: 1.0,
        }
    }

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            feature_dim: 2,
            seed: 17,
            sources: vec![
                SourceSpec {
                    name: "A".into(),
                    subgroups: vec![group("W", 0.7, 0.3, 0.0), group("B", 0.3, 0.5, 0.5)],
                },
                SourceSpec {
                    name: "B".into(),
                    subgroups: vec![group("W", 1.0, 0.3, 0.0)],
                },
            ],
        }
    }

    #[test]
    fn deterministic_and_prefix_stable() {
        let s = spec();
        let a = generate_source(&s, "A", 300).unwrap();
        assert_eq!(a, generate_source(&s, "A", 300).unwrap());
        let small = generate_source(&s, "A", 100).unwrap();
        assert_eq!(small.samples(), &a.samples()[..100]);
    }

    #[test]
    fn base_rate_within_binomial_interval() {
        let d = generate_source(&spec(), "B", 10_000).unwrap();
        let rate = d.base_rate().unwrap();
        assert!((0.28..=0.32).contains(&rate), "rate {rate}");
    }

    #[test]
    fn weights_converge() {
        let n = 5000;
        let d = generate_source(&spec(), "A", n).unwrap();
        let w = 0.3;
        let r = subgroup_ratio(&d, "B").unwrap();
        assert!((r - w).abs() <= 3.0 * (w * (1.0 - w) / n as f64).sqrt(), "ratio {r}");
    }

    #[test]
    fn mean_shift_leaves_labels() {
        let s = spec();
        let mut shifted = s.clone();
        for src in &mut shifted.sources {
            for g in &mut src.subgroups {
                g.mean_0.iter_mut().for_each(|v| *v += 3.0);
                g.mean_1.iter_mut().for_each(|v| *v += 3.0);
            }
        }
        let a = generate_source(&s, "A", 500).unwrap();
        let b = generate_source(&shifted, "A", 500).unwrap();
        assert_eq!(a.labels(), b.labels());
        let sa: Vec<&str> = a.iter().map(|x| x.subgroup.as_str()).collect();
        let sb: Vec<&str> = b.iter().map(|x| x.subgroup.as_str()).collect();
        assert_eq!(sa, sb);
    }

    #[test]
    fn adding_a_source_does_not_perturb_others() {
        let mut s = spec();
        let before = generate_source(&s, "A", 200).unwrap();
        s.sources.push(SourceSpec {
            name: "C".into(),
            subgroups: vec![group("W", 1.0, 0.1, 2.0)],
        });
        assert_eq!(before, generate_source(&s, "A", 200).unwrap());
    }

    #[test]
    fn validation_errors() {
        assert!(generate_source(&spec(), "Z", 10).is_err());
        assert!(generate_source(&spec(), "A", 0).is_err());
        let mut s = spec();
        s.sources[0].subgroups[0].weight = 0.6;
        assert!(generate_source(&s, "A", 10).is_err());
        let mut s = spec();
        s.sources[1].subgroups[0].mean_1 = vec![0.0];
        assert!(s.validate().is_err());
    }

    #[test]
    fn registry_totals_add_up() {
        let sizes = vec![("A".to_string(), 400), ("B".to_string(), 250)];
        let r = generate_registry(&spec(), &sizes).unwrap();
        let summary = registry_summary(&r);
        for (token, n) in &sizes {
            let sum: usize = summary
                .rows
                .iter()
                .filter(|row| &row.source == token && row.subgroup.is_some())
                .map(|row| row.count)
                .sum();
            assert_eq!(sum, *n);
            assert_eq!(summary.total(token).unwrap().count, *n);
        }
        assert!(generate_registry(&spec(), &[("A".to_string(), 0)]).is_err());
    }
}
