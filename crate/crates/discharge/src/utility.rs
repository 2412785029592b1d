//! Decision-theoretic expected utility of a classifier over its ROC curve.
//!
//! True negatives and false negatives are the zero reference points, so
//! EU = prevalence * TPR * u_tp + (1 - prevalence) * FPR * u_fp, in currency
//! units per patient-day. The always-negative classifier scores exactly 0.

use serde::{Deserialize, Serialize};

use crate::metrics::RocCurve;

/// Cost/benefit scenario: u_tp is the benefit of a true positive relative to
/// a false negative, u_fp the (non-positive) cost of a false positive
/// relative to a true negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityScenario {
    pub name: char,
    pub prevalence: f64,
    pub u_tp: f64,
    pub u_fp: f64,
}

pub const DEFAULT_PREVALENCE: f64 = 0.18;

/// The four (false-positive cost, true-positive benefit) scenarios:
/// A = (low, low), B = (high, low), C = (low, high), D = (high, high).
pub fn standard_scenarios(prevalence: f64) -> [UtilityScenario; 4] {
    [
        UtilityScenario { name: 'A', prevalence, u_tp: 250.0, u_fp: -10.0 },
        UtilityScenario { name: 'B', prevalence, u_tp: 250.0, u_fp: -100.0 },
        UtilityScenario { name: 'C', prevalence, u_tp: 2500.0, u_fp: -10.0 },
        UtilityScenario { name: 'D', prevalence, u_tp: 2500.0, u_fp: -100.0 },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

pub fn expected_utility(point: OperatingPoint, scenario: &UtilityScenario) -> f64 {
    scenario.prevalence * point.tpr * scenario.u_tp
        + (1.0 - scenario.prevalence) * point.fpr * scenario.u_fp
}

/// EU at every ROC operating point, thresholds descending.
pub fn utility_curve(roc: &RocCurve, scenario: &UtilityScenario) -> Vec<(f64, f64)> {
    roc.points
        .iter()
        .map(|p| {
            let op = OperatingPoint { threshold: p.threshold, tpr: p.tpr, fpr: p.fpr };
            (p.threshold, expected_utility(op, scenario))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimalChoice {
    /// Formatted as a string so the infinite endpoints survive JSON.
    pub threshold: String,
    pub threshold_value: f64,
    pub expected_utility: f64,
    /// EU of the always-positive classifier; the always-negative one is 0.
    pub baseline_all_positive: f64,
    pub dominates_trivial: bool,
}

/// Argmax of the utility curve; ties resolve to the highest threshold.
pub fn optimal_threshold(roc: &RocCurve, scenario: &UtilityScenario) -> OptimalChoice {
    let curve = utility_curve(roc, scenario);
    let (mut best_t, mut best_eu) = curve[0];
    for &(t, eu) in &curve[1..] {
        if eu > best_eu {
            best_t = t;
            best_eu = eu;
        }
    }
    let all_positive = expected_utility(
        OperatingPoint { threshold: f64::NEG_INFINITY, tpr: 1.0, fpr: 1.0 },
        scenario,
    );
    OptimalChoice {
        threshold: format!("{best_t}"),
        threshold_value: best_t,
        expected_utility: best_eu,
        baseline_all_positive: all_positive,
        dominates_trivial: best_eu > 0.0_f64.max(all_positive),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: UtilityScenario,
    pub curve: Vec<(f64, f64)>,
    pub optimum: OptimalChoice,
}

/// Utility curves and optima for scenarios A-D, in that order.
pub fn scenario_report(roc: &RocCurve, prevalence: f64) -> Vec<ScenarioReport> {
    standard_scenarios(prevalence)
        .iter()
        .map(|s| ScenarioReport {
            scenario: *s,
            curve: utility_curve(roc, s),
            optimum: optimal_threshold(roc, s),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{roc_points, ScoredSet};

    fn scenario(name: char, u_tp: f64, u_fp: f64) -> UtilityScenario {
        UtilityScenario { name, prevalence: 0.18, u_tp, u_fp }
    }

    #[test]
    fn closed_form_endpoints() {
        let a = scenario('A', 250.0, -10.0);
        let none = OperatingPoint { threshold: f64::INFINITY, tpr: 0.0, fpr: 0.0 };
        let all = OperatingPoint { threshold: f64::NEG_INFINITY, tpr: 1.0, fpr: 1.0 };
        assert_eq!(expected_utility(none, &a), 0.0);
        assert!((expected_utility(all, &a) - 36.8).abs() < 1e-12);

        let b = scenario('B', 250.0, -100.0);
        assert!((expected_utility(all, &b) - (-37.0)).abs() < 1e-12);
    }

    #[test]
    fn perfect_classifier_scenario_c() {
        let c = scenario('C', 2500.0, -10.0);
        let sep = OperatingPoint { threshold: 0.5, tpr: 1.0, fpr: 0.0 };
        assert!((expected_utility(sep, &c) - 450.0).abs() < 1e-12);
    }

    #[test]
    fn useless_classifier_scenario_b_stays_at_always_negative() {
        // tied scores give a diagonal-ish curve: (0,0), (1,1) step, (1,1)
        let set = ScoredSet::new(vec![0.5; 10], vec![1, 0, 1, 0, 0, 0, 0, 1, 0, 0]).unwrap();
        let roc = roc_points(&set).unwrap();
        let b = scenario('B', 250.0, -100.0);
        let opt = optimal_threshold(&roc, &b);
        assert_eq!(opt.expected_utility, 0.0);
        assert_eq!(opt.threshold_value, f64::INFINITY);
        assert_eq!(opt.threshold, "inf");
        assert!(!opt.dominates_trivial);
    }

    #[test]
    fn perfect_classifier_dominates_everywhere() {
        let set = ScoredSet::new(vec![0.9, 0.8, 0.2, 0.1], vec![1, 1, 0, 0]).unwrap();
        let roc = roc_points(&set).unwrap();
        for s in standard_scenarios(0.18) {
            let opt = optimal_threshold(&roc, &s);
            assert!(opt.dominates_trivial, "scenario {}", s.name);
            assert!(opt.expected_utility >= 0.0_f64.max(opt.baseline_all_positive));
        }
    }

    #[test]
    fn linear_in_utilities() {
        let p = OperatingPoint { threshold: 0.3, tpr: 0.7, fpr: 0.2 };
        let s1 = scenario('A', 250.0, -10.0);
        let s2 = scenario('A', 500.0, -20.0);
        assert!((expected_utility(p, &s2) - 2.0 * expected_utility(p, &s1)).abs() < 1e-12);
    }

    #[test]
    fn report_order_is_a_to_d() {
        let set = ScoredSet::new(vec![0.9, 0.1], vec![1, 0]).unwrap();
        let roc = roc_points(&set).unwrap();
        let report = scenario_report(&roc, 0.18);
        let names: Vec<char> = report.iter().map(|r| r.scenario.name).collect();
        assert_eq!(names, vec!['A', 'B', 'C', 'D']);
        for r in &report {
            let first = r.curve.first().unwrap().1;
            let last = r.curve.last().unwrap().1;
            assert_eq!(first, 0.0);
            let all_pos = r.scenario.prevalence * r.scenario.u_tp
                + (1.0 - r.scenario.prevalence) * r.scenario.u_fp;
            assert!((last - all_pos).abs() < 1e-12);
        }
    }
}
