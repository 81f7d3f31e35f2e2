use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Named residual norms with an optional refinement order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    #[serde(flatten)]
    pub values: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_estimate: Option<f64>,
}

impl ResidualReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.insert(key, value);
        self
    }

    pub fn insert(&mut self, key: &str, value: f64) {
        self.values.insert(key.to_string(), value);
    }

    /// Keeps the larger of the stored and the new value.
    pub fn insert_max(&mut self, key: &str, value: f64) {
        let e = self.values.entry(key.to_string()).or_insert(0.0);
        if value > *e || value.is_nan() {
            *e = value;
        }
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn max_value(&self) -> f64 {
        self.values.values().fold(0.0, |m, v| m.max(*v))
    }

    /// First entry above `tol`, if any.
    pub fn first_violation(&self, tol: f64) -> Option<(&str, f64)> {
        self.values
            .iter()
            .find(|(_, v)| !(**v <= tol))
            .map(|(k, v)| (k.as_str(), *v))
    }

    pub fn merge_prefixed(&mut self, prefix: &str, other: &ResidualReport) {
        for (k, v) in &other.values {
            self.values.insert(format!("{prefix}{k}"), *v);
        }
    }
}

/// Observed order `log2(coarse / fine)` for a halving refinement.
pub fn order_estimate(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

/// Least-squares slope of `log r` against `log(1/h)`.
pub fn fitted_order(h: &[f64], r: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = h
        .iter()
        .zip(r)
        .filter(|(hh, rr)| **hh > 0.0 && **rr > 0.0)
        .map(|(hh, rr)| (-(hh.ln()), rr.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    -sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape_is_flat() {
        let mut r = ResidualReport::new().with("cr_l2", 1e-3).with("closed_max", 2.0);
        r.order_estimate = Some(2.0);
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, r#"{"closed_max":2.0,"cr_l2":0.001,"order_estimate":2.0}"#);
        let back: ResidualReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn orders() {
        assert!((order_estimate(4.0, 1.0) - 2.0).abs() < 1e-15);
        let h = [0.1, 0.05, 0.025];
        let r: Vec<f64> = h.iter().map(|x| 3.0 * x * x).collect();
        assert!((fitted_order(&h, &r) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn violations_include_nan() {
        let r = ResidualReport::new().with("a", 1e-9).with("b", f64::NAN);
        assert_eq!(r.first_violation(1e-6).map(|x| x.0), Some("b"));
    }
}
