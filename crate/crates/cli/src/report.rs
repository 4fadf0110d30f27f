//! Byte-stable numeric formatting and report writers.

use ebridge_core::energy::EnergyReport;
use ebridge_core::verify::PropositionResult;

/// Formats a float with 12 significant digits, the fixed convention for every
/// CSV this tool emits: enough precision for determinism checks, stable
/// across runs.
pub fn fmt12(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    format!("{v:.11e}")
}

/// Verification report document: the proposition battery plus the per-family
/// energy summaries.
pub fn verification_report_json(results: &[PropositionResult], energy: &[EnergyReport]) -> String {
    let all_passed = results.iter().all(|r| r.passed) && energy.iter().all(|e| e.passed);
    let mut s = String::from("{\"schema_version\":1,\"all_passed\":");
    s.push_str(if all_passed { "true" } else { "false" });
    s.push_str(",\"propositions\":[");
    for (i, r) in results.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&format!(
            "{{\"name\":{},\"value\":{},\"reference\":{},\"tolerance\":{},\"passed\":{}}}",
            serde_json::to_string(&r.name).unwrap(),
            fmt12(r.value),
            fmt12(r.reference),
            fmt12(r.tolerance),
            r.passed
        ));
    }
    s.push_str("],\"energy_reports\":");
    s.push_str(&serde_json::to_string(energy).expect("energy reports serialize"));
    s.push_str("}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt12_is_stable_and_finite_aware() {
        assert_eq!(fmt12(0.0), "0");
        assert_eq!(fmt12(f64::INFINITY), "inf");
        assert_eq!(fmt12(1.0), "1.00000000000e0");
        assert_eq!(fmt12(0.25), "2.50000000000e-1");
    }

    #[test]
    fn report_json_parses_back() {
        let results = vec![PropositionResult {
            name: "demo".into(),
            value: 1.0,
            reference: 1.0,
            tolerance: 0.1,
            passed: true,
        }];
        let energy = ebridge_core::verify::family_energy_reports().unwrap();
        let doc = verification_report_json(&results, &energy);
        let v: serde_json::Value = serde_json::from_str(&doc).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["all_passed"], true);
        assert_eq!(v["propositions"][0]["name"], "demo");
        assert_eq!(v["energy_reports"].as_array().unwrap().len(), 4);
    }
}
