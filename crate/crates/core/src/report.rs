//! Serialization of benchmark results.

use crate::engine::{BenchReport, MeanStd, StrategyKind};
use crate::error::Result;

/// Header of the summary table.
pub const CSV_HEADER: &str = "landscape_id,baseline,deployment,finetune,refinery";

/// `mean±std` in percent with two decimals.
pub fn format_cell(m: &MeanStd) -> String {
    format!("{:.2}±{:.2}", 100.0 * m.mean, 100.0 * m.std)
}

/// One row per landscape: sequence success rate across seeds as `mean±std`
/// percentages.
pub fn summary_csv(r: &BenchReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in &r.summary {
        out.push_str(&row.landscape_id);
        for k in StrategyKind::ALL {
            out.push(',');
            out.push_str(&format_cell(row.rates.get(k)));
        }
        out.push('\n');
    }
    out
}

pub fn to_json(r: &BenchReport) -> Result<String> {
    serde_json::to_string_pretty(r).map_err(|_| crate::Error::NonFinite("report serialization"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_format() {
        assert_eq!(format_cell(&MeanStd { mean: 0.8125, std: 0.0123 }), "81.25±1.23");
    }
}
