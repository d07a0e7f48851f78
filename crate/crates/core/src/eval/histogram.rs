use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::metrics::InconsistencyReport;

/// Equal-width histogram. Bins are left-closed and right-open, except the
/// last one which also includes its upper edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    /// Values outside `[lo, hi]` are clamped into the first or last bin.
    pub fn equal_width(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self, EvalError> {
        if values.is_empty() {
            return Err(EvalError::EmptyInput);
        }
        if bins == 0 || hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
            return Err(EvalError::InvalidBins(bins));
        }
        let width = (hi - lo) / bins as f64;
        let bin_edges: Vec<f64> = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + width * i as f64 })
            .collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let idx = if v >= hi {
                bins - 1
            } else if v <= lo {
                0
            } else {
                // Guard the floor against edge rounding.
                let mut i = (((v - lo) / width) as usize).min(bins - 1);
                while i > 0 && v < bin_edges[i] {
                    i -= 1;
                }
                while i + 1 < bins && v >= bin_edges[i + 1] {
                    i += 1;
                }
                i
            };
            counts[idx] += 1;
        }
        Ok(Self {
            bin_edges,
            counts,
            total: values.len() as u64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    DImageText,
    DImageAudio,
    Inc,
}

impl Component {
    pub const ALL: [Component; 3] = [
        Component::DImageText,
        Component::DImageAudio,
        Component::Inc,
    ];

    /// Valid range of the component.
    pub fn range(self) -> (f64, f64) {
        match self {
            Component::DImageText | Component::DImageAudio => (0.0, 1.0),
            Component::Inc => (-1.0, 2.0),
        }
    }

    pub fn value(self, r: &InconsistencyReport) -> f64 {
        match self {
            Component::DImageText => r.d_image_text,
            Component::DImageAudio => r.d_image_audio,
            Component::Inc => r.inc,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Component::DImageText => "d_image_text",
            Component::DImageAudio => "d_image_audio",
            Component::Inc => "inc",
        }
    }
}

impl std::str::FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Component::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown component '{s}'"))
    }
}

pub fn inconsistency_histogram(
    reports: &[InconsistencyReport],
    component: Component,
    bins: usize,
) -> Result<Histogram, EvalError> {
    let values: Vec<f64> = reports.iter().map(|r| component.value(r)).collect();
    let (lo, hi) = component.range();
    Histogram::equal_width(&values, lo, hi, bins)
}
