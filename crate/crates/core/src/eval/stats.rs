use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{EvalError, RatingRecord};
use crate::store::AssetManifest;

/// Mean and population standard deviation (divisor `n`).
pub fn population_stats(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(EvalError::TooFewPoints(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::DegenerateSeries);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy)]
pub enum GroupBy<'a> {
    /// Scene of the rated frame, looked up in the manifest.
    Scene(&'a AssetManifest),
    /// The (frame, audio) pair, labelled `frame_id|audio_id`.
    Pair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Per-group MOS mean and population std, sorted by group label.
pub fn mos_aggregate(
    ratings: &[RatingRecord],
    group_by: GroupBy<'_>,
) -> Result<Vec<GroupSummary>, EvalError> {
    if ratings.is_empty() {
        return Err(EvalError::EmptyRatings);
    }
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in ratings {
        let label = match group_by {
            GroupBy::Scene(manifest) => manifest
                .get(&r.frame_id)
                .ok_or_else(|| EvalError::UnknownFrame(r.frame_id.clone()))?
                .scene
                .clone(),
            GroupBy::Pair => format!("{}|{}", r.frame_id, r.audio_id),
        };
        groups.entry(label).or_default().push(r.mos as f64);
    }
    Ok(groups
        .into_iter()
        .map(|(group, values)| {
            let (mean, std) = population_stats(&values).expect("groups are non-empty");
            GroupSummary {
                group,
                mean,
                std,
                n: values.len(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaterMode {
    /// Average the raters of each pair first; one point per pair.
    #[default]
    AveragePerPair,
    /// Every rating is its own point.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub metric_name: String,
    pub r: f64,
    pub n: usize,
    pub mode: RaterMode,
}

pub type PairKey = (String, String);

/// Joins ratings with a per-pair metric and correlates metric against MOS.
pub fn correlate(
    ratings: &[RatingRecord],
    metric_values: &HashMap<PairKey, f64>,
    metric_name: &str,
    mode: RaterMode,
) -> Result<CorrelationReport, EvalError> {
    if ratings.is_empty() {
        return Err(EvalError::EmptyRatings);
    }
    let lookup = |r: &RatingRecord| {
        metric_values
            .get(&(r.frame_id.clone(), r.audio_id.clone()))
            .copied()
            .ok_or_else(|| EvalError::MissingMetric {
                frame_id: r.frame_id.clone(),
                audio_id: r.audio_id.clone(),
            })
    };
    let (x, y): (Vec<f64>, Vec<f64>) = match mode {
        RaterMode::Independent => ratings
            .iter()
            .map(|r| lookup(r).map(|m| (m, r.mos as f64)))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .unzip(),
        RaterMode::AveragePerPair => {
            let mut pairs: BTreeMap<PairKey, (f64, Vec<f64>)> = BTreeMap::new();
            for r in ratings {
                let m = lookup(r)?;
                pairs
                    .entry((r.frame_id.clone(), r.audio_id.clone()))
                    .or_insert_with(|| (m, Vec::new()))
                    .1
                    .push(r.mos as f64);
            }
            pairs
                .into_values()
                .map(|(m, mos)| (m, mos.iter().sum::<f64>() / mos.len() as f64))
                .unzip()
        }
    };
    let r = pearson(&x, &y)?;
    Ok(CorrelationReport {
        metric_name: metric_name.to_string(),
        r,
        n: x.len(),
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Modality;
    use crate::store::AssetRecord;
    use chrono::Utc;

    fn rating(frame: &str, audio: &str, mos: u8) -> RatingRecord {
        RatingRecord::new("r", frame, audio, mos, Utc::now()).unwrap()
    }

    #[test]
    fn population_std() {
        assert_eq!(population_stats(&[4.0, 4.0, 4.0]), Some((4.0, 0.0)));
        assert_eq!(population_stats(&[1.0, 5.0]), Some((3.0, 2.0)));
        assert_eq!(population_stats(&[]), None);
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[6.0, 4.0, 5.0]).unwrap() + 0.5).abs() < 1e-12);
        assert!(matches!(
            pearson(&x, &[1.0, 2.0]),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            pearson(&x, &[2.0, 2.0, 2.0]),
            Err(EvalError::DegenerateSeries)
        ));
        assert!(matches!(
            pearson(&[1.0], &[1.0]),
            Err(EvalError::TooFewPoints(1))
        ));
    }

    #[test]
    fn aggregate_by_scene_and_pair() {
        let manifest = AssetManifest::from_records(vec![
            AssetRecord::new("f1", Modality::Image, "bosque", "u"),
            AssetRecord::new("f2", Modality::Image, "cofre", "u"),
        ])
        .unwrap();
        let rs = vec![
            rating("f2", "a", 2),
            rating("f1", "a", 5),
            rating("f2", "b", 2),
            rating("f1", "b", 5),
        ];
        let rows = mos_aggregate(&rs, GroupBy::Scene(&manifest)).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(
            (rows[0].group.as_str(), rows[0].mean, rows[0].n),
            ("bosque", 5.0, 2)
        );
        assert_eq!(
            (rows[1].group.as_str(), rows[1].mean, rows[1].std),
            ("cofre", 2.0, 0.0)
        );
        let pairs = mos_aggregate(&rs, GroupBy::Pair).unwrap();
        assert_eq!(pairs.len(), 4);
        assert_eq!(pairs[0].group, "f1|a");
        assert!(matches!(
            mos_aggregate(&[rating("zz", "a", 3)], GroupBy::Scene(&manifest)),
            Err(EvalError::UnknownFrame(_))
        ));
        assert!(matches!(
            mos_aggregate(&[], GroupBy::Pair),
            Err(EvalError::EmptyRatings)
        ));
    }

    #[test]
    fn correlate_joins_and_averages() {
        let mut metric = HashMap::new();
        metric.insert(("f".to_string(), "a".to_string()), 1.0);
        metric.insert(("f".to_string(), "b".to_string()), 2.0);
        metric.insert(("f".to_string(), "c".to_string()), 3.0);
        let rs = vec![
            rating("f", "a", 5),
            rating("f", "a", 5),
            rating("f", "b", 3),
            rating("f", "b", 5),
            rating("f", "c", 4),
        ];
        let avg = correlate(&rs, &metric, "m", RaterMode::AveragePerPair).unwrap();
        assert_eq!(avg.n, 3);
        assert!((avg.r - pearson(&[1.0, 2.0, 3.0], &[5.0, 4.0, 4.0]).unwrap()).abs() < 1e-12);
        let ind = correlate(&rs, &metric, "m", RaterMode::Independent).unwrap();
        assert_eq!(ind.n, 5);
        let missing = vec![rating("f", "zz", 3), rating("f", "a", 3)];
        assert!(matches!(
            correlate(&missing, &metric, "m", RaterMode::AveragePerPair),
            Err(EvalError::MissingMetric { .. })
        ));
        let mut flat = HashMap::new();
        flat.insert(("f".to_string(), "a".to_string()), 1.0);
        flat.insert(("f".to_string(), "b".to_string()), 1.0);
        assert!(matches!(
            correlate(&rs[..4], &flat, "m", RaterMode::Independent),
            Err(EvalError::DegenerateSeries)
        ));
    }
}
