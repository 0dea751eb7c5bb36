//! Single-image detector model and score files.
//!
//! The detector is a quantitative one: its score estimates the embedding
//! rate in bits per coefficient. Scores are `gain * rate + bias` plus two
//! Gaussian error terms, one fixed per image (the image's own bias as seen
//! by the estimator) and one drawn per scoring call, clamped to
//! `[-saturation, saturation]`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cover::{Bag, BagShape, ImageModel};
use crate::error::{Error, Result};
use crate::seed;
use crate::spreading::{Allocation, Strategy};

pub const SCORE_HEADER: [&str; 6] = [
    "bag_id", "image_id", "score", "label", "strategy", "rate_bpc",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SidParams {
    pub gain: f64,
    pub bias: f64,
    /// Spread of the per-image offset.
    pub sigma_between: f64,
    /// Spread of the per-call estimation noise.
    pub sigma_within: f64,
    pub saturation: f64,
}

// Total noise of about 0.1 makes one image at 0.1 bpc detectable with an
// error near 0.3, so pooling has room to help.
impl Default for SidParams {
    fn default() -> Self {
        SidParams {
            gain: 1.0,
            bias: 0.0,
            sigma_between: 0.09,
            sigma_within: 0.04,
            saturation: 2.0,
        }
    }
}

impl SidParams {
    /// A detector without noise.
    pub fn noiseless() -> Self {
        SidParams {
            sigma_between: 0.0,
            sigma_within: 0.0,
            ..SidParams::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain.is_finite() && self.bias.is_finite()) {
            return Err(Error::param("detector gain and bias must be finite"));
        }
        if !(self.sigma_between >= 0.0 && self.sigma_within >= 0.0)
            || !self.sigma_between.is_finite()
            || !self.sigma_within.is_finite()
        {
            return Err(Error::param(
                "detector noise spreads must be finite and non-negative",
            ));
        }
        if !(self.saturation > 0.0) {
            return Err(Error::param("detector saturation must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Cover,
    Stego,
}

impl Label {
    /// Classifier target: `+1` for stego, `-1` for cover.
    pub fn sign(self) -> f64 {
        match self {
            Label::Cover => -1.0,
            Label::Stego => 1.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Cover => "cover",
            Label::Stego => "stego",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cover" => Ok(Label::Cover),
            "stego" => Ok(Label::Stego),
            _ => Err(Error::param(format!("unknown label {s:?}"))),
        }
    }
}

/// Detector output for one bag.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBag {
    pub bag_id: u64,
    pub scores: Vec<f64>,
    pub label: Label,
    /// `None` for cover bags.
    pub strategy: Option<Strategy>,
    /// Embedding rate of each image in bits per coefficient.
    pub true_rates: Vec<f64>,
}

/// Scores one image identified by `image_key`.
pub fn score_keyed(seed: u64, image_key: u64, rate_bpc: f64, params: &SidParams) -> Result<f64> {
    if !(rate_bpc >= 0.0) || !rate_bpc.is_finite() {
        return Err(Error::param(format!(
            "rate must be finite and non-negative, got {rate_bpc}"
        )));
    }
    let offset: f64 = seed::rng(seed::derive(image_key, seed::TAG_BETWEEN)).sample(StandardNormal);
    let noise: f64 = seed::rng(seed::derive(seed, seed::TAG_WITHIN)).sample(StandardNormal);
    let raw = params.gain * rate_bpc
        + params.bias
        + params.sigma_between * offset
        + params.sigma_within * noise;
    Ok(raw.clamp(-params.saturation, params.saturation))
}

pub fn score_image(
    seed: u64,
    image: &ImageModel,
    rate_bpc: f64,
    params: &SidParams,
) -> Result<f64> {
    score_keyed(seed, image.key, rate_bpc, params)
}

/// Scores a bag given each image's key and rate. Image `i` uses the child
/// seed `derive(seed, i)`.
pub fn score_rates(seed: u64, keys: &[u64], rates: &[f64], params: &SidParams) -> Result<Vec<f64>> {
    if keys.len() != rates.len() {
        return Err(Error::param(format!(
            "{} images but {} rates",
            keys.len(),
            rates.len()
        )));
    }
    params.validate()?;
    keys.iter()
        .zip(rates)
        .enumerate()
        .map(|(i, (&k, &r))| score_keyed(seed::derive(seed, i as u64), k, r, params))
        .collect()
}

/// Scores a bag; `allocation` is `None` for a cover bag.
pub fn score_bag(
    seed: u64,
    bag: &Bag,
    allocation: Option<&Allocation>,
    params: &SidParams,
) -> Result<ScoredBag> {
    let (rates, label, strategy) = match allocation {
        None => (vec![0.0; bag.len()], Label::Cover, None),
        Some(a) => {
            if a.bits_per_image.len() != bag.len() {
                return Err(Error::param(format!(
                    "allocation covers {} images but the bag has {}",
                    a.bits_per_image.len(),
                    bag.len()
                )));
            }
            (a.rates(bag), Label::Stego, Some(a.strategy))
        }
    };
    let keys: Vec<u64> = bag.images.iter().map(|im| im.key).collect();
    let scores = score_rates(seed, &keys, &rates, params)?;
    Ok(ScoredBag {
        bag_id: bag.bag_id,
        scores,
        label,
        strategy,
        true_rates: rates,
    })
}

pub fn write_scores_csv<W: Write>(out: W, bags: &[ScoredBag]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCORE_HEADER)?;
    for bag in bags {
        let strategy = bag.strategy.map_or("none", Strategy::name);
        for (i, (score, rate)) in bag.scores.iter().zip(&bag.true_rates).enumerate() {
            w.write_record([
                bag.bag_id.to_string(),
                i.to_string(),
                score.to_string(),
                bag.label.to_string(),
                strategy.to_string(),
                rate.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Reads a score file; see [`read_scores`].
pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<ScoredBag>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_scores(file, path)
}

struct Row {
    image_id: u64,
    score: f64,
    label: Label,
    strategy: Option<Strategy>,
    rate: f64,
    line: u64,
}

/// Parses score rows into bags grouped by `bag_id` (ascending), scores
/// ordered by `image_id`. Errors name the offending line of `origin`.
pub fn read_scores<R: Read>(input: R, origin: &Path) -> Result<Vec<ScoredBag>> {
    let ingest = |line: u64, message: String| Error::Ingest {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| ingest(1, e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != SCORE_HEADER {
        return Err(ingest(
            1,
            format!("expected header {:?}", SCORE_HEADER.join(",")),
        ));
    }

    let mut groups: BTreeMap<u64, Vec<Row>> = BTreeMap::new();
    let mut seen: BTreeSet<(u64, u64)> = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            ingest(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<&str> {
            match record.get(i).map(str::trim) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(ingest(line, format!("missing {name}"))),
            }
        };
        let bag_id: u64 = field(0, "bag_id")?
            .parse()
            .map_err(|_| ingest(line, format!("bad bag_id {:?}", &record[0])))?;
        let image_id: u64 = field(1, "image_id")?
            .parse()
            .map_err(|_| ingest(line, format!("bad image_id {:?}", &record[1])))?;
        let score: f64 = field(2, "score")?
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| ingest(line, format!("non-numeric score {:?}", &record[2])))?;
        let label: Label = field(3, "label")?
            .parse()
            .map_err(|e: Error| ingest(line, e.to_string()))?;
        let strategy = match field(4, "strategy")? {
            "none" => None,
            s => Some(
                s.parse::<Strategy>()
                    .map_err(|e| ingest(line, e.to_string()))?,
            ),
        };
        let rate: f64 = field(5, "rate_bpc")?
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite() && *v >= 0.0)
            .ok_or_else(|| ingest(line, format!("bad rate_bpc {:?}", &record[5])))?;
        match (label, strategy) {
            (Label::Cover, Some(_)) => {
                return Err(ingest(line, "cover row names a strategy".into()))
            }
            (Label::Stego, None) => return Err(ingest(line, "stego row has strategy none".into())),
            _ => {}
        }
        if label == Label::Cover && rate != 0.0 {
            return Err(ingest(line, "cover row has a non-zero rate".into()));
        }
        if !seen.insert((bag_id, image_id)) {
            return Err(ingest(
                line,
                format!("duplicate row for bag {bag_id} image {image_id}"),
            ));
        }
        let group = groups.entry(bag_id).or_default();
        if let Some(first) = group.first() {
            if first.label != label || first.strategy != strategy {
                return Err(ingest(
                    line,
                    format!(
                        "bag {bag_id} mixes labels or strategies (first seen on line {})",
                        first.line
                    ),
                ));
            }
        }
        group.push(Row {
            image_id,
            score,
            label,
            strategy,
            rate,
            line,
        });
    }

    Ok(groups
        .into_iter()
        .map(|(bag_id, mut rows)| {
            rows.sort_by_key(|r| r.image_id);
            ScoredBag {
                bag_id,
                scores: rows.iter().map(|r| r.score).collect(),
                label: rows[0].label,
                strategy: rows[0].strategy,
                true_rates: rows.iter().map(|r| r.rate).collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cover::{gen_bag, CoverParams};
    use crate::spreading::{spread_greedy, spread_linear};

    fn noiseless() -> SidParams {
        SidParams::noiseless()
    }

    fn parse(text: &str) -> Result<Vec<ScoredBag>> {
        read_scores(text.as_bytes(), Path::new("scores.csv"))
    }

    #[test]
    fn noiseless_identity() {
        assert_eq!(score_keyed(1, 2, 0.4, &noiseless()).unwrap(), 0.4);
        assert_eq!(score_keyed(1, 2, 0.0, &noiseless()).unwrap(), 0.0);
        assert!(score_keyed(1, 2, -0.1, &noiseless()).is_err());
    }

    #[test]
    fn saturation_clamps() {
        let p = SidParams {
            gain: 10.0,
            ..noiseless()
        };
        assert_eq!(score_keyed(0, 0, 1.0, &p).unwrap(), 2.0);
    }

    #[test]
    fn mean_score_monte_carlo() {
        let p = SidParams::default();
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|i| score_keyed(seed::derive(5, i), seed::derive(6, i), 1.0, &p).unwrap())
            .sum::<f64>()
            / n as f64;
        let sd = (p.sigma_between.powi(2) + p.sigma_within.powi(2)).sqrt();
        assert!(
            (mean - 1.0).abs() < 4.5 * sd / (n as f64).sqrt(),
            "mean {mean}"
        );
    }

    #[test]
    fn mean_score_increases_with_rate() {
        let p = SidParams::default();
        let n = 10_000;
        let means: Vec<f64> = [0.05, 0.1, 0.2]
            .iter()
            .map(|&r| {
                (0..n)
                    .map(|i| score_keyed(i, 1000 + i, r, &p).unwrap())
                    .sum::<f64>()
                    / n as f64
            })
            .collect();
        assert!(means[0] < means[1] && means[1] < means[2], "{means:?}");
    }

    #[test]
    fn per_image_offset_is_fixed_across_payloads() {
        let p = SidParams {
            sigma_within: 0.0,
            ..SidParams::default()
        };
        let a = score_keyed(9, 77, 0.1, &p).unwrap();
        let b = score_keyed(9, 77, 0.3, &p).unwrap();
        assert!((b - a - p.gain * 0.2).abs() < 1e-12);
    }

    #[test]
    fn cover_and_stego_bags_noiseless() {
        let params = CoverParams {
            n_coeffs: 1000,
            ..CoverParams::default()
        };
        let bag = gen_bag(1, 0, 3, &params).unwrap();
        let p = SidParams {
            bias: 0.25,
            ..noiseless()
        };
        let cover = score_bag(3, &bag, None, &p).unwrap();
        assert_eq!(cover.scores, vec![0.25; 3]);
        assert_eq!(cover.true_rates, vec![0.0; 3]);

        let lin = spread_linear(&bag, 300.0).unwrap();
        let s = score_bag(3, &bag, Some(&lin), &noiseless()).unwrap();
        assert!(s.scores.iter().all(|&x| (x - 0.1).abs() < 1e-15));

        let g = spread_greedy(&bag, 1500.0, 4).unwrap();
        let s = score_bag(3, &bag, Some(&g), &noiseless()).unwrap();
        let mut sorted = s.scores.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, vec![0.0, 0.5, 1.0]);
        assert_eq!(s.strategy, Some(Strategy::Greedy));
    }

    #[test]
    fn score_bag_rejects_length_mismatch() {
        let bag = gen_bag(
            1,
            0,
            3,
            &CoverParams {
                n_coeffs: 10,
                ..CoverParams::default()
            },
        )
        .unwrap();
        let other = gen_bag(
            1,
            0,
            2,
            &CoverParams {
                n_coeffs: 10,
                ..CoverParams::default()
            },
        )
        .unwrap();
        let a = spread_linear(&other, 1.0).unwrap();
        assert!(matches!(
            score_bag(0, &bag, Some(&a), &noiseless()),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn load_empty_file() {
        assert!(parse("bag_id,image_id,score,label,strategy,rate_bpc\n")
            .unwrap()
            .is_empty());
    }

    #[test]
    fn load_groups_and_orders() {
        let text = "bag_id,image_id,score,label,strategy,rate_bpc\n\
                    1,1,0.3,stego,dels,0.2\n\
                    0,0,0.1,cover,none,0\n\
                    1,0,0.2,stego,dels,0.1\n\
                    0,1,-0.1,cover,none,0\n";
        let bags = parse(text).unwrap();
        assert_eq!(bags.len(), 2);
        assert_eq!(bags[0].scores, vec![0.1, -0.1]);
        assert_eq!(bags[1].scores, vec![0.2, 0.3]);
        assert_eq!(bags[1].strategy, Some(Strategy::Dels));
        assert_eq!(bags[1].true_rates, vec![0.1, 0.2]);
    }

    #[test]
    fn load_errors_name_the_line() {
        let header = "bag_id,image_id,score,label,strategy,rate_bpc\n";
        let cases = [
            ("0,0,abc,cover,none,0\n", 2, "non-numeric score"),
            (
                "0,0,0.1,cover,none,0\n0,0,0.2,cover,none,0\n",
                3,
                "duplicate",
            ),
            ("0,0,0.1,,none,0\n", 2, "missing label"),
            ("0,0,0.1,cover,none,0\n0,1,0.1,stego,ims,0.1\n", 3, "mixes"),
            ("0,0,0.1,cover,none\n", 2, ""),
        ];
        for (rows, line, needle) in cases {
            match parse(&format!("{header}{rows}")) {
                Err(Error::Ingest {
                    line: l, message, ..
                }) => {
                    assert_eq!(l, line, "{message}");
                    assert!(message.contains(needle), "{message}");
                }
                other => panic!("expected ingest error, got {other:?}"),
            }
        }
        assert!(matches!(parse("a,b\n"), Err(Error::Ingest { line: 1, .. })));
    }

    #[test]
    fn write_then_read_round_trips() {
        let bags = vec![
            ScoredBag {
                bag_id: 4,
                scores: vec![0.125, -0.5],
                label: Label::Cover,
                strategy: None,
                true_rates: vec![0.0, 0.0],
            },
            ScoredBag {
                bag_id: 9,
                scores: vec![1.0 / 3.0],
                label: Label::Stego,
                strategy: Some(Strategy::UsesBeta),
                true_rates: vec![0.2],
            },
        ];
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &bags).unwrap();
        assert_eq!(read_scores(buf.as_slice(), Path::new("x")).unwrap(), bags);
    }
}
