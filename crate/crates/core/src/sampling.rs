//! Label sampling: turning several rater masks into one training target.
//!
//! Majority voting generalises to `R` raters as "at least `ceil((R + 1) / 2)`
//! votes", which for three raters is two of three. No ties are possible for an
//! odd rater count.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};

/// How rater masks become a training label.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LabelStrategy {
    Vote,
    Random,
    Mean,
    /// A `vote_fraction` share of frames get the vote label, the rest a random rater.
    Combination { vote_fraction: f64 },
}

impl LabelStrategy {
    pub fn combination(vote_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&vote_fraction) || !vote_fraction.is_finite() {
            return Err(Error::config("label_strategy", format!("vote fraction {vote_fraction} outside [0, 1]")));
        }
        Ok(LabelStrategy::Combination { vote_fraction })
    }

    /// True when the produced labels may be fractional.
    pub fn is_soft(&self) -> bool {
        matches!(self, LabelStrategy::Mean)
    }
}

impl fmt::Display for LabelStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelStrategy::Vote => f.write_str("vote"),
            LabelStrategy::Random => f.write_str("random"),
            LabelStrategy::Mean => f.write_str("mean"),
            LabelStrategy::Combination { vote_fraction } => write!(f, "combine:{vote_fraction}"),
        }
    }
}

impl FromStr for LabelStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "vote" => Ok(LabelStrategy::Vote),
            "random" => Ok(LabelStrategy::Random),
            "mean" => Ok(LabelStrategy::Mean),
            other => {
                let frac = other
                    .strip_prefix("combine:")
                    .ok_or_else(|| Error::config("label_strategy", format!("unknown strategy `{other}`")))?;
                let v: f64 = frac
                    .parse()
                    .map_err(|_| Error::config("label_strategy", format!("bad vote fraction `{frac}`")))?;
                LabelStrategy::combination(v)
            }
        }
    }
}

impl Serialize for LabelStrategy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LabelStrategy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One training target for a frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledLabel {
    pub values: Grid<f32>,
    /// `values` are in `{0, 1}` when set, otherwise in `[0, 1]`.
    pub hard: bool,
}

impl SampledLabel {
    fn hard(mask: &Mask) -> Self {
        Self { values: mask.to_f32(), hard: true }
    }
}

/// Which rule produced a combination-strategy label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Assignment {
    Vote,
    Random { rater: usize },
}

fn check_masks(masks: &[Mask]) -> Result<()> {
    let first = masks.first().ok_or(Error::Empty("rater masks"))?;
    for m in &masks[1..] {
        first.ensure_same_shape(m)?;
    }
    Ok(())
}

/// Votes needed for a strict majority of `raters`.
pub fn majority_threshold(raters: usize) -> usize {
    (raters + 2) / 2
}

/// Pixel-level majority vote.
pub fn vote_mask(masks: &[Mask]) -> Result<Mask> {
    check_masks(masks)?;
    let (h, w) = masks[0].shape();
    let need = majority_threshold(masks.len());
    let mut out = Grid::filled(h, w, 0u8);
    for (i, px) in out.as_mut_slice().iter_mut().enumerate() {
        let votes = masks.iter().filter(|m| m.as_slice()[i] != 0).count();
        *px = u8::from(votes >= need);
    }
    Ok(out)
}

pub fn sample_vote(masks: &[Mask]) -> Result<SampledLabel> {
    Ok(SampledLabel::hard(&vote_mask(masks)?))
}

/// One rater's mask, chosen uniformly.
pub fn sample_random<R: Rng + ?Sized>(masks: &[Mask], rng: &mut R) -> Result<SampledLabel> {
    Ok(sample_random_indexed(masks, rng)?.1)
}

fn sample_random_indexed<R: Rng + ?Sized>(masks: &[Mask], rng: &mut R) -> Result<(usize, SampledLabel)> {
    check_masks(masks)?;
    let k = rng.random_range(0..masks.len());
    Ok((k, SampledLabel::hard(&masks[k])))
}

/// Unrounded per-pixel mean of the raters.
pub fn sample_mean(masks: &[Mask]) -> Result<SampledLabel> {
    check_masks(masks)?;
    let (h, w) = masks[0].shape();
    let r = masks.len() as f32;
    let mut out = Grid::filled(h, w, 0.0f32);
    for (i, px) in out.as_mut_slice().iter_mut().enumerate() {
        let votes = masks.iter().filter(|m| m.as_slice()[i] != 0).count();
        *px = votes as f32 / r;
    }
    Ok(SampledLabel { values: out, hard: false })
}

/// Assign vote labels to a uniformly chosen `floor(vote_fraction * n)` frames
/// and a random rater's mask to the rest.
pub fn sample_combination<R: Rng + ?Sized, M: AsRef<[Mask]>>(
    frames: &[M],
    vote_fraction: f64,
    rng: &mut R,
) -> Result<Vec<(Assignment, SampledLabel)>> {
    if frames.is_empty() {
        return Err(Error::Empty("frame collection"));
    }
    if !(0.0..=1.0).contains(&vote_fraction) {
        return Err(Error::config("vote_fraction", format!("{vote_fraction} outside [0, 1]")));
    }
    let n = frames.len();
    let n_vote = ((vote_fraction * n as f64) + 1e-9).floor() as usize;
    let mut is_vote = vec![false; n];
    for i in index::sample(rng, n, n_vote.min(n)) {
        is_vote[i] = true;
    }
    frames
        .iter()
        .zip(is_vote)
        .map(|(masks, vote)| {
            if vote {
                Ok((Assignment::Vote, sample_vote(masks.as_ref())?))
            } else {
                let (k, label) = sample_random_indexed(masks.as_ref(), rng)?;
                Ok((Assignment::Random { rater: k }, label))
            }
        })
        .collect()
}

/// Label for every frame under `strategy`.
pub fn sample_labels<R: Rng + ?Sized, M: AsRef<[Mask]>>(
    strategy: LabelStrategy,
    frames: &[M],
    rng: &mut R,
) -> Result<Vec<SampledLabel>> {
    match strategy {
        LabelStrategy::Vote => frames.iter().map(|m| sample_vote(m.as_ref())).collect(),
        LabelStrategy::Mean => frames.iter().map(|m| sample_mean(m.as_ref())).collect(),
        LabelStrategy::Random => frames.iter().map(|m| sample_random(m.as_ref(), rng)).collect(),
        LabelStrategy::Combination { vote_fraction } => {
            Ok(sample_combination(frames, vote_fraction, rng)?.into_iter().map(|(_, l)| l).collect())
        }
    }
}

/// Frame-level consensus: the vote mask has at least `min_pixels` foreground pixels.
pub fn frame_consensus_positive_with(masks: &[Mask], min_pixels: usize) -> Result<bool> {
    Ok(vote_mask(masks)?.count_positive() >= min_pixels.max(1))
}

pub fn frame_consensus_positive(masks: &[Mask]) -> Result<bool> {
    frame_consensus_positive_with(masks, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[u8]]) -> Mask {
        let h = rows.len();
        let w = rows[0].len();
        Grid::from_vec(h, w, rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    #[test]
    fn majority_thresholds() {
        assert_eq!(majority_threshold(1), 1);
        assert_eq!(majority_threshold(3), 2);
        assert_eq!(majority_threshold(4), 3);
        assert_eq!(majority_threshold(5), 3);
    }

    #[test]
    fn vote_hand_example() {
        let r1 = m(&[&[1, 1], &[0, 0]]);
        let r2 = m(&[&[1, 0], &[0, 0]]);
        let r3 = m(&[&[1, 1], &[0, 1]]);
        let out = sample_vote(&[r1, r2, r3]).unwrap();
        assert!(out.hard);
        assert_eq!(out.values.as_slice(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn identical_masks_pass_through() {
        let a = m(&[&[0, 1, 1], &[1, 0, 0]]);
        let masks = [a.clone(), a.clone(), a.clone()];
        assert_eq!(sample_vote(&masks).unwrap().values, a.to_f32());
        assert_eq!(sample_mean(&masks).unwrap().values, a.to_f32());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(sample_random(&masks, &mut rng).unwrap().values, a.to_f32());
        }
    }

    #[test]
    fn mean_is_one_third() {
        let out = sample_mean(&[m(&[&[1]]), m(&[&[0]]), m(&[&[0]])]).unwrap();
        assert!(!out.hard);
        assert_eq!(out.values.as_slice()[0], 1.0 / 3.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = m(&[&[1, 0]]);
        let b = m(&[&[1], &[0]]);
        assert!(matches!(sample_vote(&[a.clone(), b.clone(), a.clone()]), Err(Error::ShapeMismatch { .. })));
        assert!(sample_mean(&[a.clone(), a.clone(), b.clone()]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_random(&[a, b.clone(), b], &mut rng).is_err());
    }

    #[test]
    fn random_is_deterministic_given_seed() {
        let masks = [m(&[&[1]]), m(&[&[0]]), m(&[&[1]])];
        let picks = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20).map(|_| sample_random_indexed(&masks, &mut rng).unwrap().0).collect::<Vec<_>>()
        };
        assert_eq!(picks(42), picks(42));
    }

    #[test]
    fn random_selects_raters_uniformly() {
        let masks = [m(&[&[1]]), m(&[&[0]]), m(&[&[1]])];
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0usize; 3];
        for _ in 0..3000 {
            counts[sample_random_indexed(&masks, &mut rng).unwrap().0] += 1;
        }
        for c in counts {
            assert!((900..=1100).contains(&c), "{counts:?}");
        }
    }

    #[test]
    fn combination_endpoints_and_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frames: Vec<[Mask; 3]> = (0..100)
            .map(|i| {
                let a = Grid::from_fn(2, 2, |y, x| u8::from((y + x + i) % 2 == 0));
                let b = Grid::from_fn(2, 2, |y, _| u8::from(y == 0));
                let c = Grid::from_fn(2, 2, |_, x| u8::from(x == 1));
                [a, b, c]
            })
            .collect();
        let all_vote = sample_combination(&frames, 1.0, &mut rng).unwrap();
        for ((a, l), f) in all_vote.iter().zip(&frames) {
            assert_eq!(*a, Assignment::Vote);
            assert_eq!(l.values, sample_vote(f).unwrap().values);
        }
        let none = sample_combination(&frames, 0.0, &mut rng).unwrap();
        for ((a, l), f) in none.iter().zip(&frames) {
            assert!(matches!(a, Assignment::Random { .. }));
            assert!(f.iter().any(|r| r.to_f32() == l.values));
        }
        for frac in [0.25, 0.5, 0.75] {
            let out = sample_combination(&frames, frac, &mut rng).unwrap();
            let n_vote = out.iter().filter(|(a, _)| *a == Assignment::Vote).count();
            assert_eq!(n_vote, (frac * 100.0) as usize);
        }
        let empty: Vec<[Mask; 3]> = Vec::new();
        assert!(sample_combination(&empty, 0.5, &mut rng).is_err());
    }

    #[test]
    fn consensus_positivity() {
        let z = m(&[&[0, 0], &[0, 0]]);
        assert!(!frame_consensus_positive(&[z.clone(), z.clone(), z.clone()]).unwrap());
        let a = m(&[&[1, 1], &[0, 0]]);
        let b = m(&[&[0, 1], &[0, 0]]);
        assert!(frame_consensus_positive(&[a, b, z.clone()]).unwrap());
        let c = m(&[&[1, 0], &[0, 0]]);
        let d = m(&[&[0, 0], &[0, 1]]);
        assert!(!frame_consensus_positive(&[c, d, z]).unwrap());
    }

    #[test]
    fn strategy_strings_round_trip() {
        for s in ["vote", "random", "mean", "combine:0.25", "combine:0.5", "combine:0.75"] {
            let parsed: LabelStrategy = s.parse().unwrap();
            assert_eq!(parsed.to_string(), s);
        }
        assert!("combine:1.5".parse::<LabelStrategy>().is_err());
        assert!("majority".parse::<LabelStrategy>().is_err());
    }
}
