use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const NUM_GRADES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!(
                "unknown split {s:?} (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub grade: u8,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        if let Some(e) = m
            .entries
            .iter()
            .find(|e| usize::from(e.grade) >= NUM_GRADES)
        {
            return Err(Error::invalid(format!(
                "{}: grade {} is outside 0..=4",
                e.path, e.grade
            )));
        }
        Ok(m)
    }
}

fn check_ratios(ratios: [f64; 3]) -> Result<()> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    Ok(())
}

/// Stratified split: within each grade, entries are shuffled with `seed`
/// and cut at the cumulative ratios (rounded to the nearest count).
pub fn split_dataset(
    entries: &[(String, u8)],
    ratios: [f64; 3],
    seed: u64,
) -> Result<DatasetManifest> {
    check_ratios(ratios)?;
    let mut out = Vec::with_capacity(entries.len());
    for grade in 0..NUM_GRADES as u8 {
        let mut group: Vec<&(String, u8)> = entries.iter().filter(|e| e.1 == grade).collect();
        if group.is_empty() {
            continue;
        }
        let n = group.len();
        if n < Split::ALL.len() {
            return Err(Error::invalid(format!(
                "grade {grade} has {n} entries, fewer than the {} splits",
                Split::ALL.len()
            )));
        }
        group.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(grade) << 56));
        group.shuffle(&mut rng);
        let cut1 = (ratios[0] * n as f64).round() as usize;
        let cut2 = ((ratios[0] + ratios[1]) * n as f64).round() as usize;
        for (i, (path, _)) in group.into_iter().enumerate() {
            let split = if i < cut1 {
                Split::Train
            } else if i < cut2 {
                Split::Val
            } else {
                Split::Test
            };
            out.push(ManifestEntry {
                path: path.clone(),
                grade,
                split,
            });
        }
    }
    if let Some((p, g)) = entries.iter().find(|e| usize::from(e.1) >= NUM_GRADES) {
        return Err(Error::invalid(format!("{p}: grade {g} is outside 0..=4")));
    }
    Ok(DatasetManifest {
        seed,
        ratios,
        entries: out,
    })
}

/// Training indices after oversampling: every grade is topped up, by
/// drawing extra copies of its own samples, to the largest grade's count.
/// Returns `(index, is_extra_copy)` pairs; extra copies are meant to be
/// augmented.
pub fn oversample(labels: &[usize], seed: u64) -> Vec<(usize, bool)> {
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<(usize, bool)> = (0..labels.len()).map(|i| (i, false)).collect();
    for members in by_class.iter().filter(|m| !m.is_empty()) {
        // Cycle through fresh shuffles so copies spread evenly.
        let mut deficit = target - members.len();
        while deficit > 0 {
            let mut order = members.clone();
            order.shuffle(&mut rng);
            let take = deficit.min(order.len());
            out.extend(order[..take].iter().map(|&i| (i, true)));
            deficit -= take;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(per_grade: usize) -> Vec<(String, u8)> {
        (0..5u8)
            .flat_map(|g| (0..per_grade).map(move |i| (format!("g{g}/{i:03}.png"), g)))
            .collect()
    }

    #[test]
    fn exact_ratios() {
        let m = split_dataset(&entries(100), [0.7, 0.15, 0.15], 1).unwrap();
        for g in 0..5 {
            for (s, want) in Split::ALL.iter().zip([70, 15, 15]) {
                let n = m
                    .entries
                    .iter()
                    .filter(|e| e.grade == g && e.split == *s)
                    .count();
                assert_eq!(n, want);
            }
        }
    }

    #[test]
    fn partition_and_determinism() {
        let input = entries(23);
        let a = split_dataset(&input, [0.7, 0.15, 0.15], 9).unwrap();
        assert_eq!(a, split_dataset(&input, [0.7, 0.15, 0.15], 9).unwrap());
        assert_ne!(a, split_dataset(&input, [0.7, 0.15, 0.15], 10).unwrap());
        let mut seen: Vec<_> = a
            .entries
            .iter()
            .map(|e| (e.path.clone(), e.grade))
            .collect();
        seen.sort();
        let mut want = input.clone();
        want.sort();
        assert_eq!(seen, want);
    }

    #[test]
    fn split_errors() {
        assert!(split_dataset(&entries(2), [0.7, 0.15, 0.15], 0).is_err());
        assert!(split_dataset(&entries(10), [0.7, 0.2, 0.2], 0).is_err());
        assert!(split_dataset(&entries(10), [1.0, 0.0, 0.0], 0).is_err());
        assert!(split_dataset(
            &[("x".into(), 7), ("y".into(), 7), ("z".into(), 7)],
            [0.5, 0.25, 0.25],
            0
        )
        .is_err());
    }

    #[test]
    fn oversampling_balances_classes() {
        let labels = [0, 0, 0, 0, 0, 0, 0, 1, 1, 2];
        let plan = oversample(&labels, 3);
        let mut counts = [0; 3];
        for &(i, _) in &plan {
            counts[labels[i]] += 1;
        }
        assert_eq!(counts, [7, 7, 7]);
        assert_eq!(plan.iter().filter(|p| !p.1).count(), labels.len());
        assert_eq!(oversample(&[1, 0, 1, 0], 0).len(), 4);
    }
}
