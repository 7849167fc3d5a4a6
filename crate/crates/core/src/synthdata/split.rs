use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::Record;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 4.0 / 6.0,
            val: 1.0 / 6.0,
            test: 1.0 / 6.0,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|v| !(0.0..=1.0).contains(v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::Config(format!(
                "split fractions {f:?} must be in [0,1] and sum to 1"
            )));
        }
        Ok(())
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }
}

/// Sample ids per split, each in dataset order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn by_name(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            _ => Err(Error::invalid(format!("unknown split `{name}`"))),
        }
    }
}

/// Seeded, class-stratified split that keeps every group in one split.
///
/// Groups (which may mix classes) are shuffled and assigned one at a time to
/// the split whose per-class shortfall, weighted by the group's class counts,
/// is largest; ties go to the split with fewer samples overall.
pub fn split_dataset(records: &[Record], fractions: SplitFractions, seed: u64) -> Result<Splits> {
    fractions.validate()?;
    let frac = fractions.as_array();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<(&str, [usize; 2])> = Vec::new();
    for r in records {
        let class = usize::from(r.label != 0);
        match groups.iter_mut().find(|(g, _)| *g == r.group) {
            Some(g) => g.1[class] += 1,
            None => {
                let mut c = [0; 2];
                c[class] = 1;
                groups.push((&r.group, c));
            }
        }
    }
    let mut target = [[0usize; 3]; 2];
    for (class, t) in target.iter_mut().enumerate() {
        let n: usize = groups.iter().map(|g| g.1[class]).sum();
        let val = (frac[1] * n as f64).round() as usize;
        let test = ((frac[2] * n as f64).round() as usize).min(n - val);
        *t = [n - val - test, val, test];
    }
    groups.shuffle(&mut rng);
    let mut count = [[0usize; 3]; 2];
    let mut totals = [0usize; 3];
    let mut assignment = std::collections::HashMap::new();
    for (g, sizes) in groups {
        let pick = (0..3)
            .filter(|&k| frac[k] > 0.0)
            .max_by_key(|&k| {
                let shortfall: isize = (0..2)
                    .map(|c| sizes[c] as isize * (target[c][k] as isize - count[c][k] as isize))
                    .sum();
                (
                    shortfall,
                    std::cmp::Reverse(totals[k]),
                    std::cmp::Reverse(k),
                )
            })
            .expect("at least one non-zero fraction");
        for c in 0..2 {
            count[c][pick] += sizes[c];
        }
        totals[pick] += sizes[0] + sizes[1];
        assignment.insert(g.to_string(), pick);
    }
    let mut out: [Vec<String>; 3] = Default::default();
    for r in records {
        out[assignment[&r.group]].push(r.id.clone());
    }
    for (k, name) in ["train", "val", "test"].iter().enumerate() {
        if frac[k] > 0.0 && out[k].is_empty() {
            return Err(Error::Config(format!(
                "fraction {} leaves the {name} split empty",
                frac[k]
            )));
        }
    }
    let [train, val, test] = out;
    Ok(Splits { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(n_per_class: usize, group: usize) -> Vec<Record> {
        let mut v = Vec::new();
        for label in [0, 1] {
            for i in 0..n_per_class {
                v.push(Record {
                    id: format!("{label}-{i}"),
                    path: String::new(),
                    label,
                    boxes: vec![],
                    group: format!("{label}-g{}", i / group),
                });
            }
        }
        v
    }

    #[test]
    fn all_train() {
        let r = records(10, 2);
        let s = split_dataset(
            &r,
            SplitFractions {
                train: 1.0,
                val: 0.0,
                test: 0.0,
            },
            1,
        )
        .unwrap();
        assert_eq!(s.train.len(), 20);
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn stratified_sizes() {
        let r = records(300, 2);
        let s = split_dataset(&r, SplitFractions::default(), 7).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (400, 100, 100));
        for split in [&s.train, &s.val, &s.test] {
            let pos = split.iter().filter(|id| id.starts_with('1')).count();
            assert!((pos as isize - split.len() as isize / 2).abs() <= 1);
        }
    }

    #[test]
    fn groups_never_straddle() {
        let r = records(40, 3);
        for seed in 0..100 {
            let s = split_dataset(&r, SplitFractions::default(), seed).unwrap();
            for rec in &r {
                let home = |id: &str| {
                    [&s.train, &s.val, &s.test]
                        .iter()
                        .position(|v| v.iter().any(|x| x == id))
                };
                let mine = home(&rec.id).unwrap();
                for other in r.iter().filter(|o| o.group == rec.group) {
                    assert_eq!(home(&other.id).unwrap(), mine);
                }
            }
        }
    }

    #[test]
    fn mixed_class_groups_stay_stratified() {
        let mut r = Vec::new();
        for i in 0..300 {
            for label in [0, 1] {
                r.push(Record {
                    id: format!("{label}-{i}"),
                    path: String::new(),
                    label,
                    boxes: vec![],
                    group: format!("g{i}"),
                });
            }
        }
        let s = split_dataset(&r, SplitFractions::default(), 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (400, 100, 100));
        for split in [&s.train, &s.val, &s.test] {
            let pos = split.iter().filter(|id| id.starts_with('1')).count();
            assert_eq!(2 * pos, split.len());
        }
    }

    #[test]
    fn empty_split_is_config_error() {
        let r = records(2, 2);
        let f = SplitFractions {
            train: 0.9,
            val: 0.05,
            test: 0.05,
        };
        assert!(matches!(split_dataset(&r, f, 0), Err(Error::Config(_))));
    }

    #[test]
    fn bad_fractions_rejected() {
        let f = SplitFractions {
            train: 0.5,
            val: 0.2,
            test: 0.2,
        };
        assert!(split_dataset(&records(4, 1), f, 0).is_err());
    }
}
