use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BodyPart {
    LeftArm,
    RightArm,
    LeftLeg,
    RightLeg,
    Trunk,
}

impl BodyPart {
    pub const ALL: [BodyPart; 5] = [
        BodyPart::LeftArm,
        BodyPart::RightArm,
        BodyPart::LeftLeg,
        BodyPart::RightLeg,
        BodyPart::Trunk,
    ];

    pub fn key(self) -> &'static str {
        match self {
            BodyPart::LeftArm => "left_arm",
            BodyPart::RightArm => "right_arm",
            BodyPart::LeftLeg => "left_leg",
            BodyPart::RightLeg => "right_leg",
            BodyPart::Trunk => "trunk",
        }
    }

    fn from_key(key: &str) -> Option<Self> {
        BodyPart::ALL.into_iter().find(|p| p.key() == key)
    }
}

impl fmt::Display for BodyPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Assignment of frame dimensions to the five body parts. Groups are
/// disjoint and jointly cover `0..dims`. Indices are zero-based here; the
/// text form uses one-based inclusive ranges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, String>", into = "BTreeMap<String, String>")]
pub struct BodyPartMap {
    groups: [Vec<usize>; 5],
    dims: usize,
}

impl BodyPartMap {
    pub fn new(groups: [Vec<usize>; 5]) -> Result<Self> {
        let dims = groups.iter().map(Vec::len).sum::<usize>();
        let mut seen = vec![false; dims];
        for (part, group) in BodyPart::ALL.iter().zip(&groups) {
            if group.is_empty() {
                return Err(Error::Schema(format!("body part {part} has no dimensions")));
            }
            for &i in group {
                if i >= dims {
                    return Err(Error::Schema(format!(
                        "body part {part}: dimension {} outside 1..={dims}",
                        i + 1
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Schema(format!(
                        "dimension {} assigned to more than one body part",
                        i + 1
                    )));
                }
            }
        }
        Ok(BodyPartMap { groups, dims })
    }

    /// Splits `dims` into five contiguous, nearly equal groups in the order
    /// left arm, right arm, left leg, right leg, trunk.
    pub fn contiguous(dims: usize) -> Result<Self> {
        if dims < 5 {
            return Err(Error::Config(format!("{dims} dimensions cannot cover five body parts")));
        }
        let base = dims / 5;
        let extra = dims % 5;
        let mut start = 0;
        let groups = std::array::from_fn(|k| {
            let len = base + usize::from(k < extra);
            let g = (start..start + len).collect();
            start += len;
            g
        });
        BodyPartMap::new(groups)
    }

    /// Default 117-dimension UI-PRMD mapping over 39 angle triplets:
    /// triplets 1-7 trunk (waist, spine, chest, neck, head), 8-15 left arm,
    /// 16-23 right arm, 24-31 left leg, 32-39 right leg.
    pub fn uiprmd() -> Self {
        let triplets = |a: usize, b: usize| ((a - 1) * 3..b * 3).collect::<Vec<_>>();
        BodyPartMap::new([
            triplets(8, 15),
            triplets(16, 23),
            triplets(24, 31),
            triplets(32, 39),
            triplets(1, 7),
        ])
        .expect("static UI-PRMD map is valid")
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn group(&self, part: BodyPart) -> &[usize] {
        &self.groups[part as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (BodyPart, &[usize])> {
        BodyPart::ALL
            .into_iter()
            .map(move |p| (p, self.groups[p as usize].as_slice()))
    }

    /// Parses the text form: one entry per part, each a comma-separated list
    /// of one-based inclusive ranges, e.g. `"1-21, 40"`.
    pub fn from_ranges(entries: &BTreeMap<String, String>) -> Result<Self> {
        let mut groups: [Option<Vec<usize>>; 5] = Default::default();
        for (key, ranges) in entries {
            let part = BodyPart::from_key(key).ok_or_else(|| Error::Schema(format!("unknown body part `{key}`")))?;
            groups[part as usize] = Some(parse_ranges(ranges)?);
        }
        let mut out: [Vec<usize>; 5] = Default::default();
        for (part, g) in BodyPart::ALL.iter().zip(groups) {
            out[*part as usize] = g.ok_or_else(|| Error::Schema(format!("body part `{part}` is not mapped")))?;
        }
        BodyPartMap::new(out)
    }

    pub fn to_ranges(&self) -> BTreeMap<String, String> {
        self.iter()
            .map(|(p, g)| (p.key().to_string(), format_ranges(g)))
            .collect()
    }
}

impl TryFrom<BTreeMap<String, String>> for BodyPartMap {
    type Error = Error;

    fn try_from(value: BTreeMap<String, String>) -> Result<Self> {
        BodyPartMap::from_ranges(&value)
    }
}

impl From<BodyPartMap> for BTreeMap<String, String> {
    fn from(value: BodyPartMap) -> Self {
        value.to_ranges()
    }
}

fn parse_ranges(text: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for piece in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || Error::Schema(format!("bad dimension range `{piece}`"));
        let (lo, hi) = match piece.split_once('-') {
            Some((a, b)) => (
                a.trim().parse::<usize>().map_err(|_| bad())?,
                b.trim().parse::<usize>().map_err(|_| bad())?,
            ),
            None => {
                let v = piece.parse::<usize>().map_err(|_| bad())?;
                (v, v)
            }
        };
        if lo == 0 || hi < lo {
            return Err(bad());
        }
        out.extend(lo - 1..hi);
    }
    Ok(out)
}

fn format_ranges(indices: &[usize]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < indices.len() {
        let start = indices[i];
        let mut end = start;
        while i + 1 < indices.len() && indices[i + 1] == end + 1 {
            end += 1;
            i += 1;
        }
        parts.push(if start == end {
            format!("{}", start + 1)
        } else {
            format!("{}-{}", start + 1, end + 1)
        });
        i += 1;
    }
    parts.join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uiprmd_map_partitions_117_dims() {
        let map = BodyPartMap::uiprmd();
        assert_eq!(map.dims(), 117);
        let mut all: Vec<usize> = map.iter().flat_map(|(_, g)| g.to_vec()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..117).collect::<Vec<_>>());
    }

    #[test]
    fn contiguous_covers_every_dimension() {
        for dims in 5..40 {
            let map = BodyPartMap::contiguous(dims).unwrap();
            let total: usize = map.iter().map(|(_, g)| g.len()).sum();
            assert_eq!(total, dims);
        }
        assert!(BodyPartMap::contiguous(4).is_err());
    }

    #[test]
    fn overlapping_groups_rejected() {
        let r = BodyPartMap::new([vec![0], vec![0], vec![2], vec![3], vec![4]]);
        assert!(matches!(r, Err(Error::Schema(_))));
    }

    #[test]
    fn ranges_round_trip() {
        let map = BodyPartMap::uiprmd();
        let text = map.to_ranges();
        assert_eq!(text["trunk"], "1-21");
        assert_eq!(BodyPartMap::from_ranges(&text).unwrap(), map);
    }

    #[test]
    fn gap_in_coverage_rejected() {
        let mut m = BTreeMap::new();
        for (k, v) in [
            ("left_arm", "1"),
            ("right_arm", "2"),
            ("left_leg", "3"),
            ("right_leg", "4"),
            ("trunk", "6"),
        ] {
            m.insert(k.to_string(), v.to_string());
        }
        assert!(BodyPartMap::from_ranges(&m).is_err());
    }
}
