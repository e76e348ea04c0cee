//! Electrode geometry on the 2D head projection and the initial regional
//! division of channels.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FACED32: &str = include_str!("../data/faced32.montage");
const DESK8: &str = include_str!("../data/desk8.montage");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hemisphere {
    Left,
    Right,
    Midline,
}

impl Hemisphere {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "L" | "l" => Some(Self::Left),
            "R" | "r" => Some(Self::Right),
            "Z" | "z" | "M" | "m" => Some(Self::Midline),
            _ => None,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Self::Left => "L",
            Self::Right => "R",
            Self::Midline => "Z",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Electrode {
    pub name: String,
    pub pos: [f64; 2],
    /// Region tag used to group channels; `None` when the file omits it.
    pub region: Option<String>,
    pub hemisphere: Option<Hemisphere>,
}

/// Named electrodes on a disk of radius `radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct Montage {
    electrodes: Vec<Electrode>,
    radius: f64,
    index: HashMap<String, usize>,
}

impl Montage {
    pub fn new(electrodes: Vec<Electrode>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Config(format!("montage radius must be positive, got {radius}")));
        }
        if electrodes.len() < 2 {
            return Err(Error::Config("montage needs at least two electrodes".into()));
        }
        let mut index = HashMap::with_capacity(electrodes.len());
        for (i, e) in electrodes.iter().enumerate() {
            if index.insert(e.name.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate electrode name {}", e.name)));
            }
            let r = e.pos[0].hypot(e.pos[1]);
            if !r.is_finite() || r > radius * (1.0 + 1e-9) {
                return Err(Error::Config(format!(
                    "electrode {} at distance {r} lies outside the map of radius {radius}",
                    e.name
                )));
            }
        }
        Ok(Self { electrodes, radius, index })
    }

    /// Parses the line-oriented montage format:
    ///
    /// ```text
    /// # comment
    /// radius 1.0
    /// Fp1 -0.247 0.761 frontal L
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let mut radius = None;
        let mut electrodes = Vec::new();
        let mut offset = 0;
        for (lineno, raw) in text.split_inclusive('\n').enumerate() {
            let line_offset = offset;
            offset += raw.len();
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { offset: line_offset, line: lineno + 1, msg };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] == "radius" {
                if fields.len() != 2 {
                    return Err(err("expected `radius <float>`".into()));
                }
                let r = fields[1]
                    .parse::<f64>()
                    .map_err(|e| err(format!("bad radius {:?}: {e}", fields[1])))?;
                radius = Some(r);
                continue;
            }
            if !(3..=5).contains(&fields.len()) {
                return Err(err(format!(
                    "expected `name x y [region [hemisphere]]`, got {} fields",
                    fields.len()
                )));
            }
            let coord = |s: &str| s.parse::<f64>().map_err(|e| err(format!("bad coordinate {s:?}: {e}")));
            let region = fields.get(3).filter(|s| **s != "-").map(|s| s.to_string());
            let hemisphere = match fields.get(4) {
                None => None,
                Some(h) => Some(
                    Hemisphere::parse(h).ok_or_else(|| err(format!("unknown hemisphere {h:?}")))?,
                ),
            };
            electrodes.push(Electrode {
                name: fields[0].to_string(),
                pos: [coord(fields[1])?, coord(fields[2])?],
                region,
                hemisphere,
            });
        }
        let radius = radius.ok_or_else(|| Error::Parse {
            offset: 0,
            line: 1,
            msg: "missing `radius` header line".into(),
        })?;
        Self::new(electrodes, radius)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Serializes back into the text format accepted by [`Montage::parse`].
    pub fn to_text(&self) -> String {
        let mut out = format!("radius {}\n", self.radius);
        for e in &self.electrodes {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                e.name,
                e.pos[0],
                e.pos[1],
                e.region.as_deref().unwrap_or("-"),
                e.hemisphere.map(Hemisphere::tag).unwrap_or("-"),
            ));
        }
        out
    }

    /// The bundled 32-channel layout.
    pub fn faced32() -> Self {
        Self::parse(FACED32).expect("bundled montage parses")
    }

    /// The bundled 8-channel desk-scale subset.
    pub fn desk8() -> Self {
        Self::parse(DESK8).expect("bundled montage parses")
    }

    pub fn bundled(name: &str) -> Option<Self> {
        match name {
            "faced32" => Some(Self::faced32()),
            "desk8" => Some(Self::desk8()),
            _ => None,
        }
    }

    pub fn electrodes(&self) -> &[Electrode] {
        &self.electrodes
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.electrodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.electrodes.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.electrodes.iter().map(|e| e.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index.get(name).copied().ok_or_else(|| Error::NotFound(format!("channel {name}")))
    }

    pub fn electrode(&self, name: &str) -> Result<&Electrode> {
        Ok(&self.electrodes[self.index_of(name)?])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Euclidean distance between two electrodes on the projection.
    pub fn physical_distance(&self, a: &str, b: &str) -> Result<f64> {
        let pa = self.electrode(a)?.pos;
        let pb = self.electrode(b)?.pos;
        Ok((pa[0] - pb[0]).hypot(pa[1] - pb[1]))
    }

    /// Direct and indirect generation range: the map radius.
    pub fn l1(&self) -> f64 {
        self.radius
    }

    pub fn l2(&self) -> f64 {
        self.radius
    }

    /// Mutual generation range: the map diameter.
    pub fn l3(&self) -> f64 {
        2.0 * self.radius
    }
}

/// A group of channels sharing one reference. The reference is always the
/// first member.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionalDivision {
    pub id: usize,
    pub reference: String,
    pub members: Vec<String>,
}

impl RegionalDivision {
    pub fn new(id: usize, reference: impl Into<String>, members: Vec<String>) -> Result<Self> {
        let reference = reference.into();
        if members.first() != Some(&reference) {
            return Err(Error::Config(format!(
                "division {id}: reference {reference} must be the first member"
            )));
        }
        Ok(Self { id, reference, members })
    }

    /// Members other than the reference.
    pub fn others(&self) -> &[String] {
        &self.members[1..]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.members.iter().any(|m| m == name)
    }
}

impl fmt::Display for RegionalDivision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RD{}[{}: {}]", self.id, self.reference, self.members[1..].join(","))
    }
}

/// Rules turning region/hemisphere annotations into divisions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DivisionRules {
    /// Designated reference channels, one per resulting division.
    pub references: Vec<String>,
    /// Channel pairs pulled out into their own division; the first of each
    /// pair is its reference unless another member is listed in `references`.
    pub pairs: Vec<(String, String)>,
    /// Regions split along the midline into left, right and midline groups.
    pub split_hemispheres: Vec<String>,
}

impl DivisionRules {
    pub fn faced32() -> Self {
        Self {
            references: ["Fp1", "Fz", "Cz", "A1", "CP1", "CP2", "Pz", "T5", "Oz", "O1"]
                .map(String::from)
                .to_vec(),
            pairs: vec![("A1".into(), "A2".into()), ("O1".into(), "O2".into())],
            split_hemispheres: vec!["centrotemporal".into()],
        }
    }

    pub fn desk8() -> Self {
        Self {
            references: ["Fp1", "Fp2", "Cz", "O1"].map(String::from).to_vec(),
            pairs: vec![("O1".into(), "O2".into())],
            split_hemispheres: vec!["frontal".into()],
        }
    }

    pub fn bundled(name: &str) -> Option<Self> {
        match name {
            "faced32" => Some(Self::faced32()),
            "desk8" => Some(Self::desk8()),
            _ => None,
        }
    }

    /// All channels in one division with the given reference.
    pub fn single(reference: impl Into<String>) -> Self {
        Self { references: vec![reference.into()], ..Self::default() }
    }
}

/// Groups channels by region (optionally split by hemisphere), extracts the
/// configured pairs and assigns each group its configured reference.
///
/// Divisions are ordered by the montage position of their reference.
pub fn initial_division(montage: &Montage, rules: &DivisionRules) -> Result<Vec<RegionalDivision>> {
    for r in &rules.references {
        montage.index_of(r)?;
    }
    let mut paired: HashMap<&str, usize> = HashMap::new();
    for (k, (a, b)) in rules.pairs.iter().enumerate() {
        for c in [a, b] {
            montage.index_of(c)?;
            if paired.insert(c.as_str(), k).is_some() {
                return Err(Error::Config(format!("channel {c} appears in more than one pair")));
            }
        }
    }

    // group key -> members in montage order
    let mut groups: BTreeMap<usize, (String, Vec<String>)> = BTreeMap::new();
    let mut key_of: HashMap<String, usize> = HashMap::new();
    for (idx, e) in montage.electrodes().iter().enumerate() {
        let key = if let Some(&k) = paired.get(e.name.as_str()) {
            format!("pair#{k}")
        } else {
            let region = e.region.as_ref().ok_or_else(|| {
                Error::Config(format!("channel {} has no region annotation", e.name))
            })?;
            if rules.split_hemispheres.contains(region) {
                let h = e.hemisphere.ok_or_else(|| {
                    Error::Config(format!("channel {} has no hemisphere annotation", e.name))
                })?;
                format!("{region}/{}", h.tag())
            } else {
                region.clone()
            }
        };
        let slot = *key_of.entry(key.clone()).or_insert(idx);
        groups.entry(slot).or_insert_with(|| (key, Vec::new())).1.push(e.name.clone());
    }

    let mut divisions = Vec::with_capacity(groups.len());
    for (_, (key, members)) in groups {
        let refs: Vec<&String> = members.iter().filter(|m| rules.references.contains(m)).collect();
        let reference = match (refs.as_slice(), key.starts_with("pair#")) {
            ([one], _) => (*one).clone(),
            ([], true) => members[0].clone(),
            ([], false) => {
                return Err(Error::Config(format!("group {key} has no designated reference")))
            }
            (_, _) => {
                return Err(Error::Config(format!(
                    "group {key} has several designated references: {refs:?}"
                )))
            }
        };
        let mut ordered = vec![reference.clone()];
        ordered.extend(members.into_iter().filter(|m| *m != reference));
        divisions.push((montage.index_of(&reference)?, reference, ordered));
    }
    divisions.sort_by_key(|d| d.0);
    divisions
        .into_iter()
        .enumerate()
        .map(|(i, (_, r, m))| RegionalDivision::new(i + 1, r, m))
        .collect()
}
