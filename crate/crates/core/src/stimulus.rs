//! Stimulus-set ingestion from the on-disk layout
//! `<root>/<class>/<image_id>/{original,standard_seedK,robust_seedK,texform_seedK}.png`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Standard,
    Robust,
    Texform,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Standard, Family::Robust, Family::Texform];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Standard => "standard",
            Family::Robust => "robust",
            Family::Texform => "texform",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Family::Standard),
            "robust" => Ok(Family::Robust),
            "texform" => Ok(Family::Texform),
            other => Err(Error::Invalid(format!("unknown stimulus family {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusFile {
    /// Path relative to the set root.
    pub path: PathBuf,
    /// sha256 of the file bytes.
    pub hash: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusEntry {
    pub original: Option<StimulusFile>,
    /// Keyed by family, then seed.
    pub synth: BTreeMap<Family, BTreeMap<u32, StimulusFile>>,
}

impl StimulusEntry {
    pub fn get(&self, family: Family, seed: u32) -> Option<&StimulusFile> {
        self.synth.get(&family).and_then(|m| m.get(&seed))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusSet {
    pub root: PathBuf,
    /// class -> image id -> files
    pub classes: BTreeMap<String, BTreeMap<String, StimulusEntry>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetCounts {
    pub classes: usize,
    /// Images per class (the minimum across classes).
    pub images_per_class: usize,
    /// Distinct seeds seen.
    pub seeds: usize,
    /// Distinct synthesized families seen.
    pub families: usize,
    pub per_class: BTreeMap<String, usize>,
    pub files: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// `class/image_id` entries without an original.
    pub missing_originals: Vec<String>,
    /// `class/image_id/family_seedK` combinations absent while present elsewhere.
    pub missing_synth: Vec<String>,
    pub unrecognized: Vec<String>,
    /// Same image, same family, different seeds, identical bytes.
    pub duplicates: Vec<(String, String)>,
}

impl IngestReport {
    pub fn is_clean(&self) -> bool {
        self.missing_originals.is_empty()
            && self.missing_synth.is_empty()
            && self.unrecognized.is_empty()
            && self.duplicates.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub set: StimulusSet,
    pub counts: SetCounts,
    pub report: IngestReport,
}

impl StimulusSet {
    pub fn counts(&self) -> SetCounts {
        let mut seeds = BTreeSet::new();
        let mut families = BTreeSet::new();
        let mut files = 0;
        for images in self.classes.values() {
            for e in images.values() {
                files += usize::from(e.original.is_some());
                for (f, m) in &e.synth {
                    families.insert(*f);
                    seeds.extend(m.keys().copied());
                    files += m.len();
                }
            }
        }
        let per_class: BTreeMap<String, usize> = self.classes.iter().map(|(c, m)| (c.clone(), m.len())).collect();
        SetCounts {
            classes: self.classes.len(),
            images_per_class: per_class.values().copied().min().unwrap_or(0),
            seeds: seeds.len(),
            families: families.len(),
            per_class,
            files,
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str, &StimulusEntry)> {
        self.classes
            .iter()
            .flat_map(|(c, m)| m.iter().map(move |(i, e)| (c.as_str(), i.as_str(), e)))
    }

    pub fn resolve(&self, file: &StimulusFile) -> PathBuf {
        self.root.join(&file.path)
    }

    /// Every file keyed by content hash.
    pub fn by_hash(&self) -> BTreeMap<String, PathBuf> {
        let mut out = BTreeMap::new();
        for (_, _, e) in self.entries() {
            for f in e.original.iter().chain(e.synth.values().flat_map(|m| m.values())) {
                out.insert(f.hash.clone(), self.resolve(f));
            }
        }
        out
    }
}

impl StimulusSet {
    /// Union of several sets, e.g. originals in one tree and each family's
    /// synthesized files in others. Later sets win on conflicts. File paths
    /// become absolute, so [`StimulusSet::resolve`] works for every entry.
    pub fn merge(sets: &[StimulusSet]) -> StimulusSet {
        let mut out = StimulusSet {
            root: sets.first().map(|s| s.root.clone()).unwrap_or_default(),
            classes: BTreeMap::new(),
        };
        for set in sets {
            let absolute = |f: &StimulusFile| StimulusFile {
                path: set.resolve(f),
                hash: f.hash.clone(),
            };
            for (class, images) in &set.classes {
                for (id, e) in images {
                    let entry = out.classes.entry(class.clone()).or_default().entry(id.clone()).or_default();
                    if let Some(o) = &e.original {
                        entry.original = Some(absolute(o));
                    }
                    for (fam, seeds) in &e.synth {
                        let m = entry.synth.entry(*fam).or_default();
                        for (seed, f) in seeds {
                            m.insert(*seed, absolute(f));
                        }
                    }
                }
            }
        }
        out
    }
}

/// `None` for unknown names, `Some(None)` for the original.
fn parse_stem(stem: &str) -> Option<Option<(Family, u32)>> {
    if stem == "original" {
        return Some(None);
    }
    let (fam, seed) = stem.split_once("_seed")?;
    let family = fam.parse().ok()?;
    let seed = seed.parse().ok()?;
    Some(Some((family, seed)))
}

fn sorted_dir(path: &Path) -> Result<Vec<std::fs::DirEntry>> {
    let mut v: Vec<_> = std::fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    v.sort_by_key(|e| e.file_name());
    Ok(v)
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Walk the layout, returning whatever parsed plus an itemized report of
/// everything that did not.
pub fn ingest_stimulus_set(root: &Path) -> Result<IngestOutcome> {
    let mut set = StimulusSet {
        root: root.to_path_buf(),
        classes: BTreeMap::new(),
    };
    let mut report = IngestReport::default();
    for class in sorted_dir(root)? {
        let cname = class.file_name().to_string_lossy().into_owned();
        if !class.path().is_dir() {
            if !cname.ends_with(".json") {
                report.unrecognized.push(cname);
            }
            continue;
        }
        let images = set.classes.entry(cname.clone()).or_default();
        for image in sorted_dir(&class.path())? {
            let iname = image.file_name().to_string_lossy().into_owned();
            if !image.path().is_dir() {
                report.unrecognized.push(format!("{cname}/{iname}"));
                continue;
            }
            let entry = images.entry(iname.clone()).or_default();
            for file in sorted_dir(&image.path())? {
                let fname = file.file_name().to_string_lossy().into_owned();
                // Synthesis sidecars live next to their images.
                if fname.ends_with(".json") {
                    continue;
                }
                let rel = PathBuf::from(&cname).join(&iname).join(&fname);
                let parsed = fname.strip_suffix(".png").and_then(parse_stem);
                let Some(kind) = parsed else {
                    report.unrecognized.push(rel.to_string_lossy().into_owned());
                    continue;
                };
                let sf = StimulusFile {
                    hash: hash_file(&file.path())?,
                    path: rel,
                };
                match kind {
                    None => entry.original = Some(sf),
                    Some((family, seed)) => {
                        entry.synth.entry(family).or_default().insert(seed, sf);
                    }
                }
            }
        }
    }

    let counts = set.counts();
    let mut all_seeds = BTreeSet::new();
    let mut all_families = BTreeSet::new();
    for (_, _, e) in set.entries() {
        for (f, m) in &e.synth {
            all_families.insert(*f);
            all_seeds.extend(m.keys().copied());
        }
    }
    for (c, i, e) in set.entries() {
        if e.original.is_none() {
            report.missing_originals.push(format!("{c}/{i}"));
        }
        for f in &all_families {
            for s in &all_seeds {
                if e.get(*f, *s).is_none() {
                    report.missing_synth.push(format!("{c}/{i}/{f}_seed{s}"));
                }
            }
        }
        for (f, m) in &e.synth {
            let files: Vec<_> = m.iter().collect();
            for (a, (sa, fa)) in files.iter().enumerate() {
                for (sb, fb) in &files[a + 1..] {
                    if fa.hash == fb.hash {
                        report
                            .duplicates
                            .push((format!("{c}/{i}/{f}_seed{sa}"), format!("{c}/{i}/{f}_seed{sb}")));
                    }
                }
            }
        }
    }
    Ok(IngestOutcome { set, counts, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stems_parse() {
        assert_eq!(parse_stem("original"), Some(None));
        assert_eq!(parse_stem("robust_seed3"), Some(Some((Family::Robust, 3))));
        assert_eq!(parse_stem("robust_seedx"), None);
        assert_eq!(parse_stem("other"), None);
    }
}
