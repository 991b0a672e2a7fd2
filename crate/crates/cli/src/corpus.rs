//! `<item>_<source>.wav` directory layout.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use seploss::audio::{AudioBuffer, MultiSourceAudio};
use seploss::wav::read_wav;

use crate::CliError;

pub const DEFAULT_SOURCES: [&str; 4] = ["vocals", "drums", "bass", "other"];

/// item → source → file.
pub type Listing = BTreeMap<String, BTreeMap<String, PathBuf>>;

/// Splits `song_a_vocals` into (`song_a`, `vocals`) using the source vocabulary.
pub fn split_name<'a>(stem: &str, sources: &'a [String]) -> Option<(String, &'a str)> {
    sources
        .iter()
        .filter_map(|s| {
            let item = stem.strip_suffix(s.as_str())?.strip_suffix('_')?;
            (!item.is_empty()).then(|| (item.to_string(), s.as_str()))
        })
        .max_by_key(|(_, s)| s.len())
}

/// WAV files in `dir`, plus the names that do not follow the naming pattern.
pub fn scan(dir: &Path, sources: &[String]) -> Result<(Listing, Vec<String>), CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
    let mut listing = Listing::new();
    let mut unmatched = Vec::new();
    let mut paths: Vec<PathBuf> = entries
        .map(|e| e.map(|e| e.path()).map_err(|err| CliError::io(dir, err)))
        .collect::<Result<_, _>>()?;
    paths.sort();
    for path in paths {
        let is_wav = path.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav"));
        if !is_wav || !path.is_file() {
            continue;
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        match split_name(&stem, sources) {
            Some((item, source)) => {
                listing.entry(item).or_default().insert(source.to_string(), path);
            }
            None => unmatched.push(path.display().to_string()),
        }
    }
    Ok((listing, unmatched))
}

/// Reference and estimate files for one item, in source-vocabulary order.
#[derive(Debug, Clone)]
pub struct ItemFiles {
    pub item: String,
    pub sources: Vec<String>,
    pub references: Vec<PathBuf>,
    pub estimates: Vec<PathBuf>,
}

/// Pairs every reference item with its estimates; any gap is a usage error listing all problems.
pub fn pair(ref_dir: &Path, est_dir: &Path, sources: &[String]) -> Result<Vec<ItemFiles>, CliError> {
    let (refs, ref_bad) = scan(ref_dir, sources)?;
    let (ests, est_bad) = scan(est_dir, sources)?;
    let mut problems: Vec<String> = ref_bad
        .into_iter()
        .chain(est_bad)
        .map(|p| format!("file does not match <item>_<source>.wav: {p}"))
        .collect();
    if refs.is_empty() {
        problems.push(format!("no reference files in {}", ref_dir.display()));
    }
    let mut out = Vec::new();
    for (item, files) in &refs {
        let present: BTreeSet<&String> = files.keys().collect();
        let used: Vec<&String> = sources.iter().filter(|s| present.contains(s)).collect();
        let mut estimates = Vec::new();
        for s in &used {
            match ests.get(item).and_then(|e| e.get(*s)) {
                Some(p) => estimates.push(p.clone()),
                None => problems.push(format!("missing estimate {}", est_dir.join(format!("{item}_{s}.wav")).display())),
            }
        }
        out.push(ItemFiles {
            item: item.clone(),
            sources: used.iter().map(|s| s.to_string()).collect(),
            references: used.iter().map(|s| files[*s].clone()).collect(),
            estimates,
        });
    }
    for (item, files) in &ests {
        for (s, p) in files {
            if refs.get(item).and_then(|r| r.get(s)).is_none() {
                problems.push(format!("estimate without reference: {}", p.display()));
            }
        }
    }
    if let Some(first) = out.first() {
        for f in &out {
            if f.sources != first.sources {
                problems.push(format!(
                    "item {} has sources {:?} but item {} has {:?}",
                    f.item, f.sources, first.item, first.sources
                ));
            }
        }
    }
    if !problems.is_empty() {
        return Err(CliError::Usage(problems.join("\n")));
    }
    Ok(out)
}

pub fn load_sources(paths: &[PathBuf]) -> Result<MultiSourceAudio, CliError> {
    let buffers = paths
        .iter()
        .map(|p| read_wav(p).map_err(|e| CliError::io(p, e)))
        .collect::<Result<Vec<AudioBuffer>, _>>()?;
    Ok(MultiSourceAudio::from_sources(&buffers)?)
}
