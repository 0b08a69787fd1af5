//! Loading the 20 Newsgroups "bydate" directory layout.
//!
//! The expected layout is `<root>/<split>/<category>/<file>` with
//! `split ∈ {train, test}`. Categories are the union of the category
//! directories of both splits, sorted lexicographically; a category's index in
//! that list is its label id.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

pub const SPLITS: [&str; 2] = ["train", "test"];

/// Canonical location of the bydate archive.
pub const BYDATE_URL: &str = "http://qwone.com/~jason/20Newsgroups/20news-bydate.tar.gz";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDocument {
    /// `<split>/<category>/<filename>`
    pub doc_id: String,
    pub label_id: usize,
    pub label_name: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<RawDocument>,
    pub test: Vec<RawDocument>,
    pub label_names: Vec<String>,
}

impl CorpusSplit {
    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn stats(&self) -> CorpusStats {
        let mut per_category: Vec<CategoryCount> = self
            .label_names
            .iter()
            .map(|name| CategoryCount {
                name: name.clone(),
                train: 0,
                test: 0,
            })
            .collect();
        for d in &self.train {
            per_category[d.label_id].train += 1;
        }
        for d in &self.test {
            per_category[d.label_id].test += 1;
        }
        CorpusStats {
            num_classes: self.num_classes(),
            train: self.train.len(),
            test: self.test.len(),
            per_category,
        }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct CategoryCount {
    pub name: String,
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct CorpusStats {
    pub num_classes: usize,
    pub train: usize,
    pub test: usize,
    pub per_category: Vec<CategoryCount>,
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads both splits. Non-UTF-8 bytes decode to U+FFFD.
pub fn load_corpus(root: impl AsRef<Path>) -> Result<CorpusSplit> {
    let root = root.as_ref();
    let mut categories = BTreeSet::new();
    let mut split_dirs = Vec::new();
    for split in SPLITS {
        let dir = root.join(split);
        if !dir.is_dir() {
            return Err(Error::Corpus(format!(
                "missing split directory {}",
                dir.display()
            )));
        }
        let cats: Vec<PathBuf> = read_dir_sorted(&dir)?
            .into_iter()
            .filter(|p| p.is_dir())
            .collect();
        categories.extend(cats.iter().map(|p| file_name(p)));
        split_dirs.push((split, cats));
    }
    let label_names: Vec<String> = categories.into_iter().collect();
    let index: HashMap<&str, usize> = label_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let mut splits = Vec::with_capacity(2);
    for (split, cats) in split_dirs {
        let mut docs = Vec::new();
        for cat_dir in cats {
            let label_name = file_name(&cat_dir);
            let label_id = index[label_name.as_str()];
            for path in read_dir_sorted(&cat_dir)? {
                if !path.is_file() {
                    continue;
                }
                let mut bytes = Vec::new();
                fs::File::open(&path)
                    .and_then(|mut f| f.read_to_end(&mut bytes))
                    .map_err(|e| Error::io(&path, e))?;
                docs.push(RawDocument {
                    doc_id: format!("{split}/{label_name}/{}", file_name(&path)),
                    label_id,
                    label_name: label_name.clone(),
                    text: String::from_utf8_lossy(&bytes).into_owned(),
                });
            }
        }
        splits.push(docs);
    }
    let test = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    Ok(CorpusSplit {
        train,
        test,
        label_names,
    })
}

/// Keeps only `categories`, re-indexing labels densely over the kept names
/// in sorted order.
pub fn subset(corpus: &CorpusSplit, categories: &[String]) -> Result<CorpusSplit> {
    for name in categories {
        if !corpus.label_names.contains(name) {
            return Err(Error::UnknownCategory {
                name: name.clone(),
                valid: corpus.label_names.clone(),
            });
        }
    }
    let kept: BTreeSet<&str> = categories.iter().map(String::as_str).collect();
    let remap: BTreeMap<usize, usize> = corpus
        .label_names
        .iter()
        .enumerate()
        .filter(|(_, n)| kept.contains(n.as_str()))
        .enumerate()
        .map(|(new, (old, _))| (old, new))
        .collect();
    let filter = |docs: &[RawDocument]| -> Vec<RawDocument> {
        docs.iter()
            .filter_map(|d| {
                remap.get(&d.label_id).map(|&label_id| RawDocument {
                    label_id,
                    ..d.clone()
                })
            })
            .collect()
    };
    Ok(CorpusSplit {
        train: filter(&corpus.train),
        test: filter(&corpus.test),
        label_names: kept.into_iter().map(String::from).collect(),
    })
}

/// Unpacks a `.tar.gz` archive into `dest`. The bydate tarball contains
/// `20news-bydate-train/` and `20news-bydate-test/`; those are renamed to
/// `train/` and `test/` so the result loads with [`load_corpus`].
pub fn unpack_archive(archive: &Path, dest: &Path) -> Result<()> {
    let file = fs::File::open(archive).map_err(|e| Error::io(archive, e))?;
    unpack_reader(file, dest)
}

pub fn unpack_reader(reader: impl Read, dest: &Path) -> Result<()> {
    fs::create_dir_all(dest).map_err(|e| Error::io(dest, e))?;
    let mut tar = tar::Archive::new(flate2::read::GzDecoder::new(reader));
    let entries = tar.entries().map_err(|e| Error::io(dest, e))?;
    for entry in entries {
        let mut entry = entry.map_err(|e| Error::io(dest, e))?;
        let path = entry.path().map_err(|e| Error::io(dest, e))?.into_owned();
        let mut parts = path
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned());
        let Some(top) = parts.next() else { continue };
        let split = match top.as_str() {
            "20news-bydate-train" | "train" => "train",
            "20news-bydate-test" | "test" => "test",
            _ => continue,
        };
        let rest: PathBuf = parts.collect();
        if rest
            .components()
            .any(|c| !matches!(c, std::path::Component::Normal(_)))
        {
            return Err(Error::Corpus(format!(
                "unsafe archive path {}",
                path.display()
            )));
        }
        let target = dest.join(split).join(rest);
        if entry.header().entry_type().is_dir() {
            fs::create_dir_all(&target).map_err(|e| Error::io(&target, e))?;
        } else if entry.header().entry_type().is_file() {
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            entry.unpack(&target).map_err(|e| Error::io(&target, e))?;
        }
    }
    Ok(())
}
