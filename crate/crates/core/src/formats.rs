//! Plain-text interchange formats shared by every stage.
//!
//! Each artifact may start with `#` comment lines; writers emit one header
//! comment carrying the stage name, config hash and seed.
//!
//! * token file: `doc_id<TAB>label_id<TAB>tok tok ...` per document
//! * doc-vector file: `N d`, then `doc_id label_id v1 ... vd` per document

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::textprep::TokenizedDoc;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactHeader {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
}

impl ArtifactHeader {
    pub fn new(stage: &str, config_hash: &str, seed: u64) -> Self {
        Self {
            stage: stage.into(),
            config_hash: config_hash.into(),
            seed,
        }
    }

    /// Parses the first `# cryptext ...` comment line of an artifact.
    pub fn find(text: &str) -> Option<Self> {
        let line = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .find(|l| l.starts_with("# cryptext "))?;
        let mut stage = None;
        let mut config_hash = None;
        let mut seed = None;
        for field in line.trim_start_matches("# cryptext ").split(' ') {
            match field.split_once('=') {
                Some(("stage", v)) => stage = Some(v.to_string()),
                Some(("config", v)) => config_hash = Some(v.to_string()),
                Some(("seed", v)) => seed = v.parse().ok(),
                _ => {}
            }
        }
        Some(Self {
            stage: stage?,
            config_hash: config_hash?,
            seed: seed?,
        })
    }

    pub fn comment_line(&self) -> String {
        format!(
            "# cryptext stage={} config={} seed={}\n",
            self.stage, self.config_hash, self.seed
        )
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.starts_with('#'))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn render_tokens(docs: &[TokenizedDoc], header: Option<&ArtifactHeader>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.comment_line());
    }
    for d in docs {
        let _ = writeln!(out, "{}\t{}\t{}", d.doc_id, d.label_id, d.tokens.join(" "));
    }
    out
}

pub fn parse_tokens(text: &str, path: &Path) -> Result<Vec<TokenizedDoc>> {
    data_lines(text)
        .map(|(n, line)| {
            let mut fields = line.splitn(3, '\t');
            let (Some(doc_id), Some(label), Some(tokens)) =
                (fields.next(), fields.next(), fields.next())
            else {
                return Err(Error::format(
                    path,
                    n,
                    "expected doc_id<TAB>label_id<TAB>tokens",
                ));
            };
            if doc_id.is_empty() {
                return Err(Error::format(path, n, "empty doc_id"));
            }
            let label_id = label
                .parse()
                .map_err(|_| Error::format(path, n, format!("bad label_id {label:?}")))?;
            Ok(TokenizedDoc {
                doc_id: doc_id.to_string(),
                label_id,
                tokens: tokens
                    .split(' ')
                    .filter(|t| !t.is_empty())
                    .map(String::from)
                    .collect(),
            })
        })
        .collect()
}

pub fn write_tokens(
    path: &Path,
    docs: &[TokenizedDoc],
    header: Option<&ArtifactHeader>,
) -> Result<()> {
    write_text(path, &render_tokens(docs, header))
}

pub fn read_tokens(path: &Path) -> Result<Vec<TokenizedDoc>> {
    parse_tokens(&read_text(path)?, path)
}

/// Row-major document vectors with their ids and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DocVectors {
    pub doc_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl DocVectors {
    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn render_vectors(v: &DocVectors, header: Option<&ArtifactHeader>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.comment_line());
    }
    let _ = writeln!(out, "{} {}", v.len(), v.dim);
    for i in 0..v.len() {
        let _ = write!(out, "{} {}", v.doc_ids[i], v.labels[i]);
        for x in v.row(i) {
            // `{}` on f64 prints the shortest string that round-trips exactly.
            let _ = write!(out, " {x}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_vectors(text: &str, path: &Path) -> Result<DocVectors> {
    let mut lines = data_lines(text);
    let (n0, head) = lines
        .next()
        .ok_or_else(|| Error::format(path, 1, "missing `N d` header"))?;
    let mut hf = head.split(' ');
    let (Some(Ok(n)), Some(Ok(dim)), None) = (
        hf.next().map(str::parse::<usize>),
        hf.next().map(str::parse::<usize>),
        hf.next(),
    ) else {
        return Err(Error::format(path, n0, "expected `N d` header"));
    };
    let mut v = DocVectors {
        doc_ids: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        dim,
        data: Vec::with_capacity(n * dim),
    };
    for (ln, line) in lines {
        let mut f = line.split(' ');
        let doc_id = f.next().filter(|s| !s.is_empty());
        let label = f.next().and_then(|s| s.parse::<usize>().ok());
        let (Some(doc_id), Some(label)) = (doc_id, label) else {
            return Err(Error::format(
                path,
                ln,
                "expected `doc_id label_id v1 .. vd`",
            ));
        };
        let start = v.data.len();
        for tok in f {
            let x: f64 = tok
                .parse()
                .map_err(|_| Error::format(path, ln, format!("bad float {tok:?}")))?;
            if !x.is_finite() {
                return Err(Error::format(path, ln, "non-finite value"));
            }
            v.data.push(x);
        }
        if v.data.len() - start != dim {
            return Err(Error::format(
                path,
                ln,
                format!("expected {dim} values, found {}", v.data.len() - start),
            ));
        }
        v.doc_ids.push(doc_id.to_string());
        v.labels.push(label);
    }
    if v.len() != n {
        return Err(Error::format(
            path,
            n0,
            format!("header says {n} rows, found {}", v.len()),
        ));
    }
    Ok(v)
}

pub fn write_vectors(path: &Path, v: &DocVectors, header: Option<&ArtifactHeader>) -> Result<()> {
    write_text(path, &render_vectors(v, header))
}

pub fn read_vectors(path: &Path) -> Result<DocVectors> {
    parse_vectors(&read_text(path)?, path)
}
