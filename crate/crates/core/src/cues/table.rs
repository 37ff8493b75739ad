use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::scene::Catalog;

pub const EMBED_DIM: usize = 25;

/// Per-dimension population mean and standard deviation over all entries.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Token to word-vector map.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    entries: BTreeMap<String, Vec<f64>>,
    stats: Option<EmbeddingStats>,
}

impl EmbeddingTable {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (token, v) in entries {
            if v.len() != EMBED_DIM {
                return Err(Error::Format(format!(
                    "vector for `{token}` has {} values, expected {EMBED_DIM}",
                    v.len()
                )));
            }
            map.insert(token, v);
        }
        Ok(Self::with_stats(map))
    }

    fn with_stats(entries: BTreeMap<String, Vec<f64>>) -> Self {
        let stats = compute_stats(entries.values());
        Self { entries, stats }
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `None` for an empty table.
    pub fn stats(&self) -> Option<&EmbeddingStats> {
        self.stats.as_ref()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Writes the table in the same text format [`load_embedding_table`] reads.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (token, v) in &self.entries {
            write!(w, "{token}")?;
            for x in v {
                write!(w, " {x:?}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn compute_stats<'a>(
    vectors: impl Iterator<Item = &'a Vec<f64>> + Clone,
) -> Option<EmbeddingStats> {
    let n = vectors.clone().count();
    if n == 0 {
        return None;
    }
    let mut mean = vec![0.0; EMBED_DIM];
    for v in vectors.clone() {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = [0.0; EMBED_DIM];
    for v in vectors {
        for ((s, x), m) in var.iter_mut().zip(v).zip(&mean) {
            *s += (x - m).powi(2);
        }
    }
    let std = var.iter().map(|s| (s / n as f64).sqrt()).collect();
    Some(EmbeddingStats { mean, std })
}

/// Reads whitespace-separated `token v1 .. v25` lines. Blank lines are
/// skipped; a repeated token keeps its last vector. Returns the table and the
/// number of duplicate lines.
pub fn load_embedding_table<R: BufRead>(reader: R) -> Result<(EmbeddingTable, usize)> {
    let mut entries = BTreeMap::new();
    let mut duplicates = 0;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else {
            continue;
        };
        let values = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("`{f}` is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != EMBED_DIM {
            return Err(Error::Format(format!(
                "line {line_no}: `{token}` has {} values, expected {EMBED_DIM}",
                values.len()
            )));
        }
        if entries.insert(token.to_string(), values).is_some() {
            duplicates += 1;
        }
    }
    Ok((EmbeddingTable::with_stats(entries), duplicates))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassEmbedding {
    pub vector: Vec<f64>,
    pub oov: bool,
}

/// Looks the whole name up first, then falls back to the mean of the vectors
/// of its whitespace/underscore separated tokens. Unknown names embed as the
/// zero vector with `oov` set.
pub fn embed_class_name(table: &EmbeddingTable, name: &str) -> ClassEmbedding {
    if let Some(v) = table.get(name) {
        return ClassEmbedding {
            vector: v.to_vec(),
            oov: false,
        };
    }
    let mut sum = vec![0.0; EMBED_DIM];
    let mut found = 0;
    for token in name.split(|c: char| c.is_whitespace() || c == '_') {
        if let Some(v) = table.get(token) {
            sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
            found += 1;
        }
    }
    if found == 0 {
        return ClassEmbedding {
            vector: sum,
            oov: true,
        };
    }
    sum.iter_mut().for_each(|s| *s /= found as f64);
    ClassEmbedding {
        vector: sum,
        oov: false,
    }
}

/// One vector per class drawn from `N(mean_d, std_d)` in every dimension.
pub fn make_random_table(names: &[String], stats: &EmbeddingStats, seed: u64) -> EmbeddingTable {
    let mut rng = stream_rng(seed, Stream::Table, 0);
    let entries = names.iter().map(|name| {
        let v = stats
            .mean
            .iter()
            .zip(&stats.std)
            .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (name.clone(), v)
    });
    EmbeddingTable::with_stats(entries.collect())
}

/// A stand-in for pretrained word vectors: each class vector is a shared
/// random direction scaled by the class's standardized log size, plus a
/// smaller class-specific perturbation. Classes of similar size therefore get
/// similar vectors.
pub fn synthetic_language_table(catalog: &Catalog, seed: u64) -> EmbeddingTable {
    let mut rng = stream_rng(seed, Stream::Table, 1);
    let log_size: Vec<f64> = catalog
        .classes()
        .iter()
        .map(|c| 0.5 * (c.mean_dims[0] * c.mean_dims[1]).ln())
        .collect();
    let n = log_size.len().max(1) as f64;
    let mean = log_size.iter().sum::<f64>() / n;
    let std = (log_size.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(1e-9);
    let direction: Vec<f64> = (0..EMBED_DIM)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let entries = catalog.classes().iter().zip(&log_size).map(|(c, s)| {
        let z = (s - mean) / std;
        let v = direction
            .iter()
            .map(|d| z * d + 0.3 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (c.name.clone(), v)
    });
    EmbeddingTable::with_stats(entries.collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(token: &str, v: f64) -> String {
        let mut s = token.to_string();
        for _ in 0..EMBED_DIM {
            s.push_str(&format!(" {v}"));
        }
        s
    }

    #[test]
    fn loads_and_reports_duplicates() {
        let text = [
            line("a", 1.0),
            line("b", 3.0),
            String::new(),
            line("a", 2.0),
        ]
        .join("\n");
        let (t, dups) = load_embedding_table(text.as_bytes()).unwrap();
        assert_eq!(dups, 1);
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("a").unwrap()[0], 2.0);
        let stats = t.stats().unwrap();
        assert_eq!(stats.mean[3], 2.5);
        assert_eq!(stats.std[3], 0.5);
    }

    #[test]
    fn malformed_lines_name_their_line() {
        let text = format!("{}\nbad 1 2 x", line("a", 1.0));
        match load_embedding_table(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            load_embedding_table("short 1 2 3".as_bytes()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn empty_stream_has_no_stats() {
        let (t, _) = load_embedding_table("".as_bytes()).unwrap();
        assert!(t.is_empty() && t.stats().is_none());
    }

    #[test]
    fn write_then_load_is_identity() {
        let t = synthetic_language_table(&Catalog::indoor(), 3);
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let (back, _) = load_embedding_table(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn multi_word_names_average_tokens() {
        let text = [line("coffee", 1.0), line("table", 3.0)].join("\n");
        let (t, _) = load_embedding_table(text.as_bytes()).unwrap();
        let e = embed_class_name(&t, "coffee table");
        assert!(!e.oov && e.vector.iter().all(|&x| x == 2.0));
        assert_eq!(embed_class_name(&t, "coffee_table").vector, e.vector);
        assert_eq!(embed_class_name(&t, "coffee zzqx").vector[0], 1.0);
        let miss = embed_class_name(&t, "zzqx");
        assert!(miss.oov && miss.vector.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_std_random_table_repeats_the_mean() {
        let stats = EmbeddingStats {
            mean: vec![0.5; EMBED_DIM],
            std: vec![0.0; EMBED_DIM],
        };
        let names = vec!["x".to_string(), "y".to_string()];
        let t = make_random_table(&names, &stats, 1);
        assert!(t.get("x").unwrap().iter().all(|&v| v == 0.5));
        assert_eq!(t, make_random_table(&names, &stats, 1));
    }
}
