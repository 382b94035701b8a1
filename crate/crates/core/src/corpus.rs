//! Line-delimited corpus files.
//!
//! A corpus starts with the header line `synvl-corpus v1` followed by one
//! JSON record per line. Next to it, `<corpus>.manifest.json` stores the
//! record count and the SHA-256 of the whole corpus file.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{extract_scene_graph, RelationLabel, RelationThresholds, SceneGraph};
use crate::scene::{generate_scene, Catalog, GenerationConfig, Scene};
use crate::text::{Description, Level, TextGenerator};

pub const CORPUS_HEADER: &str = "synvl-corpus v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Split {
    /// 90/10 assignment from a hash of the scene seed.
    pub fn for_seed(seed: u64) -> Split {
        if splitmix64(seed) % 10 == 0 {
            Split::Val
        } else {
            Split::Train
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub split: Split,
    pub scene: Scene,
    pub scene_graph: SceneGraph,
    pub descriptions: Vec<Description>,
}

impl CorpusRecord {
    /// Referential integrity: graph nodes are exactly the scene's instances and
    /// every description anchor and span points into the scene.
    pub fn validate(&self, num_categories: usize) -> Result<()> {
        self.scene.validate(num_categories)?;
        self.scene_graph.validate()?;
        let mut nodes = self.scene_graph.nodes.clone();
        let mut ids: Vec<u32> = self.scene.instances.iter().map(|i| i.id).collect();
        nodes.sort_unstable();
        ids.sort_unstable();
        if nodes != ids {
            return Err(Error::Invalid("graph nodes differ from scene instances".into()));
        }
        for d in &self.descriptions {
            d.validate(Some(&self.scene))?;
        }
        Ok(())
    }

    pub fn descriptions_at(&self, level: Level) -> impl Iterator<Item = &Description> {
        self.descriptions.iter().filter(move |d| d.level == level)
    }
}

/// Everything needed to turn a seed into a corpus record.
#[derive(Clone, Copy, Debug)]
pub struct RecordBuilder<'a> {
    pub generation: &'a GenerationConfig,
    pub catalog: &'a Catalog,
    pub relations: &'a RelationThresholds,
    pub max_relations: usize,
}

impl RecordBuilder<'_> {
    pub fn build(&self, seed: u64) -> Result<CorpusRecord> {
        let scene = generate_scene(seed, self.generation, self.catalog)?.scene;
        let scene_graph = extract_scene_graph(&scene, self.relations);
        let descriptions = TextGenerator::new(self.catalog, self.max_relations).describe_all(&scene, &scene_graph)?;
        Ok(CorpusRecord {
            split: Split::for_seed(seed),
            scene,
            scene_graph,
            descriptions,
        })
    }

    /// Records for seeds `base_seed .. base_seed + count`, built in parallel
    /// and returned in seed order.
    pub fn build_many(&self, base_seed: u64, count: usize) -> Result<Vec<CorpusRecord>> {
        (0..count as u64)
            .into_par_iter()
            .map(|i| self.build(base_seed.wrapping_add(i)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub records: u64,
    pub sha256: String,
}

pub fn manifest_path(corpus: &Path) -> PathBuf {
    let mut s = corpus.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Writes `records` to `path` and its manifest. Records failing
/// [`CorpusRecord::validate`] abort the write with their index; nothing is
/// left at `path` in that case.
pub fn write_corpus<I>(records: I, path: &Path, num_categories: usize) -> Result<Manifest>
where
    I: IntoIterator<Item = CorpusRecord>,
{
    let tmp = path.with_extension("partial");
    let result = write_lines(records, &tmp, num_categories);
    let (count, digest) = match result {
        Ok(v) => v,
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            return Err(e);
        }
    };
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    let manifest = Manifest {
        format: CORPUS_HEADER.to_owned(),
        records: count,
        sha256: digest,
    };
    let mpath = manifest_path(path);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&mpath, json + "\n").map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

fn write_lines<I>(records: I, path: &Path, num_categories: usize) -> Result<(u64, String)>
where
    I: IntoIterator<Item = CorpusRecord>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut hasher = Sha256::new();
    let mut emit = |bytes: &[u8]| -> Result<()> {
        hasher.update(bytes);
        w.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    emit(format!("{CORPUS_HEADER}\n").as_bytes())?;
    let mut count = 0u64;
    for (index, record) in records.into_iter().enumerate() {
        record.validate(num_categories).map_err(|e| Error::Rejected {
            index,
            reason: e.to_string(),
        })?;
        let mut line = serde_json::to_vec(&record).map_err(|e| Error::Rejected {
            index,
            reason: e.to_string(),
        })?;
        line.push(b'\n');
        emit(&line)?;
        count += 1;
    }
    drop(emit);
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok((count, hex::encode(hasher.finalize())))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(hasher.finalize()))
}

pub fn read_manifest(corpus: &Path) -> Result<Manifest> {
    let mpath = manifest_path(corpus);
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: mpath,
        line: e.line(),
        message: e.to_string(),
    })
}

/// Streams records from a corpus file, one line at a time.
pub struct CorpusReader {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
}

impl CorpusReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header = lines.next().transpose().map_err(|e| Error::io(path, e))?;
        if header.as_deref() != Some(CORPUS_HEADER) {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: 1,
                message: format!("expected header `{CORPUS_HEADER}`"),
            });
        }
        Ok(Self {
            path: path.to_owned(),
            lines,
            line_no: 1,
        })
    }
}

impl Iterator for CorpusReader {
    type Item = Result<CorpusRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let line = self.lines.next()?;
        self.line_no += 1;
        Some(match line {
            Err(e) => Err(Error::io(&self.path, e)),
            Ok(line) => serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: self.path.clone(),
                line: self.line_no,
                message: e.to_string(),
            }),
        })
    }
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    CorpusReader::open(path)?.collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub scenes: u64,
    pub train_scenes: u64,
    pub val_scenes: u64,
    pub rooms: u64,
    pub instances: u64,
    pub descriptions: BTreeMap<Level, u64>,
    /// Instance count per category index.
    pub category_histogram: BTreeMap<usize, u64>,
    pub relation_histogram: BTreeMap<RelationLabel, u64>,
    pub spans: u64,
    pub mean_spans_per_description: f64,
}

impl CorpusStats {
    pub fn add(&mut self, record: &CorpusRecord) {
        self.scenes += 1;
        match record.split {
            Split::Train => self.train_scenes += 1,
            Split::Val => self.val_scenes += 1,
        }
        self.rooms += record.scene.rooms.len() as u64;
        self.instances += record.scene.instances.len() as u64;
        for inst in &record.scene.instances {
            *self.category_histogram.entry(inst.category).or_insert(0) += 1;
        }
        for e in &record.scene_graph.edges {
            *self.relation_histogram.entry(e.label).or_insert(0) += 1;
        }
        for d in &record.descriptions {
            *self.descriptions.entry(d.level).or_insert(0) += 1;
            self.spans += d.spans.len() as u64;
        }
        let total = self.total_descriptions();
        self.mean_spans_per_description = if total == 0 { 0.0 } else { self.spans as f64 / total as f64 };
    }

    pub fn total_descriptions(&self) -> u64 {
        self.descriptions.values().sum()
    }
}

/// Summarizes a corpus in one streaming pass.
pub fn compute_stats(path: &Path) -> Result<CorpusStats> {
    let mut stats = CorpusStats::default();
    for record in CorpusReader::open(path)? {
        stats.add(&record?);
    }
    Ok(stats)
}
