use std::collections::BTreeMap;
use std::io::Write;
use std::process::{Command, Stdio};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{is_malformed_identifier, parse_identifier, Description, PhraseSpan};
use crate::error::{Error, Result};

/// Text-to-text paraphraser. Implementations must keep identifier tokens intact;
/// [`validate_rewrite`] checks that they did.
pub trait Rewriter: Send + Sync {
    fn rewrite(&self, text: &str) -> Result<String>;
}

pub struct IdentityRewriter;

impl Rewriter for IdentityRewriter {
    fn rewrite(&self, text: &str) -> Result<String> {
        Ok(text.to_owned())
    }
}

const SYNONYMS: &[(&str, &[&str])] = &[
    ("a", &["one"]),
    ("is", &["sits", "stands", "is located"]),
    ("next", &["close", "adjacent"]),
    ("bigger", &["larger"]),
    ("smaller", &["tinier", "more compact"]),
    ("taller", &["higher"]),
    ("shorter", &["lower"]),
    ("above", &["over"]),
    ("below", &["under", "beneath"]),
    ("behind", &["in back of"]),
    ("gray", &["grey"]),
    ("wooden", &["wood"]),
    ("shape", &["form"]),
    ("room", &["area"]),
];

/// Replaces ordinary words from a fixed synonym table. Identifier tokens
/// are never touched. The choice of replacements depends only on the seed
/// and the input text.
#[derive(Clone, Debug)]
pub struct SynonymSwap {
    pub seed: u64,
    /// Chance of swapping each word that has synonyms.
    pub probability: f64,
}

impl SynonymSwap {
    pub fn new(seed: u64) -> Self {
        Self { seed, probability: 0.5 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

impl Rewriter for SynonymSwap {
    fn rewrite(&self, text: &str) -> Result<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(text.as_bytes()));
        let words: Vec<&str> = text
            .split_whitespace()
            .map(|w| {
                if parse_identifier(w).is_some() {
                    return w;
                }
                match SYNONYMS.iter().find(|(k, _)| *k == w) {
                    Some((_, alts)) if rng.gen_bool(self.probability) => alts[rng.gen_range(0..alts.len())],
                    _ => w,
                }
            })
            .collect();
        Ok(words.join(" "))
    }
}

/// Runs an external program once per description. The program receives the
/// description as a single line on standard input and must print the
/// rewritten line on standard output and exit with status 0.
#[derive(Clone, Debug)]
pub struct ExternalRewriter {
    pub program: String,
    pub args: Vec<String>,
}

impl Rewriter for ExternalRewriter {
    fn rewrite(&self, text: &str) -> Result<String> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Rewriter(format!("cannot start `{}`: {e}", self.program)))?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            stdin
                .write_all(format!("{text}\n").as_bytes())
                .map_err(|e| Error::Rewriter(format!("writing to `{}`: {e}", self.program)))?;
        }
        let out = child
            .wait_with_output()
            .map_err(|e| Error::Rewriter(format!("waiting for `{}`: {e}", self.program)))?;
        if !out.status.success() {
            return Err(Error::Rewriter(format!(
                "`{}` exited with {}: {}",
                self.program,
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let s = String::from_utf8(out.stdout).map_err(|_| Error::Rewriter("output is not UTF-8".into()))?;
        Ok(s.trim().to_owned())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteReport {
    /// Ids whose identifier tokens occur fewer times than in the original.
    pub missing: Vec<u32>,
    /// Ids whose identifier tokens occur more often than in the original,
    /// including ids the original never mentioned.
    pub duplicated: Vec<u32>,
    /// Tokens that look like broken identifiers, e.g. `chair(3`.
    pub malformed: Vec<String>,
}

impl RewriteReport {
    pub fn passed(&self) -> bool {
        self.missing.is_empty() && self.duplicated.is_empty() && self.malformed.is_empty()
    }
}

fn identifier_counts<'a>(tokens: impl Iterator<Item = &'a str>) -> BTreeMap<&'a str, usize> {
    let mut m = BTreeMap::new();
    for t in tokens.filter(|t| parse_identifier(t).is_some()) {
        *m.entry(t).or_insert(0) += 1;
    }
    m
}

/// Passes exactly when the multiset of identifier tokens is unchanged and
/// no malformed identifiers appear.
pub fn validate_rewrite<S: AsRef<str>>(original: &Description, rewritten: &[S]) -> RewriteReport {
    let before = identifier_counts(original.text.iter().map(String::as_str));
    let after = identifier_counts(rewritten.iter().map(AsRef::as_ref));
    let id = |t: &str| parse_identifier(t).expect("counted tokens parse").1;
    let mut report = RewriteReport::default();
    for (t, &n) in &before {
        if after.get(t).copied().unwrap_or(0) < n {
            report.missing.push(id(t));
        }
    }
    for (t, &n) in &after {
        if n > before.get(t).copied().unwrap_or(0) {
            report.duplicated.push(id(t));
        }
    }
    report.malformed = rewritten
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| is_malformed_identifier(t))
        .map(str::to_owned)
        .collect();
    for v in [&mut report.missing, &mut report.duplicated] {
        v.sort_unstable();
        v.dedup();
    }
    report
}

/// Rewrites a description. When the rewrite keeps every identifier the
/// result carries one single-token span per identifier; otherwise the
/// original description is returned unchanged alongside the failing report.
/// An unchanged text keeps its original spans.
pub fn apply_rewriter(description: &Description, rewriter: &dyn Rewriter) -> Result<(Description, RewriteReport)> {
    let out = rewriter.rewrite(&description.text.join(" "))?;
    let tokens: Vec<String> = out.split_whitespace().map(str::to_owned).collect();
    let report = validate_rewrite(description, &tokens);
    if !report.passed() || tokens == description.text {
        return Ok((description.clone(), report));
    }
    let spans = tokens
        .iter()
        .enumerate()
        .filter_map(|(i, t)| {
            parse_identifier(t).map(|(_, id)| PhraseSpan {
                token_start: i,
                token_end: i + 1,
                instance_id: id,
            })
        })
        .collect();
    Ok((
        Description {
            level: description.level,
            anchor_id: description.anchor_id,
            text: tokens,
            spans,
        },
        report,
    ))
}
