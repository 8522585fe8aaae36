//! Frozen static token embeddings with mean pooling.
//!
//! Text cells and column metadata share one [`TokenTable`]. Nothing in this
//! module is trainable.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hash::fnv1a64;
use crate::tensor::DenseArray;

pub const DEFAULT_FALLBACK_BUCKETS: usize = 1024;
pub const FALLBACK_SEED: u64 = 42;
pub const DEMO_DIM: usize = 64;
pub const DEMO_VOCAB: usize = 2048;

#[derive(Clone, Debug)]
pub struct TokenTable {
    dim: usize,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
    buckets: usize,
    fallback: Vec<f64>,
}

/// Lowercases and splits on every run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl TokenTable {
    pub fn new(dim: usize, entries: Vec<(String, Vec<f64>)>, buckets: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("token table dim must be positive".into()));
        }
        let mut index = HashMap::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len() * dim);
        for (token, v) in entries {
            if v.len() != dim {
                return Err(Error::Format(format!(
                    "token `{token}` has {} values, expected {dim}",
                    v.len()
                )));
            }
            let token = token.to_lowercase();
            if index.contains_key(&token) {
                continue;
            }
            index.insert(token, index.len());
            vectors.extend(v);
        }
        let fallback = if buckets > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(FALLBACK_SEED);
            DenseArray::randn(&[buckets, dim], 1.0 / (dim as f64).sqrt(), &mut rng).into_data()
        } else {
            Vec::new()
        };
        Ok(Self {
            dim,
            index,
            vectors,
            buckets,
            fallback,
        })
    }

    /// Deterministic 64-dim demo table over a small English and schema vocabulary.
    pub fn demo() -> Self {
        let mut seen = std::collections::HashSet::new();
        let mut words: Vec<String> = DEMO_WORDS
            .split_whitespace()
            .filter(|w| seen.insert(*w))
            .map(str::to_string)
            .collect();
        let mut i = 0;
        while words.len() < DEMO_VOCAB {
            words.push(format!("tok{i:04}"));
            i += 1;
        }
        words.truncate(DEMO_VOCAB);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let scale = 1.0 / (DEMO_DIM as f64).sqrt();
        let entries = words
            .into_iter()
            .map(|w| (w, DenseArray::randn(&[DEMO_DIM], scale, &mut rng).into_data()))
            .collect();
        Self::new(DEMO_DIM, entries, DEFAULT_FALLBACK_BUCKETS).expect("demo table is well formed")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.index.len()
    }

    pub fn fallback_buckets(&self) -> usize {
        self.buckets
    }

    pub fn lookup(&self, token: &str) -> Option<&[f64]> {
        self.index
            .get(token)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    fn resolve(&self, token: &str) -> Option<&[f64]> {
        self.lookup(token).or_else(|| {
            (self.buckets > 0).then(|| {
                let b = (fnv1a64(token.as_bytes()) % self.buckets as u64) as usize;
                &self.fallback[b * self.dim..(b + 1) * self.dim]
            })
        })
    }

    /// Mean of resolved token vectors, or `None` when no token resolves.
    pub fn try_embed(&self, text: &str) -> Option<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        let mut n = 0usize;
        for t in tokenize(text) {
            if let Some(v) = self.resolve(&t) {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x;
                }
                n += 1;
            }
        }
        (n > 0).then(|| {
            let inv = 1.0 / n as f64;
            acc.iter_mut().for_each(|a| *a *= inv);
            acc
        })
    }

    /// Mean-pooled embedding; the zero vector when nothing resolves.
    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        self.try_embed(text).unwrap_or_else(|| vec![0.0; self.dim])
    }

    pub fn embed_column_metadata(&self, table: &str, column: &str, description: Option<&str>) -> Vec<f64> {
        self.embed_text(&column_metadata_text(table, column, description))
    }

    /// word2vec text format: `"vocab_size dim"` then `token v1 … vdim` per line.
    pub fn read_word2vec<R: BufRead>(reader: R, buckets: usize) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty token table".into()))?
            .map_err(|e| Error::Format(e.to_string()))?;
        let mut parts = header.split_whitespace();
        let parse_usize = |s: Option<&str>| -> Result<usize> {
            s.and_then(|x| x.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad token table header `{header}`")))
        };
        let count = parse_usize(parts.next())?;
        let dim = parse_usize(parts.next())?;
        let mut entries = Vec::with_capacity(count);
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Format(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().expect("non-empty line").to_string();
            let values = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 2)))?;
            entries.push((token, values));
        }
        if entries.len() != count {
            return Err(Error::Format(format!(
                "header declares {count} tokens, found {}",
                entries.len()
            )));
        }
        Self::new(dim, entries, buckets)
    }

    pub fn load(path: impl AsRef<Path>, buckets: usize) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_word2vec(std::io::BufReader::new(f), buckets)
    }

    pub fn write_word2vec<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut tokens: Vec<(&String, &usize)> = self.index.iter().collect();
        tokens.sort_by_key(|(_, &i)| i);
        writeln!(w, "{} {}", tokens.len(), self.dim)?;
        for (tok, &i) in tokens {
            write!(w, "{tok}")?;
            for x in &self.vectors[i * self.dim..(i + 1) * self.dim] {
                write!(w, " {x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// The string embedded for a column's metadata.
pub fn column_metadata_text(table: &str, column: &str, description: Option<&str>) -> String {
    format!("{table} | {column} | {}", description.unwrap_or(""))
}

const DEMO_WORDS: &str = "\
users user orders order products product items item id ids key name names table column \
amount amounts price prices cost total quantity count number age signup date time timestamp ts \
status state segment category categories description text bio title label value values \
returned shipped pending cancelled delivered processing open closed active inactive \
gold silver bronze platinum basic standard free trial premium deluxe luxury elite exclusive \
budget cheap economy discount bargain simple plain generic \
book books phone phones laptop laptops shirt shirts shoe shoes chair chairs lamp lamps \
table tables desk desks watch watches camera cameras kettle kettles mug mugs bag bags \
toy toys game games pen pens bottle bottles blanket blankets clock clocks speaker speakers \
red blue green black white yellow orange purple grey brown pink silver golden \
small large medium big tiny huge compact portable wireless electric manual digital \
wooden metal plastic leather cotton glass steel ceramic soft hard light heavy \
new old used fresh classic modern vintage smart fast slow quiet loud bright dark \
for with and the a an of to in on by from at as is it this that very more most \
good great best nice fine bad poor excellent quality durable reliable handmade crafted \
customer customers client clients account accounts member members visitor visitors \
event events visit visits click clicks view views session sessions page pages ad ads \
study studies trial trials site sites outcome outcomes condition conditions drug drugs \
driver drivers race races team teams result results position positions lap laps \
post posts vote votes badge badges comment comments answer answers question questions \
store stores shop shops city cities country countries region regions address \
email phone zip code year month day week hour minute second weekday weekend \
first last start end begin finish created updated modified deleted \
rank score rating ratings review reviews stars star level tier grade \
payment payments card cash credit debit refund refunds invoice invoices \
shipping delivery carrier tracking warehouse stock inventory supply supplier \
brand brands model models size sizes color colors weight height width length \
kitchen garden office home outdoor indoor sport sports travel music art food \
coffee tea water wine beer bread cheese fruit fruits meat fish rice pasta \
health medical patient patients doctor hospital clinic treatment dose \
one two three four five six seven eight nine ten hundred thousand million \
";
