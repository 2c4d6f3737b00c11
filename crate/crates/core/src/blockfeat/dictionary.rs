use std::collections::HashMap;
use std::io::{BufRead, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rayon::prelude::*;

use super::{extract_blocks, BlockConfig, FeatureError, TokenId};
use crate::digest::ChunkHasher;
use crate::ingest::PayloadSample;

const HEADER: &str = "# payload-sentinel block dictionary v1";

/// Top-K blocks of a fitting corpus, ranked by count (descending) with ties
/// broken by ascending byte order. Rank r (0-based) has token id r + 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockDictionary {
    config: BlockConfig,
    entries: Vec<(Vec<u8>, u64)>,
    index: HashMap<Vec<u8>, TokenId>,
    corpus_fingerprint: String,
}

/// Fits on the payloads of `corpus`, which should be the training split.
pub fn fit_dictionary(corpus: &[PayloadSample], config: BlockConfig) -> Result<BlockDictionary, FeatureError> {
    fit_dictionary_from_payloads(corpus.iter().map(|s| s.payload.as_slice()), config)
}

pub fn fit_dictionary_from_payloads<'a, I>(payloads: I, config: BlockConfig) -> Result<BlockDictionary, FeatureError>
where
    I: IntoIterator<Item = &'a [u8]>,
{
    config.validate()?;
    let payloads: Vec<&[u8]> = payloads.into_iter().collect();

    let mut fp = ChunkHasher::default();
    for p in &payloads {
        fp.chunk(p);
    }

    let counts = payloads
        .par_iter()
        .fold(HashMap::<&[u8], u64>::new, |mut acc, p| {
            for b in extract_blocks(p, &config) {
                *acc.entry(b).or_default() += 1;
            }
            acc
        })
        .reduce(HashMap::new, |a, b| {
            let (mut big, small) = if a.len() >= b.len() { (a, b) } else { (b, a) };
            for (k, v) in small {
                *big.entry(k).or_default() += v;
            }
            big
        });
    if counts.is_empty() {
        return Err(FeatureError::EmptyDictionary(config.block_length));
    }

    let mut ranked: Vec<(&[u8], u64)> = counts.into_iter().collect();
    let keep = config.dict_size.min(ranked.len());
    let order = |a: &(&[u8], u64), b: &(&[u8], u64)| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0));
    if keep < ranked.len() {
        ranked.select_nth_unstable_by(keep - 1, order);
        ranked.truncate(keep);
    }
    ranked.sort_unstable_by(order);

    let entries = ranked.into_iter().map(|(b, c)| (b.to_vec(), c)).collect();
    Ok(BlockDictionary::from_ranked(config, entries, fp.finish()))
}

impl BlockDictionary {
    fn from_ranked(config: BlockConfig, entries: Vec<(Vec<u8>, u64)>, corpus_fingerprint: String) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (b, _))| (b.clone(), i as TokenId + 1))
            .collect();
        Self {
            config,
            entries,
            index,
            corpus_fingerprint,
        }
    }

    pub fn config(&self) -> &BlockConfig {
        &self.config
    }

    /// Number of blocks kept (excludes PAD).
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn token(&self, block: &[u8]) -> Option<TokenId> {
        self.index.get(block).copied()
    }

    pub fn block(&self, token: TokenId) -> Option<&[u8]> {
        let i = (token as usize).checked_sub(1)?;
        self.entries.get(i).map(|(b, _)| b.as_slice())
    }

    pub fn count(&self, token: TokenId) -> Option<u64> {
        let i = (token as usize).checked_sub(1)?;
        self.entries.get(i).map(|(_, c)| *c)
    }

    /// `(block, count)` in rank order.
    pub fn entries(&self) -> impl Iterator<Item = (&[u8], u64)> {
        self.entries.iter().map(|(b, c)| (b.as_slice(), *c))
    }

    /// Hash of the payloads the dictionary was fitted on.
    pub fn corpus_fingerprint(&self) -> &str {
        &self.corpus_fingerprint
    }

    /// Hash of the configuration and ranked entries. Two dictionaries with
    /// the same fingerprint assign identical token ids.
    pub fn fingerprint(&self) -> String {
        let mut h = ChunkHasher::default();
        h.chunk(&(self.config.block_length as u64).to_le_bytes());
        h.chunk(&(self.config.stride as u64).to_le_bytes());
        h.chunk(&(self.config.dict_size as u64).to_le_bytes());
        for (b, c) in &self.entries {
            h.chunk(b);
            h.chunk(&c.to_le_bytes());
        }
        h.finish()
    }

    /// Writes the text sidecar: `key=value` header lines, then one
    /// `<base64 block>\t<count>` line per entry in rank order.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{HEADER}")?;
        writeln!(w, "block_length={}", self.config.block_length)?;
        writeln!(w, "stride={}", self.config.stride)?;
        writeln!(w, "dict_size={}", self.config.dict_size)?;
        writeln!(w, "corpus_fingerprint={}", self.corpus_fingerprint)?;
        writeln!(w, "fingerprint={}", self.fingerprint())?;
        writeln!(w, "entries={}", self.entries.len())?;
        for (b, c) in &self.entries {
            writeln!(w, "{}\t{}", STANDARD.encode(b), c)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, FeatureError> {
        let mut lines = r.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String), FeatureError> {
            match lines.next() {
                Some((i, l)) => Ok((i + 1, l?)),
                None => Err(FeatureError::Format {
                    line: 0,
                    reason: format!("unexpected end of file, expected {what}"),
                }),
            }
        };
        let (n, first) = next("header")?;
        if first != HEADER {
            return Err(FeatureError::Format {
                line: n,
                reason: "missing dictionary header".into(),
            });
        }
        let mut field = |key: &str| -> Result<(usize, String), FeatureError> {
            let (n, l) = next(key)?;
            match l.split_once('=') {
                Some((k, v)) if k == key => Ok((n, v.to_string())),
                _ => Err(FeatureError::Format {
                    line: n,
                    reason: format!("expected `{key}=`"),
                }),
            }
        };
        let num = |(n, v): (usize, String)| -> Result<usize, FeatureError> {
            v.parse().map_err(|_| FeatureError::Format {
                line: n,
                reason: format!("not an integer: {v:?}"),
            })
        };
        let config = BlockConfig::new(
            num(field("block_length")?)?,
            num(field("stride")?)?,
            num(field("dict_size")?)?,
        )?;
        let (_, corpus_fingerprint) = field("corpus_fingerprint")?;
        let (_, stored) = field("fingerprint")?;
        let count = num(field("entries")?)?;

        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, l) = next("entry")?;
            let bad = |reason: String| FeatureError::Format { line: n, reason };
            let (b64, c) = l.split_once('\t').ok_or_else(|| bad("missing tab".into()))?;
            let block = STANDARD.decode(b64).map_err(|e| bad(format!("base64: {e}")))?;
            if block.len() != config.block_length {
                return Err(bad(format!(
                    "block has {} bytes, expected {}",
                    block.len(),
                    config.block_length
                )));
            }
            let c = c.parse::<u64>().map_err(|_| bad(format!("bad count {c:?}")))?;
            entries.push((block, c));
        }
        let dict = Self::from_ranked(config, entries, corpus_fingerprint);
        let computed = dict.fingerprint();
        if computed != stored {
            return Err(FeatureError::Fingerprint { stored, computed });
        }
        Ok(dict)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(corpus: &[&[u8]], l: usize, s: usize, k: usize) -> BlockDictionary {
        fit_dictionary_from_payloads(corpus.iter().copied(), BlockConfig::new(l, s, k).unwrap()).unwrap()
    }

    fn as_vec(d: &BlockDictionary) -> Vec<(Vec<u8>, u64)> {
        d.entries().map(|(b, c)| (b.to_vec(), c)).collect()
    }

    #[test]
    fn counts_and_ranks() {
        let d = fit(&[b"aaab"], 2, 1, 2);
        assert_eq!(as_vec(&d), [(b"aa".to_vec(), 2), (b"ab".to_vec(), 1)]);
        assert_eq!(d.token(b"aa"), Some(1));
        assert_eq!(d.token(b"ab"), Some(2));

        let d = fit(&[b"abab"], 2, 1, 1);
        assert_eq!(as_vec(&d), [(b"ab".to_vec(), 2)]);
    }

    #[test]
    fn ties_prefer_smaller_block() {
        let d = fit(&[b"ax", b"ab"], 2, 1, 1);
        assert_eq!(as_vec(&d), [(b"ab".to_vec(), 1)]);
    }

    #[test]
    fn pad_is_not_a_block() {
        let d = fit(&[b"xyz"], 1, 1, 5);
        assert_eq!(d.block(0), None);
        assert_eq!(d.block(1), Some(&b"x"[..]));
        assert_eq!(d.block(4), None);
    }

    #[test]
    fn empty_corpus_blocks_is_error() {
        let r = fit_dictionary_from_payloads([&b"ab"[..]], BlockConfig::new(3, 1, 5).unwrap());
        assert!(matches!(r, Err(FeatureError::EmptyDictionary(3))));
    }

    #[test]
    fn sidecar_reload_reproduces_ids() {
        let d = fit(
            &[b"GET /index.html?q=\x00\xff\t\n", b"POST /login id=1' or 1=1 - -"],
            3,
            1,
            20,
        );
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let back = BlockDictionary::read_from(&buf[..]).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.fingerprint(), d.fingerprint());
    }

    #[test]
    fn tampered_sidecar_is_rejected() {
        let d = fit(&[b"aaab"], 2, 1, 2);
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("YWE=\t2", "YWE=\t3");
        assert!(matches!(
            BlockDictionary::read_from(text.as_bytes()),
            Err(FeatureError::Fingerprint { .. })
        ));
    }
}
