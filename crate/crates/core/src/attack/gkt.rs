//! Baseline scheme: the tokenized next-hop dictionary stored directly,
//! without ORAM. Every query hands the server a deterministic token chain.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::{CryptoRng, RngCore};

use crate::crypto::{encode_pair, keygen, Prf, Ske, SymKey, Token};
use crate::error::{Error, Result};
use crate::graph::{compute_spdx, Vertex, Weight, WeightedGraph};
use crate::protocol::{EncryptedPath, PAIR_PAD};

#[derive(Debug, Clone)]
struct Entry {
    next: Token,
    ct: Vec<u8>,
}

/// Encrypted dictionary `P(u, v) -> (P(w, v), Enc(w, v))` plus the server's
/// log of token chains, one per query.
pub struct GktScheme {
    vertex_count: u32,
    k1: SymKey,
    prf: Prf,
    dict: HashMap<Token, Entry>,
    log: Vec<Vec<Token>>,
}

pub fn gkt_setup<W: Weight, R: RngCore + CryptoRng>(g: &WeightedGraph<W>, rng: &mut R) -> Result<GktScheme> {
    let keys = keygen(128, rng)?;
    let prf = Prf::new(&keys.kprf);
    let ske = Ske::new(&keys.k1);
    let mut dict = HashMap::new();
    for ((u, v), (w, _)) in compute_spdx(g).iter() {
        let ct = ske.encrypt(&encode_pair(w, v), PAIR_PAD, rng)?;
        dict.insert(prf.pair(u, v), Entry { next: prf.pair(w, v), ct });
    }
    Ok(GktScheme { vertex_count: g.vertex_count() as u32, k1: keys.k1, prf, dict, log: Vec::new() })
}

impl GktScheme {
    pub fn len(&self) -> usize {
        self.dict.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dict.is_empty()
    }

    pub fn k1(&self) -> &SymKey {
        &self.k1
    }

    /// Chases tokens from `P(u, v)` until a lookup misses. The returned chain
    /// includes the missing token.
    pub fn query(&mut self, u: Vertex, v: Vertex) -> Result<(EncryptedPath, Vec<Token>)> {
        for x in [u, v] {
            if x >= self.vertex_count {
                return Err(Error::VertexOutOfRange { vertex: x as u64, vertex_count: self.vertex_count as usize });
            }
        }
        let mut tk = self.prf.pair(u, v);
        let mut chain = vec![tk];
        let mut cts = Vec::new();
        while let Some(e) = self.dict.get(&tk) {
            cts.push(e.ct.clone());
            tk = e.next;
            chain.push(tk);
        }
        self.log.push(chain.clone());
        Ok((EncryptedPath(cts), chain))
    }

    /// Everything the server has observed so far.
    pub fn log(&self) -> &[Vec<Token>] {
        &self.log
    }
}

/// One chain per line, tokens as space-separated hex.
pub fn write_token_log<W: Write>(log: &[Vec<Token>], mut out: W) -> Result<()> {
    for chain in log {
        let line: Vec<String> = chain.iter().map(Token::to_hex).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_token_log<R: BufRead>(input: R) -> Result<Vec<Vec<Token>>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let chain = line
            .split_whitespace()
            .map(Token::from_hex)
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Parse { line: i + 1, detail: e.to_string() })?;
        out.push(chain);
    }
    Ok(out)
}
