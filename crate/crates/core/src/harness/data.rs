//! Deterministic synthetic next-token tasks.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    /// Second half repeats the first: predict the token seen `T/2` back.
    Copy,
    /// Random sequence in which earlier bigrams recur, so the successor of
    /// a repeated token is predictable from context.
    Induction,
    /// Samples from a fixed random first-order Markov chain.
    RandomMarkov,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(Task::Copy),
            "induction" => Ok(Task::Induction),
            "random_markov" => Ok(Task::RandomMarkov),
            other => Err(Error::Argument(format!("unknown task '{other}'"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Copy => "copy",
            Task::Induction => "induction",
            Task::RandomMarkov => "random_markov",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSpec {
    pub task: Task,
    pub seed: u64,
}

/// Batch generator; batch `i` depends only on the spec and `i`.
#[derive(Clone, Debug)]
pub struct Generator {
    spec: DataSpec,
    vocab: usize,
    seq_len: usize,
    /// Row-wise cumulative transition probabilities (Markov task only).
    cumulative: Vec<Vec<f64>>,
}

impl Generator {
    pub fn new(spec: DataSpec, vocab: usize, seq_len: usize) -> Result<Self> {
        if vocab < 2 || seq_len < 2 {
            return Err(Error::Argument(format!("need vocab ≥ 2 and seq_len ≥ 2, got {vocab}, {seq_len}")));
        }
        let cumulative = if spec.task == Task::RandomMarkov {
            let mut rng = SplitMix64::derive(spec.seed, u64::MAX);
            (0..vocab)
                .map(|_| {
                    let w: Vec<f64> = (0..vocab).map(|_| (2.0 * rng.normal()).exp()).collect();
                    let total: f64 = w.iter().sum();
                    w.iter()
                        .scan(0.0, |acc, x| {
                            *acc += x / total;
                            Some(*acc)
                        })
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self { spec, vocab, seq_len, cumulative })
    }

    fn token(&self, rng: &mut SplitMix64) -> usize {
        rng.range(0, self.vocab - 1)
    }

    pub fn sequence(&self, rng: &mut SplitMix64) -> Vec<usize> {
        let t = self.seq_len;
        match self.spec.task {
            Task::Copy => {
                let lag = t.div_ceil(2);
                let mut seq: Vec<usize> = (0..lag).map(|_| self.token(rng)).collect();
                for i in lag..t {
                    seq.push(seq[i - lag]);
                }
                seq
            }
            Task::Induction => {
                let mut seq: Vec<usize> = (0..t).map(|_| self.token(rng)).collect();
                let half = t / 2;
                let mut q = half;
                while half >= 2 && q + 1 < t {
                    let j = rng.range(0, half - 2);
                    seq[q] = seq[j];
                    seq[q + 1] = seq[j + 1];
                    q += 2 + rng.range(0, 2);
                }
                seq
            }
            Task::RandomMarkov => {
                let mut seq = vec![self.token(rng)];
                while seq.len() < t {
                    let u = rng.next_f64();
                    let row = &self.cumulative[*seq.last().expect("non-empty")];
                    seq.push(row.iter().position(|&c| u < c).unwrap_or(self.vocab - 1));
                }
                seq
            }
        }
    }

    pub fn batch(&self, index: u64, size: usize) -> Vec<Vec<usize>> {
        let mut rng = SplitMix64::derive(self.spec.seed, index);
        (0..size).map(|_| self.sequence(&mut rng)).collect()
    }
}
