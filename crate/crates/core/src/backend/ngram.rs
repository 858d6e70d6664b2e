//! Reference generator: order-2 word Markov chain.
//!
//! The state is the pair of preceding tokens, padded with [`START`] at the
//! beginning of a sequence; [`END`] terminates it. Sampling draws from the
//! observed successors of a state with add-one smoothing over that successor
//! set, so the chain never leaves its observed support.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::util::rng_for;

pub const START: &str = "<s>";
pub const END: &str = "</s>";

type State = (String, String);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MarkovModel {
    transitions: BTreeMap<State, BTreeMap<String, u64>>,
}

impl MarkovModel {
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut transitions: BTreeMap<State, BTreeMap<String, u64>> = BTreeMap::new();
        for text in texts {
            let mut prev = (START.to_string(), START.to_string());
            let tokens = text.split_whitespace().chain(std::iter::once(END));
            for tok in tokens {
                *transitions.entry(prev.clone()).or_default().entry(tok.to_string()).or_default() += 1;
                prev = (prev.1, tok.to_string());
            }
        }
        Self { transitions }
    }

    pub fn count(&self, prev2: &str, prev1: &str, next: &str) -> u64 {
        self.transitions
            .get(&(prev2.to_string(), prev1.to_string()))
            .and_then(|m| m.get(next))
            .copied()
            .unwrap_or(0)
    }

    pub fn n_states(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// One unconditional sequence of at most `max_tokens` tokens.
    fn sample_one<R: rand::Rng>(&self, rng: &mut R, max_tokens: usize) -> String {
        let mut state = (START.to_string(), START.to_string());
        let mut out: Vec<&str> = Vec::new();
        while out.len() < max_tokens {
            let Some(succ) = self.transitions.get(&state) else {
                break;
            };
            let choices: Vec<(&String, u64)> = succ.iter().map(|(t, c)| (t, c + 1)).collect();
            let dist = WeightedIndex::new(choices.iter().map(|(_, w)| *w)).expect("non-empty successor set");
            let next = choices[dist.sample(rng)].0;
            if next == END {
                break;
            }
            out.push(next.as_str());
            state = (state.1, next.clone());
        }
        out.join(" ")
    }

    pub fn sample(&self, count: usize, max_tokens: usize, seed: u64, stream: &str) -> Vec<String> {
        let mut rng = rng_for(seed, &format!("markov/{stream}"));
        (0..count).map(|_| self.sample_one(&mut rng, max_tokens)).collect()
    }
}
