//! Policies over a small token vocabulary.
//!
//! [`ToyPolicy`] is an embedding bag: each active context feature owns one
//! row of embedding weights over the vocabulary, the rows are summed with a
//! bias and the result is a softmax over next tokens. The score is linear in
//! the parameters, so gradients are exact and cheap.

use serde::{Deserialize, Serialize};

use super::tasks::SyntheticTask;

pub type Token = usize;

pub trait PolicyInterface: Send + Sync {
    fn vocab_size(&self) -> usize;
    fn parameters(&self) -> &[f64];
    fn set_parameters(&mut self, theta: &[f64]);
    /// Log-probabilities of the next token given the prompt and the tokens
    /// emitted so far.
    fn token_logprobs(&self, prompt: &SyntheticTask, prefix: &[Token]) -> Vec<f64>;
    /// Adds `weight * d log pi(token | prompt, prefix) / d theta` to `grad`.
    fn accumulate_gradient(
        &self,
        prompt: &SyntheticTask,
        prefix: &[Token],
        token: Token,
        weight: f64,
        grad: &mut [f64],
    );

    fn num_parameters(&self) -> usize {
        self.parameters().len()
    }
}

/// Which feature families the encoder emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSet {
    /// (task, position)
    pub position: bool,
    /// (task, previous token)
    pub previous: bool,
    /// (task, token already emitted), one per distinct earlier token
    pub history: bool,
    /// (position, shown slot, shown value) for ordering prompts
    pub slots: bool,
    /// (a, b) operand pair, shared between the fill and outcome tasks
    pub query: bool,
}

impl FeatureSet {
    pub const ALL: Self = Self {
        position: true,
        previous: true,
        history: true,
        slots: true,
        query: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyPolicyConfig {
    /// Number of digit tokens; the vocabulary is the digits plus a box marker.
    pub digits: usize,
    pub max_len: usize,
    /// Largest ordering instance the slot features cover.
    pub max_steps: usize,
    pub features: FeatureSet,
}

impl Default for ToyPolicyConfig {
    fn default() -> Self {
        Self {
            digits: 5,
            max_len: 4,
            max_steps: 4,
            features: FeatureSet::ALL,
        }
    }
}

const TASKS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    position: usize,
    previous: usize,
    history: usize,
    slots: usize,
    query: usize,
    features: usize,
}

impl Layout {
    fn new(cfg: &ToyPolicyConfig) -> Self {
        let vocab = cfg.digits + 1;
        let f = cfg.features;
        let mut at = 0;
        let mut take = |on: bool, n: usize| {
            let start = at;
            if on {
                at += n;
            }
            start
        };
        let position = take(f.position, TASKS * cfg.max_len);
        // one extra "previous" slot for the start of the response
        let previous = take(f.previous, TASKS * (vocab + 1));
        let history = take(f.history, TASKS * vocab);
        let slots = take(f.slots, cfg.max_len * cfg.max_steps * cfg.digits);
        let query = take(f.query, cfg.digits * cfg.digits);
        Self {
            position,
            previous,
            history,
            slots,
            query,
            features: at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub config: ToyPolicyConfig,
    /// Feature-major embedding rows followed by the output bias.
    theta: Vec<f64>,
}

impl ToyPolicy {
    /// All-zero parameters: the uniform policy.
    pub fn new(config: ToyPolicyConfig) -> Self {
        assert!(config.digits >= 1 && config.max_len >= 1, "degenerate policy shape");
        let layout = Layout::new(&config);
        let n = (layout.features + 1) * (config.digits + 1);
        Self {
            config,
            theta: vec![0.0; n],
        }
    }

    pub fn with_parameters(config: ToyPolicyConfig, theta: Vec<f64>) -> Option<Self> {
        let mut p = Self::new(config);
        if theta.len() != p.theta.len() {
            return None;
        }
        p.theta = theta;
        Some(p)
    }

    pub fn box_token(&self) -> Token {
        self.config.digits
    }

    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    /// Active feature rows for the next token.
    pub fn features(&self, prompt: &SyntheticTask, prefix: &[Token]) -> Vec<usize> {
        let cfg = &self.config;
        let lay = self.layout();
        let vocab = cfg.digits + 1;
        let task = prompt.tag();
        let t = prefix.len().min(cfg.max_len - 1);
        let prev = prefix.last().copied().unwrap_or(vocab);
        let mut out = Vec::with_capacity(8);
        if cfg.features.position {
            out.push(lay.position + task * cfg.max_len + t);
        }
        if cfg.features.previous {
            out.push(lay.previous + task * (vocab + 1) + prev.min(vocab));
        }
        if cfg.features.history {
            for (i, &u) in prefix.iter().enumerate() {
                if u < vocab && !prefix[..i].contains(&u) {
                    out.push(lay.history + task * vocab + u);
                }
            }
        }
        match prompt {
            SyntheticTask::Reorder(r) if cfg.features.slots => {
                for (j, &v) in r.shown.iter().enumerate().take(cfg.max_steps) {
                    if v < cfg.digits {
                        out.push(lay.slots + (t * cfg.max_steps + j) * cfg.digits + v);
                    }
                }
            }
            SyntheticTask::Fill(f) if cfg.features.query => {
                if let Some(&(a, b)) = f.equations.get(prefix.len()) {
                    if a < cfg.digits && b < cfg.digits {
                        out.push(lay.query + a * cfg.digits + b);
                    }
                }
            }
            SyntheticTask::Outcome(o) if cfg.features.query => {
                if prev == self.box_token() && o.a < cfg.digits && o.b < cfg.digits {
                    out.push(lay.query + o.a * cfg.digits + o.b);
                }
            }
            _ => {}
        }
        out
    }

    fn logits(&self, active: &[usize]) -> Vec<f64> {
        let vocab = self.config.digits + 1;
        let bias = self.layout().features * vocab;
        let mut z = self.theta[bias..bias + vocab].to_vec();
        for &f in active {
            for (zv, w) in z.iter_mut().zip(&self.theta[f * vocab..(f + 1) * vocab]) {
                *zv += w;
            }
        }
        z
    }
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

impl PolicyInterface for ToyPolicy {
    fn vocab_size(&self) -> usize {
        self.config.digits + 1
    }

    fn parameters(&self) -> &[f64] {
        &self.theta
    }

    fn set_parameters(&mut self, theta: &[f64]) {
        self.theta.copy_from_slice(theta);
    }

    fn token_logprobs(&self, prompt: &SyntheticTask, prefix: &[Token]) -> Vec<f64> {
        log_softmax(&self.logits(&self.features(prompt, prefix)))
    }

    fn accumulate_gradient(
        &self,
        prompt: &SyntheticTask,
        prefix: &[Token],
        token: Token,
        weight: f64,
        grad: &mut [f64],
    ) {
        let vocab = self.vocab_size();
        let active = self.features(prompt, prefix);
        let logp = log_softmax(&self.logits(&active));
        // d log p_a / d z_v = [v == a] - p_v
        let dz: Vec<f64> = logp
            .iter()
            .enumerate()
            .map(|(v, lp)| weight * (f64::from(u8::from(v == token)) - lp.exp()))
            .collect();
        let bias = self.layout().features * vocab;
        for row in active.iter().copied().chain(std::iter::once(bias / vocab)) {
            for (g, d) in grad[row * vocab..(row + 1) * vocab].iter_mut().zip(&dz) {
                *g += d;
            }
        }
    }
}
