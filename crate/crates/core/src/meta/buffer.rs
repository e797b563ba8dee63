use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Transition;

/// `M` adaptation transitions immediately followed by `K` evaluation
/// transitions from one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment<'a> {
    pub adapt: &'a [Transition],
    pub eval: &'a [Transition],
    pub episode: u64,
}

impl<'a> Segment<'a> {
    /// Splits `window` (length `m + k`) into a segment.
    pub fn from_window(window: &'a [Transition], m: usize) -> Result<Self> {
        if m > window.len() {
            return Err(Error::Argument(format!("window of {} shorter than M = {m}", window.len())));
        }
        let (adapt, eval) = window.split_at(m);
        let seg = Segment {
            adapt,
            eval,
            episode: window.first().map_or(0, |t| t.episode),
        };
        seg.validate()?;
        Ok(seg)
    }

    /// Checks contiguity in time and that everything comes from one episode.
    pub fn validate(&self) -> Result<()> {
        if self.eval.is_empty() {
            return Err(Error::Argument("segment has an empty evaluation slice".into()));
        }
        let all = self.adapt.iter().chain(self.eval);
        let mut prev: Option<&Transition> = None;
        for t in all {
            if t.episode != self.episode {
                return Err(Error::Argument(format!(
                    "segment of episode {} contains a transition of episode {}",
                    self.episode, t.episode
                )));
            }
            if let Some(p) = prev {
                if t.t != p.t + 1 {
                    return Err(Error::Argument(format!(
                        "segment of episode {} is not contiguous at t = {}",
                        self.episode, t.t
                    )));
                }
            }
            prev = Some(t);
        }
        Ok(())
    }

    /// Timestep of the first evaluation transition.
    pub fn t(&self) -> usize {
        self.eval[0].t
    }
}

/// Hidden configuration an episode was collected under, kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeInfo {
    pub id: u64,
    pub family: String,
    pub config: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub info: EpisodeInfo,
    pub transitions: Vec<Transition>,
}

/// Episodes collected so far. When `capacity` is set, the oldest episodes
/// are dropped once more than that many are stored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayBuffer {
    episodes: Vec<Episode>,
    capacity: Option<usize>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            episodes: Vec::new(),
            capacity: Some(capacity),
        }
    }

    /// Adds an episode; its transitions must carry the episode id and
    /// consecutive timesteps.
    pub fn push(&mut self, info: EpisodeInfo, transitions: Vec<Transition>) -> Result<()> {
        for (i, t) in transitions.iter().enumerate() {
            if t.episode != info.id {
                return Err(Error::Argument(format!(
                    "episode {} transition {i} tagged with episode {}",
                    info.id, t.episode
                )));
            }
            if i > 0 && t.t != transitions[i - 1].t + 1 {
                return Err(Error::Argument(format!(
                    "episode {} not time-ordered at index {i}",
                    info.id
                )));
            }
        }
        self.episodes.push(Episode { info, transitions });
        if let Some(c) = self.capacity {
            while self.episodes.len() > c {
                self.episodes.remove(0);
            }
        }
        Ok(())
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn num_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn num_transitions(&self) -> usize {
        self.episodes.iter().map(|e| e.transitions.len()).sum()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().flat_map(|e| e.transitions.iter())
    }

    pub fn all_transitions(&self) -> Vec<Transition> {
        self.transitions().cloned().collect()
    }

    fn legal_in(len: usize, m: usize, k: usize) -> usize {
        (len + 1).saturating_sub(m + k)
    }

    /// Number of `(episode, t)` pairs with `t` in `[M, L - K]`.
    pub fn legal_positions(&self, m: usize, k: usize) -> usize {
        self.episodes
            .iter()
            .map(|e| Self::legal_in(e.transitions.len(), m, k))
            .sum()
    }

    /// The `i`-th legal segment in (episode, t) order.
    pub fn segment(&self, mut i: usize, m: usize, k: usize) -> Option<Segment<'_>> {
        for e in &self.episodes {
            let n = Self::legal_in(e.transitions.len(), m, k);
            if i < n {
                let w = &e.transitions[i..i + m + k];
                return Some(Segment {
                    adapt: &w[..m],
                    eval: &w[m..],
                    episode: e.info.id,
                });
            }
            i -= n;
        }
        None
    }

    /// Draws `n` segments uniformly over legal positions, with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, m: usize, k: usize, rng: &mut R) -> Result<Vec<Segment<'_>>> {
        if k == 0 {
            return Err(Error::Argument("K must be at least 1".into()));
        }
        let total = self.legal_positions(m, k);
        if total == 0 || total < n {
            return Err(Error::Data {
                what: "segments".into(),
                required: n.max(1),
                available: total,
            });
        }
        Ok((0..n)
            .map(|_| self.segment(rng.random_range(0..total), m, k).expect("index below total"))
            .collect())
    }

    /// Every legal segment, in order.
    pub fn all_segments(&self, m: usize, k: usize) -> Vec<Segment<'_>> {
        let mut out = Vec::new();
        for e in &self.episodes {
            for i in 0..Self::legal_in(e.transitions.len(), m, k) {
                let w = &e.transitions[i..i + m + k];
                out.push(Segment {
                    adapt: &w[..m],
                    eval: &w[m..],
                    episode: e.info.id,
                });
            }
        }
        out
    }
}
