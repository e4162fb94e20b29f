//! Reward providers for self-critical training.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use vslan_core::metrics::{self, CorpusStats};

use crate::error::{Result, VslanError};

pub const TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub premise: String,
    pub hypothesis: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub score: f64,
}

/// Client of a remote entailment scorer: `POST <endpoint>/score`.
#[derive(Clone, Debug)]
pub struct EntailmentClient {
    url: String,
    agent: ureq::Agent,
}

impl EntailmentClient {
    pub fn new(endpoint: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(TIMEOUT))
            .proxy(None)
            .build()
            .into();
        Self {
            url: format!("{}/score", endpoint.trim_end_matches('/')),
            agent,
        }
    }

    fn attempt(&self, req: &ScoreRequest) -> Result<f64> {
        let body = serde_json::to_string(req).expect("request serializes");
        let mut resp = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body.as_bytes())
            .map_err(|e| VslanError::RewardUnavailable(format!("{}: {e}", self.url)))?;
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| VslanError::RewardUnavailable(format!("{}: {e}", self.url)))?;
        let parsed: ScoreResponse = serde_json::from_str(&text)
            .map_err(|e| VslanError::RewardProtocol(format!("{}: {e} in {text:?}", self.url)))?;
        if !(0.0..=1.0).contains(&parsed.score) {
            return Err(VslanError::RewardProtocol(format!(
                "{}: score {} outside [0, 1]",
                self.url, parsed.score
            )));
        }
        Ok(parsed.score)
    }

    /// Entailment score of `hypothesis` given `premise`, retried once when
    /// the service is unreachable.
    pub fn score(&self, premise: &str, hypothesis: &str) -> Result<f64> {
        let req = ScoreRequest {
            premise: premise.to_string(),
            hypothesis: hypothesis.to_string(),
        };
        match self.attempt(&req) {
            Err(VslanError::RewardUnavailable(first)) => {
                log::warn!("reward request failed, retrying: {first}");
                self.attempt(&req)
            }
            other => other,
        }
    }
}

/// Scores a generated caption against one video's references.
pub enum Reward {
    Cider(CorpusStats<String>),
    Entailment(EntailmentClient),
}

impl Reward {
    /// `candidate` and `references` are metric tokens; `premise` picks the
    /// reference used as entailment premise.
    pub fn score(&self, candidate: &[String], references: &[Vec<String>], premise: usize) -> Result<f64> {
        match self {
            Reward::Cider(stats) => metrics::cider(candidate, references, stats).map_err(VslanError::from),
            Reward::Entailment(client) => {
                let p = references
                    .get(premise)
                    .ok_or_else(|| VslanError::Data("video has no reference captions".into()))?;
                client.score(&p.join(" "), &candidate.join(" "))
            }
        }
    }
}
