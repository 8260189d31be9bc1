//! Optional remote-model decision adapter.
//!
//! The control loop never depends on the endpoint being up: any transport,
//! parse, or schema failure is logged and answered with the caller's
//! fallback decision (marked `source = fallback`), and successful responses
//! still pass through `validate_decision` downstream. The credential is
//! read from an environment variable named in the config and is never
//! written to any output file.

use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::controller::{
    AllocationDecision, DecisionConstraints, DecisionContext, DecisionProducer, DecisionSource,
    HeuristicConfig, SleeveWeights,
};
use crate::error::{Error, Result};
use crate::market::{MarketFeatures, RegimeLabel};

/// Feature block with one named field per embedding dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LlmFeatures {
    pub returns_1d: f64,
    pub returns_5d: f64,
    pub returns_21d: f64,
    pub realized_vol_21d: f64,
    pub realized_vol_63d: f64,
    pub drawdown_from_peak: f64,
    pub trend_21d: f64,
    pub regime_calm: f64,
    pub regime_trending: f64,
    pub regime_high_vol: f64,
}

impl From<&MarketFeatures> for LlmFeatures {
    fn from(f: &MarketFeatures) -> Self {
        let oh = f.regime.one_hot();
        Self {
            returns_1d: f.returns_1d,
            returns_5d: f.returns_5d,
            returns_21d: f.returns_21d,
            realized_vol_21d: f.realized_vol_21d,
            realized_vol_63d: f.realized_vol_63d,
            drawdown_from_peak: f.drawdown_from_peak,
            trend_21d: f.trend_21d,
            regime_calm: oh[0],
            regime_trending: oh[1],
            regime_high_vol: oh[2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmEpisode {
    pub date: NaiveDate,
    pub weights: SleeveWeights,
    pub realized_return: f64,
    pub realized_max_drawdown: f64,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub run_id: String,
    pub date: NaiveDate,
    pub features: LlmFeatures,
    pub regime: RegimeLabel,
    pub constraints: DecisionConstraints,
    pub episodes: Vec<LlmEpisode>,
    pub previous_weights: SleeveWeights,
    pub temperature: f64,
}

impl LlmRequest {
    pub fn from_context(ctx: &DecisionContext<'_>) -> Self {
        Self {
            run_id: ctx.run_id.to_string(),
            date: ctx.date,
            features: ctx.features.into(),
            regime: ctx.regime,
            constraints: *ctx.constraints,
            episodes: ctx
                .retrieved
                .iter()
                .filter_map(|(e, sim)| {
                    e.outcome.map(|o| LlmEpisode {
                        date: e.date,
                        weights: e.action.weights,
                        realized_return: o.realized_return,
                        realized_max_drawdown: o.realized_max_drawdown,
                        similarity: *sim,
                    })
                })
                .collect(),
            previous_weights: ctx.previous.weights,
            temperature: ctx.temperature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub regime_label: String,
    pub weights: SleeveWeights,
    pub equity_exposure: f64,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmSettings {
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    /// Name of the environment variable holding the bearer credential.
    pub credential_env: Option<String>,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self { endpoint: None, timeout_ms: 5_000, credential_env: None }
    }
}

pub struct LlmClient {
    endpoint: String,
    agent: ureq::Agent,
    credential: Option<String>,
}

impl LlmClient {
    /// Builds a client from settings; returns None when no endpoint is
    /// configured.
    pub fn from_settings(settings: &LlmSettings) -> Option<Self> {
        let endpoint = settings.endpoint.clone()?;
        let credential = settings.credential_env.as_deref().and_then(|var| std::env::var(var).ok());
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(settings.timeout_ms)))
            .build();
        Some(Self { endpoint, agent: config.into(), credential })
    }

    fn call(&self, request: &LlmRequest) -> Result<LlmResponse> {
        let mut builder = self.agent.post(&self.endpoint);
        if let Some(token) = &self.credential {
            builder = builder.header("authorization", &format!("Bearer {token}"));
        }
        let mut response = builder
            .send_json(request)
            .map_err(|e| Error::Llm(format!("transport: {e}")))?;
        let parsed: LlmResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| Error::Llm(format!("schema: {e}")))?;
        let finite = parsed.weights.as_array().iter().all(|w| w.is_finite())
            && parsed.equity_exposure.is_finite();
        if !finite {
            return Err(Error::Llm("schema: non-finite numbers in response".into()));
        }
        Ok(parsed)
    }
}

/// Sends the request; any failure returns `fallback` re-marked with
/// `source = fallback`.
pub fn llm_allocate(client: &LlmClient, request: &LlmRequest, fallback: AllocationDecision) -> AllocationDecision {
    match client.call(request) {
        Ok(response) => AllocationDecision {
            weights: response.weights,
            equity_exposure: response.equity_exposure,
            source: DecisionSource::Llm,
            rationale: response.rationale,
        },
        Err(e) => {
            log::warn!("llm adapter fell back on {}: {e}", request.date);
            AllocationDecision {
                weights: fallback.weights,
                equity_exposure: fallback.equity_exposure,
                source: DecisionSource::Fallback,
                rationale: format!("{}; llm fallback: {e}", fallback.rationale),
            }
        }
    }
}

/// Decision producer that asks the remote endpoint, falling back to the
/// local heuristic's decision for the same day.
pub struct LlmProducer {
    pub client: LlmClient,
    pub heuristic: HeuristicConfig,
}

impl DecisionProducer for LlmProducer {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> AllocationDecision {
        let fallback = crate::controller::heuristic_allocate(
            ctx.regime,
            ctx.retrieved,
            ctx.previous,
            ctx.constraints,
            ctx.lambda,
            &self.heuristic,
        );
        let request = LlmRequest::from_context(ctx);
        llm_allocate(&self.client, &request, fallback)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    fn fallback() -> AllocationDecision {
        AllocationDecision {
            weights: SleeveWeights::pure_cash(),
            equity_exposure: 1.0,
            source: DecisionSource::Heuristic,
            rationale: "prior".into(),
        }
    }

    fn request_fixture() -> LlmRequest {
        LlmRequest {
            run_id: "r1".into(),
            date: NaiveDate::from_ymd_opt(2021, 6, 1).unwrap(),
            features: LlmFeatures {
                returns_1d: 0.01,
                returns_5d: 0.02,
                returns_21d: 0.03,
                realized_vol_21d: 0.2,
                realized_vol_63d: 0.22,
                drawdown_from_peak: 0.05,
                trend_21d: 0.001,
                regime_calm: 1.0,
                regime_trending: 0.0,
                regime_high_vol: 0.0,
            },
            regime: RegimeLabel::Calm,
            constraints: DecisionConstraints::default(),
            episodes: vec![LlmEpisode {
                date: NaiveDate::from_ymd_opt(2021, 3, 1).unwrap(),
                weights: SleeveWeights { collar: 0.4, straddle: 0.1, delta_neutral: 0.1, cash: 0.4 },
                realized_return: 0.02,
                realized_max_drawdown: 0.03,
                similarity: 0.91,
            }],
            previous_weights: SleeveWeights::pure_cash(),
            temperature: 0.0,
        }
    }

    /// Accepts exactly one request and answers `body` as JSON.
    fn one_shot_server(body: String) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            // Read headers, then the declared body length.
            let header_end = loop {
                let n = stream.read(&mut chunk).unwrap();
                if n == 0 {
                    break None;
                }
                buf.extend_from_slice(&chunk[..n]);
                if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                    break Some(pos + 4);
                }
            };
            if let Some(header_end) = header_end {
                let headers = String::from_utf8_lossy(&buf[..header_end]).to_lowercase();
                let content_length: usize = headers
                    .lines()
                    .find_map(|l| l.strip_prefix("content-length:"))
                    .map(|v| v.trim().parse().unwrap())
                    .unwrap_or(0);
                while buf.len() < header_end + content_length {
                    let n = stream.read(&mut chunk).unwrap();
                    if n == 0 {
                        break;
                    }
                    buf.extend_from_slice(&chunk[..n]);
                }
            }
            let response = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            stream.write_all(response.as_bytes()).unwrap();
        });
        format!("http://{addr}/allocate")
    }

    fn client_for(endpoint: String) -> LlmClient {
        LlmClient::from_settings(&LlmSettings {
            endpoint: Some(endpoint),
            timeout_ms: 2_000,
            credential_env: None,
        })
        .unwrap()
    }

    #[test]
    fn request_document_uses_wire_field_names() {
        let json = serde_json::to_value(request_fixture()).unwrap();
        for key in ["run_id", "date", "features", "regime", "constraints", "episodes", "previous_weights", "temperature"] {
            assert!(json.get(key).is_some(), "missing key {key}");
        }
        let ep = &json["episodes"][0];
        for key in ["date", "weights", "realized_return", "realized_max_drawdown", "similarity"] {
            assert!(ep.get(key).is_some(), "missing episode key {key}");
        }
        for key in ["collar", "straddle", "delta_neutral", "cash"] {
            assert!(json["previous_weights"].get(key).is_some());
        }
        assert_eq!(json["regime"], "calm");
        assert_eq!(json["features"]["regime_calm"], 1.0);
    }

    #[test]
    fn well_formed_response_passes_through() {
        let endpoint = one_shot_server(
            r#"{"regime_label":"calm","weights":{"collar":0.5,"straddle":0.2,"delta_neutral":0.2,"cash":0.1},"equity_exposure":0.9,"rationale":"remote"}"#.into(),
        );
        let d = llm_allocate(&client_for(endpoint), &request_fixture(), fallback());
        assert_eq!(d.source, DecisionSource::Llm);
        assert_eq!(d.weights, SleeveWeights { collar: 0.5, straddle: 0.2, delta_neutral: 0.2, cash: 0.1 });
        assert_eq!(d.equity_exposure, 0.9);
        assert_eq!(d.rationale, "remote");
    }

    #[test]
    fn missing_weights_field_falls_back() {
        let endpoint = one_shot_server(r#"{"regime_label":"calm","equity_exposure":0.9,"rationale":"bad"}"#.into());
        let d = llm_allocate(&client_for(endpoint), &request_fixture(), fallback());
        assert_eq!(d.source, DecisionSource::Fallback);
        assert_eq!(d.weights, fallback().weights);
    }

    #[test]
    fn transport_failure_falls_back() {
        // Nothing listens on this port; connection is refused immediately.
        let d = llm_allocate(&client_for("http://127.0.0.1:9/allocate".into()), &request_fixture(), fallback());
        assert_eq!(d.source, DecisionSource::Fallback);
        assert!(d.rationale.contains("llm fallback"));
    }

    #[test]
    fn no_endpoint_means_no_client() {
        assert!(LlmClient::from_settings(&LlmSettings::default()).is_none());
    }
}
