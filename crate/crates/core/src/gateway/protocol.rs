//! Wire messages between the gateway and human workers.
//!
//! One JSON object per line, discriminated by `type`. The same schema is used
//! over TCP and over the `/ws` WebSocket endpoint.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::component::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlaSummary {
    pub max_latency: u64,
    pub min_quality: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterTerms {
    pub price: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Accept,
    Decline,
    Counter(CounterTerms),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PaymentReason {
    OnTime,
    AfterDeadline,
    QualityRejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    /// Client opens or resumes a session.
    Hello {
        worker_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        resume_token: Option<String>,
        #[serde(default)]
        do_not_disturb: bool,
    },
    Welcome {
        worker_id: String,
        resume_token: String,
        grain: f64,
    },
    TaskOffer {
        task_id: String,
        description: String,
        #[serde(default)]
        input: Value,
        offered_price: f64,
        deadline: Millis,
        sla: SlaSummary,
        countdown_start: Millis,
    },
    OfferResponse {
        task_id: String,
        response: Response,
    },
    TaskInput {
        task_id: String,
        payload: Value,
    },
    TaskResult {
        task_id: String,
        #[serde(default)]
        payload: Value,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        quality: Option<f64>,
    },
    PaymentVerdict {
        task_id: String,
        paid: bool,
        amount: f64,
        reason: PaymentReason,
    },
    SlaViolationNotice {
        task_id: String,
        reason: String,
    },
    Heartbeat {
        ts: Millis,
    },
    Goal {
        metric: String,
        direction: crate::goals::Direction,
        weight: f64,
    },
    Error {
        code: String,
        #[serde(default, skip_serializing_if = "String::is_empty")]
        message: String,
    },
}

/// Every `type` tag in the schema.
pub const MESSAGE_TYPES: [&str; 11] = [
    "hello",
    "welcome",
    "task_offer",
    "offer_response",
    "task_input",
    "task_result",
    "payment_verdict",
    "sla_violation_notice",
    "heartbeat",
    "goal",
    "error",
];

/// The published JSON Schema for [`WireMessage`].
pub const SCHEMA: &str = include_str!("../../data/gateway-schema.json");

impl WireMessage {
    pub fn type_name(&self) -> &'static str {
        match self {
            WireMessage::Hello { .. } => "hello",
            WireMessage::Welcome { .. } => "welcome",
            WireMessage::TaskOffer { .. } => "task_offer",
            WireMessage::OfferResponse { .. } => "offer_response",
            WireMessage::TaskInput { .. } => "task_input",
            WireMessage::TaskResult { .. } => "task_result",
            WireMessage::PaymentVerdict { .. } => "payment_verdict",
            WireMessage::SlaViolationNotice { .. } => "sla_violation_notice",
            WireMessage::Heartbeat { .. } => "heartbeat",
            WireMessage::Goal { .. } => "goal",
            WireMessage::Error { .. } => "error",
        }
    }

    pub fn error(code: &str, message: impl Into<String>) -> Self {
        WireMessage::Error { code: code.to_string(), message: message.into() }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("wire messages serialize");
        s.push('\n');
        s
    }
}

/// Decodes one line. Failures come back as the `error` reply to send.
pub fn decode(line: &str) -> Result<WireMessage, WireMessage> {
    let v: Value = serde_json::from_str(line.trim())
        .map_err(|e| WireMessage::error("malformed", e.to_string()))?;
    let Some(t) = v.get("type").and_then(Value::as_str) else {
        return Err(WireMessage::error("malformed", "missing type"));
    };
    if !MESSAGE_TYPES.contains(&t) {
        return Err(WireMessage::error("unknown-type", t));
    }
    serde_json::from_value(v).map_err(|e| WireMessage::error("malformed", e.to_string()))
}
