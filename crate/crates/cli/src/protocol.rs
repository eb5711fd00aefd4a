//! JSON messages exchanged with the UI over the WebSocket.

use serde::{Deserialize, Serialize};
use tipforce_core::control::StopReason;
use tipforce_core::InterfaceEvent;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMsg {
    /// Begin a collaborative insertion into the named phantom.
    Start { phantom: String, alpha: f64 },
    /// Newest handle force; sequence numbers older than the last one are dropped.
    Input {
        f_handle_n: f64,
        #[serde(default)]
        trigger: bool,
        seq: u64,
    },
    /// Withdraw the needle by `mm` at the speed limit.
    Retract { mm: f64 },
    /// End the insertion, save the trace and reply with a report.
    Finish,
    /// End the insertion without saving anything.
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Overrun,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadMessage,
    Busy,
    NoSession,
    SessionActive,
    UnknownPhantom,
    BadStart,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    Telemetry {
        t_s: f64,
        depth_mm: f64,
        /// Tip-force estimate scaled by the feedback gain.
        f_felt_n: f64,
        v_mm_s: f64,
    },
    Event {
        kind: EventKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<StopReason>,
    },
    Report {
        /// Saved trace file name.
        trace: String,
        distances_mm: Vec<f64>,
        detection_rate: f64,
        ground_truth: Vec<InterfaceEvent>,
    },
    Error {
        code: ErrorCode,
        msg: String,
    },
}

impl ServerMsg {
    pub fn error(code: ErrorCode, msg: impl Into<String>) -> Self {
        Self::Error {
            code,
            msg: msg.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize infallibly")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_parse() {
        let m: ClientMsg =
            serde_json::from_str(r#"{"type":"input","f_handle_n":2.5,"trigger":true,"seq":7}"#)
                .unwrap();
        assert_eq!(
            m,
            ClientMsg::Input {
                f_handle_n: 2.5,
                trigger: true,
                seq: 7
            }
        );
        let m: ClientMsg =
            serde_json::from_str(r#"{"type":"input","f_handle_n":1,"seq":1}"#).unwrap();
        assert!(matches!(m, ClientMsg::Input { trigger: false, .. }));
        assert_eq!(
            serde_json::from_str::<ClientMsg>(r#"{"type":"finish"}"#).unwrap(),
            ClientMsg::Finish
        );
        assert!(serde_json::from_str::<ClientMsg>(r#"{"type":"start","phantom":"a"}"#).is_err());
        assert!(serde_json::from_str::<ClientMsg>(r#"{"type":"jump"}"#).is_err());
    }

    #[test]
    fn server_messages_are_tagged() {
        let v: serde_json::Value = serde_json::from_str(
            &ServerMsg::Event {
                kind: EventKind::Stopped,
                reason: Some(StopReason::DepthReached),
            }
            .to_json(),
        )
        .unwrap();
        assert_eq!(v["type"], "event");
        assert_eq!(v["kind"], "stopped");
        assert_eq!(v["reason"], "depth_reached");
        let v: serde_json::Value =
            serde_json::from_str(&ServerMsg::error(ErrorCode::NoSession, "x").to_json()).unwrap();
        assert_eq!(v["code"], "no_session");
    }
}
