//! The fixed action vocabulary agents emit, its JSON wire format
//! (`action/1`), and validation against the latest observation.
//!
//! There is deliberately no scroll action: the driver scrolls targets into
//! view before acting on them.
//!
//! One example per variant:
//!
//! ```text
//! {"action":"click","target":"add-to-cart"}
//! {"action":"hover","target":"account-menu"}
//! {"action":"key","key":"Escape"}                        // target optional
//! {"action":"type","target":"search","text":"mug","enter":true}
//! {"action":"clear","target":"search"}
//! {"action":"select","target":"color","option":"color-blue"}
//! {"action":"navigate","url":"http://localhost:7770/"}
//! {"action":"back"}
//! {"action":"forward"}
//! {"action":"refresh"}
//! {"action":"new_tab","url":"http://localhost:7770/"}   // url optional
//! {"action":"switch_tab","index":1}
//! {"action":"close_tab","index":1}
//! {"action":"terminate","answer":"$12.99"}               // answer optional
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::obs::{ObservationDocument, SemanticId};

pub const ACTION_SCHEMA: &str = "action/1";

/// Named keys accepted by [`ActionRequest::KeyPress`]; any single printable
/// character is accepted as well.
pub const NAMED_KEYS: &[&str] = &[
    "Enter",
    "Escape",
    "Tab",
    "ArrowUp",
    "ArrowDown",
    "ArrowLeft",
    "ArrowRight",
    "Backspace",
    "Delete",
    "Home",
    "End",
    "PageUp",
    "PageDown",
];

pub fn is_valid_key(key: &str) -> bool {
    if NAMED_KEYS.contains(&key) {
        return true;
    }
    let mut chars = key.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if !c.is_control())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum ActionRequest {
    #[serde(rename = "click")]
    ClickElement {
        target: SemanticId,
    },
    #[serde(rename = "hover")]
    HoverElement {
        target: SemanticId,
    },
    #[serde(rename = "key")]
    KeyPress {
        key: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<SemanticId>,
    },
    #[serde(rename = "type")]
    TypeText {
        target: SemanticId,
        text: String,
        #[serde(rename = "enter", default)]
        press_enter: bool,
    },
    #[serde(rename = "clear")]
    ClearInput {
        target: SemanticId,
    },
    #[serde(rename = "select")]
    SelectOption {
        target: SemanticId,
        #[serde(rename = "option")]
        option_id: SemanticId,
    },
    Navigate {
        url: String,
    },
    Back,
    Forward,
    Refresh,
    NewTab {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        url: Option<String>,
    },
    SwitchTab {
        index: usize,
    },
    CloseTab {
        index: usize,
    },
    Terminate {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        answer: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValidationCode {
    UnknownAction,
    UnknownTarget,
    TargetNotInteractable,
    MissingParameter,
    BadParameter,
}

impl fmt::Display for ValidationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("{code}: {message}")]
pub struct ActionValidationError {
    pub code: ValidationCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

impl ActionValidationError {
    fn new(code: ValidationCode, message: impl Into<String>) -> Self {
        ActionValidationError { code, message: message.into(), target: None }
    }

    fn on(code: ValidationCode, target: &str, message: impl Into<String>) -> Self {
        ActionValidationError { code, message: message.into(), target: Some(target.to_string()) }
    }
}

/// (wire name, required fields, optional fields)
const VARIANTS: &[(&str, &[&str], &[&str])] = &[
    ("click", &["target"], &[]),
    ("hover", &["target"], &[]),
    ("key", &["key"], &["target"]),
    ("type", &["target", "text"], &["enter"]),
    ("clear", &["target"], &[]),
    ("select", &["target", "option"], &[]),
    ("navigate", &["url"], &[]),
    ("back", &[], &[]),
    ("forward", &[], &[]),
    ("refresh", &[], &[]),
    ("new_tab", &[], &["url"]),
    ("switch_tab", &["index"], &[]),
    ("close_tab", &["index"], &[]),
    ("terminate", &[], &["answer"]),
];

impl ActionRequest {
    /// Wire name of the variant.
    pub fn name(&self) -> &'static str {
        match self {
            ActionRequest::ClickElement { .. } => "click",
            ActionRequest::HoverElement { .. } => "hover",
            ActionRequest::KeyPress { .. } => "key",
            ActionRequest::TypeText { .. } => "type",
            ActionRequest::ClearInput { .. } => "clear",
            ActionRequest::SelectOption { .. } => "select",
            ActionRequest::Navigate { .. } => "navigate",
            ActionRequest::Back => "back",
            ActionRequest::Forward => "forward",
            ActionRequest::Refresh => "refresh",
            ActionRequest::NewTab { .. } => "new_tab",
            ActionRequest::SwitchTab { .. } => "switch_tab",
            ActionRequest::CloseTab { .. } => "close_tab",
            ActionRequest::Terminate { .. } => "terminate",
        }
    }

    /// The element the action operates on, if any.
    pub fn target(&self) -> Option<&SemanticId> {
        match self {
            ActionRequest::ClickElement { target }
            | ActionRequest::HoverElement { target }
            | ActionRequest::TypeText { target, .. }
            | ActionRequest::ClearInput { target }
            | ActionRequest::SelectOption { target, .. } => Some(target),
            ActionRequest::KeyPress { target, .. } => target.as_ref(),
            _ => None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("action serializes")
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("action serializes")
    }
}

/// Decodes an agent tool call.
pub fn parse_action(raw: &str) -> Result<ActionRequest, ActionValidationError> {
    let value: Value = serde_json::from_str(raw)
        .map_err(|e| ActionValidationError::new(ValidationCode::BadParameter, format!("invalid json: {e}")))?;
    parse_action_value(value)
}

pub fn parse_action_value(mut value: Value) -> Result<ActionRequest, ActionValidationError> {
    use ValidationCode::*;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| ActionValidationError::new(BadParameter, "action must be a JSON object"))?;
    if let Some(schema) = obj.remove("schema") {
        if schema.as_str() != Some(ACTION_SCHEMA) {
            return Err(ActionValidationError::new(BadParameter, format!("unsupported schema {schema}")));
        }
    }
    let name = match obj.get("action") {
        Some(Value::String(s)) => s.clone(),
        Some(other) => {
            return Err(ActionValidationError::new(BadParameter, format!("`action` must be a string, got {other}")))
        }
        None => return Err(ActionValidationError::new(MissingParameter, "missing field `action`")),
    };
    let (_, required, optional) = VARIANTS
        .iter()
        .find(|(n, _, _)| *n == name)
        .ok_or_else(|| ActionValidationError::new(UnknownAction, format!("unknown action {name:?}")))?;
    for field in *required {
        match obj.get(*field) {
            None | Some(Value::Null) => {
                return Err(ActionValidationError::new(MissingParameter, format!("{name}: missing field `{field}`")))
            }
            _ => {}
        }
    }
    if let Some(extra) =
        obj.keys().find(|k| *k != "action" && !required.contains(&k.as_str()) && !optional.contains(&k.as_str()))
    {
        return Err(ActionValidationError::new(BadParameter, format!("{name}: unexpected field `{extra}`")));
    }
    // Optional fields sent as explicit nulls mean "absent".
    obj.retain(|_, v| !v.is_null());
    let action: ActionRequest =
        serde_json::from_value(value).map_err(|e| ActionValidationError::new(BadParameter, format!("{name}: {e}")))?;
    match &action {
        ActionRequest::KeyPress { key, .. } if !is_valid_key(key) => {
            Err(ActionValidationError::new(BadParameter, format!("unsupported key {key:?}")))
        }
        ActionRequest::Navigate { url } => check_url(url).map(|_| action),
        ActionRequest::NewTab { url: Some(url) } => check_url(url).map(|_| action),
        _ => Ok(action),
    }
}

fn check_url(url: &str) -> Result<(), ActionValidationError> {
    url::Url::parse(url)
        .map(|_| ())
        .map_err(|e| ActionValidationError::new(ValidationCode::BadParameter, format!("bad url {url:?}: {e}")))
}

/// Checks an action against the latest observation and the open-tab count.
pub fn validate_action(
    action: &ActionRequest,
    obs: &ObservationDocument,
    tab_count: usize,
) -> Result<(), ActionValidationError> {
    use ValidationCode::*;
    let not_interactable = |id: &SemanticId, what: &str| {
        ActionValidationError::on(TargetNotInteractable, id.as_str(), format!("{id} is not {what}"))
    };
    let unknown = |id: &SemanticId| {
        ActionValidationError::on(UnknownTarget, id.as_str(), format!("{id} is not in the current observation"))
    };
    let check = |id: &SemanticId, ok: bool, what: &str| {
        if ok {
            Ok(())
        } else if obs.knows(id.as_str()) {
            Err(not_interactable(id, what))
        } else {
            Err(unknown(id))
        }
    };
    match action {
        ActionRequest::ClickElement { target } => check(target, obs.is_clickable(target.as_str()), "clickable"),
        ActionRequest::HoverElement { target } => check(target, obs.is_hoverable(target.as_str()), "hoverable"),
        ActionRequest::KeyPress { target: Some(target), .. } => check(target, obs.knows(target.as_str()), "focusable"),
        ActionRequest::KeyPress { target: None, .. } => Ok(()),
        ActionRequest::TypeText { target, .. } | ActionRequest::ClearInput { target } => {
            match obs.input(target.as_str()) {
                Some(rec) if rec.editable => Ok(()),
                Some(_) => Err(not_interactable(target, "editable")),
                None => check(target, false, "an editable input"),
            }
        }
        ActionRequest::SelectOption { target, option_id } => match obs.select(target.as_str()) {
            Some(sel) if sel.options.iter().any(|o| &o.semantic_id == option_id) => Ok(()),
            Some(_) => Err(ActionValidationError::on(
                UnknownTarget,
                option_id.as_str(),
                format!("{option_id} is not an option of {target}"),
            )),
            None => check(target, false, "a select"),
        },
        ActionRequest::SwitchTab { index } | ActionRequest::CloseTab { index } if *index >= tab_count => {
            Err(ActionValidationError::new(
                BadParameter,
                format!("tab index {index} out of range (open tabs: {tab_count})"),
            ))
        }
        ActionRequest::CloseTab { .. } if tab_count <= 1 => Err(ActionValidationError::new(
            BadParameter,
            "cannot close the only open tab; use terminate to end the session",
        )),
        _ => Ok(()),
    }
}
