//! Wire protocol shared by the serve mode and the probing client.
//!
//! POST /generate, JSON request {"prompt": str, "max_tokens": int},
//! JSON response {"text": str}, UTF-8. When the `PROVLAB_TOKEN` environment
//! variable is set, the client sends it as `Authorization: Bearer <token>`.

use serde::{Deserialize, Serialize};

pub const GENERATE_PATH: &str = "/generate";
pub const HEALTH_PATH: &str = "/healthz";
pub const TOKEN_ENV: &str = "PROVLAB_TOKEN";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub max_tokens: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}
