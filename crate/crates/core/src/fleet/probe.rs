use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::FleetError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum HealthStatus {
    Healthy,
    Unhealthy(String),
}

#[async_trait]
pub trait HealthProbe: Send + Sync {
    /// One probe of `endpoint` (`host:port`).
    async fn check(&self, endpoint: &str) -> HealthStatus;
}

/// GET on a path; any non-5xx answer counts as healthy.
pub struct HttpProbe {
    client: reqwest::Client,
    path: String,
}

impl HttpProbe {
    pub fn new(path: &str) -> Self {
        let client = reqwest::Client::builder().timeout(Duration::from_secs(5)).build().expect("http client");
        HttpProbe { client, path: path.to_string() }
    }
}

#[async_trait]
impl HealthProbe for HttpProbe {
    async fn check(&self, endpoint: &str) -> HealthStatus {
        match self.client.get(format!("http://{endpoint}{}", self.path)).send().await {
            Ok(r) if !r.status().is_server_error() => HealthStatus::Healthy,
            Ok(r) => HealthStatus::Unhealthy(format!("status {}", r.status())),
            Err(e) => HealthStatus::Unhealthy(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub initial: Duration,
    pub factor: f64,
    pub max_delay: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff { initial: Duration::from_millis(50), factor: 2.0, max_delay: Duration::from_secs(2) }
    }
}

impl Backoff {
    pub fn delay(&self, attempt: u32) -> Duration {
        let d = self.initial.as_secs_f64() * self.factor.powi(attempt as i32);
        Duration::from_secs_f64(d.min(self.max_delay.as_secs_f64()))
    }
}

/// Probes until healthy or `timeout` elapses. Returns the number of probes.
pub async fn wait_healthy(
    probe: &dyn HealthProbe,
    endpoint: &str,
    timeout: Duration,
    backoff: Backoff,
) -> Result<u32, FleetError> {
    let deadline = tokio::time::Instant::now() + timeout;
    let mut attempt = 0;
    loop {
        let status = probe.check(endpoint).await;
        attempt += 1;
        if status == HealthStatus::Healthy {
            return Ok(attempt);
        }
        let now = tokio::time::Instant::now();
        if now >= deadline {
            let HealthStatus::Unhealthy(why) = status else { unreachable!() };
            return Err(FleetError::HealthTimeout(format!("{endpoint}: {why}")));
        }
        tokio::time::sleep(backoff.delay(attempt - 1).min(deadline - now)).await;
    }
}
