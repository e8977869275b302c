use std::time::Duration;

use super::{Fault, Handler};

/// POSTs each request document to `address` and returns the response body.
pub struct HttpHandler {
    address: String,
    agent: ureq::Agent,
}

impl HttpHandler {
    pub fn new(address: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self { address: address.into(), agent }
    }
}

impl Handler for HttpHandler {
    fn handle(&self, request: &str) -> Result<String, Fault> {
        let response = self.agent.post(&self.address).set("content-type", "application/json").send_string(request);
        match response {
            Ok(r) => r.into_string().map_err(|e| Fault::Transport(e.to_string())),
            Err(ureq::Error::Status(code, r)) => {
                let body = r.into_string().unwrap_or_default();
                Err(Fault::Transport(format!("HTTP {code}: {body}")))
            }
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                if msg.contains("timed out") || msg.contains("timeout") {
                    Err(Fault::Timeout)
                } else {
                    Err(Fault::Transport(msg))
                }
            }
        }
    }
}
