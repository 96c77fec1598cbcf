use std::time::Duration;

use meshgate_core::gateway::{DeliveryError, ReadingDelivery};
use meshgate_core::reading::SensorReading;

/// Posts readings to the middleware's ingest endpoint.
///
/// A 4xx answer is final: the middleware saw the reading and refused it, so
/// retrying cannot help. Only transport failures and 5xx answers count as
/// the link being down.
pub struct HttpDelivery {
    url: String,
    agent: ureq::Agent,
    pub rejected: u64,
}

impl HttpDelivery {
    pub fn new(base_url: &str) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(2)).build();
        HttpDelivery { url: format!("{}/ingest", base_url.trim_end_matches('/')), agent, rejected: 0 }
    }
}

impl ReadingDelivery for HttpDelivery {
    fn deliver(&mut self, r: &SensorReading) -> Result<(), DeliveryError> {
        match self.agent.post(&self.url).send_json(r) {
            Ok(_) => Ok(()),
            Err(ureq::Error::Status(code, resp)) if (400..500).contains(&code) => {
                self.rejected += 1;
                let body = resp.into_string().unwrap_or_default();
                tracing::warn!(mote = r.mote_id, seq = r.seq, code, "middleware refused reading: {body}");
                Ok(())
            }
            Err(e) => Err(DeliveryError(e.to_string())),
        }
    }
}
