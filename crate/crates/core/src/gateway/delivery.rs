use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::reading::SensorReading;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("delivery failed: {0}")]
pub struct DeliveryError(pub String);

/// Hands one reading to the middleware. `Ok` means the middleware
/// accepted it, including as a duplicate.
pub trait ReadingDelivery: Send {
    fn deliver(&mut self, r: &SensorReading) -> Result<(), DeliveryError>;
}

impl<D: ReadingDelivery + ?Sized> ReadingDelivery for Box<D> {
    fn deliver(&mut self, r: &SensorReading) -> Result<(), DeliveryError> {
        (**self).deliver(r)
    }
}

/// Collects delivered readings in memory.
#[derive(Debug, Clone, Default)]
pub struct Collector(pub Arc<Mutex<Vec<SensorReading>>>);

impl Collector {
    pub fn readings(&self) -> Vec<SensorReading> {
        self.0.lock().expect("collector poisoned").clone()
    }
}

impl ReadingDelivery for Collector {
    fn deliver(&mut self, r: &SensorReading) -> Result<(), DeliveryError> {
        self.0.lock().expect("collector poisoned").push(*r);
        Ok(())
    }
}

/// Wraps a delivery target behind a switch that scenarios flip to
/// simulate middleware outages.
#[derive(Debug, Clone)]
pub struct ScriptedLink<D> {
    inner: D,
    up: Arc<AtomicBool>,
}

impl<D> ScriptedLink<D> {
    pub fn new(inner: D) -> Self {
        ScriptedLink { inner, up: Arc::new(AtomicBool::new(true)) }
    }

    pub fn switch(&self) -> Arc<AtomicBool> {
        self.up.clone()
    }
}

impl<D: ReadingDelivery> ReadingDelivery for ScriptedLink<D> {
    fn deliver(&mut self, r: &SensorReading) -> Result<(), DeliveryError> {
        if !self.up.load(Ordering::SeqCst) {
            return Err(DeliveryError("middleware unreachable".into()));
        }
        self.inner.deliver(r)
    }
}
