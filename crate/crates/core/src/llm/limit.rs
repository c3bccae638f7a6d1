use std::sync::{Condvar, Mutex};

use super::{CompletionRequest, LlmBackend, LlmError, LlmResponse};

/// Counting semaphore bounding concurrent backend calls.
#[derive(Debug)]
pub struct InflightLimit {
    free: Mutex<usize>,
    cond: Condvar,
    capacity: usize,
}

impl InflightLimit {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            free: Mutex::new(capacity),
            cond: Condvar::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cond.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit { limit: self }
    }
}

pub struct Permit<'a> {
    limit: &'a InflightLimit,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut free = self.limit.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.limit.cond.notify_one();
    }
}

/// A backend behind an [`InflightLimit`].
pub struct Limited<B> {
    inner: B,
    limit: InflightLimit,
}

impl<B: LlmBackend> Limited<B> {
    pub fn new(inner: B, max_in_flight: usize) -> Self {
        Self {
            inner,
            limit: InflightLimit::new(max_in_flight),
        }
    }
}

impl<B: LlmBackend> LlmBackend for Limited<B> {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<LlmResponse, LlmError> {
        let _permit = self.limit.acquire();
        self.inner.complete(request)
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}
