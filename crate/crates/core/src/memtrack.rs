//! Byte accounting for tensor and matrix buffers.
//!
//! Every [`DenseTensor`](crate::DenseTensor) and [`Matrix`](crate::Matrix)
//! owns a [`Buffer`] that registers its size with a per-thread counter on
//! creation and releases it on drop. The high-water mark of that counter is
//! the "peak tracked bytes" figure reported by the compressors.
//!
//! Counters are thread-local so concurrently running pipelines (for example
//! parallel test threads) do not see each other's allocations. A buffer
//! dropped on a different thread than the one that created it releases
//! against the dropping thread's counter, saturating at zero.

use std::cell::Cell;
use std::ops::{Deref, DerefMut};

thread_local! {
    static CURRENT: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

fn register(bytes: usize) {
    CURRENT.with(|c| {
        let now = c.get() + bytes;
        c.set(now);
        PEAK.with(|p| {
            if now > p.get() {
                p.set(now);
            }
        });
    });
}

fn release(bytes: usize) {
    CURRENT.with(|c| c.set(c.get().saturating_sub(bytes)));
}

/// Bytes currently held by live buffers created on this thread.
pub fn current_bytes() -> usize {
    CURRENT.with(|c| c.get())
}

/// High-water mark of [`current_bytes`] since the last [`reset_peak`].
pub fn peak_bytes() -> usize {
    PEAK.with(|p| p.get())
}

pub fn reset_peak() {
    let now = current_bytes();
    PEAK.with(|p| p.set(now));
}

/// Runs `f` and returns its result together with the peak number of tracked
/// bytes held above the level at entry. Nested calls are fine; the outer
/// peak is restored to the maximum of both afterwards.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, usize) {
    let baseline = current_bytes();
    let outer_peak = peak_bytes();
    PEAK.with(|p| p.set(baseline));
    let out = f();
    let inner_peak = peak_bytes();
    PEAK.with(|p| p.set(outer_peak.max(inner_peak)));
    (out, inner_peak.saturating_sub(baseline))
}

/// A tracked `f64` buffer of fixed length.
#[derive(Debug, PartialEq)]
pub struct Buffer(Vec<f64>);

impl Buffer {
    pub fn new(data: Vec<f64>) -> Self {
        register(data.len() * std::mem::size_of::<f64>());
        Buffer(data)
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![0.0; len])
    }

    /// Changes the length in place, zero-filling new entries. Growth uses
    /// the amortized capacity of `Vec`, so appending a little at a time does
    /// not copy the whole buffer on every call.
    pub fn resize(&mut self, len: usize) {
        let old = self.0.len();
        if len > old {
            register((len - old) * std::mem::size_of::<f64>());
        } else {
            release((old - len) * std::mem::size_of::<f64>());
        }
        self.0.resize(len, 0.0);
    }

    pub fn into_vec(mut self) -> Vec<f64> {
        let v = std::mem::take(&mut self.0);
        release(v.len() * std::mem::size_of::<f64>());
        v
    }
}

impl Clone for Buffer {
    fn clone(&self) -> Self {
        Buffer::new(self.0.clone())
    }
}

impl Drop for Buffer {
    fn drop(&mut self) {
        release(self.0.len() * std::mem::size_of::<f64>());
    }
}

impl Deref for Buffer {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Buffer {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}
