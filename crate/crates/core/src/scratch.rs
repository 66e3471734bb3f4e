//! Allocation counting for kernel scratch buffers.
//!
//! Kernels allocate intermediates through [`ScratchVec`], which reports its
//! size to a per-thread meter. [`measure`] returns the peak number of scratch
//! bytes live on the calling thread while a closure runs. Buffers allocated on
//! other threads are not seen, so measurements are meaningful for
//! single-threaded runs (the benchmark default).

use std::cell::Cell;
use std::ops::{Deref, DerefMut};

thread_local! {
    static CURRENT: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

fn register(bytes: usize) {
    CURRENT.with(|cur| {
        let now = cur.get() + bytes;
        cur.set(now);
        PEAK.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

fn release(bytes: usize) {
    CURRENT.with(|cur| cur.set(cur.get().saturating_sub(bytes)));
}

/// Runs `f` and returns its result together with the peak scratch bytes
/// allocated on this thread during the call.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, usize) {
    let base = CURRENT.with(Cell::get);
    let saved_peak = PEAK.with(|p| p.replace(base));
    let out = f();
    let peak = PEAK.with(Cell::get);
    PEAK.with(|p| p.set(saved_peak.max(peak)));
    (out, peak - base)
}

/// A metered `Vec`.
#[derive(Debug)]
pub struct ScratchVec<T> {
    data: Vec<T>,
    bytes: usize,
}

impl<T: Clone> ScratchVec<T> {
    pub fn filled(len: usize, value: T) -> Self {
        Self::from_vec(vec![value; len])
    }
}

impl<T> ScratchVec<T> {
    pub fn from_vec(data: Vec<T>) -> Self {
        let bytes = data.capacity() * std::mem::size_of::<T>();
        register(bytes);
        Self { data, bytes }
    }

    pub fn into_vec(mut self) -> Vec<T> {
        release(self.bytes);
        self.bytes = 0;
        std::mem::take(&mut self.data)
    }
}

impl<T> Drop for ScratchVec<T> {
    fn drop(&mut self) {
        release(self.bytes);
    }
}

impl<T> Deref for ScratchVec<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.data
    }
}

impl<T> DerefMut for ScratchVec<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_tracks_nested_buffers() {
        let ((), peak) = measure(|| {
            let a = ScratchVec::filled(100, 0u64);
            {
                let _b = ScratchVec::filled(50, 0u32);
            }
            let _c = ScratchVec::filled(10, 0u8);
            drop(a);
        });
        assert_eq!(peak, 800 + 200);
        let ((), after) = measure(|| {});
        assert_eq!(after, 0);
    }

    #[test]
    fn into_vec_releases() {
        let (v, peak) = measure(|| ScratchVec::filled(4, 1.0f64).into_vec());
        assert_eq!(v.len(), 4);
        assert_eq!(peak, 32);
        let ((), peak) = measure(|| {});
        assert_eq!(peak, 0);
    }
}
