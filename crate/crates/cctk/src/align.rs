//! Cache-line alignment for contended shared state.

/// Cache line size this crate aligns hot shared words to. 64 bytes covers
/// x86-64 and the common ARM server parts; on machines with 128-byte lines
/// the padding is merely conservative.
pub const CACHE_LINE_BYTES: usize = 64;

/// Wrapper that pads and aligns `T` to a full cache line so two instances
/// never share one. Used for per-worker counters, the global epoch and
/// everything else that would otherwise false-share.
#[derive(Debug, Default)]
#[repr(C, align(64))]
pub struct CacheAligned<T> {
    value: T,
}

impl<T> CacheAligned<T> {
    pub const fn new(value: T) -> Self {
        Self { value }
    }

    pub fn into_inner(self) -> T {
        self.value
    }
}

impl<T> std::ops::Deref for CacheAligned<T> {
    type Target = T;

    fn deref(&self) -> &T {
        &self.value
    }
}

impl<T> std::ops::DerefMut for CacheAligned<T> {
    fn deref_mut(&mut self) -> &mut T {
        &mut self.value
    }
}
