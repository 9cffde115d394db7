use alloc::vec::Vec;
use core::fmt::{Debug, Display};
use num_traits::Float;

/// Floating-point element type of a field. Implemented for `f32` and `f64`.
pub trait Real: Float + Default + Debug + Display + Send + Sync + 'static {
    /// Name used in file metadata.
    const DTYPE: &'static str;
    /// Width in bytes.
    const SIZE: usize;

    fn narrow(v: f64) -> Self;
    fn widen(self) -> f64;
    /// Raw IEEE bits, zero-extended to 64 bits.
    fn bits(self) -> u64;
    fn write_le(self, out: &mut Vec<u8>);
    /// Decodes one value from exactly `Self::SIZE` little-endian bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";
    const SIZE: usize = 4;

    #[inline]
    fn narrow(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }
    #[inline]
    fn bits(self) -> u64 {
        self.to_bits() as u64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 4];
        b.copy_from_slice(bytes);
        f32::from_le_bytes(b)
    }
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";
    const SIZE: usize = 8;

    #[inline]
    fn narrow(v: f64) -> Self {
        v
    }
    #[inline]
    fn widen(self) -> f64 {
        self
    }
    #[inline]
    fn bits(self) -> u64 {
        self.to_bits()
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 8];
        b.copy_from_slice(bytes);
        f64::from_le_bytes(b)
    }
}
