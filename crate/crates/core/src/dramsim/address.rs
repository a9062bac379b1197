use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::ArchConfig;

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
#[error("address {addr:#x} outside core capacity {capacity:#x}")]
pub struct AddressError {
    pub addr: u64,
    pub capacity: u64,
}

/// Where a byte lives inside one core's 3D-DRAM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DramCoord {
    pub channel: u32,
    /// Logical row within the channel's logical bank.
    pub row: u64,
    /// Physical bank within the logical bank, `pb_row * C + pb_col`.
    pub pb: u32,
    /// Byte offset within the logical row.
    pub column: u64,
}

/// Linear channel-interleaved mapping.
///
/// From least to most significant: offset inside an interleave chunk
/// (`2^x · BL` bytes), channel, column chunk inside the logical row, logical
/// row, and the physical-bank row that the logical row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddressMap {
    pub interleave_bytes: u64,
    pub channels: u64,
    pub row_bytes: u64,
    pub rows_per_channel: u64,
    pub pb_row_bytes: u64,
    /// Logical rows served by one physical-bank row (the PB row count).
    pub rows_per_pb_row: u64,
    pub pb_cols: u64,
}

impl AddressMap {
    pub fn new(cfg: &ArchConfig) -> Self {
        Self {
            interleave_bytes: cfg.channel.interleave_bytes(),
            channels: u64::from(cfg.core.channels),
            row_bytes: cfg.logical_row_bytes(),
            rows_per_channel: cfg.logical_rows_per_channel(),
            pb_row_bytes: cfg.pb.row_size_bytes,
            rows_per_pb_row: cfg.pb.row_count,
            pb_cols: u64::from(cfg.lb.cols),
        }
    }

    pub fn capacity(&self) -> u64 {
        self.channels * self.rows_per_channel * self.row_bytes
    }

    pub fn map(&self, addr: u64) -> Result<DramCoord, AddressError> {
        if addr >= self.capacity() {
            return Err(AddressError {
                addr,
                capacity: self.capacity(),
            });
        }
        let chunk = addr / self.interleave_bytes;
        let offset = addr % self.interleave_bytes;
        let channel = chunk % self.channels;
        let local = (chunk / self.channels) * self.interleave_bytes + offset;
        let row = local / self.row_bytes;
        let column = local % self.row_bytes;
        let pb_col = column / self.pb_row_bytes;
        let pb_row = row / self.rows_per_pb_row;
        Ok(DramCoord {
            channel: channel as u32,
            row,
            pb: (pb_row * self.pb_cols + pb_col) as u32,
            column,
        })
    }

    /// Inverse of [`AddressMap::map`].
    pub fn unmap(&self, c: DramCoord) -> u64 {
        let local = c.row * self.row_bytes + c.column;
        let chunk_in_channel = local / self.interleave_bytes;
        let offset = local % self.interleave_bytes;
        (chunk_in_channel * self.channels + u64::from(c.channel)) * self.interleave_bytes + offset
    }

    /// Channel and logical row of the burst containing `addr`, without the
    /// range check. Hot path for the request front-end.
    #[inline]
    pub(crate) fn channel_row(&self, addr: u64) -> (usize, u64) {
        let chunk = addr / self.interleave_bytes;
        let channel = chunk % self.channels;
        let local = (chunk / self.channels) * self.interleave_bytes + addr % self.interleave_bytes;
        (channel as usize, local / self.row_bytes)
    }
}
