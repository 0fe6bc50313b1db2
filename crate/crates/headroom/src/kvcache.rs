//! Paged KV storage and the cooperative page-offset calculation.
//!
//! A [`PagedCache`] stores token rows in fixed-size pages drawn from one flat
//! backing pool; each sequence owns a page table mapping logical row `r` to
//! `pages[r / page_size]` at in-page slot `r % page_size`. Page size 1 is
//! fully supported — that is what makes prefix sharing at token granularity
//! possible — and [`PagedCache::share_prefix`] builds the aliased-page layout
//! explicitly.
//!
//! Addresses are 64-bit byte offsets into the pool under the 2-byte
//! accounting dtype, so row `r`'s address is
//! `(page_index·page_size + slot) · row_width · 2`. The pool itself stores
//! f32 for the compute side; what the gather oracle compares is the address
//! arithmetic, which is dtype-independent apart from the element stride.
//!
//! [`PagedCache::gather_cooperative`] emulates the decode-kernel scheme for
//! one 128-row × 128-channel block: 128 lanes in 8 groups of 16, where group
//! `g` owns rows `g, g+8, …, g+120`. Lane `t` (group `g = ⌊t/16⌋`) computes
//! the address of row `g + (t mod 16)·8` — one page-table read and one
//! address per lane instead of sixteen — and when the group later loads row
//! `r`, every lane fetches that address from lane `g·16 + (r−g)/8` via an
//! emulated register shuffle. The returned [`AddressTrace`] records each
//! lane's single stored offset, every shuffle, and proxy work counters
//! (`128` cooperative address computations versus `16×128 = 2048` naive
//! ones; the hardware speedup itself needs a GPU and is out of scope).

use crate::attention::AttnConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lanes participating in one cooperative block load.
pub const LANES: usize = 128;
/// Lane groups; group `g` covers rows `g, g+8, …, g+120`.
pub const GROUPS: usize = 8;
/// Lanes per group.
pub const LANES_PER_GROUP: usize = 16;
/// Rows per cooperative block.
pub const BLOCK_ROWS: usize = 128;
/// Head width the cooperative scheme is defined for.
pub const COOP_HEAD_DIM: usize = 128;
/// Accounting bytes per stored element (BF16-style).
pub const ELEM_BYTES: u64 = 2;

/// One lane's stored offset: which row it computed an address for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LaneRecord {
    /// Lane index, `0..128`.
    pub lane: usize,
    /// Group index, `lane / 16`.
    pub group: usize,
    /// Block-relative row this lane computed, `group + (lane mod 16)·8`.
    pub row: usize,
    /// Byte address of the row in the backing pool.
    pub address: u64,
}

/// One emulated intra-group shuffle: a consumer lane reading a row address
/// from the register of the lane that computed it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShuffleEvent {
    /// Block-relative row being loaded.
    pub row: usize,
    /// Lane whose register holds the address, `group·16 + (row−group)/8`.
    pub source_lane: usize,
    /// Lane receiving the address.
    pub consumer_lane: usize,
    /// The address transferred.
    pub address: u64,
}

/// Full record of one cooperative block-load emulation.
#[derive(Debug, Clone)]
pub struct AddressTrace {
    /// Exactly one record per lane — the register-saving property.
    pub lanes: Vec<LaneRecord>,
    /// Every shuffle read: 15 consumers per row × 128 rows.
    pub shuffles: Vec<ShuffleEvent>,
    /// Addresses computed cooperatively (one per lane).
    pub address_computations: usize,
    /// Register reads through shuffles.
    pub shuffle_reads: usize,
    /// Addresses the naive scheme would compute for the same block
    /// (every one of the 16 loading lanes per row recomputes it).
    pub naive_equivalent_computations: usize,
}

struct SeqTable {
    pages: Vec<usize>,
    len: usize,
}

/// Paged token-row store over a flat pool, with per-sequence page tables.
pub struct PagedCache {
    page_size: usize,
    row_width: usize,
    max_pages: Option<usize>,
    pool: Vec<f32>,
    allocated_pages: usize,
    sequences: Vec<SeqTable>,
}

impl PagedCache {
    /// Empty cache storing `row_width`-channel rows in pages of `page_size`
    /// tokens, optionally capped at `max_pages` pool pages.
    pub fn new(page_size: usize, row_width: usize, max_pages: Option<usize>) -> Result<Self> {
        if page_size == 0 || row_width == 0 {
            return Err(Error::Parameter(format!(
                "page_size and row_width must be positive, got {page_size} and {row_width}"
            )));
        }
        Ok(Self {
            page_size,
            row_width,
            max_pages,
            pool: Vec::new(),
            allocated_pages: 0,
            sequences: Vec::new(),
        })
    }

    /// Tokens per page.
    #[must_use]
    pub fn page_size(&self) -> usize {
        self.page_size
    }

    /// Channels per row.
    #[must_use]
    pub fn row_width(&self) -> usize {
        self.row_width
    }

    /// Pages allocated in the pool so far.
    #[must_use]
    pub fn allocated_pages(&self) -> usize {
        self.allocated_pages
    }

    /// Registers a new, empty sequence and returns its id.
    pub fn new_sequence(&mut self) -> usize {
        self.sequences.push(SeqTable {
            pages: Vec::new(),
            len: 0,
        });
        self.sequences.len() - 1
    }

    /// Number of rows stored for `seq`.
    pub fn len(&self, seq: usize) -> Result<usize> {
        Ok(self.table(seq)?.len)
    }

    /// True when `seq` holds no rows.
    pub fn is_empty(&self, seq: usize) -> Result<bool> {
        Ok(self.table(seq)?.len == 0)
    }

    /// The sequence's page table (pool page index per logical page).
    pub fn page_table(&self, seq: usize) -> Result<&[usize]> {
        Ok(&self.table(seq)?.pages)
    }

    fn table(&self, seq: usize) -> Result<&SeqTable> {
        self.sequences
            .get(seq)
            .ok_or_else(|| Error::State(format!("unknown sequence id {seq}")))
    }

    fn alloc_page(&mut self) -> Result<usize> {
        if let Some(cap) = self.max_pages {
            if self.allocated_pages >= cap {
                return Err(Error::State(format!(
                    "page pool exhausted: all {cap} pages allocated"
                )));
            }
        }
        let idx = self.allocated_pages;
        self.allocated_pages += 1;
        self.pool
            .extend(std::iter::repeat_n(0.0, self.page_size * self.row_width));
        Ok(idx)
    }

    /// Appends `rows: [n × row_width]` at logical positions `len..len+n`,
    /// extending the page table as needed. Errors when the pool cap is hit;
    /// the cache is unchanged in that case.
    pub fn append_tokens(&mut self, seq: usize, rows: &Tensor) -> Result<()> {
        if rows.rank() != 2 || rows.shape()[1] != self.row_width {
            return Err(Error::Dimension(format!(
                "append wants [n × {}], got {:?}",
                self.row_width,
                rows.shape()
            )));
        }
        let n = rows.shape()[0];
        let (start, have_pages) = {
            let t = self.table(seq)?;
            (t.len, t.pages.len())
        };
        // Reserve every page first so a capacity failure leaves no partial append.
        let pages_needed = (start + n).div_ceil(self.page_size) - have_pages;
        let mut fresh = Vec::with_capacity(pages_needed);
        for _ in 0..pages_needed {
            fresh.push(self.alloc_page()?);
        }
        self.sequences[seq].pages.extend(&fresh);
        for i in 0..n {
            let r = start + i;
            let page = self.sequences[seq].pages[r / self.page_size];
            let slot = r % self.page_size;
            let base = (page * self.page_size + slot) * self.row_width;
            self.pool[base..base + self.row_width].copy_from_slice(rows.row(&[i]));
        }
        self.sequences[seq].len = start + n;
        Ok(())
    }

    /// Creates a new sequence whose first `n_tokens` rows alias `src`'s pages
    /// (the paged form of prefix sharing). `n_tokens` must be page-aligned —
    /// sharing splits at page granularity — and within `src`'s length.
    pub fn share_prefix(&mut self, src: usize, n_tokens: usize) -> Result<usize> {
        let src_table = self.table(src)?;
        if n_tokens > src_table.len {
            return Err(Error::Index(format!(
                "cannot share {n_tokens} rows from a sequence of {}",
                src_table.len
            )));
        }
        if !n_tokens.is_multiple_of(self.page_size) {
            return Err(Error::Parameter(format!(
                "shared prefix must be page-aligned: {n_tokens} rows with page_size {}",
                self.page_size
            )));
        }
        let shared: Vec<usize> = src_table.pages[..n_tokens / self.page_size].to_vec();
        self.sequences.push(SeqTable {
            pages: shared,
            len: n_tokens,
        });
        Ok(self.sequences.len() - 1)
    }

    /// Byte address of `seq`'s logical `row` under the accounting dtype:
    /// `(page·page_size + slot) · row_width · 2`, in one independent 64-bit
    /// computation. This is the naive per-row path and the oracle the
    /// cooperative scheme is checked against.
    pub fn row_address(&self, seq: usize, row: usize) -> Result<u64> {
        let t = self.table(seq)?;
        if row >= t.len {
            return Err(Error::Index(format!(
                "row {row} out of range (sequence holds {})",
                t.len
            )));
        }
        let page = t.pages[row / self.page_size] as u64;
        let slot = (row % self.page_size) as u64;
        Ok((page * self.page_size as u64 + slot) * self.row_width as u64 * ELEM_BYTES)
    }

    fn row_at_address(&self, addr: u64) -> &[f32] {
        let elem = (addr / ELEM_BYTES) as usize;
        &self.pool[elem..elem + self.row_width]
    }

    /// Addresses for an arbitrary row list, computed independently per row.
    pub fn naive_addresses(&self, seq: usize, rows: &[usize]) -> Result<Vec<u64>> {
        rows.iter().map(|&r| self.row_address(seq, r)).collect()
    }

    /// Gathers `rows` in request order via per-row addresses.
    pub fn gather_naive(&self, seq: usize, rows: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(rows.len() * self.row_width);
        for &r in rows {
            data.extend_from_slice(self.row_at_address(self.row_address(seq, r)?));
        }
        Tensor::new(&[rows.len(), self.row_width], data)
    }

    /// Emulates the cooperative offset calculation for the 128-row block
    /// starting at `block_start`, returning the gathered `[128 × 128]` block
    /// and the full lane/shuffle trace.
    ///
    /// Requires `row_width == 128` (the scheme is specified for that head
    /// width) and a fully resident block.
    pub fn gather_cooperative(
        &self,
        seq: usize,
        block_start: usize,
    ) -> Result<(Tensor, AddressTrace)> {
        if self.row_width != COOP_HEAD_DIM {
            return Err(Error::Parameter(format!(
                "cooperative gather is defined for {COOP_HEAD_DIM}-wide rows, cache stores {}",
                self.row_width
            )));
        }
        let len = self.len(seq)?;
        if block_start + BLOCK_ROWS > len {
            return Err(Error::Index(format!(
                "block {block_start}..{} crosses sequence end {len}",
                block_start + BLOCK_ROWS
            )));
        }

        // Step 2 of the scheme: one page-table read and one address per lane.
        // Lane t of group g = t/16 covers block-relative row g + (t mod 16)·8.
        let mut lanes = Vec::with_capacity(LANES);
        for lane in 0..LANES {
            let group = lane / LANES_PER_GROUP;
            let row = group + (lane % LANES_PER_GROUP) * GROUPS;
            let address = self.row_address(seq, block_start + row)?;
            lanes.push(LaneRecord {
                lane,
                group,
                row,
                address,
            });
        }

        // Step 3: when group g loads row r, all 16 of its lanes need r's
        // address; the owner is lane g·16 + (r−g)/8, everyone else shuffles.
        let mut shuffles = Vec::with_capacity(BLOCK_ROWS * (LANES_PER_GROUP - 1));
        let mut data = Vec::with_capacity(BLOCK_ROWS * self.row_width);
        for row in 0..BLOCK_ROWS {
            let group = row % GROUPS;
            let source_lane = group * LANES_PER_GROUP + (row - group) / GROUPS;
            let address = lanes[source_lane].address;
            debug_assert_eq!(lanes[source_lane].row, row, "ownership formula out of sync");
            for consumer in group * LANES_PER_GROUP..(group + 1) * LANES_PER_GROUP {
                if consumer != source_lane {
                    shuffles.push(ShuffleEvent {
                        row,
                        source_lane,
                        consumer_lane: consumer,
                        address,
                    });
                }
            }
            data.extend_from_slice(self.row_at_address(address));
        }

        let trace = AddressTrace {
            address_computations: LANES,
            shuffle_reads: shuffles.len(),
            naive_equivalent_computations: LANES_PER_GROUP * BLOCK_ROWS,
            lanes,
            shuffles,
        };
        let block = Tensor::new(&[BLOCK_ROWS, self.row_width], data)?;
        Ok((block, trace))
    }
}

/// Total cached bytes for a `cfg` layer at sequence length `l` and batch `b`
/// under 2-byte accounting: `b · l · (m_kv·state_heads·state_dim + rope) · 2`.
#[must_use]
pub fn cache_bytes(cfg: &AttnConfig, l: usize, b: usize) -> u64 {
    cfg.bytes_per_token() * l as u64 * b as u64
}
