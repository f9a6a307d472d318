//! Fixed-width column embeddings and per-chart column sequences.
//!
//! Layout (version 1), 96 entries:
//!
//! | entries | content |
//! |---------|---------|
//! | 0..64   | signed character-trigram hash of the lowercased header, L2-normalized |
//! | 64..88  | the 24 [`ColumnProfile`] statistics in declaration order |
//! | 88..96  | one-hot type: quantitative, nominal, ordinal, temporal, boolean, id-like, reserved, padding |

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{profile, Column, ColumnProfile, DataTable, DataType};

pub const LAYOUT_VERSION: u32 = 1;
pub const EMBEDDING_DIM: usize = 96;
pub const SEMANTIC_DIM: usize = 64;
pub const PROFILE_OFFSET: usize = 64;
pub const TYPE_OFFSET: usize = 88;
pub const ID_LIKE_SLOT: usize = TYPE_OFFSET + 5;
pub const PADDING_SLOT: usize = 95;
/// Longest column sequence a chart may encode.
pub const MAX_CHART_COLUMNS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnEmbedding {
    pub vector: Vec<f64>,
    pub layout_version: u32,
}

impl ColumnEmbedding {
    pub fn padding() -> Self {
        let mut vector = vec![0.0; EMBEDDING_DIM];
        vector[PADDING_SLOT] = 1.0;
        ColumnEmbedding {
            vector,
            layout_version: LAYOUT_VERSION,
        }
    }
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(PRIME))
}

/// Signed-hash trigram embedding of a header; all-zero for an empty header.
pub fn header_embedding(header: &str) -> [f64; SEMANTIC_DIM] {
    let mut out = [0.0; SEMANTIC_DIM];
    let lower = header.trim().to_lowercase();
    if lower.is_empty() {
        return out;
    }
    let chars: Vec<char> = std::iter::once('\u{2}')
        .chain(lower.chars())
        .chain(std::iter::once('\u{3}'))
        .collect();
    let mut buf = [0u8; 12];
    for window in chars.windows(3) {
        let mut len = 0;
        for c in window {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        let h = fnv1a(&buf[..len]);
        let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
        out[(h % SEMANTIC_DIM as u64) as usize] += sign;
    }
    // Bucket and sign share bit 0, so accumulated mass never cancels.
    let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
    out.iter_mut().for_each(|x| *x /= norm);
    out
}

fn is_id_header(header: &str) -> bool {
    let h = header.trim().to_lowercase();
    h == "id" || h.ends_with("_id") || h == "index"
}

fn type_slot(data_type: DataType) -> usize {
    match data_type {
        DataType::Quantitative => 0,
        DataType::Nominal => 1,
        DataType::Ordinal => 2,
        DataType::Temporal => 3,
        DataType::Boolean => 4,
    }
}

pub fn embed_column(column: &Column, profile: &ColumnProfile) -> ColumnEmbedding {
    let mut vector = vec![0.0; EMBEDDING_DIM];
    vector[..SEMANTIC_DIM].copy_from_slice(&header_embedding(&column.header));
    vector[PROFILE_OFFSET..TYPE_OFFSET].copy_from_slice(&profile.to_array());
    let slot = if profile.all_unique_flag == 1.0 && is_id_header(&column.header) {
        ID_LIKE_SLOT
    } else {
        TYPE_OFFSET + type_slot(column.inferred_type)
    };
    vector[slot] = 1.0;
    ColumnEmbedding {
        vector,
        layout_version: LAYOUT_VERSION,
    }
}

/// Column embeddings of a whole table, the unit cached per session and
/// dumped into provenance logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableFeatures {
    pub table_id: String,
    pub layout_version: u32,
    pub columns: Vec<Vec<f64>>,
}

impl TableFeatures {
    pub fn from_table(table: &DataTable) -> Self {
        let columns = table
            .columns
            .iter()
            .map(|c| embed_column(c, &profile(c)).vector)
            .collect();
        TableFeatures {
            table_id: table.table_id.clone(),
            layout_version: LAYOUT_VERSION,
            columns,
        }
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn chart_input(&self, column_indices: &BTreeSet<usize>) -> Result<ChartInput> {
        let k = column_indices.len();
        if k == 0 || k > MAX_CHART_COLUMNS {
            return Err(Error::Cardinality(k));
        }
        let mut embeddings = Vec::with_capacity(k);
        for &index in column_indices {
            let vector = self.columns.get(index).ok_or(Error::Index {
                index,
                len: self.columns.len(),
            })?;
            embeddings.push(ColumnEmbedding {
                vector: vector.clone(),
                layout_version: self.layout_version,
            });
        }
        Ok(ChartInput {
            embeddings,
            true_length: k,
            column_indices: column_indices.iter().copied().collect(),
        })
    }
}

/// The column sequence of one chart, ordered by source column index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartInput {
    pub embeddings: Vec<ColumnEmbedding>,
    pub true_length: usize,
    pub column_indices: Vec<usize>,
}

impl ChartInput {
    pub fn sequence(&self) -> Vec<&[f64]> {
        self.embeddings.iter().map(|e| e.vector.as_slice()).collect()
    }

    /// Flattened `4 × 96` vector with padding embeddings after the true length.
    pub fn padded_flat(&self) -> Vec<f64> {
        let pad = ColumnEmbedding::padding();
        let mut out = Vec::with_capacity(MAX_CHART_COLUMNS * EMBEDDING_DIM);
        for i in 0..MAX_CHART_COLUMNS {
            out.extend_from_slice(&self.embeddings.get(i).unwrap_or(&pad).vector);
        }
        out
    }
}

/// Every column subset of size 1 to `max_size`, by size and then
/// lexicographically.
pub fn column_subsets(n_columns: usize, max_size: usize) -> Vec<BTreeSet<usize>> {
    fn extend(start: usize, n: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<BTreeSet<usize>>) {
        if current.len() == k {
            out.push(current.iter().copied().collect());
            return;
        }
        for i in start..n {
            current.push(i);
            extend(i + 1, n, k, current, out);
            current.pop();
        }
    }
    let mut out = Vec::new();
    for k in 1..=max_size.min(n_columns) {
        extend(0, n_columns, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

pub fn build_chart_input(table: &DataTable, column_indices: &BTreeSet<usize>) -> Result<ChartInput> {
    let k = column_indices.len();
    if k == 0 || k > MAX_CHART_COLUMNS {
        return Err(Error::Cardinality(k));
    }
    let mut embeddings = Vec::with_capacity(k);
    for &index in column_indices {
        let column = table.column(index)?;
        embeddings.push(embed_column(column, &profile(column)));
    }
    Ok(ChartInput {
        embeddings,
        true_length: k,
        column_indices: column_indices.iter().copied().collect(),
    })
}
