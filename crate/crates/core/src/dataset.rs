//! Synthetic routed-net datasets and their on-disk container.
//!
//! # File layout
//!
//! All integers little-endian.
//!
//! | offset | size | field                       |
//! |--------|------|-----------------------------|
//! | 0      | 4    | magic `DRTN`                |
//! | 4      | 2    | version (1)                 |
//! | 6      | 2    | flags (0)                   |
//! | 8      | 8    | sample count `N`            |
//! | 16     | 4    | height `H`                  |
//! | 20     | 4    | width `W`                   |
//! | 24     | 1    | layer count (8)             |
//! | 25     | 7    | reserved, zero              |
//!
//! The body holds all `N` data planes (`H*W` bytes each, row-major) followed
//! by all `N` labels (`8*H*W` bytes each, layer-major in canonical order).
//! Every body byte is 0 or 1. Pins are not stored separately: they are the
//! set bits of the data plane.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::os::unix::fs::FileExt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::layout::{encode_pins, GridDims, LayerId, LayoutGrid, Pin, PinSet, Plane};
use crate::router::{route, ResistanceModel};
use crate::tensor::Tensor4;

pub const MAGIC: [u8; 4] = *b"DRTN";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub sample_count: u64,
    pub dims: GridDims,
}

impl DatasetHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN as usize] {
        let mut b = [0u8; HEADER_LEN as usize];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&VERSION.to_le_bytes());
        b[6..8].copy_from_slice(&0u16.to_le_bytes());
        b[8..16].copy_from_slice(&self.sample_count.to_le_bytes());
        b[16..20].copy_from_slice(&(self.dims.height as u32).to_le_bytes());
        b[20..24].copy_from_slice(&(self.dims.width as u32).to_le_bytes());
        b[24] = LayerId::COUNT as u8;
        b
    }

    pub fn parse(b: &[u8]) -> Result<DatasetHeader> {
        if b.len() < HEADER_LEN as usize {
            return Err(Error::format(
                b.len() as u64,
                format!("header truncated: {} of {HEADER_LEN} bytes", b.len()),
            ));
        }
        if b[0..4] != MAGIC {
            return Err(Error::format(0, format!("bad magic {:?}", &b[0..4])));
        }
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let flags = u16::from_le_bytes([b[6], b[7]]);
        if flags != 0 {
            return Err(Error::format(6, format!("unknown flags {flags:#06x}")));
        }
        let sample_count = u64::from_le_bytes(b[8..16].try_into().unwrap());
        let height = u32::from_le_bytes(b[16..20].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(b[20..24].try_into().unwrap()) as usize;
        if height == 0 || width == 0 {
            return Err(Error::format(16, format!("empty grid {height}x{width}")));
        }
        if b[24] as usize != LayerId::COUNT {
            return Err(Error::format(24, format!("layer count {} is not 8", b[24])));
        }
        if let Some(i) = b[25..32].iter().position(|&v| v != 0) {
            return Err(Error::format(25 + i as u64, "reserved byte is not zero"));
        }
        Ok(DatasetHeader {
            sample_count,
            dims: GridDims { height, width },
        })
    }

    fn plane_bytes(&self) -> u64 {
        self.dims.cells() as u64
    }

    fn label_bytes(&self) -> u64 {
        LayerId::COUNT as u64 * self.dims.cells() as u64
    }

    pub fn data_offset(&self, index: u64) -> u64 {
        HEADER_LEN + index * self.plane_bytes()
    }

    pub fn label_offset(&self, index: u64) -> u64 {
        HEADER_LEN + self.sample_count * self.plane_bytes() + index * self.label_bytes()
    }

    pub fn file_len(&self) -> u64 {
        self.label_offset(self.sample_count)
    }
}

/// One routed net: pins, input plane and 8-layer label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub pins: PinSet,
    pub data: Plane,
    pub label: LayoutGrid,
}

impl Sample {
    pub fn from_pins(pins: PinSet, model: &ResistanceModel, dims: GridDims) -> Result<Sample> {
        let data = encode_pins(&pins, dims)?;
        let label = route(&pins, model, dims)?;
        Ok(Sample { pins, data, label })
    }
}

/// Independent random stream for sample `index` of a dataset seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws 2..=5 distinct pins uniformly over the grid, redrawing collisions.
pub fn sample_pinset<R: Rng>(rng: &mut R, dims: GridDims) -> Result<PinSet> {
    let max = PinSet::MAX_PINS.min(dims.cells());
    if max < PinSet::MIN_PINS {
        return Err(Error::validation("grid too small for a net"));
    }
    let count = rng.random_range(PinSet::MIN_PINS..=max);
    let mut pins: Vec<Pin> = Vec::with_capacity(count);
    while pins.len() < count {
        let p = Pin::new(rng.random_range(0..dims.width), rng.random_range(0..dims.height));
        if !pins.contains(&p) {
            pins.push(p);
        }
    }
    PinSet::new(pins, dims)
}

/// Generates samples `0..count`; sample `i` depends only on `(seed, i)`.
pub fn generate_samples(
    count: usize,
    seed: u64,
    model: &ResistanceModel,
    dims: GridDims,
) -> Result<Vec<Sample>> {
    if count == 0 {
        return Err(Error::validation("sample count must be at least 1"));
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i as u64);
            Sample::from_pins(sample_pinset(&mut rng, dims)?, model, dims)
        })
        .collect()
}

/// Generates a dataset and writes it to `path`.
pub fn generate(
    path: impl AsRef<Path>,
    count: usize,
    seed: u64,
    model: &ResistanceModel,
    dims: GridDims,
) -> Result<()> {
    let samples = generate_samples(count, seed, model, dims)?;
    write(path, dims, &samples)
}

/// Writes samples atomically: a temporary file in the target directory is
/// renamed over `path` once complete.
pub fn write(path: impl AsRef<Path>, dims: GridDims, samples: &[Sample]) -> Result<()> {
    let path = path.as_ref();
    for (i, s) in samples.iter().enumerate() {
        if s.data.dims() != dims || s.label.dims() != dims {
            return Err(Error::shape(format!("sample {i} does not match {dims:?}")));
        }
    }
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut out = BufWriter::new(tmp.as_file());
        let header = DatasetHeader {
            sample_count: samples.len() as u64,
            dims,
        };
        out.write_all(&header.to_bytes())?;
        for s in samples {
            out.write_all(s.data.cells())?;
        }
        for s in samples {
            out.write_all(s.label.cells())?;
        }
        out.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Random-access reader. Reads use positioned I/O, so one reader can be
/// shared between threads.
#[derive(Debug)]
pub struct DatasetReader {
    file: File,
    header: DatasetHeader,
}

impl DatasetReader {
    pub fn open(path: impl AsRef<Path>) -> Result<DatasetReader> {
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        let mut buf = vec![0u8; HEADER_LEN.min(len) as usize];
        file.read_exact_at(&mut buf, 0)?;
        let header = DatasetHeader::parse(&buf)?;
        if header.sample_count == 0 {
            return Err(Error::format(8, "dataset holds no samples"));
        }
        check_body_length(&header, len)?;
        Ok(DatasetReader { file, header })
    }

    pub fn header(&self) -> DatasetHeader {
        self.header
    }

    pub fn dims(&self) -> GridDims {
        self.header.dims
    }

    pub fn len(&self) -> usize {
        self.header.sample_count as usize
    }

    pub fn is_empty(&self) -> bool {
        self.header.sample_count == 0
    }

    fn read_binary(&self, offset: u64, len: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        self.file.read_exact_at(&mut buf, offset)?;
        if let Some(i) = buf.iter().position(|&v| v > 1) {
            return Err(Error::format(offset + i as u64, format!("non-binary byte {}", buf[i])));
        }
        Ok(buf)
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.len() {
            return Err(Error::validation(format!(
                "sample index {index} out of range for {} samples",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn data_plane(&self, index: usize) -> Result<Plane> {
        self.check_index(index)?;
        let offset = self.header.data_offset(index as u64);
        let cells = self.read_binary(offset, self.dims().cells())?;
        Plane::from_cells(self.dims(), cells)
    }

    pub fn label(&self, index: usize) -> Result<LayoutGrid> {
        self.check_index(index)?;
        let offset = self.header.label_offset(index as u64);
        let cells = self.read_binary(offset, LayerId::COUNT * self.dims().cells())?;
        LayoutGrid::from_cells(self.dims(), cells)
    }

    pub fn sample(&self, index: usize) -> Result<Sample> {
        let data = self.data_plane(index)?;
        let label = self.label(index)?;
        let pins = PinSet::from_plane(&data).map_err(|e| {
            Error::format(self.header.data_offset(index as u64), format!("sample {index}: {e}"))
        })?;
        Ok(Sample { pins, data, label })
    }

    pub fn samples(&self) -> Result<Vec<Sample>> {
        (0..self.len()).map(|i| self.sample(i)).collect()
    }
}

fn check_body_length(header: &DatasetHeader, len: u64) -> Result<()> {
    let data_end = header.label_offset(0);
    if len < data_end {
        let whole = (len - HEADER_LEN) / header.plane_bytes();
        return Err(Error::format(
            header.data_offset(whole),
            format!("data block truncated in sample {whole}"),
        ));
    }
    if len < header.file_len() {
        let whole = (len - data_end) / header.label_bytes();
        return Err(Error::format(
            header.label_offset(whole),
            format!("label block truncated in sample {whole}"),
        ));
    }
    if len > header.file_len() {
        return Err(Error::format(header.file_len(), "trailing bytes after label block"));
    }
    Ok(())
}

/// A mini-batch as float tensors: data `N×1×H×W`, labels `N×8×H×W`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub data: Tensor4<f32>,
    pub labels: Tensor4<f32>,
}

/// Stacks samples into float tensors.
pub fn stack(samples: &[Sample], indices: Vec<usize>) -> Result<Batch> {
    let first = samples
        .first()
        .ok_or_else(|| Error::validation("cannot stack an empty batch"))?;
    let dims = first.data.dims();
    let n = samples.len();
    let mut data = Vec::with_capacity(n * dims.cells());
    let mut labels = Vec::with_capacity(n * LayerId::COUNT * dims.cells());
    for s in samples {
        if s.data.dims() != dims {
            return Err(Error::shape("samples in a batch have different grids"));
        }
        data.extend(s.data.cells().iter().map(|&v| v as f32));
        labels.extend(s.label.cells().iter().map(|&v| v as f32));
    }
    Ok(Batch {
        indices,
        data: Tensor4::from_vec([n, 1, dims.height, dims.width], data)?,
        labels: Tensor4::from_vec([n, LayerId::COUNT, dims.height, dims.width], labels)?,
    })
}

/// Sample visit order for one epoch.
pub fn epoch_order(len: usize, epoch_seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    order
}

/// Iterator over one epoch of shuffled mini-batches; the last batch may be short.
pub struct Batches<'a> {
    reader: &'a DatasetReader,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let indices = self.order[self.next..end].to_vec();
        self.next = end;
        let samples: Result<Vec<Sample>> = indices.iter().map(|&i| self.reader.sample(i)).collect();
        Some(samples.and_then(|s| stack(&s, indices)))
    }
}

pub fn batches(reader: &DatasetReader, batch_size: usize, epoch_seed: u64) -> Result<Batches<'_>> {
    if batch_size == 0 || batch_size > reader.len() {
        return Err(Error::validation(format!(
            "batch size must be in 1..={}, got {batch_size}",
            reader.len()
        )));
    }
    Ok(Batches {
        reader,
        order: epoch_order(reader.len(), epoch_seed),
        batch_size,
        next: 0,
    })
}
