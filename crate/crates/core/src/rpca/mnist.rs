//! MNIST in the IDX format, optionally gzip-compressed.
//!
//! Byte offsets in parse errors refer to the decompressed stream.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use super::AgentDataset;
use crate::error::{Error, Result};
use crate::seed::{self, label};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct MnistData {
    /// One centred image per column, `rows * cols` pixels each.
    pub pixels: DMatrix<f64>,
    pub labels: Option<Vec<u8>>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            offset: offset as u64,
            message: "unexpected end of file in header".into(),
        })
}

/// Checks the header of an unsigned-byte IDX file and returns its
/// dimensions together with the payload.
pub fn parse_idx(bytes: &[u8], magic: u32) -> Result<(Vec<usize>, &[u8])> {
    let found = be_u32(bytes, 0)?;
    if found != magic {
        return Err(Error::Parse {
            offset: 0,
            message: format!("magic number {found:#010x}, expected {magic:#010x}"),
        });
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims)
        .map(|i| be_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * ndims;
    let len: usize = dims.iter().product();
    let payload = &bytes[start..];
    if payload.len() < len {
        return Err(Error::Parse {
            offset: bytes.len() as u64,
            message: format!("truncated: {} of {len} data bytes present", payload.len()),
        });
    }
    if payload.len() > len {
        return Err(Error::Parse {
            offset: (start + len) as u64,
            message: format!("{} trailing bytes", payload.len() - len),
        });
    }
    Ok((dims, payload))
}

/// Loads images scaled to `[0, 1]` and then centred pixel by pixel.
pub fn load_mnist(images_path: &Path, labels_path: Option<&Path>) -> Result<MnistData> {
    let bytes = read_bytes(images_path)?;
    let (dims, payload) = parse_idx(&bytes, IMAGES_MAGIC)?;
    let (count, pixels) = (dims[0], dims[1] * dims[2]);
    let mut data = DMatrix::from_iterator(pixels, count, payload.iter().map(|&b| b as f64 / 255.0));
    for mut row in data.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }

    let labels = match labels_path {
        None => None,
        Some(path) => {
            let bytes = read_bytes(path)?;
            let (dims, payload) = parse_idx(&bytes, LABELS_MAGIC)?;
            if dims[0] != count {
                return Err(Error::Data(format!(
                    "{} labels for {count} images",
                    dims[0]
                )));
            }
            Some(payload.to_vec())
        }
    };
    Ok(MnistData {
        pixels: data,
        labels,
    })
}

/// Shuffles the columns of `data` and splits them into `num_agents` subsets
/// whose sizes differ by at most one.
pub fn partition_mnist(data: &DMatrix<f64>, num_agents: usize, seed: u64) -> Result<AgentDataset> {
    let total = data.ncols();
    if num_agents == 0 || total < num_agents {
        return Err(Error::contract(format!(
            "cannot split {total} samples among {num_agents} agents"
        )));
    }
    let mut perm: Vec<usize> = (0..total).collect();
    perm.shuffle(&mut seed::stream(seed, &[label::SHUFFLE]));
    let (base, extra) = (total / num_agents, total % num_agents);
    let mut offset = 0;
    let mut samples = Vec::with_capacity(num_agents);
    for k in 0..num_agents {
        let len = base + usize::from(k < extra);
        let idx = &perm[offset..offset + len];
        samples.push(data.select_columns(idx));
        offset += len;
    }
    let masks = samples.iter().map(|x| vec![false; x.ncols()]).collect();
    AgentDataset::new(samples, masks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use std::io::Write;

    fn idx_images(count: u32, rows: u32, cols: u32, fill: impl Fn(usize) -> u8) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [IMAGES_MAGIC, count, rows, cols] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend((0..(count * rows * cols) as usize).map(fill));
        out
    }

    #[test]
    fn header_parsing() {
        let bytes = idx_images(3, 28, 28, |i| (i % 256) as u8);
        let (dims, payload) = parse_idx(&bytes, IMAGES_MAGIC).unwrap();
        assert_eq!(dims, vec![3, 28, 28]);
        assert_eq!(payload.len(), 3 * 784);
    }

    #[test]
    fn bad_magic_and_truncation_report_offsets() {
        let bytes = idx_images(2, 2, 2, |_| 0);
        match parse_idx(&bytes, LABELS_MAGIC) {
            Err(Error::Parse { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse_idx(&bytes[..bytes.len() - 1], IMAGES_MAGIC) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, bytes.len() as u64 - 1),
            other => panic!("{other:?}"),
        }
        match parse_idx(&bytes[..6], IMAGES_MAGIC) {
            Err(Error::Parse { offset: 4, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn load_scales_and_centres_gzip_input() {
        let dir = tempfile::tempdir().unwrap();
        let raw = idx_images(5, 28, 28, |i| ((i * 37) % 256) as u8);
        let path = dir.path().join("images.idx.gz");
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&raw).unwrap();
        std::fs::write(&path, enc.finish().unwrap()).unwrap();

        let mut labels = Vec::new();
        for v in [LABELS_MAGIC, 5] {
            labels.extend_from_slice(&v.to_be_bytes());
        }
        labels.extend_from_slice(&[0, 1, 2, 3, 4]);
        let label_path = dir.path().join("labels.idx");
        std::fs::write(&label_path, &labels).unwrap();

        let data = load_mnist(&path, Some(&label_path)).unwrap();
        assert_eq!(data.pixels.shape(), (784, 5));
        assert_eq!(data.labels.as_deref(), Some(&[0u8, 1, 2, 3, 4][..]));
        for row in data.pixels.row_iter() {
            assert!(row.mean().abs() < 1e-10);
        }
        // pixel 1 of image 0 is 37, the pixel mean over images is known
        let mean: f64 = (0..5)
            .map(|j| ((j * 784 + 1) * 37 % 256) as f64 / 255.0)
            .sum::<f64>()
            / 5.0;
        assert!((data.pixels[(1, 0)] - (37.0 / 255.0 - mean)).abs() < 1e-12);
    }

    #[test]
    fn label_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("images.idx");
        std::fs::write(&path, idx_images(2, 2, 2, |_| 1)).unwrap();
        let mut labels = Vec::new();
        for v in [LABELS_MAGIC, 3] {
            labels.extend_from_slice(&v.to_be_bytes());
        }
        labels.extend_from_slice(&[0, 1, 2]);
        let label_path = dir.path().join("labels.idx");
        std::fs::write(&label_path, &labels).unwrap();
        assert!(load_mnist(&path, Some(&label_path)).is_err());
    }

    #[test]
    fn partition_is_a_near_equal_permutation() {
        let data = DMatrix::from_fn(2, 103, |i, j| (i * 1000 + j) as f64);
        let parts = partition_mnist(&data, 20, 4).unwrap();
        let sizes: Vec<usize> = (0..20).map(|k| parts.len(k)).collect();
        assert!(sizes.iter().all(|&s| s == 5 || s == 6));
        assert_eq!(sizes.iter().sum::<usize>(), 103);
        let mut seen: Vec<usize> = (0..20)
            .flat_map(|k| {
                parts
                    .agent_samples(k)
                    .unwrap()
                    .row(1)
                    .iter()
                    .map(|&v| v as usize - 1000)
                    .collect::<Vec<_>>()
            })
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..103).collect::<Vec<_>>());
        assert_eq!(parts, partition_mnist(&data, 20, 4).unwrap());
        assert!(partition_mnist(&data, 200, 4).is_err());
    }

    #[test]
    fn full_size_partition() {
        let data = DMatrix::<f64>::zeros(1, 70_000);
        let parts = partition_mnist(&data, 20, 0).unwrap();
        assert!((0..20).all(|k| parts.len(k) == 3500));
    }
}
