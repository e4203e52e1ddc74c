//! Dataset generation and the `ARRD` container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ARRD" | version u16 | task u8 | N u32 | M u32 | T u32 | C u32
//! labels: N × u16
//! payload: N × M × T × C float32, example-major then row-major
//! ```
//!
//! A JSON sidecar next to the container records the array geometry, the
//! synthesis parameters and the seed.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{synthesize_detection_example, synthesize_doa_example, ArrayConfig, ReceivedArray, SynthesisParams, Task};
use crate::error::{Error, Result};
use crate::tensor::RealTensor;

pub const ARRD_MAGIC: &[u8; 4] = b"ARRD";
pub const ARRD_VERSION: u16 = 1;

/// Independent stream for example `index`; lets any subset of a dataset be
/// regenerated, in any order, from the seed alone.
pub fn example_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

// The label stream sits far away from every example stream.
const LABEL_STREAM: u64 = u64::MAX;

/// `n` detection labels, half of each class, in seeded random order. With odd
/// `n` class 0 gets the extra example.
pub fn balanced_labels(n: usize, seed: u64) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n.div_ceil(2))).collect();
    labels.shuffle(&mut example_rng(seed, LABEL_STREAM));
    labels
}

/// `n` DoA class labels drawn uniformly over the grid.
pub fn uniform_class_labels(n: usize, num_classes: usize, seed: u64) -> Vec<usize> {
    let mut rng = example_rng(seed, LABEL_STREAM);
    (0..n).map(|_| rng.random_range(0..num_classes)).collect()
}

pub fn dataset_labels(task: Task, config: &ArrayConfig, n: usize, seed: u64) -> Vec<usize> {
    match task {
        Task::Detection => balanced_labels(n, seed),
        Task::Doa => uniform_class_labels(n, config.num_classes(), seed),
    }
}

/// Synthesize example `index` of a dataset with the given label.
pub fn synthesize_indexed(
    task: Task,
    config: &ArrayConfig,
    params: &SynthesisParams,
    label: usize,
    index: usize,
) -> Result<ReceivedArray> {
    let mut rng = example_rng(params.rng_seed, index as u64);
    match task {
        Task::Detection => synthesize_detection_example(config, params, label, &mut rng),
        Task::Doa => synthesize_doa_example(config, params, config.angle_of_class(label), &mut rng),
    }
}

/// Generate a whole in-memory dataset.
pub fn generate(task: Task, config: &ArrayConfig, params: &SynthesisParams, n: usize) -> Result<Vec<ReceivedArray>> {
    dataset_labels(task, config, n, params.rng_seed)
        .into_iter()
        .enumerate()
        .map(|(i, label)| synthesize_indexed(task, config, params, label, i))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrdHeader {
    pub version: u16,
    pub task: Task,
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
}

impl ArrdHeader {
    pub fn example_len(&self) -> usize {
        self.rows * self.cols * self.channels
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} = {v} does not fit in u32")))
}

/// Streaming writer: the header and labels go out first, then examples one at
/// a time.
pub struct ArrdWriter<W: Write> {
    out: W,
    header: ArrdHeader,
    written: usize,
}

impl ArrdWriter<BufWriter<File>> {
    pub fn create(path: &Path, task: Task, rows: usize, cols: usize, labels: &[usize]) -> Result<Self> {
        let file = File::create(path)?;
        Self::new(BufWriter::new(file), task, rows, cols, labels)
    }
}

impl<W: Write> ArrdWriter<W> {
    pub fn new(mut out: W, task: Task, rows: usize, cols: usize, labels: &[usize]) -> Result<Self> {
        let header = ArrdHeader {
            version: ARRD_VERSION,
            task,
            n: labels.len(),
            rows,
            cols,
            channels: 2,
        };
        out.write_all(ARRD_MAGIC)?;
        out.write_all(&ARRD_VERSION.to_le_bytes())?;
        out.write_all(&[task.tag()])?;
        for (v, what) in [(header.n, "N"), (rows, "M"), (cols, "T"), (2, "C")] {
            out.write_all(&to_u32(v, what)?.to_le_bytes())?;
        }
        for &l in labels {
            let l = u16::try_from(l).map_err(|_| Error::Format(format!("label {l} does not fit in u16")))?;
            out.write_all(&l.to_le_bytes())?;
        }
        Ok(Self {
            out,
            header,
            written: 0,
        })
    }

    pub fn push(&mut self, x: &RealTensor) -> Result<()> {
        let want = [self.header.rows, self.header.cols, self.header.channels];
        if x.dims() != want {
            return Err(Error::Shape {
                expected: want.to_vec(),
                got: x.dims().to_vec(),
            });
        }
        if self.written == self.header.n {
            return Err(Error::State("all declared examples already written".into()));
        }
        let mut buf = Vec::with_capacity(x.len() * 4);
        for &v in x.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        self.out.write_all(&buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        if self.written != self.header.n {
            return Err(Error::State(format!(
                "declared {} examples but wrote {}",
                self.header.n, self.written
            )));
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Streaming reader over an `ARRD` container.
pub struct ArrdReader<R: Read> {
    input: R,
    pub header: ArrdHeader,
    pub labels: Vec<usize>,
    read: usize,
}

impl ArrdReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated ARRD header: {e}")))?;
    Ok(b)
}

impl<R: Read> ArrdReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let magic: [u8; 4] = read_array(&mut input)?;
        if &magic != ARRD_MAGIC {
            return Err(Error::Format("missing ARRD magic".into()));
        }
        let version = u16::from_le_bytes(read_array(&mut input)?);
        if version != ARRD_VERSION {
            return Err(Error::Format(format!("unsupported ARRD version {version}")));
        }
        let task = Task::from_tag(read_array::<1, _>(&mut input)?[0])?;
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = u32::from_le_bytes(read_array(&mut input)?) as usize;
        }
        let header = ArrdHeader {
            version,
            task,
            n: dims[0],
            rows: dims[1],
            cols: dims[2],
            channels: dims[3],
        };
        let mut raw = vec![0u8; header.n * 2];
        input
            .read_exact(&mut raw)
            .map_err(|e| Error::Format(format!("truncated label block: {e}")))?;
        let labels = raw
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as usize)
            .collect();
        Ok(Self {
            input,
            header,
            labels,
            read: 0,
        })
    }

    fn read_next(&mut self) -> Result<RealTensor> {
        let mut raw = vec![0u8; self.header.example_len() * 4];
        self.input
            .read_exact(&mut raw)
            .map_err(|e| Error::Format(format!("truncated payload at example {}: {e}", self.read)))?;
        self.read += 1;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        RealTensor::new([self.header.rows, self.header.cols, self.header.channels], data)
    }
}

impl<R: Read> Iterator for ArrdReader<R> {
    type Item = Result<RealTensor>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.read >= self.header.n {
            return None;
        }
        Some(self.read_next())
    }
}

/// Sidecar metadata written next to every container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    pub format_version: u16,
    pub task: Task,
    pub num_examples: usize,
    pub array: ArrayConfig,
    pub synthesis: SynthesisParams,
    pub seed: u64,
}

/// `foo.arrd` → `foo.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Synthesize and write a full dataset plus sidecar; examples are streamed so
/// memory use is one example.
pub fn write_dataset(
    path: &Path,
    task: Task,
    config: &ArrayConfig,
    params: &SynthesisParams,
    n: usize,
) -> Result<DatasetMetadata> {
    let labels = dataset_labels(task, config, n, params.rng_seed);
    let mut w = ArrdWriter::create(path, task, config.num_elements, params.snapshots, &labels)?;
    for (i, &label) in labels.iter().enumerate() {
        let z = synthesize_indexed(task, config, params, label, i)?;
        w.push(&super::to_real_tensor(&z))?;
    }
    w.finish()?;
    let meta = DatasetMetadata {
        format_version: ARRD_VERSION,
        task,
        num_examples: n,
        array: config.clone(),
        synthesis: params.clone(),
        seed: params.rng_seed,
    };
    let mut json = serde_json::to_string_pretty(&meta)?;
    json.push('\n');
    std::fs::write(sidecar_path(path), json)?;
    Ok(meta)
}

pub fn read_metadata(path: &Path) -> Result<DatasetMetadata> {
    let text = std::fs::read_to_string(sidecar_path(path))?;
    Ok(serde_json::from_str(&text)?)
}
