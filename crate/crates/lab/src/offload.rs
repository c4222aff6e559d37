//! Layers streamed from a weight file right before they run.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use plm_core::model::{layer_manifest, Layer, LayerSource, ModelConfig};
use plm_core::tensor::BitWidth;

use crate::error::{LabError, Result};
use crate::weights::{with_path, WeightIndex};

/// Re-reads a layer's records from disk on every fetch and tallies the bytes
/// read.
pub struct FileLayerSource {
    path: PathBuf,
    reader: BufReader<File>,
    index: WeightIndex,
    quant: Option<BitWidth>,
    io_bytes: u64,
    fetches: u64,
    largest_layer: usize,
}

impl FileLayerSource {
    /// `quant` is applied to every fetched layer, matching a model that was
    /// quantized after loading.
    pub fn open(path: &Path, quant: Option<BitWidth>) -> Result<Self> {
        let file = File::open(path).map_err(|e| LabError::io(path, e))?;
        let mut reader = BufReader::new(file);
        let index = WeightIndex::read(&mut reader).map_err(|e| with_path(e, path))?;
        Ok(Self {
            path: path.to_path_buf(),
            reader,
            index,
            quant,
            io_bytes: 0,
            fetches: 0,
            largest_layer: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.index.config
    }

    pub fn index(&self) -> &WeightIndex {
        &self.index
    }

    /// Bytes read by fetches so far (serialized records, headers included).
    pub fn io_bytes(&self) -> u64 {
        self.io_bytes
    }

    pub fn fetches(&self) -> u64 {
        self.fetches
    }

    /// Resident bytes of the largest layer fetched so far.
    pub fn largest_layer_bytes(&self) -> usize {
        self.largest_layer
    }

    pub fn reset_counters(&mut self) {
        self.io_bytes = 0;
        self.fetches = 0;
    }

    fn load(&mut self, index: usize) -> Result<Layer> {
        let cfg = self.index.config.clone();
        if index >= cfg.n_layers {
            return Err(LabError::Bench(format!("layer {index} out of range")));
        }
        let mut names = layer_manifest(&cfg, index).into_iter().map(|(n, _)| n);
        let mut failure = None;
        let index_ref = &self.index;
        let reader = &mut self.reader;
        let layer = Layer::from_tensors(&cfg, index, &mut |name, _| {
            debug_assert_eq!(names.next().as_deref(), Some(name));
            index_ref.read_tensor(reader, name).map_err(|e| {
                let msg = e.to_string();
                failure = Some(e);
                plm_core::Error::LayerSource(msg)
            })
        });
        let mut layer = match (layer, failure) {
            (_, Some(e)) => return Err(with_path(e, &self.path)),
            (l, None) => l?,
        };
        if let Some(bits) = self.quant {
            layer.quantize(bits)?;
        }
        self.io_bytes += self.index.layer_bytes(index);
        self.fetches += 1;
        self.largest_layer = self.largest_layer.max(layer.weight_bytes() + layer.norm_bytes());
        Ok(layer)
    }
}

impl LayerSource for FileLayerSource {
    fn fetch(&mut self, index: usize) -> plm_core::Result<Layer> {
        self.load(index).map_err(|e| match e {
            LabError::Core(c) => c,
            other => plm_core::Error::LayerSource(other.to_string()),
        })
    }
}
