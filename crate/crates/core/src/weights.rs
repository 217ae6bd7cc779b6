//! Weight serialization.
//!
//! Format `FSTLW1`: the 6-byte magic string, a header of little-endian u32
//! values (layer count, then per layer the kind code, the number of
//! parameter tensors, and each tensor's rank and dimensions), followed by
//! all parameter data as little-endian f32 in layer order (weight before
//! bias). The on-disk element type is always f32 regardless of the
//! in-memory scalar type.

use crate::error::{Error, Result};
use crate::network::{NetSpec, Network};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"FSTLW1";

/// Serializes a network's structure and parameters.
pub fn save_weights<T: Scalar>(net: &Network<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, net.layer_count() as u32);
    for layer in net.layers() {
        push_u32(&mut out, layer.spec().kind_code());
        match layer.params() {
            None => push_u32(&mut out, 0),
            Some((w, b)) => {
                push_u32(&mut out, 2);
                for t in [w, b] {
                    push_u32(&mut out, t.shape().len() as u32);
                    for &d in t.shape() {
                        push_u32(&mut out, d as u32);
                    }
                }
            }
        }
    }
    for layer in net.layers() {
        if let Some((w, b)) = layer.params() {
            for t in [w, b] {
                for &v in t.data() {
                    out.extend_from_slice(&(v.to_acc() as f32).to_le_bytes());
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::UnexpectedEndOfWeights);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Deserializes weights against an expected spec. The stream's structure
/// must match the spec exactly; mismatches name the offending layer.
pub fn load_weights<T: Scalar>(bytes: &[u8], spec: &NetSpec) -> Result<Network<T>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(MAGIC.len())?;
    if magic != MAGIC {
        return Err(Error::WeightFormat(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    spec.activation_shapes()?;
    let layer_count = r.u32()? as usize;
    if layer_count != spec.layers.len() {
        return Err(Error::WeightFormat(format!(
            "file has {layer_count} layers, spec has {}",
            spec.layers.len()
        )));
    }

    // Header: collect declared parameter shapes per layer.
    let mut declared: Vec<Vec<Vec<usize>>> = Vec::with_capacity(layer_count);
    for (i, layer_spec) in spec.layers.iter().enumerate() {
        let kind = r.u32()?;
        if kind != layer_spec.kind_code() {
            return Err(Error::WeightFormat(format!(
                "layer {i}: kind code {kind} does not match spec kind {} ({})",
                layer_spec.kind_code(),
                layer_spec.kind_name()
            )));
        }
        let n_tensors = r.u32()? as usize;
        let mut shapes = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            shapes.push(shape);
        }
        declared.push(shapes);
    }

    // Rebuild layers, validating declared shapes against the spec-derived
    // ones before reading data.
    let seeded: Network<T> = crate::network::init_network(spec, 0)?;
    let mut layers = Vec::with_capacity(layer_count);
    for (i, template) in seeded.layers().iter().enumerate() {
        let expected: Vec<Vec<usize>> = template
            .params()
            .map(|(w, b)| vec![w.shape().to_vec(), b.shape().to_vec()])
            .unwrap_or_default();
        if declared[i] != expected {
            return Err(Error::WeightFormat(format!(
                "layer {i}: parameter shapes {:?} do not match spec shapes {:?}",
                declared[i], expected
            )));
        }
        layers.push(template.clone());
    }
    for layer in layers.iter_mut() {
        if let Some((w, b)) = layer.params_mut() {
            for t in [&mut *w, &mut *b] {
                let mut data = Vec::with_capacity(t.len());
                for _ in 0..t.len() {
                    data.push(T::from_acc(r.f32()? as f64));
                }
                *t = Tensor::new(t.shape().to_vec(), data)?;
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::WeightFormat(format!(
            "{} trailing bytes after parameter data",
            bytes.len() - r.pos
        )));
    }
    Network::from_layers(spec.input.clone(), layers, 0)
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}
