//! Reading and writing NPY v1.0 files.
//!
//! Only little-endian, C-order arrays are supported. Floats load as `f64`
//! (`<f4` widens exactly); integer arrays are used for label vectors.
//! The format is described at
//! <https://numpy.org/doc/stable/reference/generated/numpy.lib.format.html>.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Dataset, ImageTensor, SaliencyMap};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    I32,
    I64,
    U8,
}

impl Dtype {
    fn parse(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(Dtype::F32),
            "<f8" => Ok(Dtype::F64),
            "<i4" => Ok(Dtype::I32),
            "<i8" => Ok(Dtype::I64),
            "|u1" | "<u1" => Ok(Dtype::U8),
            other => Err(Error::UnsupportedDtype(other.to_string())),
        }
    }

    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
            Dtype::I32 => "<i4",
            Dtype::I64 => "<i8",
            Dtype::U8 => "|u1",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::I32 => 4,
            Dtype::F64 | Dtype::I64 => 8,
            Dtype::U8 => 1,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Dtype::F32 | Dtype::F64)
    }
}

/// A decoded NPY array. Values are widened to `f64`; integer payloads
/// are exactly representable as long as they stay below 2^53.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NpyArray {
    pub fn f64(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self {
            dtype: Dtype::F64,
            shape,
            data,
        }
    }
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<NpyArray> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn decode(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::Format("missing magic string".into()));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(Error::Format(format!("unsupported version {major}.{minor}")));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let payload_start = 10 + header_len;
    let header = bytes
        .get(10..payload_start)
        .ok_or_else(|| Error::Format("truncated header".into()))?;
    let header =
        std::str::from_utf8(header).map_err(|_| Error::Format("header is not ascii".into()))?;
    let (descr, fortran, shape) = parse_header(header)?;
    if fortran {
        return Err(Error::Format("fortran order is not supported".into()));
    }
    let dtype = Dtype::parse(&descr)?;
    let count: usize = shape.iter().product();
    let payload = &bytes[payload_start..];
    if payload.len() != count * dtype.size() {
        return Err(Error::Format(format!(
            "payload has {} bytes, shape {:?} needs {}",
            payload.len(),
            shape,
            count * dtype.size()
        )));
    }
    let data = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
        Dtype::I32 => payload
            .chunks_exact(4)
            .map(|b| i32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Dtype::I64 => payload
            .chunks_exact(8)
            .map(|b| i64::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Dtype::U8 => payload.iter().map(|&b| b as f64).collect(),
    };
    Ok(NpyArray { dtype, shape, data })
}

fn parse_header(header: &str) -> Result<(String, bool, Vec<usize>)> {
    let bad = |what: &str| Error::Format(format!("header: {what}"));
    let body = header.trim_end_matches(['\n', ' ', '\0']).trim();
    let body = body
        .strip_prefix('{')
        .and_then(|b| b.strip_suffix('}'))
        .ok_or_else(|| bad("not a dict"))?;

    let value_after = |key: &str| -> Result<&str> {
        let needle = format!("'{key}':");
        let at = body.find(&needle).ok_or_else(|| bad(key))?;
        Ok(body[at + needle.len()..].trim_start())
    };

    let descr = value_after("descr")?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|d| d.split('\'').next())
        .ok_or_else(|| bad("descr"))?
        .to_string();

    let fortran = value_after("fortran_order")?;
    let fortran = if fortran.starts_with("False") {
        false
    } else if fortran.starts_with("True") {
        true
    } else {
        return Err(bad("fortran_order"));
    };

    let shape = value_after("shape")?;
    let shape = shape
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| bad("shape"))?;
    let shape = shape
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| bad("shape entry")))
        .collect::<Result<Vec<_>>>()?;
    Ok((descr, fortran, shape))
}

pub fn encode(array: &NpyArray) -> Result<Vec<u8>> {
    let count: usize = array.shape.iter().product();
    if count != array.data.len() {
        return Err(Error::LengthMismatch {
            expected: count,
            got: array.data.len(),
        });
    }
    let shape = match array.shape.as_slice() {
        [single] => format!("({single},)"),
        dims => format!(
            "({})",
            dims.iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        array.dtype.descr(),
        shape
    );
    // magic(6) + version(2) + len(2) + header + '\n' must be a multiple of ALIGN
    let unpadded = 10 + header.len() + 1;
    let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
    header.extend(std::iter::repeat_n(' ', padding));
    header.push('\n');

    let mut out = Vec::with_capacity(10 + header.len() + count * array.dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for &v in &array.data {
        match array.dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            Dtype::I32 => out.extend_from_slice(&(v as i32).to_le_bytes()),
            Dtype::I64 => out.extend_from_slice(&(v as i64).to_le_bytes()),
            Dtype::U8 => out.push(v as u8),
        }
    }
    Ok(out)
}

pub fn write_npy(array: &NpyArray, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(array)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    writer.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    writer.flush().map_err(|e| Error::io(path, e))
}

/// A 2-D array loads as a saliency map, a 3-D array as an image.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Image(ImageTensor),
    Saliency(SaliencyMap),
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let array = read_npy(path)?;
    if !array.dtype.is_float() {
        return Err(Error::UnsupportedDtype(array.dtype.descr().to_string()));
    }
    match array.shape.as_slice() {
        &[h, w] => Ok(Tensor::Saliency(SaliencyMap::new(h, w, array.data)?)),
        &[h, w, c] => Ok(Tensor::Image(ImageTensor::new(h, w, c, array.data)?)),
        other => Err(Error::Format(format!(
            "expected a 2-D or 3-D array, got shape {other:?}"
        ))),
    }
}

pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let array = match tensor {
        Tensor::Image(t) => NpyArray::f64(
            vec![t.height(), t.width(), t.channels()],
            t.data().to_vec(),
        ),
        Tensor::Saliency(s) => NpyArray::f64(vec![s.height(), s.width()], s.scores().to_vec()),
    };
    write_npy(&array, path)
}

pub const IMAGES_FILE: &str = "images.npy";
pub const LABELS_FILE: &str = "labels.npy";

pub fn saliency_file(method: &str) -> String {
    format!("saliency_{method}.npy")
}

/// Loads `images.npy` (N×H×W×C or N×H×W) and `labels.npy` (N) from a directory.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let images = read_npy(dir.join(IMAGES_FILE))?;
    let labels = read_npy(dir.join(LABELS_FILE))?;
    let (n, h, w, c) = match images.shape.as_slice() {
        &[n, h, w] => (n, h, w, 1),
        &[n, h, w, c] => (n, h, w, c),
        other => {
            return Err(Error::Format(format!(
                "images must be N×H×W×C, got {other:?}"
            )))
        }
    };
    if labels.shape != [n] {
        return Err(Error::shape(format!("({n},)"), format!("{:?}", labels.shape)));
    }
    let labels: Vec<usize> = labels
        .data
        .iter()
        .map(|&l| {
            if l >= 0.0 && l.fract() == 0.0 {
                Ok(l as usize)
            } else {
                Err(Error::Format(format!("invalid label {l}")))
            }
        })
        .collect::<Result<_>>()?;
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let stride = h * w * c;
    let images = images
        .data
        .chunks_exact(stride.max(1))
        .take(n)
        .map(|chunk| ImageTensor::new(h, w, c, chunk.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(images, labels, num_classes)
}

pub fn write_dataset_images(images: &[ImageTensor], path: impl AsRef<Path>) -> Result<()> {
    let Some(first) = images.first() else {
        return write_npy(&NpyArray::f64(vec![0, 0, 0, 0], Vec::new()), path);
    };
    let mut data = Vec::with_capacity(images.len() * first.data().len());
    for im in images {
        data.extend_from_slice(im.data());
    }
    write_npy(
        &NpyArray::f64(
            vec![images.len(), first.height(), first.width(), first.channels()],
            data,
        ),
        path,
    )
}

pub fn write_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    write_dataset_images(ds.images(), dir.join(IMAGES_FILE))?;
    write_npy(
        &NpyArray {
            dtype: Dtype::I64,
            shape: vec![ds.len()],
            data: ds.labels().iter().map(|&l| l as f64).collect(),
        },
        dir.join(LABELS_FILE),
    )
}

/// Per-image saliency stack, N×H×W.
pub fn read_saliency_stack(path: impl AsRef<Path>) -> Result<Vec<SaliencyMap>> {
    let array = read_npy(path)?;
    if !array.dtype.is_float() {
        return Err(Error::UnsupportedDtype(array.dtype.descr().to_string()));
    }
    match array.shape.as_slice() {
        &[n, h, w] => array
            .data
            .chunks_exact((h * w).max(1))
            .take(n)
            .map(|c| SaliencyMap::new(h, w, c.to_vec()))
            .collect(),
        &[n, h, w, c] => array
            .data
            .chunks_exact((h * w * c).max(1))
            .take(n)
            .map(|chunk| SaliencyMap::from_channels(&ImageTensor::new(h, w, c, chunk.to_vec())?))
            .collect(),
        other => Err(Error::Format(format!(
            "saliency stack must be N×H×W, got {other:?}"
        ))),
    }
}

pub fn write_saliency_stack(maps: &[SaliencyMap], path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = maps.first().map_or((0, 0), |m| (m.height(), m.width()));
    let data = maps.iter().flat_map(|m| m.scores().iter().copied()).collect();
    write_npy(&NpyArray::f64(vec![maps.len(), h, w], data), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_value_layout() {
        let t = ImageTensor::new(1, 1, 1, vec![0.5]).unwrap();
        let bytes = encode(&NpyArray::f64(vec![1, 1, 1], t.data().to_vec())).unwrap();
        assert_eq!(bytes.len(), 128 + 8);
        assert_eq!(&bytes[128..], &0.5f64.to_le_bytes());
        assert_eq!(bytes[127], b'\n');
    }

    #[test]
    fn header_matches_numpy_text() {
        let bytes = encode(&NpyArray::f64(vec![28, 28], vec![0.0; 784])).unwrap();
        let len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        let header = std::str::from_utf8(&bytes[10..10 + len]).unwrap();
        assert!(header.starts_with("{'descr': '<f8', 'fortran_order': False, 'shape': (28, 28), }"));
        assert_eq!((10 + len) % 64, 0);
    }

    #[test]
    fn reads_f32_saliency() {
        let mut bytes = encode(&NpyArray {
            dtype: Dtype::F32,
            shape: vec![28, 28],
            data: (0..784).map(|i| i as f64 * 0.25).collect(),
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.npy");
        std::fs::write(&path, &bytes).unwrap();
        match read_tensor(&path).unwrap() {
            Tensor::Saliency(s) => {
                assert_eq!((s.height(), s.width()), (28, 28));
                assert_eq!(s.scores()[5], 1.25);
            }
            other => panic!("expected saliency, got {other:?}"),
        }
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_tensor(&path), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_unsupported_dtype() {
        let mut patched = encode(&NpyArray::f64(vec![2], vec![1.0, 2.0])).unwrap();
        let at = patched.windows(3).position(|w| w == b"<f8").unwrap();
        patched[at..at + 3].copy_from_slice(b"<c8");
        assert!(matches!(decode(&patched), Err(Error::UnsupportedDtype(d)) if d == "<c8"));
    }

    #[test]
    fn zeros_image_has_zero_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.npy");
        write_npy(&NpyArray::f64(vec![32, 32, 3], vec![0.0; 32 * 32 * 3]), &path).unwrap();
        let Tensor::Image(t) = read_tensor(&path).unwrap() else {
            panic!("expected image")
        };
        assert_eq!(t.value_range(), (0.0, 0.0));
    }

    #[test]
    fn negative_values_survive() {
        let t = Tensor::Image(ImageTensor::new(1, 2, 1, vec![-0.0, -3.75e-300]).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.npy");
        write_tensor(&t, &path).unwrap();
        let Tensor::Image(back) = read_tensor(&path).unwrap() else {
            panic!()
        };
        assert_eq!(back.data()[0].to_bits(), (-0.0f64).to_bits());
        assert_eq!(back.data()[1], -3.75e-300);
    }
}
