//! Model container: a versioned list of named f64 tensors.
//!
//! ```text
//! RIDE\n
//! v1\n
//! tensors <count>\n
//! then per tensor:
//!   <name> <ndim> <dim_1> ... <dim_ndim>\n
//!   prod(dims) little-endian f64 values
//! ```
//!
//! See `docs/FORMATS.md` for the tensor names a model uses.

use crate::error::{Error, Result};
use crate::imaging::NeighborhoodSpec;
use crate::mcgsm::McgsmParams;
use crate::slstm::SlstmLayerParams;

use super::{RideModel, WhiteningTransform, FORMAT_VERSION};

const MAGIC: &[u8] = b"RIDE\n";
const MAX_TENSORS: usize = 4096;
const MAX_NDIM: usize = 8;
const MAX_NAME: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        let t = Tensor {
            name: name.into(),
            shape,
            data,
        };
        debug_assert_eq!(t.shape.iter().product::<usize>(), t.data.len());
        t
    }

    fn scalar(name: impl Into<String>, v: f64) -> Self {
        Tensor::new(name, vec![1], vec![v])
    }

    fn vector(name: impl Into<String>, data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::new(name, vec![n], data)
    }
}

pub fn encode_tensors(tensors: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(format!("v{FORMAT_VERSION}\ntensors {}\n", tensors.len()).as_bytes());
    for t in tensors {
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        out.extend_from_slice(format!("{} {} {}\n", t.name, t.shape.len(), dims.join(" ")).as_bytes());
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let rest = &self.bytes[start..];
        let end = rest
            .iter()
            .take(1024)
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(start, "unterminated or overlong header line"))?;
        let text = std::str::from_utf8(&rest[..end]).map_err(|_| Error::format(start, "header line is not ASCII"))?;
        if !text.is_ascii() {
            return Err(Error::format(start, "header line is not ASCII"));
        }
        self.pos = start + end + 1;
        Ok((start, text))
    }
}

fn parse_count(field: &str, offset: usize, what: &str) -> Result<usize> {
    let canonical = !field.is_empty() && field.bytes().all(|b| b.is_ascii_digit()) && (field == "0" || !field.starts_with('0'));
    if !canonical {
        return Err(Error::format(offset, format!("invalid {what} {field:?}")));
    }
    field
        .parse()
        .map_err(|_| Error::format(offset, format!("{what} {field:?} is too large")))
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<Tensor>> {
    if !bytes.starts_with(MAGIC) {
        return Err(Error::format(0, "missing RIDE magic"));
    }
    let mut r = Reader { bytes, pos: MAGIC.len() };
    let (off, version) = r.line()?;
    if version != format!("v{FORMAT_VERSION}") {
        return Err(Error::format(off, format!("unsupported container version {version:?}")));
    }
    let (off, header) = r.line()?;
    let count = match header.strip_prefix("tensors ") {
        Some(n) => parse_count(n, off, "tensor count")?,
        None => return Err(Error::format(off, "expected \"tensors <count>\"")),
    };
    if count > MAX_TENSORS {
        return Err(Error::format(off, format!("{count} tensors exceeds the limit of {MAX_TENSORS}")));
    }
    let mut tensors: Vec<Tensor> = Vec::with_capacity(count);
    for _ in 0..count {
        let (off, line) = r.line()?;
        let mut fields = line.split(' ');
        let name = fields.next().unwrap_or("");
        let name_ok = !name.is_empty() && name.len() <= MAX_NAME && name.bytes().all(|b| b.is_ascii_graphic());
        if !name_ok {
            return Err(Error::format(off, format!("invalid tensor name {name:?}")));
        }
        if tensors.iter().any(|t| t.name == name) {
            return Err(Error::format(off, format!("duplicate tensor {name:?}")));
        }
        let ndim = parse_count(fields.next().unwrap_or(""), off, "dimension count")?;
        if ndim == 0 || ndim > MAX_NDIM {
            return Err(Error::format(off, format!("tensor {name:?} has {ndim} dimensions")));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut elements: usize = 1;
        for _ in 0..ndim {
            let d = parse_count(fields.next().unwrap_or(""), off, "dimension")?;
            elements = elements
                .checked_mul(d)
                .ok_or_else(|| Error::format(off, "tensor size overflows"))?;
            shape.push(d);
        }
        if fields.next().is_some() {
            return Err(Error::format(off, "trailing fields after tensor shape"));
        }
        let available = (bytes.len() - r.pos) / 8;
        if elements > available {
            return Err(Error::format(
                r.pos,
                format!("tensor {name:?} needs {elements} values but only {available} remain"),
            ));
        }
        let mut data = Vec::with_capacity(elements);
        for k in 0..elements {
            let at = r.pos + 8 * k;
            let v = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format(at, format!("non-finite value in tensor {name:?}")));
            }
            data.push(v);
        }
        r.pos += 8 * elements;
        tensors.push(Tensor {
            name: name.to_string(),
            shape,
            data,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos, "trailing bytes after last tensor"));
    }
    Ok(tensors)
}

pub fn save_model(model: &RideModel) -> Vec<u8> {
    let d = model.neighborhood.dim();
    let wt = &model.whitening;
    let mut ts = vec![
        Tensor::vector(
            "neighborhood",
            vec![model.neighborhood.width() as f64, model.neighborhood.rows_above() as f64],
        ),
        Tensor::vector("whitening.mean_x", wt.mean_x.clone()),
        Tensor::scalar("whitening.mean_y", wt.mean_y),
        Tensor::new("whitening.cxx_inv_sqrt", vec![d, d], wt.cxx_inv_sqrt.clone()),
        Tensor::vector("whitening.cyx_white", wt.cyx_white.clone()),
        Tensor::scalar("whitening.w", wt.w),
        Tensor::scalar("layers", model.layers.len() as f64),
    ];
    for (k, l) in model.layers.iter().enumerate() {
        ts.push(Tensor::vector(
            format!("layer.{k}.config"),
            vec![l.input_dim as f64, l.hidden_dim as f64, if l.extended { 1.0 } else { 0.0 }],
        ));
        ts.push(Tensor::new(
            format!("layer.{k}.weights"),
            vec![5 * l.hidden_dim, l.input_width()],
            l.weights.clone(),
        ));
        ts.push(Tensor::vector(format!("layer.{k}.bias"), l.bias.clone()));
    }
    let h = &model.head;
    ts.push(Tensor::vector(
        "head.config",
        vec![h.dim as f64, h.components as f64, h.scales as f64, h.features as f64],
    ));
    ts.push(Tensor::new("head.eta", vec![h.components, h.scales], h.eta.clone()));
    ts.push(Tensor::new("head.alpha", vec![h.components, h.scales], h.alpha.clone()));
    ts.push(Tensor::new("head.beta", vec![h.components, h.features], h.beta.clone()));
    ts.push(Tensor::new("head.b", vec![h.features, h.dim], h.b.clone()));
    ts.push(Tensor::new("head.a", vec![h.components, h.dim], h.a.clone()));
    encode_tensors(&ts)
}

struct TensorSet {
    tensors: Vec<Tensor>,
}

impl TensorSet {
    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let pos = self
            .tensors
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::domain(format!("model is missing tensor {name:?}")))?;
        let t = self.tensors.swap_remove(pos);
        if t.shape != shape {
            return Err(Error::domain(format!(
                "tensor {name:?} has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(t.data)
    }

    fn scalar(&mut self, name: &str) -> Result<f64> {
        Ok(self.take(name, &[1])?[0])
    }

    fn sizes<const N: usize>(&mut self, name: &str) -> Result<[usize; N]> {
        let data = self.take(name, &[N])?;
        let mut out = [0usize; N];
        for (o, v) in out.iter_mut().zip(&data) {
            *o = as_size(*v, name)?;
        }
        Ok(out)
    }
}

fn as_size(v: f64, name: &str) -> Result<usize> {
    if v.fract() != 0.0 || !(0.0..=1e9).contains(&v) {
        return Err(Error::domain(format!("tensor {name:?} holds {v}, expected a small nonnegative integer")));
    }
    Ok(v as usize)
}

pub fn load_model(bytes: &[u8]) -> Result<RideModel> {
    let mut set = TensorSet {
        tensors: decode_tensors(bytes)?,
    };
    let [width, rows_above] = set.sizes::<2>("neighborhood")?;
    let neighborhood = NeighborhoodSpec::new(width, rows_above)?;
    let d = neighborhood.dim();
    let mean_x = set.take("whitening.mean_x", &[d])?;
    let mean_y = set.scalar("whitening.mean_y")?;
    let cxx_inv_sqrt = set.take("whitening.cxx_inv_sqrt", &[d, d])?;
    let cyx_white = set.take("whitening.cyx_white", &[d])?;
    let w = set.scalar("whitening.w")?;
    let whitening = WhiteningTransform {
        mean_x,
        mean_y,
        cxx_inv_sqrt,
        cyx_white,
        w,
        log_jacobian: w.ln(),
    };
    let [count] = set.sizes::<1>("layers")?;
    if count > 64 {
        return Err(Error::domain(format!("{count} layers exceeds the limit of 64")));
    }
    let mut layers = Vec::with_capacity(count);
    for k in 0..count {
        let [input_dim, hidden_dim, extended] = set.sizes::<3>(&format!("layer.{k}.config"))?;
        if extended > 1 {
            return Err(Error::domain(format!("layer {k} has invalid extended flag {extended}")));
        }
        // Shapes are checked against the stored tensors before anything is
        // allocated from the declared sizes.
        let cols = input_dim + if extended == 1 { 4 } else { 2 } * hidden_dim;
        let weights = set.take(&format!("layer.{k}.weights"), &[5 * hidden_dim, cols])?;
        let bias = set.take(&format!("layer.{k}.bias"), &[5 * hidden_dim])?;
        let layer = SlstmLayerParams {
            input_dim,
            hidden_dim,
            extended: extended == 1,
            weights,
            bias,
        };
        layer.validate()?;
        layers.push(layer);
    }
    let [dim, c, s, n] = set.sizes::<4>("head.config")?;
    let head = McgsmParams {
        dim,
        components: c,
        scales: s,
        features: n,
        eta: set.take("head.eta", &[c, s])?,
        alpha: set.take("head.alpha", &[c, s])?,
        beta: set.take("head.beta", &[c, n])?,
        b: set.take("head.b", &[n, dim])?,
        a: set.take("head.a", &[c, dim])?,
    };
    if let Some(t) = set.tensors.first() {
        return Err(Error::domain(format!("unexpected tensor {:?}", t.name)));
    }
    RideModel::new(neighborhood, whitening, layers, head)
}
