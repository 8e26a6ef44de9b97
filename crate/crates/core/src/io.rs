//! On-disk formats: the binary snapshot container, network checkpoints,
//! key=value manifests and CSV tables.

use std::fmt::Display;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kpod::SnapshotMatrix;
use crate::measures::GridGeometry;
use crate::nn::{Activation, ConvShape, Layer, LayerSpec, Network};

pub const MAGIC: &[u8; 8] = b"OTROM1\0\0";
const HEADER: usize = 8 + 5 * 4;

/// Column-major block of `n_s` columns of height `n_h`, followed by
/// `param_dim` values per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub n_h: usize,
    pub n_s: usize,
    pub param_dim: usize,
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<f64>,
    pub params: Vec<f64>,
}

fn u32_field(v: usize, name: &str) -> Result<[u8; 4]> {
    u32::try_from(v).map(u32::to_le_bytes).map_err(|_| Error::Format(format!("{name} = {v} exceeds u32")))
}

impl Container {
    pub fn byte_len(&self) -> usize {
        HEADER + 8 * (self.n_h * self.n_s + self.n_s * self.param_dim)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.data.len() != self.n_h * self.n_s || self.params.len() != self.n_s * self.param_dim {
            return Err(Error::Format("container payload does not match its header".into()));
        }
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(MAGIC);
        for (v, name) in [(self.n_h, "N_h"), (self.n_s, "N_s"), (self.param_dim, "param_dim"), (self.nx, "nx"), (self.ny, "ny")] {
            out.extend_from_slice(&u32_field(v, name)?);
        }
        for x in self.data.iter().chain(&self.params) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER || &bytes[..8] != MAGIC {
            return Err(Error::Format("missing OTROM1 magic".into()));
        }
        let field = |k: usize| u32::from_le_bytes(bytes[8 + 4 * k..12 + 4 * k].try_into().expect("4 bytes")) as usize;
        let (n_h, n_s, param_dim, nx, ny) = (field(0), field(1), field(2), field(3), field(4));
        let nd = n_h.checked_mul(n_s).ok_or_else(|| Error::Format("header overflow".into()))?;
        let np = n_s.checked_mul(param_dim).ok_or_else(|| Error::Format("header overflow".into()))?;
        let expect = HEADER + 8 * (nd + np);
        if bytes.len() != expect {
            return Err(Error::Format(format!("file has {} bytes, header implies {expect}", bytes.len())));
        }
        let floats: Vec<f64> = bytes[HEADER..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let params = floats[nd..].to_vec();
        let mut data = floats;
        data.truncate(nd);
        Ok(Self { n_h, n_s, param_dim, nx, ny, data, params })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn from_snapshots(s: &SnapshotMatrix) -> Self {
        Self {
            n_h: s.n_h(),
            n_s: s.n_s(),
            param_dim: s.param_dim(),
            nx: s.geometry().nx(),
            ny: s.geometry().ny(),
            data: s.data().to_vec(),
            params: s.params().concat(),
        }
    }

    /// Snapshot matrix on `geometry`, which must have the stored grid shape.
    pub fn to_snapshots(&self, geometry: &GridGeometry) -> Result<SnapshotMatrix> {
        if geometry.nx() != self.nx || geometry.ny() != self.ny {
            return Err(Error::Format(format!(
                "container grid {}x{} does not match {}x{}",
                self.nx,
                self.ny,
                geometry.nx(),
                geometry.ny()
            )));
        }
        let params = if self.param_dim == 0 {
            vec![Vec::new(); self.n_s]
        } else {
            self.params.chunks(self.param_dim).map(<[f64]>::to_vec).collect()
        };
        SnapshotMatrix::new(self.data.clone(), self.n_h, params, geometry.clone())
    }

    /// Square matrix stored with `N_h = N_s` and no parameters.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self { n_h: m.nrows(), n_s: m.ncols(), param_dim: 0, nx: m.nrows(), ny: 1, data: m.as_slice().to_vec(), params: vec![] }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n_h, self.n_s, &self.data)
    }
}

const SPEC_WIDTH: usize = 8;

fn encode_spec(s: &LayerSpec) -> [f64; SPEC_WIDTH] {
    let conv = |code: f64, g: &ConvShape| {
        [code, g.in_ch as f64, g.out_ch as f64, g.in_h as f64, g.in_w as f64, g.filter as f64, g.stride as f64, g.pad as f64]
    };
    match s {
        LayerSpec::Dense { input, output } => [0.0, *input as f64, *output as f64, 0.0, 0.0, 0.0, 0.0, 0.0],
        LayerSpec::Conv(g) => conv(1.0, g),
        LayerSpec::ConvTranspose(g) => conv(2.0, g),
        LayerSpec::Flatten { ch, h, w } => [3.0, *ch as f64, *h as f64, *w as f64, 0.0, 0.0, 0.0, 0.0],
        LayerSpec::Unflatten { ch, h, w } => [4.0, *ch as f64, *h as f64, *w as f64, 0.0, 0.0, 0.0, 0.0],
        LayerSpec::Activation { kind: Activation::Elu, width } => [5.0, 0.0, *width as f64, 0.0, 0.0, 0.0, 0.0, 0.0],
        LayerSpec::Dropout { keep, width } => [6.0, *keep, *width as f64, 0.0, 0.0, 0.0, 0.0, 0.0],
    }
}

fn decode_spec(v: &[f64]) -> Result<LayerSpec> {
    let u = |k: usize| -> Result<usize> {
        let x = v[k];
        if x >= 0.0 && x.fract() == 0.0 && x < 1e15 {
            Ok(x as usize)
        } else {
            Err(Error::Format(format!("bad layer field {x}")))
        }
    };
    let conv = || -> Result<ConvShape> {
        Ok(ConvShape { in_ch: u(1)?, out_ch: u(2)?, in_h: u(3)?, in_w: u(4)?, filter: u(5)?, stride: u(6)?, pad: u(7)? })
    };
    Ok(match u(0)? {
        0 => LayerSpec::Dense { input: u(1)?, output: u(2)? },
        1 => LayerSpec::Conv(conv()?),
        2 => LayerSpec::ConvTranspose(conv()?),
        3 => LayerSpec::Flatten { ch: u(1)?, h: u(2)?, w: u(3)? },
        4 => LayerSpec::Unflatten { ch: u(1)?, h: u(2)?, w: u(3)? },
        5 if u(1)? == 0 => LayerSpec::Activation { kind: Activation::Elu, width: u(2)? },
        6 => LayerSpec::Dropout { keep: v[1], width: u(2)? },
        c => return Err(Error::Format(format!("unknown layer code {c}"))),
    })
}

/// Checkpoint: one column holding every weight and bias in layer order;
/// the parameter block carries the encoded layer specs and the seed.
pub fn network_to_container(net: &Network) -> Container {
    let mut data = Vec::with_capacity(net.param_count());
    let mut params = Vec::with_capacity(SPEC_WIDTH * net.layers.len() + 2);
    for l in &net.layers {
        data.extend_from_slice(&l.weights);
        data.extend_from_slice(&l.bias);
        params.extend_from_slice(&encode_spec(&l.spec));
    }
    params.push((net.rng_seed >> 32) as f64);
    params.push((net.rng_seed & 0xffff_ffff) as f64);
    Container { n_h: data.len(), n_s: 1, param_dim: params.len(), nx: net.layers.len(), ny: 1, data, params }
}

pub fn network_from_container(c: &Container) -> Result<Network> {
    if c.n_s != 1 || c.param_dim != SPEC_WIDTH * c.nx + 2 {
        return Err(Error::Format("not a network checkpoint".into()));
    }
    let mut layers = Vec::with_capacity(c.nx);
    let mut at = 0;
    for chunk in c.params[..SPEC_WIDTH * c.nx].chunks(SPEC_WIDTH) {
        let spec = decode_spec(chunk)?;
        let (nw, nb) = spec.param_counts();
        if at + nw + nb > c.data.len() {
            return Err(Error::Format("checkpoint is shorter than its layers".into()));
        }
        let weights = c.data[at..at + nw].to_vec();
        let bias = c.data[at + nw..at + nw + nb].to_vec();
        at += nw + nb;
        layers.push(Layer { spec, weights, bias });
    }
    if at != c.data.len() {
        return Err(Error::Format("checkpoint has trailing weights".into()));
    }
    let hi = c.params[SPEC_WIDTH * c.nx] as u64;
    let lo = c.params[SPEC_WIDTH * c.nx + 1] as u64;
    Network::from_parts(layers, (hi << 32) | lo)
}

/// Ordered `key=value` document.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `key`, replacing an earlier value in place.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string();
        debug_assert!(!key.contains('=') && !key.contains('\n') && !value.contains('\n'));
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Format(format!("manifest lacks `{key}`")))
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.require(key)?;
        v.parse().map_err(|_| Error::Format(format!("cannot parse `{key}` = `{v}`")))
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn extend(&mut self, other: &Manifest) {
        for (k, v) in &other.entries {
            self.set(k, v);
        }
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Self::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("line {}: expected key=value", n + 1)))?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Comma-joined list with round-trip float formatting.
pub fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    if s.trim().is_empty() {
        return Ok(vec![]);
    }
    s.split(',').map(|t| t.trim().parse().map_err(|_| Error::Format(format!("bad list item `{t}`")))).collect()
}

/// Header plus rows, comma separated, one record per line.
pub fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    fs::write(path, csv_text(header, rows))?;
    Ok(())
}

/// Numeric grid, one line per row and no header.
pub fn grid_csv(values: &[f64], nx: usize) -> String {
    values.chunks(nx).map(|r| join(r) + "\n").collect()
}
