//! Model file: a `key = value` text header followed by raw little-endian
//! `f64` blocks whose names and shapes the header declares.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &str = "bandgroup-model 1";
const END: &str = "end_header";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelFile {
    pub header: Vec<(String, String)>,
    pub blocks: Vec<(String, Array2<f64>)>,
}

impl ModelFile {
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.header.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Data(format!("model file lacks `{key}`")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse().map_err(|_| Error::Data(format!("model key `{key}` has bad value `{v}`")))
    }

    pub fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let v = self.get(key)?;
        v.split(',')
            .filter(|t| !t.is_empty())
            .map(|t| t.trim().parse().map_err(|_| Error::Data(format!("model key `{key}` has bad entry `{t}`"))))
            .collect()
    }

    pub fn add_block(&mut self, name: impl Into<String>, values: Array2<f64>) {
        self.blocks.push((name.into(), values));
    }

    pub fn block(&self, name: &str) -> Result<&Array2<f64>> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b)
            .ok_or_else(|| Error::Data(format!("model file lacks block `{name}`")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{MAGIC}\n");
        for (k, v) in &self.header {
            out.push_str(&format!("{k} = {v}\n"));
        }
        for (name, b) in &self.blocks {
            out.push_str(&format!("block {name} {} {}\n", b.nrows(), b.ncols()));
        }
        out.push_str(END);
        out.push('\n');
        let mut bytes = out.into_bytes();
        for (_, b) in &self.blocks {
            for v in b.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let marker = format!("\n{END}\n");
        let split = bytes
            .windows(marker.len())
            .position(|w| w == marker.as_bytes())
            .ok_or_else(|| Error::Data("model file has no header terminator".into()))?;
        let text = std::str::from_utf8(&bytes[..split]).map_err(|_| Error::Data("model header is not UTF-8".into()))?;
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err(Error::Data("not a bandgroup model file".into()));
        }
        let mut file = ModelFile::default();
        let mut shapes = Vec::new();
        for line in lines {
            if let Some(rest) = line.strip_prefix("block ") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                let [name, r, c] = parts[..] else {
                    return Err(Error::Data(format!("bad block line `{line}`")));
                };
                let dim = |s: &str| s.parse::<usize>().map_err(|_| Error::Data(format!("bad block line `{line}`")));
                shapes.push((name.to_string(), dim(r)?, dim(c)?));
            } else if let Some((k, v)) = line.split_once(" = ") {
                file.header.push((k.to_string(), v.to_string()));
            } else {
                return Err(Error::Data(format!("bad header line `{line}`")));
            }
        }
        let mut data = &bytes[split + marker.len()..];
        for (name, r, c) in shapes {
            let len = r * c * 8;
            if data.len() < len {
                return Err(Error::Data(format!("model block `{name}` is truncated")));
            }
            let vals = data[..len].chunks_exact(8).map(|ch| f64::from_le_bytes(ch.try_into().unwrap())).collect();
            file.blocks.push((name, Array2::from_shape_vec((r, c), vals).unwrap()));
            data = &data[len..];
        }
        if !data.is_empty() {
            return Err(Error::Data("trailing bytes after the last model block".into()));
        }
        Ok(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip() {
        let mut f = ModelFile::default();
        f.set("trainer", "lp");
        f.set("weights", "0.5,0.25");
        f.add_block("a", array![[1.0, -2.5], [f64::MIN_POSITIVE, 1e300]]);
        f.add_block("empty", Array2::zeros((0, 3)));
        let g = ModelFile::from_bytes(&f.to_bytes()).unwrap();
        assert_eq!(f, g);
        assert_eq!(g.parse_list::<f64>("weights").unwrap(), vec![0.5, 0.25]);
        assert!(g.get("missing").is_err());
        let mut bytes = f.to_bytes();
        bytes.pop();
        assert!(ModelFile::from_bytes(&bytes).is_err());
    }
}
