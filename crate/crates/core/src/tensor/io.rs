//! Named-tensor files: a text index followed by one little-endian `f64` blob.
//!
//! ```text
//! sternshape-tensors 1
//! meta epoch 12
//! tensor shared.conv1_1.w 8x1x3x3 0 72 f64
//! checksum <sha-256 of the blob, hex>
//! end
//! <blob>
//! ```
//!
//! Offsets are in bytes from the start of the blob.

use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};

use super::{Result, Tensor, TensorError};

pub const FORMAT_TAG: &str = "sternshape-tensors 1";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorFile {
    /// Free-form `key value` lines; keys have no whitespace, values no newlines.
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl TensorFile {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Format(msg.into())
}

pub fn write_tensor_file(out: &mut impl Write, file: &TensorFile) -> Result<()> {
    let mut blob = Vec::new();
    let mut header = format!("{FORMAT_TAG}\n");
    for (k, v) in &file.meta {
        if k.is_empty() || k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(bad(format!("unwritable meta entry `{k}`")));
        }
        header.push_str(&format!("meta {k} {v}\n"));
    }
    for (name, t) in &file.tensors {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(bad(format!("unwritable tensor name `{name}`")));
        }
        let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        header.push_str(&format!("tensor {name} {} {} {} f64\n", dims.join("x"), blob.len(), t.numel()));
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    header.push_str(&format!("checksum {}\nend\n", hex(&Sha256::digest(&blob))));
    out.write_all(header.as_bytes())?;
    out.write_all(&blob)?;
    Ok(())
}

pub fn read_tensor_file(input: &mut impl BufRead) -> Result<TensorFile> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    if line.trim_end() != FORMAT_TAG {
        return Err(bad(format!("expected `{FORMAT_TAG}`, found `{}`", line.trim_end())));
    }
    let mut meta = Vec::new();
    let mut index: Vec<(String, Vec<usize>, usize, usize)> = Vec::new();
    let mut checksum = None;
    loop {
        line.clear();
        if input.read_line(&mut line)? == 0 {
            return Err(bad("truncated header"));
        }
        let text = line.trim_end_matches('\n');
        let (kind, rest) = text.split_once(' ').unwrap_or((text, ""));
        match kind {
            "end" => break,
            "meta" => {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.push((k.to_string(), v.to_string()));
            }
            "checksum" => checksum = Some(rest.to_string()),
            "tensor" => {
                let f: Vec<&str> = rest.split(' ').collect();
                if f.len() != 5 || f[4] != "f64" {
                    return Err(bad(format!("bad index line `{text}`")));
                }
                let shape = f[1]
                    .split('x')
                    .map(str::parse::<usize>)
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| bad(format!("bad shape in `{text}`: {e}")))?;
                let offset = f[2].parse().map_err(|e| bad(format!("bad offset in `{text}`: {e}")))?;
                let len = f[3].parse().map_err(|e| bad(format!("bad length in `{text}`: {e}")))?;
                index.push((f[0].to_string(), shape, offset, len));
            }
            _ => return Err(bad(format!("unknown header line `{text}`"))),
        }
    }
    let mut blob = Vec::new();
    input.read_to_end(&mut blob)?;
    let expected = checksum.ok_or_else(|| bad("missing checksum"))?;
    if hex(&Sha256::digest(&blob)) != expected {
        return Err(bad("checksum mismatch (corrupt file)"));
    }
    let mut tensors = Vec::with_capacity(index.len());
    for (name, shape, offset, len) in index {
        let end = offset + 8 * len;
        if end > blob.len() {
            return Err(bad(format!("tensor `{name}` runs past the end of the data")));
        }
        let data = blob[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    Ok(TensorFile { meta, tensors })
}
