//! Checkpoint container: a text header naming each tensor (name, shape,
//! offset in floats) followed by the little-endian f32 payload.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{init_params, ModelConfig, Params};
use crate::error::{Error, Result};

const MAGIC: &str = "ENHANCE-CKPT v1";

pub fn save_checkpoint(path: &Path, params: &Params, cfg: &ModelConfig) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(format!("create {path:?}"), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(format!("write {path:?}"), e);
    writeln!(w, "{MAGIC}").map_err(io_err)?;
    let cfg_json = serde_json::to_string(cfg).map_err(|e| Error::Json {
        context: "serialize model config".into(),
        source: e,
    })?;
    writeln!(w, "config {cfg_json}").map_err(io_err)?;
    for t in &params.layout.tensors {
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        writeln!(w, "tensor {} {} {}", t.name, dims.join(","), t.offset).map_err(io_err)?;
    }
    writeln!(w, "end").map_err(io_err)?;
    for &v in &params.data {
        w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Params, ModelConfig)> {
    let file = File::open(path).map_err(|e| Error::io(format!("open {path:?}"), e))?;
    let mut r = BufReader::new(file);
    let io_err = |e| Error::io(format!("read {path:?}"), e);
    let mut line = String::new();
    r.read_line(&mut line).map_err(io_err)?;
    if line.trim_end() != MAGIC {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: "not a checkpoint file".into(),
        });
    }
    let mut cfg: Option<ModelConfig> = None;
    let mut header: Vec<(String, Vec<usize>, usize)> = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line).map_err(io_err)? == 0 {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: "truncated header".into(),
            });
        }
        let line = line.trim_end();
        if line == "end" {
            break;
        }
        if let Some(json) = line.strip_prefix("config ") {
            cfg = Some(serde_json::from_str(json).map_err(|e| Error::Json {
                context: format!("checkpoint config in {path:?}"),
                source: e,
            })?);
        } else if let Some(rest) = line.strip_prefix("tensor ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::UnsupportedFormat {
                    path: path.to_path_buf(),
                    reason: format!("bad tensor line: {line}"),
                });
            }
            let shape: Vec<usize> = parts[1]
                .split(',')
                .map(|d| d.parse().map_err(|_| ()))
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::UnsupportedFormat {
                    path: path.to_path_buf(),
                    reason: format!("bad shape: {}", parts[1]),
                })?;
            let offset: usize = parts[2].parse().map_err(|_| Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: format!("bad offset: {}", parts[2]),
            })?;
            header.push((parts[0].to_string(), shape, offset));
        }
    }
    let cfg = cfg.ok_or_else(|| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason: "missing config line".into(),
    })?;
    // Rebuild the layout from the config and cross-check the header.
    let mut params = init_params(&cfg)?;
    if header.len() != params.layout.tensors.len() {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: "tensor list does not match config".into(),
        });
    }
    for ((name, shape, offset), spec) in header.iter().zip(&params.layout.tensors) {
        if name != &spec.name || shape != &spec.shape || *offset != spec.offset {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: format!("tensor {name} disagrees with config-derived layout"),
            });
        }
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(io_err)?;
    if payload.len() != params.layout.total * 4 {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: format!(
                "payload holds {} floats, layout needs {}",
                payload.len() / 4,
                params.layout.total
            ),
        });
    }
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        params.data[i] = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
    }
    Ok((params, cfg))
}
