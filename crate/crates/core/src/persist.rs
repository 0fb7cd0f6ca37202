//! Decimal-text checkpoints and the FNV-1a hash behind their integrity
//! checksum.
//!
//! Format: one header line per tensor, `name ndim d1 ... dk`, followed by
//! its values whitespace-separated, printed with 17 significant digits so
//! every f64 round-trips exactly. The file ends with `#checksum <u64>`,
//! the FNV-1a hash over the bytes of every value token in file order.
//! Training checkpoints append the optimizer state under `opt.v.` names and
//! the epoch counter under `meta.epoch`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, NetworkParams};
use crate::tensor::Tensor;
use crate::training::RmspropState;

/// 64-bit FNV-1a.
pub struct Fnv1a {
    state: u64,
}

impl Fnv1a {
    pub fn new() -> Self {
        Fnv1a { state: 0xcbf2_9ce4_8422_2325 }
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.state ^= *b as u64;
            self.state = self.state.wrapping_mul(0x100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.state
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a::new();
    h.update(bytes);
    h.finish()
}

fn format_value(v: f64) -> String {
    // 17 significant digits: exact decimal round-trip for f64
    format!("{:.16e}", v)
}

fn write_entry(out: &mut String, hash: &mut Fnv1a, name: &str, tensor: &Tensor) {
    write!(out, "{} {}", name, tensor.shape().len()).unwrap();
    for d in tensor.shape() {
        write!(out, " {}", d).unwrap();
    }
    out.push('\n');
    for (i, v) in tensor.data().iter().enumerate() {
        let token = format_value(*v);
        hash.update(token.as_bytes());
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&token);
    }
    out.push('\n');
}

fn render(entries: &[(String, Tensor)]) -> String {
    let mut out = String::new();
    let mut hash = Fnv1a::new();
    for (name, tensor) in entries {
        write_entry(&mut out, &mut hash, name, tensor);
    }
    writeln!(out, "#checksum {}", hash.finish()).unwrap();
    out
}

/// Optimizer accumulator and epoch counter stored alongside the parameters.
#[derive(Clone, Debug)]
pub struct ResumeState {
    pub optimizer: RmspropState,
    pub next_epoch: usize,
}

pub fn save_checkpoint(params: &NetworkParams, path: &Path) -> Result<()> {
    std::fs::write(path, render(&params.named_params()))?;
    Ok(())
}

/// Save parameters together with everything a resumed run needs.
pub fn save_training_checkpoint(
    params: &NetworkParams,
    optimizer: &RmspropState,
    next_epoch: usize,
    path: &Path,
) -> Result<()> {
    let mut entries = params.named_params();
    for (name, v) in &optimizer.v {
        entries.push((format!("opt.v.{name}"), v.clone()));
    }
    entries.push(("meta.epoch".to_string(), Tensor::scalar(next_epoch as f64)));
    std::fs::write(path, render(&entries))?;
    Ok(())
}

fn parse_entries(text: &str) -> Result<Vec<(String, Tensor)>> {
    let mut entries = Vec::new();
    let mut hash = Fnv1a::new();
    let mut lines = text.lines().peekable();
    let mut stated_checksum: Option<u64> = None;
    while let Some(line) = lines.next() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("#checksum") {
            let value = rest.trim().parse::<u64>().map_err(|_| {
                Error::Data(format!("malformed checksum line '{line}'"))
            })?;
            stated_checksum = Some(value);
            continue;
        }
        let mut parts = line.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| Error::Data("empty header line in checkpoint".into()))?
            .to_string();
        let ndim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Data(format!("header for '{name}' lacks a rank")))?;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data(format!("header for '{name}' lacks {ndim} dimensions")))?;
            shape.push(d);
        }
        if parts.next().is_some() {
            return Err(Error::Data(format!("trailing tokens on header for '{name}'")));
        }
        let want: usize = shape.iter().product();
        let mut data = Vec::with_capacity(want);
        while data.len() < want {
            let line = lines
                .next()
                .ok_or_else(|| Error::Data(format!("checkpoint truncated inside '{name}'")))?;
            for token in line.split_whitespace() {
                if data.len() == want {
                    return Err(Error::Data(format!("too many values for '{name}'")));
                }
                let v: f64 = token
                    .parse()
                    .map_err(|_| Error::Data(format!("non-numeric value '{token}' in '{name}'")))?;
                hash.update(token.as_bytes());
                data.push(v);
            }
        }
        entries.push((name, Tensor::new(shape, data)?));
    }
    match stated_checksum {
        None => Err(Error::Data("checkpoint has no checksum line".into())),
        Some(stated) if stated != hash.finish() => Err(Error::Data(format!(
            "checksum mismatch: file says {stated}, contents hash to {}",
            hash.finish()
        ))),
        Some(_) => Ok(entries),
    }
}

fn split_extras(
    entries: Vec<(String, Tensor)>,
) -> (Vec<(String, Tensor)>, BTreeMap<String, Tensor>, Option<usize>) {
    let mut model = Vec::new();
    let mut opt = BTreeMap::new();
    let mut epoch = None;
    for (name, tensor) in entries {
        if let Some(rest) = name.strip_prefix("opt.v.") {
            opt.insert(rest.to_string(), tensor);
        } else if name == "meta.epoch" {
            epoch = Some(tensor.data()[0] as usize);
        } else {
            model.push((name, tensor));
        }
    }
    (model, opt, epoch)
}

pub fn load_checkpoint(path: &Path, config: ModelConfig) -> Result<NetworkParams> {
    Ok(load_checkpoint_full(path, config)?.0)
}

/// Load parameters plus, when present, the training resume state.
pub fn load_checkpoint_full(
    path: &Path,
    config: ModelConfig,
) -> Result<(NetworkParams, Option<ResumeState>)> {
    let text = std::fs::read_to_string(path)?;
    let (model, opt, epoch) = split_extras(parse_entries(&text)?);
    let params = NetworkParams::from_named(config, &model)?;
    let resume = match epoch {
        Some(next_epoch) => Some(ResumeState {
            optimizer: RmspropState { v: opt },
            next_epoch,
        }),
        None => None,
    };
    Ok((params, resume))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::model::{network_forward, ForwardCtx};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> (ModelConfig, NetworkParams) {
        let cfg = ModelConfig {
            nodes: 3,
            window: 6,
            head_len: 1,
            channels: 2,
            basis_count: 4,
            attention_dim: 3,
            gru_hidden: 3,
            kernel_size: 3,
            tied_gate: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let params = NetworkParams::init(cfg, &mut rng).unwrap();
        (cfg, params)
    }

    #[test]
    fn fnv1a_known_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn roundtrip_preserves_forward_outputs_bit_exactly() {
        let (cfg, params) = tiny();
        let dir = std::env::temp_dir().join(format!("ckpt_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let loaded = load_checkpoint(&path, cfg).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let data: Vec<f64> = (0..18).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = Tensor::new(vec![3, 6], data).unwrap();
        let run = |p: &NetworkParams| {
            let mut tape = Tape::new();
            let bound = p.bind(&mut tape);
            network_forward(&mut tape, &bound, &x, &ForwardCtx::default())
                .unwrap()
                .forecast
                .detached()
        };
        assert_eq!(run(&params).data(), run(&loaded).data());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn truncation_and_tampering_are_integrity_errors() {
        let (cfg, params) = tiny();
        let dir = std::env::temp_dir().join(format!("ckpt_trunc_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save_checkpoint(&params, &path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let truncated: String = text.lines().take(4).collect::<Vec<_>>().join("\n");
        std::fs::write(&path, truncated).unwrap();
        assert!(matches!(load_checkpoint(&path, cfg), Err(Error::Data(_))));

        let tampered = text.replacen(&text.lines().nth(1).unwrap()[..10], "9.9e0 1.0 ", 1);
        std::fs::write(&path, tampered).unwrap();
        assert!(load_checkpoint(&path, cfg).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn unknown_parameter_names_are_rejected() {
        let (cfg, params) = tiny();
        let mut entries = params.named_params();
        entries.push(("mystery.weight".into(), Tensor::scalar(1.0)));
        let dir = std::env::temp_dir().join(format!("ckpt_unknown_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        std::fs::write(&path, render(&entries)).unwrap();
        match load_checkpoint(&path, cfg) {
            Err(Error::Data(msg)) => assert!(msg.contains("mystery.weight"), "{msg}"),
            other => panic!("expected data error, got {:?}", other.map(|_| ())),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn shape_mismatch_against_config_is_rejected() {
        let (cfg, params) = tiny();
        let dir = std::env::temp_dir().join(format!("ckpt_shape_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save_checkpoint(&params, &path).unwrap();
        let other_cfg = ModelConfig { nodes: 4, ..cfg };
        assert!(matches!(load_checkpoint(&path, other_cfg), Err(Error::Data(_))));
        std::fs::remove_dir_all(&dir).ok();
    }
}
