//! `VHM1` layout, little-endian:
//!
//! ```text
//! magic "VHM1"
//! u64 mode (0 sum, 1 mlp_mixer, 2 self_attention)
//! u64 n_tokens, token_dim, token_hidden, channel_hidden, n_heads, out_dim
//! u64 n_hidden, then n_hidden widths
//! f64 input_shift[token_dim], input_scale[token_dim]
//! f64 weights in ParamSet order, each tensor row-major
//! ```

use std::path::Path;

use super::{HeadConfig, MixerConfig, MixerMode, Result, VampError, VampHead};
use crate::nn::ParamSet;

pub const VHM_MAGIC: &[u8; 4] = b"VHM1";

pub fn encode_head(head: &VampHead) -> Vec<u8> {
    let m = &head.config.mixer;
    let mode = match m.mode {
        MixerMode::Sum => 0u64,
        MixerMode::MlpMixer => 1,
        MixerMode::SelfAttention => 2,
    };
    let mut out = Vec::new();
    out.extend_from_slice(VHM_MAGIC);
    let mut ints = vec![
        mode,
        m.n_tokens as u64,
        m.token_dim as u64,
        m.token_hidden as u64,
        m.channel_hidden as u64,
        m.n_heads as u64,
        head.config.out_dim as u64,
        head.config.hidden.len() as u64,
    ];
    ints.extend(head.config.hidden.iter().map(|&h| h as u64));
    for v in ints {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in head.input_shift.iter().chain(&head.input_scale).chain(&head.flatten()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn bad(msg: impl Into<String>) -> VampError {
    VampError::Checkpoint(msg.into())
}

pub fn decode_head(bytes: &[u8]) -> Result<VampHead> {
    let word = |i: usize| -> Result<u64> {
        let at = 4 + 8 * i;
        bytes
            .get(at..at + 8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .ok_or_else(|| bad("truncated header"))
    };
    if bytes.get(..4) != Some(VHM_MAGIC.as_slice()) {
        return Err(bad("bad magic"));
    }
    let size = |v: u64| usize::try_from(v).map_err(|_| bad("dimension overflow"));
    let mode = match word(0)? {
        0 => MixerMode::Sum,
        1 => MixerMode::MlpMixer,
        2 => MixerMode::SelfAttention,
        other => return Err(bad(format!("unknown mixer mode {other}"))),
    };
    let n_hidden = size(word(7)?)?;
    if n_hidden > bytes.len() / 8 {
        return Err(bad("truncated header"));
    }
    let hidden = (0..n_hidden).map(|i| size(word(8 + i)?)).collect::<Result<Vec<_>>>()?;
    let config = HeadConfig {
        mixer: MixerConfig {
            mode,
            n_tokens: size(word(1)?)?,
            token_dim: size(word(2)?)?,
            token_hidden: size(word(3)?)?,
            channel_hidden: size(word(4)?)?,
            n_heads: size(word(5)?)?,
        },
        hidden,
        out_dim: size(word(6)?)?,
    };
    let mut head = VampHead::zeros(config)?;
    let w = head.config.mixer.token_dim;
    let start = 4 + 8 * (8 + n_hidden);
    let n_values = 2 * w + head.n_params();
    if bytes.len() != start + 8 * n_values {
        return Err(bad(format!("expected {} bytes, found {}", start + 8 * n_values, bytes.len())));
    }
    let vals: Vec<f64> = bytes[start..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    head.input_shift = vals[..w].to_vec();
    head.input_scale = vals[w..2 * w].to_vec();
    head.assign_flat(&vals[2 * w..]);
    Ok(head)
}

pub fn write_head(head: &VampHead, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_head(head))?;
    Ok(())
}

pub fn read_head(path: impl AsRef<Path>) -> Result<VampHead> {
    decode_head(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_every_mode() {
        for mode in [MixerMode::Sum, MixerMode::MlpMixer, MixerMode::SelfAttention] {
            let cfg = HeadConfig {
                mixer: MixerConfig {
                    mode,
                    n_tokens: 3,
                    token_dim: 4,
                    token_hidden: 5,
                    channel_hidden: 2,
                    n_heads: 2,
                },
                hidden: vec![6, 3],
                out_dim: 2,
            };
            let mut h = VampHead::init(cfg, 8).unwrap();
            h.input_shift = vec![0.5, -1.0, 2.0, 0.0];
            let bytes = encode_head(&h);
            assert_eq!(decode_head(&bytes).unwrap(), h);
            assert!(decode_head(&bytes[..bytes.len() - 1]).is_err());
        }
    }
}
