//! Versioned binary checkpoints.
//!
//! Layout: 8 magic bytes, a `u32` version, a `u32`-prefixed UTF-8 config
//! echo, a `u64` parameter count and that many little-endian `f64`s.

use std::io::{Read, Write};
use std::path::Path;

use hvgnn::vgae::Model;

use crate::config::parse_echo;
use crate::error::CliError;

pub const MAGIC: &[u8; 8] = b"HVGNNCK\0";
pub const VERSION: u32 = 1;

/// Structural facts a checkpoint must share with the model it is loaded into.
const SHAPE_KEYS: [&str; 5] = ["geometry", "dim", "layers", "n_features", "n_classes"];

/// Config echo plus the shape keys that are not part of the run config.
pub fn shape_echo(config_echo: &str, model: &Model) -> String {
    format!(
        "{config_echo}n_features = {}\nn_classes = {}\n",
        model.mean.n_features, model.config.decoder.n_classes
    )
}

pub fn write<W: Write>(mut out: W, echo: &str, params: &[f64]) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(echo.len() as u32).to_le_bytes())?;
    out.write_all(echo.as_bytes())?;
    out.write_all(&(params.len() as u64).to_le_bytes())?;
    for p in params {
        out.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

/// Writes atomically through a temporary sibling file.
pub fn save(path: &Path, echo: &str, params: &[f64]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    let mut buf = Vec::with_capacity(32 + echo.len() + 8 * params.len());
    write(&mut buf, echo, params)?;
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub echo: String,
    pub params: Vec<f64>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Checkpoint(msg.into())
}

pub fn read<R: Read>(mut r: R) -> Result<Checkpoint, CliError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut w4 = [0u8; 4];
    r.read_exact(&mut w4).map_err(|_| bad("truncated header"))?;
    let version = u32::from_le_bytes(w4);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    r.read_exact(&mut w4).map_err(|_| bad("truncated header"))?;
    let mut echo = vec![0u8; u32::from_le_bytes(w4) as usize];
    r.read_exact(&mut echo).map_err(|_| bad("truncated config echo"))?;
    let echo = String::from_utf8(echo).map_err(|_| bad("config echo is not UTF-8"))?;
    let mut w8 = [0u8; 8];
    r.read_exact(&mut w8).map_err(|_| bad("truncated parameter count"))?;
    let n = u64::from_le_bytes(w8) as usize;
    let mut params = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        r.read_exact(&mut w8).map_err(|_| bad("truncated parameters"))?;
        params.push(f64::from_le_bytes(w8));
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(bad("trailing bytes after parameters"));
    }
    Ok(Checkpoint { echo, params })
}

pub fn load(path: &Path) -> Result<Checkpoint, CliError> {
    let file = std::fs::File::open(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    read(std::io::BufReader::new(file))
}

/// Copies checkpoint parameters into `model` after checking that both
/// describe the same architecture.
pub fn restore(ck: &Checkpoint, model: &mut Model, expected_echo: &str) -> Result<(), CliError> {
    let have = parse_echo(&ck.echo);
    let want = parse_echo(expected_echo);
    for key in SHAPE_KEYS {
        if have.get(key) != want.get(key) {
            return Err(bad(format!(
                "{key} is {} in the checkpoint but {} in the configuration",
                have.get(key).map_or("missing", String::as_str),
                want.get(key).map_or("missing", String::as_str)
            )));
        }
    }
    if ck.params.len() != model.n_params() {
        return Err(bad(format!("{} parameters stored, model needs {}", ck.params.len(), model.n_params())));
    }
    model.set_flat(&ck.params)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let params = vec![0.1, -2.5e-300, f64::MAX, 0.0, -0.0];
        let mut buf = Vec::new();
        write(&mut buf, "dim = 4\n", &params).unwrap();
        let ck = read(&buf[..]).unwrap();
        assert_eq!(ck.echo, "dim = 4\n");
        assert!(ck.params.iter().zip(&params).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut buf = Vec::new();
        write(&mut buf, "x = 1\n", &[1.0, 2.0]).unwrap();
        assert!(read(&buf[..buf.len() - 3]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read(&extra[..]).is_err());
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(matches!(read(&wrong[..]), Err(CliError::Checkpoint(_))));
        let mut future = buf;
        future[8] = 9;
        assert!(read(&future[..]).is_err());
    }
}
