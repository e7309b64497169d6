//! Named-tensor parameter container.
//!
//! Text layout, one item per line:
//!
//! ```text
//! COLDCHAIN-PARAMS 1
//! kind <model kind>
//! meta <key> <value>            (zero or more)
//! tensor <name> <rows> <cols>   (then `rows` lines of `cols` values)
//! end
//! ```
//!
//! Values are written with `{:e}` (shortest round-trip form), so a
//! write/read cycle is bit-exact.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const MAGIC: &str = "COLDCHAIN-PARAMS";
pub const VERSION: u32 = 1;

/// A model whose learnable tensors can be enumerated in a fixed order.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&str, usize, usize, &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, usize, usize, &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, _, v| n += v.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, _, _, v| out.extend_from_slice(v));
        out
    }

    fn assign(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.num_params();
        if flat.len() != expected {
            return Err(Error::shape(expected, flat.len()));
        }
        let mut offset = 0;
        self.visit_mut(&mut |_, _, _, v| {
            v.copy_from_slice(&flat[offset..offset + v.len()]);
            offset += v.len();
        });
        Ok(())
    }

    fn zero(&mut self) {
        self.visit_mut(&mut |_, _, _, v| v.fill(0.0));
    }

    fn tensors(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.visit(&mut |name, rows, cols, v| {
            out.push(NamedTensor {
                name: name.to_string(),
                rows,
                cols,
                values: v.to_vec(),
            })
        });
        out
    }

    /// Loads tensors by name, requiring every name and shape to match.
    fn load_tensors(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let mut err = None;
        let mut seen = 0;
        self.visit_mut(&mut |name, rows, cols, v| {
            if err.is_some() {
                return;
            }
            match tensors.iter().find(|t| t.name == name) {
                Some(t) if t.rows == rows && t.cols == cols => {
                    v.copy_from_slice(&t.values);
                    seen += 1;
                }
                Some(t) => {
                    err = Some(Error::Checkpoint(format!(
                        "tensor `{name}` has shape {}x{}, model expects {rows}x{cols}",
                        t.rows, t.cols
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("missing tensor `{name}`"))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model uses {seen}",
                tensors.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn write_checkpoint<W: Write>(out: &mut W, ckpt: &Checkpoint) -> std::io::Result<()> {
    writeln!(out, "{MAGIC} {VERSION}")?;
    writeln!(out, "kind {}", ckpt.kind)?;
    for (k, v) in &ckpt.meta {
        writeln!(out, "meta {k} {v}")?;
    }
    for t in &ckpt.tensors {
        writeln!(out, "tensor {} {} {}", t.name, t.rows, t.cols)?;
        for r in 0..t.rows {
            let row = &t.values[r * t.cols..(r + 1) * t.cols];
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
    }
    writeln!(out, "end")
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Checkpoint> {
    let mut lines = input.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i + 1, l)),
            Some((i, Err(e))) => Err(Error::Checkpoint(format!("line {}: {e}", i + 1))),
            None => Err(Error::Checkpoint(format!("unexpected end of file, expected {what}"))),
        }
    };

    let (_, header) = next("header")?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(Error::Checkpoint(format!("bad magic in `{header}`")));
    }
    match parts.next().and_then(|v| v.parse::<u32>().ok()) {
        Some(VERSION) => {}
        other => return Err(Error::Checkpoint(format!("unsupported version {other:?}"))),
    }

    let (_, kind_line) = next("kind")?;
    let kind = kind_line
        .strip_prefix("kind ")
        .ok_or_else(|| Error::Checkpoint(format!("expected `kind`, got `{kind_line}`")))?
        .to_string();

    let mut ckpt = Checkpoint {
        kind,
        meta: Vec::new(),
        tensors: Vec::new(),
    };
    loop {
        let (lineno, line) = next("tensor, meta or end")?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("end") => break,
            Some("meta") => {
                let key = parts.next().unwrap_or_default().to_string();
                let value = parts.collect::<Vec<_>>().join(" ");
                ckpt.meta.push((key, value));
            }
            Some("tensor") => {
                let name = parts
                    .next()
                    .ok_or_else(|| Error::Checkpoint(format!("line {lineno}: missing name")))?
                    .to_string();
                let mut dim = || -> Result<usize> {
                    parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::Checkpoint(format!("line {lineno}: bad shape")))
                };
                let rows = dim()?;
                let cols = dim()?;
                let mut values = Vec::with_capacity(rows * cols);
                for _ in 0..rows {
                    let (ln, row) = next("tensor row")?;
                    let before = values.len();
                    for tok in row.split_whitespace() {
                        let v: f64 = tok.parse().map_err(|_| {
                            Error::Checkpoint(format!("line {ln}: bad value `{tok}`"))
                        })?;
                        if !v.is_finite() {
                            return Err(Error::NonFinite(format!("checkpoint line {ln}")));
                        }
                        values.push(v);
                    }
                    if values.len() - before != cols {
                        return Err(Error::Checkpoint(format!(
                            "line {ln}: expected {cols} values, got {}",
                            values.len() - before
                        )));
                    }
                }
                ckpt.tensors.push(NamedTensor {
                    name,
                    rows,
                    cols,
                    values,
                });
            }
            _ => {
                return Err(Error::Checkpoint(format!(
                    "line {lineno}: unexpected `{line}`"
                )))
            }
        }
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_tensor() -> impl Strategy<Value = NamedTensor> {
        (1usize..4, 1usize..5).prop_flat_map(|(rows, cols)| {
            proptest::collection::vec(
                prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()), -1e3f64..1e3],
                rows * cols,
            )
            .prop_map(move |values| NamedTensor {
                name: format!("t{rows}x{cols}"),
                rows,
                cols,
                values,
            })
        })
    }

    proptest! {
        #[test]
        fn write_read_is_bit_exact(tensors in proptest::collection::vec(arb_tensor(), 0..4)) {
            let ckpt = Checkpoint {
                kind: "test".into(),
                meta: vec![("hidden".into(), "10".into())],
                tensors,
            };
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &ckpt).unwrap();
            let back = read_checkpoint(buf.as_slice()).unwrap();
            prop_assert_eq!(back.kind, ckpt.kind);
            prop_assert_eq!(back.meta, ckpt.meta);
            prop_assert_eq!(back.tensors.len(), ckpt.tensors.len());
            for (a, b) in back.tensors.iter().zip(&ckpt.tensors) {
                let ab: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(read_checkpoint("NOPE 1\n".as_bytes()).is_err());
        let truncated = "COLDCHAIN-PARAMS 1\nkind x\ntensor a 2 1\n1e0\n";
        assert!(read_checkpoint(truncated.as_bytes()).is_err());
        let wrong_cols = "COLDCHAIN-PARAMS 1\nkind x\ntensor a 1 2\n1e0\nend\n";
        assert!(read_checkpoint(wrong_cols.as_bytes()).is_err());
    }
}
