//! Binary operator cache: magic, version, grid, `t`, seed, then the CSR arrays.
//! All numbers are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::{CsrMatrix, GridSpec, UlamGrid, UlamOperator};
use crate::error::SpectrumError;

const MAGIC: &[u8; 8] = b"BTULAMOP";
pub const CACHE_VERSION: u32 = 1;

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    put_u64(out, v.len() as u64);
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], SpectrumError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| SpectrumError::Cache("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, SpectrumError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, SpectrumError> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn len(&mut self) -> Result<usize, SpectrumError> {
        let n = self.u64()? as usize;
        if n > self.buf.len() {
            return Err(SpectrumError::Cache("array length exceeds file size".into()));
        }
        Ok(n)
    }

    fn f64s(&mut self) -> Result<Vec<f64>, SpectrumError> {
        let n = self.len()?;
        (0..n).map(|_| self.f64()).collect()
    }

    fn u64s(&mut self) -> Result<Vec<u64>, SpectrumError> {
        let n = self.len()?;
        (0..n).map(|_| self.u64()).collect()
    }
}

pub fn encode(op: &UlamOperator) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    put_u64(&mut out, op.grid.spec.nr as u64);
    put_u64(&mut out, op.grid.spec.ns as u64);
    put_u64(&mut out, op.grid.blocks.len() as u64);
    for &(start, nr, p) in &op.grid.blocks {
        put_u64(&mut out, start as u64);
        put_u64(&mut out, nr as u64);
        out.extend_from_slice(&p.to_le_bytes());
    }
    put_f64s(&mut out, &op.grid.mu);
    out.extend_from_slice(&op.t.to_le_bytes());
    put_u64(&mut out, op.seed);
    put_u64(&mut out, op.samples_per_cell as u64);
    put_u64(&mut out, op.matrix.row_ptr.len() as u64);
    for &r in &op.matrix.row_ptr {
        put_u64(&mut out, r as u64);
    }
    put_u64(&mut out, op.matrix.cols.len() as u64);
    for &c in &op.matrix.cols {
        put_u64(&mut out, c as u64);
    }
    for v in [&op.matrix.vals, &op.m_w2, &op.m_wf, &op.m_wf2, &op.m_w2f2] {
        put_f64s(&mut out, v);
    }
    put_u64(&mut out, op.counts.len() as u64);
    for &c in &op.counts {
        put_u64(&mut out, c as u64);
    }
    put_u64(&mut out, op.flagged.len() as u64);
    for &c in &op.flagged {
        put_u64(&mut out, c as u64);
    }
    out
}

pub fn decode(buf: &[u8]) -> Result<UlamOperator, SpectrumError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(SpectrumError::Cache("not an operator cache".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(SpectrumError::Cache(format!("version {version}, expected {CACHE_VERSION}")));
    }
    let spec = GridSpec { nr: r.u64()? as usize, ns: r.u64()? as usize };
    let nb = r.len()?;
    let mut blocks = Vec::with_capacity(nb);
    for _ in 0..nb {
        blocks.push((r.u64()? as usize, r.u64()? as usize, r.f64()?));
    }
    let mu = r.f64s()?;
    let t = r.f64()?;
    let seed = r.u64()?;
    let samples_per_cell = r.u64()? as usize;
    let row_ptr: Vec<usize> = r.u64s()?.into_iter().map(|x| x as usize).collect();
    let cols: Vec<u32> = r.u64s()?.into_iter().map(|x| x as u32).collect();
    let vals = r.f64s()?;
    let m_w2 = r.f64s()?;
    let m_wf = r.f64s()?;
    let m_wf2 = r.f64s()?;
    let m_w2f2 = r.f64s()?;
    let counts: Vec<u32> = r.u64s()?.into_iter().map(|x| x as u32).collect();
    let flagged: Vec<usize> = r.u64s()?.into_iter().map(|x| x as usize).collect();
    if r.pos != buf.len() {
        return Err(SpectrumError::Cache("trailing bytes".into()));
    }
    let n = mu.len();
    let nnz = cols.len();
    let consistent = row_ptr.len() == n + 1
        && row_ptr.first() == Some(&0)
        && row_ptr.last() == Some(&nnz)
        && row_ptr.windows(2).all(|w| w[0] <= w[1])
        && cols.iter().all(|&c| (c as usize) < n)
        && [&vals, &m_w2, &m_wf, &m_wf2, &m_w2f2].iter().all(|v| v.len() == nnz)
        && counts.len() == n;
    if !consistent {
        return Err(SpectrumError::Cache("inconsistent array sizes".into()));
    }
    let grid = UlamGrid { spec, blocks, mu: mu.clone() };
    Ok(UlamOperator {
        t,
        seed,
        samples_per_cell,
        grid,
        matrix: CsrMatrix { row_ptr, cols, vals, mu },
        m_w2,
        m_wf,
        m_wf2,
        m_w2f2,
        counts,
        flagged,
    })
}

pub fn write_operator_cache(path: &Path, op: &UlamOperator) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(op))
}

pub fn read_operator_cache(path: &Path) -> Result<UlamOperator, SpectrumError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| SpectrumError::Cache(e.to_string()))?;
    decode(&buf)
}
