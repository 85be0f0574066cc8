//! Analytic cost of global versus window multi-head self-attention on an
//! `h × w` token grid with `C` channels and `M × M` windows:
//!
//! ```text
//! global:   4·hw·C² + 2·(hw)²·C
//! windowed: 4·hw·C² + 2·M²·hw·C
//! ```
//!
//! Both count the four C×C projections and the two attention products only.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub h: u64,
    pub w: u64,
    pub c: u64,
    pub m: u64,
    pub msa_flops: u64,
    pub wmsa_flops: u64,
}

fn positive(name: &str, v: u64) -> Result<u64> {
    if v == 0 {
        Err(Error::invalid(format!("{name} must be positive")))
    } else {
        Ok(v)
    }
}

fn overflow() -> Error {
    Error::invalid("FLOP count overflows u64")
}

pub fn flops_msa(h: u64, w: u64, c: u64) -> Result<u64> {
    let hw = positive("h", h)?
        .checked_mul(positive("w", w)?)
        .ok_or_else(overflow)?;
    let c = positive("C", c)?;
    let proj = 4u64
        .checked_mul(hw)
        .and_then(|v| v.checked_mul(c))
        .and_then(|v| v.checked_mul(c));
    let attn = hw
        .checked_mul(hw)
        .and_then(|v| v.checked_mul(2))
        .and_then(|v| v.checked_mul(c));
    proj.zip(attn)
        .and_then(|(p, a)| p.checked_add(a))
        .ok_or_else(overflow)
}

/// Requires `M² ≤ hw`.
pub fn flops_wmsa(h: u64, w: u64, c: u64, m: u64) -> Result<u64> {
    let hw = positive("h", h)?
        .checked_mul(positive("w", w)?)
        .ok_or_else(overflow)?;
    let c = positive("C", c)?;
    let m2 = positive("M", m)?.checked_mul(m).ok_or_else(overflow)?;
    if m2 > hw {
        return Err(Error::invalid(format!(
            "window area M² = {m2} exceeds the token count hw = {hw}"
        )));
    }
    let proj = 4u64
        .checked_mul(hw)
        .and_then(|v| v.checked_mul(c))
        .and_then(|v| v.checked_mul(c));
    let attn = m2
        .checked_mul(2)
        .and_then(|v| v.checked_mul(hw))
        .and_then(|v| v.checked_mul(c));
    proj.zip(attn)
        .and_then(|(p, a)| p.checked_add(a))
        .ok_or_else(overflow)
}

pub fn flops_report(h: u64, w: u64, c: u64, m: u64) -> Result<FlopsReport> {
    Ok(FlopsReport {
        h,
        w,
        c,
        m,
        msa_flops: flops_msa(h, w, c)?,
        wmsa_flops: flops_wmsa(h, w, c, m)?,
    })
}
