//! Versioned binary model snapshots.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   "TPFLTM1"                    7 bytes
//! C, n, o, N, T                        u32 each
//! s                                    f64
//! states  C * n * 2o                   i8, state - (N + 1), row-major per class
//! weights C * n                        u32, class-major
//! ```
//!
//! The offset encoding puts the include/exclude boundary at zero, so a
//! non-negative byte means "include".

use std::path::Path;

use super::{ClauseBank, TmModel, TmParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 7] = b"TPFLTM1";
pub const HEADER_LEN: usize = 7 + 5 * 4 + 8;

/// Size in bytes of the weight section of a snapshot.
pub fn weight_section_len(params: &TmParams) -> usize {
    params.classes * params.clauses * 4
}

pub fn to_bytes(model: &TmModel) -> Vec<u8> {
    let p = model.params();
    let mut out = Vec::with_capacity(HEADER_LEN + p.classes * p.clauses * (p.literals() + 4));
    out.extend_from_slice(MAGIC);
    for v in [
        p.classes,
        p.clauses,
        p.features,
        usize::from(p.states),
        p.threshold as usize,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&p.sensitivity.to_le_bytes());
    let boundary = i16::from(p.states) + 1;
    for bank in &model.banks {
        out.extend(
            bank.states
                .iter()
                .map(|&s| (i16::from(s) - boundary) as i8 as u8),
        );
    }
    for bank in &model.banks {
        for w in &bank.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<TmModel> {
    if bytes.len() < HEADER_LEN || &bytes[..7] != MAGIC {
        return Err(Error::Snapshot("missing TPFLTM1 header".into()));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[7 + 4 * i..11 + 4 * i].try_into().unwrap());
    let states = u8::try_from(field(3))
        .map_err(|_| Error::Snapshot(format!("N = {} too large", field(3))))?;
    let params = TmParams {
        classes: field(0) as usize,
        clauses: field(1) as usize,
        features: field(2) as usize,
        states,
        threshold: field(4),
        sensitivity: f64::from_le_bytes(bytes[27..35].try_into().unwrap()),
    };
    params
        .validate()
        .map_err(|e| Error::Snapshot(format!("invalid header: {e}")))?;
    let per_bank = params.clauses * params.literals();
    let expected = HEADER_LEN + params.classes * per_bank + weight_section_len(&params);
    if bytes.len() != expected {
        return Err(Error::Snapshot(format!(
            "{} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let boundary = i16::from(params.states) + 1;
    let mut model = TmModel::new(params)?;
    let mut cursor = HEADER_LEN;
    for bank in &mut model.banks {
        for j in 0..params.clauses {
            for k in 0..params.literals() {
                let state = i16::from(bytes[cursor] as i8) + boundary;
                cursor += 1;
                let state = u8::try_from(state)
                    .ok()
                    .filter(|&s| s >= 1 && s <= 2 * params.states)
                    .ok_or_else(|| Error::Snapshot(format!("TA state {state} out of range")))?;
                bank.set_state(j, k, state)?;
            }
        }
    }
    for bank in &mut model.banks {
        for j in 0..params.clauses {
            let w = u32::from_le_bytes(bytes[cursor..cursor + 4].try_into().unwrap());
            cursor += 4;
            if w == 0 {
                return Err(Error::Snapshot("zero clause weight".into()));
            }
            bank.weights[j] = w;
        }
    }
    Ok(model)
}

pub fn save(model: &TmModel, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<TmModel> {
    from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

impl ClauseBank {
    /// Raw state matrix, `clauses x literals`.
    pub fn states(&self) -> &[u8] {
        &self.states
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn header_layout() {
        let m = TmModel::new(TmParams::new(3, 4, 5, 1000, 10.0)).unwrap();
        let b = to_bytes(&m);
        assert_eq!(&b[..7], b"TPFLTM1");
        assert_eq!(&b[7..11], &3u32.to_le_bytes());
        assert_eq!(&b[19..23], &127u32.to_le_bytes());
        assert_eq!(&b[23..27], &1000u32.to_le_bytes());
        assert_eq!(b.len(), HEADER_LEN + 3 * 4 * 10 + 3 * 4 * 4);
        // fresh automata sit at N, one below the boundary
        assert_eq!(b[HEADER_LEN] as i8, -1);
        assert_eq!(&b[b.len() - 4..], &1u32.to_le_bytes());
    }

    #[test]
    fn corrupt_snapshots_are_rejected() {
        let mut m = TmModel::new(TmParams::new(2, 2, 3, 10, 3.0)).unwrap();
        m.randomize(&mut rng_from_seed(13), 0.3, 9);
        let b = to_bytes(&m);
        assert!(from_bytes(&b[..b.len() - 1]).is_err());
        assert!(from_bytes(b"TPFLTM2").is_err());
        let mut zero_weight = b.clone();
        let n = zero_weight.len();
        zero_weight[n - 4..].copy_from_slice(&0u32.to_le_bytes());
        assert!(from_bytes(&zero_weight).is_err());
        let mut bad_state = b.clone();
        bad_state[HEADER_LEN] = 127; // state 255 > 2N
        assert!(from_bytes(&bad_state).is_err());
    }

    proptest::proptest! {
        #[test]
        fn snapshot_roundtrip(seed in proptest::num::u64::ANY, classes in 1usize..4, half in 1usize..4, features in 1usize..70) {
            let mut m = TmModel::new(TmParams::new(classes, 2 * half, features, 50, 4.0)).unwrap();
            m.randomize(&mut rng_from_seed(seed), 0.4, 1000);
            let back = from_bytes(&to_bytes(&m)).unwrap();
            proptest::prop_assert_eq!(back, m);
        }
    }
}
