//! Named-tensor records inside a flat model file:
//! `tensor <TAB> name <TAB> rows <TAB> cols <TAB> v0 <TAB> v1 ...`.

use std::collections::BTreeMap;

use ndarray::Array2;

use super::Params;
use crate::error::{Error, Result};
use crate::flatfile::{FlatReader, FlatWriter};

pub fn write_tensors<P: Params>(w: &mut FlatWriter, prefix: &str, model: &P) {
    model.visit(prefix, &mut |name, t| {
        let head = [
            name.to_string(),
            t.nrows().to_string(),
            t.ncols().to_string(),
        ];
        w.record(
            "tensor",
            head.into_iter().chain(t.iter().map(f64::to_string)),
        );
    });
}

pub fn read_tensor_map(r: &FlatReader) -> Result<BTreeMap<String, Array2<f64>>> {
    let mut out = BTreeMap::new();
    for rec in r.all("tensor") {
        let name: String = rec.parse_at(0)?;
        let rows: usize = rec.parse_at(1)?;
        let cols: usize = rec.parse_at(2)?;
        let vals: Vec<f64> = rec.parse_all(3)?;
        let t = Array2::from_shape_vec((rows, cols), vals)
            .map_err(|_| Error::parse(rec.line, format!("tensor `{name}` has wrong length")))?;
        out.insert(name, t);
    }
    Ok(out)
}

/// Fills every tensor of `model` from `map`; shapes must match exactly.
pub fn assign_tensors<P: Params>(
    map: &BTreeMap<String, Array2<f64>>,
    prefix: &str,
    model: &mut P,
) -> Result<()> {
    let mut err = None;
    model.visit_mut(prefix, &mut |name, t| {
        if err.is_some() {
            return;
        }
        match map.get(name) {
            Some(src) if src.dim() == t.dim() => t.assign(src),
            Some(src) => {
                err = Some(Error::Model(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    src.dim(),
                    t.dim()
                )))
            }
            None => err = Some(Error::Model(format!("missing tensor `{name}`"))),
        }
    });
    err.map_or(Ok(()), Err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mlp, Params};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact_and_shape_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::new(&[3, 5, 1], &mut rng);
        let mut w = FlatWriter::new("tensors", 1);
        write_tensors(&mut w, "gate", &mlp);
        let r = FlatReader::parse(&w.finish(), "tensors", 1).unwrap();
        let map = read_tensor_map(&r).unwrap();
        let mut back = mlp.zeroed();
        assign_tensors(&map, "gate", &mut back).unwrap();
        assert_eq!(back, mlp);

        let mut wrong = Mlp::new(&[3, 4, 1], &mut rng);
        assert!(assign_tensors(&map, "gate", &mut wrong).is_err());
        assert!(assign_tensors(&map, "other", &mut back).is_err());
    }
}
