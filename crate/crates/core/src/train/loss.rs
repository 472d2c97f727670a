use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mae,
    Mse,
}

impl LossKind {
    pub const ALL: [LossKind; 2] = [LossKind::Mae, LossKind::Mse];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mae => "mae",
            LossKind::Mse => "mse",
        }
    }

    /// Loss of plain values, same definition as [`loss`].
    pub fn value(self, pred: &[f64], target: &[f64]) -> Result<f64> {
        if pred.len() != target.len() || pred.is_empty() {
            return Err(Error::shape("loss", &[pred.len()], &[target.len()]));
        }
        let total: f64 = pred
            .iter()
            .zip(target)
            .map(|(p, t)| match self {
                LossKind::Mae => (p - t).abs(),
                LossKind::Mse => (p - t) * (p - t),
            })
            .sum();
        Ok(total / pred.len() as f64)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mae" => Ok(LossKind::Mae),
            "mse" => Ok(LossKind::Mse),
            _ => Err(Error::Config(format!("unknown loss `{s}`"))),
        }
    }
}

/// Mean absolute or squared error over every entry of `pred` and `target`.
pub fn loss(g: &mut Graph, pred: Var, target: Var, kind: LossKind) -> Result<Var> {
    if g.shape(pred) != g.shape(target) {
        return Err(Error::shape("loss", g.shape(pred), g.shape(target)));
    }
    let d = g.sub(pred, target)?;
    let e = match kind {
        LossKind::Mae => g.abs(d)?,
        LossKind::Mse => g.mul(d, d)?,
    };
    g.mean(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, Coords, ParamStore, Tensor};

    fn eval(kind: LossKind, p: Vec<f64>, t: Vec<f64>) -> f64 {
        let mut g = Graph::new();
        let n = p.len();
        let pv = g.constant(Tensor::new(&[1, n], p).unwrap());
        let tv = g.constant(Tensor::new(&[1, n], t).unwrap());
        let l = loss(&mut g, pv, tv, kind).unwrap();
        g.value(l).item()
    }

    #[test]
    fn examples() {
        for kind in LossKind::ALL {
            assert_eq!(eval(kind, vec![1.0, 2.0], vec![1.0, 2.0]), 0.0);
        }
        assert_eq!(eval(LossKind::Mse, vec![2.0], vec![0.0]), 4.0);
        assert_eq!(eval(LossKind::Mae, vec![2.0], vec![0.0]), 2.0);
        assert_eq!(LossKind::Mse.value(&[2.0], &[0.0]).unwrap(), 4.0);
    }

    #[test]
    fn mse_gradient_is_scaled_residual() {
        let p = Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 0.0, 3.0, 1.5]).unwrap();
        let t = Tensor::new(&[2, 3], vec![1.0, 1.0, 1.0, -2.0, 0.5, 1.5]).unwrap();
        let mut store = ParamStore::new();
        let id = store.add("pred", p.clone(), true);
        let mut g = Graph::new();
        let pv = g.param(&store, id);
        let tv = g.constant(t.clone());
        let l = loss(&mut g, pv, tv, LossKind::Mse).unwrap();
        g.backward(l, &mut store).unwrap();
        let grad = store.get(id).grad.clone().unwrap();
        for i in 0..6 {
            let expected = 2.0 * (p.data()[i] - t.data()[i]) / 6.0;
            assert!((grad.data()[i] - expected).abs() < 1e-15);
        }
        let rep = finite_diff_check(&mut store, 1e-5, Coords::All, None, |s, g| {
            let pv = g.param(s, id);
            let tv = g.constant(t.clone());
            loss(g, pv, tv, LossKind::Mse)
        })
        .unwrap();
        assert!(rep.max_rel_error < 1e-6);
    }

    #[test]
    fn mae_subgradient_zero_at_exact_fit() {
        let mut store = ParamStore::new();
        let id = store.add("pred", Tensor::from_vec(vec![1.0, 3.0]), true);
        let mut g = Graph::new();
        let pv = g.param(&store, id);
        let tv = g.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let l = loss(&mut g, pv, tv, LossKind::Mae).unwrap();
        g.backward(l, &mut store).unwrap();
        assert_eq!(store.get(id).grad.as_ref().unwrap().data(), &[0.0, 0.5]);
    }

    #[test]
    fn batch_loss_is_mean_of_sample_losses() {
        let p: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let t: Vec<f64> = (0..12).map(|i| (i as f64 * 0.5).cos()).collect();
        for kind in LossKind::ALL {
            let whole = eval(kind, p.clone(), t.clone());
            let per: f64 = (0..4).map(|s| eval(kind, p[s * 3..s * 3 + 3].to_vec(), t[s * 3..s * 3 + 3].to_vec())).sum::<f64>() / 4.0;
            assert!((whole - per).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 2]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(loss(&mut g, a, b, LossKind::Mse).is_err());
    }
}
