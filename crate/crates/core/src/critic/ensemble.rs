use crate::autodiff::{MlpNet, Tensor};
use crate::error::{Error, Result};
use crate::rng::LabRng;

use super::targets::quantile_fractions;

/// What each critic net emits per state-action pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticKind {
    /// One value, trained by squared error.
    Scalar,
    /// `atoms` quantile locations, trained by quantile Huber loss.
    Quantile { atoms: usize },
}

impl CriticKind {
    pub fn outputs(&self) -> usize {
        match *self {
            CriticKind::Scalar => 1,
            CriticKind::Quantile { atoms } => atoms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Online,
    Target,
}

/// `N` critic nets over `state ++ action` with matching target nets.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticEnsemble {
    pub kind: CriticKind,
    pub online: Vec<MlpNet>,
    pub target: Vec<MlpNet>,
    taus: Vec<f64>,
}

impl CriticEnsemble {
    pub fn new(
        n: usize,
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        kind: CriticKind,
        rng: &mut LabRng,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("critic ensemble needs at least one net"));
        }
        if kind.outputs() == 0 {
            return Err(Error::invalid("quantile critics need at least one atom"));
        }
        let mut widths = vec![state_dim + action_dim];
        widths.extend_from_slice(hidden);
        widths.push(kind.outputs());
        let online = (0..n)
            .map(|_| MlpNet::new(&widths, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind,
            target: online.clone(),
            online,
            taus: quantile_fractions(kind.outputs()),
        })
    }

    pub fn len(&self) -> usize {
        self.online.len()
    }

    pub fn is_empty(&self) -> bool {
        self.online.is_empty()
    }

    pub fn outputs(&self) -> usize {
        self.kind.outputs()
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn net(&self, which: Which, i: usize) -> &MlpNet {
        match which {
            Which::Online => &self.online[i],
            Which::Target => &self.target[i],
        }
    }

    /// Outputs `[B, outputs]` of net `i` at `(states, actions)`.
    pub fn evaluate(&self, which: Which, i: usize, states: &Tensor, actions: &Tensor) -> Result<Tensor> {
        self.net(which, i).forward(&states.concat_cols(actions))
    }

    /// Per-row mean over outputs of net `i`.
    pub fn mean_value(&self, which: Which, i: usize, states: &Tensor, actions: &Tensor) -> Result<Vec<f64>> {
        let z = self.evaluate(which, i, states, actions)?;
        Ok(z.data().chunks(z.cols()).map(|r| r.iter().sum::<f64>() / r.len() as f64).collect())
    }

    pub fn polyak(&mut self, tau: f64) -> Result<()> {
        for (t, o) in self.target.iter_mut().zip(&self.online) {
            t.polyak_from(o, tau)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn targets_start_as_copies_and_shapes_hold() {
        let c = CriticEnsemble::new(2, 3, 1, &[8, 8], CriticKind::Quantile { atoms: 5 }, &mut seeded(0))
            .unwrap();
        assert_eq!(c.online, c.target);
        assert_ne!(c.online[0], c.online[1]);
        let s = Tensor::zeros(&[4, 3]);
        let a = Tensor::zeros(&[4, 1]);
        let z = c.evaluate(Which::Online, 1, &s, &a).unwrap();
        assert_eq!(z.shape(), &[4, 5]);
        assert!(z.all_finite());
        assert_eq!(c.taus().len(), 5);
    }
}
