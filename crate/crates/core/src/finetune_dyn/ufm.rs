use crate::error::{check_label, LabError, Result};
use crate::mathcore::{normal_matrix, one_hot, softmax, LabRng, Matrix, ProbVector, Vector};

/// Linear readout over free feature vectors: `z = W·h_c` for context `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct UfmModel {
    /// `V × d`.
    pub readout: Matrix,
    /// `d × C`, one column per context.
    pub features: Matrix,
    pub train_readout: bool,
    pub train_features: bool,
}

/// One cross-entropy term: raise (`weight > 0`) or push down (`weight < 0`)
/// the log-probability of `token` under `context`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TokenUpdate {
    pub context: usize,
    pub token: usize,
    pub weight: f64,
}

impl UfmModel {
    /// Readout-only model, the usual setting for one-step analysis.
    pub fn new(readout: Matrix, features: Matrix) -> Result<Self> {
        if readout.ncols() != features.nrows() {
            return Err(LabError::Shape(format!(
                "readout is {}×{}, features have dimension {}",
                readout.nrows(),
                readout.ncols(),
                features.nrows()
            )));
        }
        if readout.nrows() < 2 || features.ncols() == 0 {
            return Err(LabError::Shape("need at least 2 classes and 1 context".into()));
        }
        Ok(Self { readout, features, train_readout: true, train_features: false })
    }

    /// Gaussian readout with entry scale `readout_scale` and standard-normal features.
    pub fn random(vocab: usize, dim: usize, contexts: usize, readout_scale: f64, rng: &mut LabRng) -> Result<Self> {
        let w = normal_matrix(vocab, dim, rng) * readout_scale;
        let h = normal_matrix(dim, contexts, rng);
        Self::new(w, h)
    }

    pub fn vocab(&self) -> usize {
        self.readout.nrows()
    }

    pub fn dim(&self) -> usize {
        self.readout.ncols()
    }

    pub fn contexts(&self) -> usize {
        self.features.ncols()
    }

    pub fn feature(&self, context: usize) -> Vector {
        self.features.column(context).into_owned()
    }

    fn check_context(&self, context: usize) -> Result<()> {
        if context >= self.contexts() {
            return Err(LabError::Domain(format!("context {context} out of range (< {})", self.contexts())));
        }
        Ok(())
    }

    pub fn logits(&self, context: usize) -> Result<Vector> {
        self.check_context(context)?;
        Ok(&self.readout * self.features.column(context))
    }

    pub fn probs(&self, context: usize) -> Result<ProbVector> {
        softmax(&self.logits(context)?)
    }

    /// `V × C` matrix of next-token distributions, one column per context.
    pub fn all_probs(&self) -> Result<Matrix> {
        let cols = (0..self.contexts()).map(|c| self.probs(c).map(ProbVector::into_vector)).collect::<Result<Vec<_>>>()?;
        Ok(Matrix::from_columns(&cols))
    }

    /// Log-probability of a token sequence given a context per position.
    pub fn sequence_log_prob(&self, contexts: &[usize], tokens: &[usize]) -> Result<f64> {
        if contexts.len() != tokens.len() {
            return Err(LabError::Shape(format!("{} contexts for {} tokens", contexts.len(), tokens.len())));
        }
        let mut total = 0.0;
        for (&c, &y) in contexts.iter().zip(tokens) {
            check_label(y, self.vocab())?;
            total += self.probs(c)?.get(y).ln();
        }
        Ok(total)
    }

    /// Applies `θ ← θ + η Σ weight·∇log π(token | context)`, with every
    /// gradient taken at the current parameters.
    pub fn apply(&mut self, updates: &[TokenUpdate], eta: f64) -> Result<()> {
        let v = self.vocab();
        let mut dw = Matrix::zeros(v, self.dim());
        let mut dh = Matrix::zeros(self.dim(), self.contexts());
        for u in updates {
            check_label(u.token, v)?;
            let h = self.feature(u.context);
            let gap = one_hot(v, u.token) - self.probs(u.context)?.into_vector();
            if self.train_readout {
                dw += &gap * h.transpose() * u.weight;
            }
            if self.train_features {
                let g = self.readout.transpose() * &gap * u.weight;
                let mut col = dh.column_mut(u.context);
                col += g;
            }
        }
        self.readout += dw * eta;
        self.features += dh * eta;
        if self.readout.iter().chain(self.features.iter()).any(|x| !x.is_finite()) {
            return Err(LabError::Divergence("non-finite UFM parameters".into()));
        }
        Ok(())
    }
}
