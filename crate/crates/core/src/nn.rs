//! Small dense-network primitives shared by the surrogate model and the
//! policy networks. Everything is plain `Vec<f64>`; the models here are tiny
//! and clarity beats vectorization.

use rand::Rng;

/// One dense layer, row-major weights: `weights[o * inputs + i]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    /// Xavier-uniform weights in `[-b, b]` with `b = sqrt(6 / (fan_in + fan_out))`,
    /// zero biases.
    pub fn xavier<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Dense { inputs, outputs, weights, biases: vec![0.0; outputs] }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense { inputs, outputs, weights: vec![0.0; inputs * outputs], biases: vec![0.0; outputs] }
    }

    /// `y = W x + b`.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        let mut out = self.biases.clone();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = 0.0;
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out[o] += acc;
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

pub fn relu(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub fn tanh(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.tanh();
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - max - log_sum).collect()
}

/// Samples an index from a probability vector using one uniform draw.
pub fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Index of the maximum value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn xavier_bound_matches_fan_in_fan_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = Dense::xavier(6, 32, &mut rng);
        let bound = (6.0 / 38.0_f64).sqrt();
        assert!(layer.weights.iter().all(|w| w.abs() <= bound));
        assert!(layer.biases.iter().all(|b| *b == 0.0));
        // Spread should fill a decent fraction of the interval.
        let max = layer.weights.iter().cloned().fold(0.0_f64, |a, w| a.max(w.abs()));
        assert!(max > 0.5 * bound);
    }

    #[test]
    fn forward_matches_hand_computation() {
        let layer = Dense {
            inputs: 2,
            outputs: 2,
            weights: vec![1.0, 2.0, -1.0, 0.5],
            biases: vec![0.1, -0.2],
        };
        let y = layer.forward(&[3.0, -1.0]);
        assert!((y[0] - (3.0 - 2.0 + 0.1)).abs() < 1e-12);
        assert!((y[1] - (-3.0 - 0.5 - 0.2)).abs() < 1e-12);
    }

    #[test]
    fn softmax_sums_to_one_and_orders() {
        let p = softmax(&[1.0, 2.0, 0.5]);
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(p[1] > p[0] && p[0] > p[2]);
    }

    #[test]
    fn log_softmax_is_log_of_softmax() {
        let logits = [0.3, -1.2, 4.0, 0.0];
        let p = softmax(&logits);
        let lp = log_softmax(&logits);
        for (pi, lpi) in p.iter().zip(&lp) {
            assert!((pi.ln() - lpi).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1e6, 1e6 + 1.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[5.0]), 0);
    }

    #[test]
    fn categorical_sampling_tracks_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let probs = [0.1, 0.6, 0.3];
        let mut counts = [0usize; 3];
        for _ in 0..20_000 {
            counts[sample_categorical(&probs, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(&probs) {
            let freq = *c as f64 / 20_000.0;
            assert!((freq - p).abs() < 0.02, "freq {freq} vs p {p}");
        }
    }
}
