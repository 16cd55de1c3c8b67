// Copyright 2026 The c2vkd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Central finite differences, the oracle for every analytic gradient.

use super::Tensor;

impl AsRef<[f64]> for Tensor {
    fn as_ref(&self) -> &[f64] {
        self.data()
    }
}

/// `(f(x + eps·e_i) − f(x − eps·e_i)) / 2eps` for every element `i`.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
    let idx: Vec<usize> = (0..x.numel()).collect();
    let g = finite_diff_grad_at(f, x, eps, &idx);
    Tensor::new(g, x.shape()).expect("same shape as x")
}

/// Finite differences restricted to the listed flat indices.
pub fn finite_diff_grad_at(f: impl Fn(&Tensor) -> f64, x: &Tensor, eps: f64, indices: &[usize]) -> Vec<f64> {
    assert!(eps > 0.0, "eps must be positive");
    let base = x.to_vec();
    indices
        .iter()
        .map(|&i| {
            let mut v = base.clone();
            v[i] = base[i] + eps;
            let fp = f(&Tensor::new(v.clone(), x.shape()).expect("shape"));
            v[i] = base[i] - eps;
            let fm = f(&Tensor::new(v, x.shape()).expect("shape"));
            (fp - fm) / (2.0 * eps)
        })
        .collect()
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, zero when both vectors vanish.
pub fn relative_error(a: impl AsRef<[f64]>, b: impl AsRef<[f64]>) -> f64 {
    let (a, b) = (a.as_ref(), b.as_ref());
    assert_eq!(a.len(), b.len(), "relative_error length mismatch");
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_all_ones() {
        let x = Tensor::new(vec![0.1, -3.0, 7.5, 2.0], &[4]).unwrap();
        let g = finite_diff_grad(|t| t.data().iter().sum(), &x, 1e-5);
        assert!(g.data().iter().all(|v| (v - 1.0).abs() < 1e-8));
    }

    #[test]
    fn square_sum() {
        let x = Tensor::new(vec![1.0, 2.0], &[2]).unwrap();
        let g = finite_diff_grad(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-5);
        assert!((g.data()[0] - 2.0).abs() < 1e-6);
        assert!((g.data()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error([0.0, 0.0], [0.0, 0.0]), 0.0);
        assert!((relative_error([1.0, 0.0], [0.0, 0.0]) - 1.0).abs() < 1e-15);
    }
}
