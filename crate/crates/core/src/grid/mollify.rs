use rayon::prelude::*;

use super::spectral::div;
use super::{GridSpec, ScalarField, VectorField};

/// Sampled and renormalized `exp(1 - 1/(1 - r²))` bump of radius `delta`.
#[derive(Debug, Clone)]
pub struct MollifierKernel {
    delta: f64,
    grid: GridSpec,
    taps: Vec<([isize; 3], f64)>,
}

fn bump(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    }
}

impl MollifierKernel {
    pub fn new(delta: f64, grid: &GridSpec) -> Self {
        let h = grid.h();
        let dim = grid.dim();
        let reach = if delta > 0.0 { (delta / h).ceil() as isize } else { 0 };
        let mut taps = Vec::new();
        let range = |a: usize| if a < dim { -reach..=reach } else { 0..=0 };
        for o0 in range(0) {
            for o1 in range(1) {
                for o2 in range(2) {
                    let r = ((o0 * o0 + o1 * o1 + o2 * o2) as f64).sqrt() * h;
                    let w = if delta > 0.0 { bump(r / delta) } else { 0.0 };
                    if w > 0.0 {
                        taps.push(([o0, o1, o2], w));
                    }
                }
            }
        }
        if taps.len() <= 1 {
            if delta > 0.0 {
                log::warn!("mollifier radius {delta} is below the cell width {h}; using the identity");
            }
            taps = vec![([0, 0, 0], 1.0)];
        }
        let total: f64 = taps.iter().map(|t| t.1).sum();
        for t in taps.iter_mut() {
            t.1 /= total;
        }
        Self { delta, grid: *grid, taps }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Stencil offsets (in cells) and their weights.
    pub fn taps(&self) -> &[([isize; 3], f64)] {
        &self.taps
    }

    pub fn is_identity(&self) -> bool {
        self.taps.len() == 1
    }

    /// Discrete Fourier coefficient of the kernel at integer mode `m` along axis 0.
    pub fn mode_response(&self, m: f64) -> f64 {
        let h = self.grid.h();
        self.taps.iter().map(|(o, w)| w * (m * o[0] as f64 * h).cos()).sum()
    }
}

/// Periodic convolution with the kernel stencil.
pub fn mollify(f: &ScalarField, kernel: &MollifierKernel) -> ScalarField {
    if kernel.is_identity() {
        return f.clone();
    }
    let grid = *f.grid();
    let [n0, n1, n2] = [grid.extent(0), grid.extent(1), grid.extent(2)];
    let src = f.data();
    let plane = n1 * n2;
    let mut out = vec![0.0; grid.len()];
    out.par_chunks_mut(plane).enumerate().for_each(|(i0, chunk)| {
        for (o, w) in kernel.taps() {
            let s0 = (i0 as isize + o[0]).rem_euclid(n0 as isize) as usize;
            for i1 in 0..n1 {
                let s1 = (i1 as isize + o[1]).rem_euclid(n1 as isize) as usize;
                let row = (s0 * n1 + s1) * n2;
                let dst = &mut chunk[i1 * n2..(i1 + 1) * n2];
                let shift = o[2].rem_euclid(n2 as isize) as usize;
                for (i2, d) in dst.iter_mut().enumerate() {
                    let s2 = if i2 + shift < n2 { i2 + shift } else { i2 + shift - n2 };
                    *d += w * src[row + s2];
                }
            }
        }
    });
    ScalarField::from_vec(grid, out).expect("same grid")
}

pub fn mollify_vector(v: &VectorField, kernel: &MollifierKernel) -> VectorField {
    v.map_components(|c| mollify(c, kernel))
}

/// Pointwise commutator `div((ρu)_δ) − div(ρ_δ u)`.
pub fn commutator_field(rho: &ScalarField, u: &VectorField, kernel: &MollifierKernel) -> ScalarField {
    let flux = u.map_components(|c| c.zip_map(rho, |a, b| a * b));
    let rho_d = mollify(rho, kernel);
    let smoothed_flux = mollify_vector(&flux, kernel);
    let cross = u.map_components(|c| c.zip_map(&rho_d, |a, b| a * b));
    div(&smoothed_flux).zip_map(&div(&cross), |a, b| a - b)
}

/// Discrete `L¹` norm of the commutator at radius `delta`.
pub fn commutator_residual(rho: &ScalarField, u: &VectorField, delta: f64) -> f64 {
    let kernel = MollifierKernel::new(delta, rho.grid());
    commutator_field(rho, u, &kernel).l1_norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::spectral::grad;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kernel_weights_are_even_nonnegative_unit() {
        let grid = GridSpec::cubic(2, 64).unwrap();
        let k = MollifierKernel::new(0.4, &grid);
        let total: f64 = k.taps().iter().map(|t| t.1).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-15);
        for (o, w) in k.taps() {
            assert!(*w >= 0.0);
            let mirror = k.taps().iter().find(|(p, _)| *p == [-o[0], -o[1], -o[2]]).unwrap();
            assert_eq!(mirror.1, *w);
        }
    }

    #[test]
    fn constant_is_fixed() {
        let grid = GridSpec::cubic(3, 16).unwrap();
        let k = MollifierKernel::new(0.9, &grid);
        let out = mollify(&ScalarField::constant(grid, 2.5), &k);
        for v in out.data() {
            assert_abs_diff_eq!(*v, 2.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn subcell_radius_is_identity() {
        let grid = GridSpec::cubic(1, 16).unwrap();
        let k = MollifierKernel::new(0.5 * grid.h(), &grid);
        assert!(k.is_identity());
        let f = ScalarField::from_fn(grid, |x| x[0].sin());
        assert_eq!(mollify(&f, &k), f);
    }

    #[test]
    fn cosine_mode_scaled_by_kernel_coefficient() {
        let grid = GridSpec::cubic(1, 64).unwrap();
        let k = MollifierKernel::new(0.5, &grid);
        // independent quadrature over the sampled kernel
        let h = grid.h();
        let a: f64 = k.taps().iter().map(|(o, w)| w * (o[0] as f64 * h).cos()).sum();
        assert!(a > 0.9 && a < 1.0);
        let f = ScalarField::from_fn(grid, |x| x[0].cos());
        let out = mollify(&f, &k);
        for i in 0..grid.len() {
            assert_abs_diff_eq!(out[i], a * f[i], epsilon = 1e-13);
        }
    }

    #[test]
    fn commutes_with_gradient() {
        let grid = GridSpec::cubic(2, 32).unwrap();
        let k = MollifierKernel::new(0.6, &grid);
        let f = ScalarField::from_fn(grid, |x| (x[0] + 2.0 * x[1]).sin() + (3.0 * x[0]).cos());
        let a = grad(&mollify(&f, &k));
        let b = mollify_vector(&grad(&f), &k);
        for c in 0..2 {
            for i in 0..grid.len() {
                assert_abs_diff_eq!(a.component(c)[i], b.component(c)[i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn commutator_vanishes_for_constant_inputs() {
        let grid = GridSpec::cubic(2, 32).unwrap();
        let u = VectorField::from_fn(grid, |x| [x[1].sin(), (2.0 * x[0]).cos(), 0.0]);
        let rho = ScalarField::from_fn(grid, |x| 1.0 + 0.3 * x[0].cos() * x[1].sin());
        assert!(commutator_residual(&ScalarField::constant(grid, 1.7), &u, 0.5) < 1e-12);
        let cu = VectorField::from_fn(grid, |_| [0.4, -1.1, 0.0]);
        assert!(commutator_residual(&rho, &cu, 0.5) < 1e-12);
    }
}
