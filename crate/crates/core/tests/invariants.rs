use gp_mass::grid::{ComplexField, Grid, Pair, RealField};
use gp_mass::model::{eval_f, ScatteringParams};
use num_complex::Complex64;
use proptest::prelude::*;

fn grid(dim: usize) -> Grid {
    match dim {
        1 => Grid::new(1, 40, 3.0).unwrap(),
        _ => Grid::new(2, 8, 3.0).unwrap(),
    }
}

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-5.0f64..5.0, len)
}

fn complex(g: Grid, re: &[f64], im: &[f64]) -> ComplexField {
    let v = re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect();
    ComplexField::new(g, v).unwrap()
}

fn inner(a: &RealField, b: &RealField) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum::<f64>() * a.grid().cell_volume()
}

proptest! {
    #[test]
    fn diamagnetic_inequality(dim in 1usize..3, seed_re in values(64), seed_im in values(64)) {
        let g = grid(dim);
        let n = g.len();
        let w = complex(g, &seed_re[..n], &seed_im[..n]);
        let modulus = RealField::new(g, w.modulus_sq().iter().map(|x| x.sqrt()).collect()).unwrap();
        prop_assert!(modulus.dirichlet_energy() <= w.dirichlet_energy() * (1.0 + 1e-13) + 1e-300);
    }

    #[test]
    fn laplacian_is_symmetric_and_negative(dim in 1usize..3, a in values(64), b in values(64)) {
        let g = grid(dim);
        let n = g.len();
        let f = RealField::new(g, a[..n].to_vec()).unwrap();
        let h = RealField::new(g, b[..n].to_vec()).unwrap();
        let lf_h = inner(&f.laplacian(), &h);
        let f_lh = inner(&f, &h.laplacian());
        prop_assert!((lf_h - f_lh).abs() <= 1e-12 * (lf_h.abs() + f_lh.abs() + 1.0));
        if f.mass() > 1e-12 {
            prop_assert!(inner(&f.laplacian(), &f) < 0.0);
        }
    }

    #[test]
    fn quartic_is_even_and_sees_only_moduli(
        mu1 in -2.0f64..2.0, mu2 in -2.0f64..2.0, beta in -2.0f64..2.0,
        re1 in values(40), im1 in values(40), re2 in values(40), im2 in values(40),
    ) {
        let g = grid(1);
        let s = ScatteringParams::new(mu1, mu2, beta);
        let u = Pair::new(RealField::new(g, re1.clone()).unwrap(), RealField::new(g, re2.clone()).unwrap()).unwrap();
        let f = eval_f(&u, &s);
        let scale = eval_f(&u, &ScatteringParams::new(mu1.abs(), mu2.abs(), beta.abs())) + 1e-300;
        for flipped in [
            Pair::new(u.first.scaled(-1.0), u.second.clone()).unwrap(),
            Pair::new(u.first.clone(), u.second.scaled(-1.0)).unwrap(),
        ] {
            prop_assert!((eval_f(&flipped, &s) - f).abs() <= 1e-14 * scale);
        }
        let w = Pair::new(complex(g, &re1, &im1), complex(g, &re2, &im2)).unwrap();
        let fw = eval_f(&w, &s);
        let fm = eval_f(&w.modulus(), &s);
        let wscale = eval_f(&w, &ScatteringParams::new(mu1.abs(), mu2.abs(), beta.abs())) + 1e-300;
        prop_assert!((fw - fm).abs() <= 1e-12 * wscale);
    }
}
