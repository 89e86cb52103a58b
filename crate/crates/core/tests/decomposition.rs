mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn shipped_decompositions_satisfy_the_axioms(seed in any::<u64>()) {
        let mut r = rng(seed);
        for (name, sys) in systems(&mut r) {
            check_system(&name, sys.as_ref(), &mut r).map_err(TestCaseError::fail)?;
        }
    }
}

#[test]
fn decompositions_enclose_the_field_over_boxes() {
    let mut r = rng(3);
    for (name, sys) in systems(&mut r) {
        let (n, p, q) = (sys.state_dim(), sys.input_dim(), sys.disturbance_dim());
        for _ in 0..200 {
            let bx = random_box(&mut r, n, 2.0, 0.8);
            let ub = random_box(&mut r, p, 1.0, 0.5);
            let wb = random_box(&mut r, q, 1.0, 0.5);
            for _ in 0..20 {
                let mut x = point_in(&mut r, &bx);
                let u = point_in(&mut r, &ub);
                let w = point_in(&mut r, &wb);
                let i = r.gen_range(0..n);
                x[i] = if r.gen_bool(0.5) {
                    bx.lo()[i]
                } else {
                    bx.hi()[i]
                };
                let f = sys.field(&x, &u, &w)[i];
                if x[i] == bx.lo()[i] {
                    let d = sys
                        .decompose(bx.lo(), bx.hi(), ub.lo(), ub.hi(), wb.lo(), wb.hi())
                        .unwrap()[i];
                    assert!(d <= f + TOL, "{name}: lower face bound {d} above field {f}");
                } else {
                    let d = sys
                        .decompose(bx.hi(), bx.lo(), ub.hi(), ub.lo(), wb.hi(), wb.lo())
                        .unwrap()[i];
                    assert!(d >= f - TOL, "{name}: upper face bound {d} below field {f}");
                }
            }
        }
    }
}
