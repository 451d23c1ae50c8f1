use iwdg::{BoundaryCondition, ExactSystem, IsingParams, LatticeBox, Site};
use proptest::prelude::*;

fn shifted_box(w: i32, h: i32, dx: i32, dy: i32) -> LatticeBox {
    LatticeBox::new(
        Site::new(vec![dx, dy]),
        Site::new(vec![dx + w - 1, dy + h - 1]),
    )
    .unwrap()
}

fn bc_strategy() -> impl Strategy<Value = BoundaryCondition> {
    prop_oneof![
        Just(BoundaryCondition::Free),
        Just(BoundaryCondition::Plus),
        Just(BoundaryCondition::Minus)
    ]
}

fn flipped(bc: BoundaryCondition) -> BoundaryCondition {
    match bc {
        BoundaryCondition::Plus => BoundaryCondition::Minus,
        BoundaryCondition::Minus => BoundaryCondition::Plus,
        BoundaryCondition::Free => BoundaryCondition::Free,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn translation_leaves_z_unchanged(
        w in 1i32..4, h in 1i32..4, dx in -5i32..5, dy in -5i32..5,
        beta in 0.0f64..1.5, field in -1.0f64..1.0, bc in bc_strategy(),
    ) {
        let p = IsingParams::new(2, beta, field, bc).unwrap();
        let a = ExactSystem::new(shifted_box(w, h, 0, 0), p).unwrap();
        let b = ExactSystem::new(shifted_box(w, h, dx, dy), p).unwrap();
        let (za, zb) = (a.ln_partition_function(), b.ln_partition_function());
        prop_assert!((za - zb).abs() <= 1e-12 * za.abs().max(1.0));
    }

    #[test]
    fn global_flip_symmetry(
        w in 1i32..4, h in 1i32..4,
        beta in 0.0f64..1.5, field in -1.0f64..1.0, bc in bc_strategy(),
    ) {
        let region = shifted_box(w, h, 0, 0);
        let up = ExactSystem::new(region.clone(), IsingParams::new(2, beta, field, bc).unwrap()).unwrap();
        let down = ExactSystem::new(region, IsingParams::new(2, beta, -field, flipped(bc)).unwrap()).unwrap();
        let (zu, zd) = (up.ln_partition_function(), down.ln_partition_function());
        prop_assert!((zu - zd).abs() <= 1e-12 * zu.abs().max(1.0));
        let corner = [Site::new(vec![0, 0])];
        let mu = up.spin_product_expectation(&corner).unwrap();
        let md = down.spin_product_expectation(&corner).unwrap();
        prop_assert!((mu + md).abs() <= 1e-12);
    }

    #[test]
    fn pair_cumulant_is_covariance(
        beta in 0.0f64..1.2, field in -1.0f64..1.0, bc in bc_strategy(),
        a in 0usize..9, b in 0usize..9,
    ) {
        prop_assume!(a != b);
        let sys = ExactSystem::new(shifted_box(3, 3, 0, 0), IsingParams::new(2, beta, field, bc).unwrap()).unwrap();
        let site = |i: usize| Site::new(vec![(i / 3) as i32, (i % 3) as i32]);
        let (sa, sb) = (site(a), site(b));
        let e = |s: &[Site]| sys.spin_product_expectation(s).unwrap();
        let cov = e(&[sa.clone(), sb.clone()]) - e(&[sa.clone()]) * e(&[sb.clone()]);
        let k2 = sys.joint_cumulant(&[sa, sb]).unwrap();
        prop_assert!((cov - k2).abs() <= 1e-12);
    }
}

#[test]
fn one_dimensional_chain_matches_transfer_matrix() {
    // Free chain at zero field: Z = 2 (2 cosh β)^{n-1}.
    let beta = 0.4f64;
    for n in 1..=10usize {
        let sys = ExactSystem::new(
            LatticeBox::with_shape(&[n]).unwrap(),
            IsingParams::new(1, beta, 0.0, BoundaryCondition::Free).unwrap(),
        )
        .unwrap();
        let want = 2.0 * (2.0 * beta.cosh()).powi(n as i32 - 1);
        assert!((sys.partition_function() - want).abs() <= 1e-12 * want);
    }
}
