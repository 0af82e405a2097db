use proptest::prelude::*;
use tvdbn::metrics::evaluate;
use tvdbn::numerics::Tensor;

fn col(v: &[f64]) -> Tensor {
    Tensor::matrix(1, v.len(), v.to_vec()).unwrap()
}

#[test]
fn hand_computed_fixture() {
    // errors -1 and -2, relative errors 1/2 and 2/4
    let r = evaluate(&[col(&[1.0, 2.0])], &[col(&[2.0, 4.0])], &[col(&[1.0, 1.0])], &[1], 1.0).unwrap();
    let m = r.per_horizon[0].1;
    assert_eq!(m.mae, Some(1.5));
    assert!((m.rmse.unwrap() - 2.5f64.sqrt()).abs() < 1e-12);
    assert!((m.rmse.unwrap() - 1.5811).abs() < 1e-4);
    assert_eq!(m.mape, Some(50.0));
    assert_eq!(m.count, 2);
    assert_eq!(r.overall, m);
}

#[test]
fn masked_cells_do_not_count() {
    let mask = col(&[1.0, 1.0, 0.0]);
    let base = evaluate(&[col(&[1.0, 2.0, 7.0])], &[col(&[2.0, 4.0, 9.0])], &[mask.clone()], &[1], 1.0).unwrap();
    let moved = evaluate(&[col(&[1.0, 2.0, -300.0])], &[col(&[2.0, 4.0, 0.5])], &[mask], &[1], 1.0).unwrap();
    assert_eq!(base, moved);
    assert_eq!(base.overall.mae, Some(1.5));
}

#[test]
fn horizons_score_their_own_step() {
    let pred = Tensor::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0], vec![5.0, 5.0]]).unwrap();
    let target = Tensor::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![1.0, 1.0]]).unwrap();
    let mask = Tensor::full(&[3, 2], 1.0);
    let r = evaluate(&[pred], &[target], &[mask], &[1, 2, 3], 1.0).unwrap();
    let mae: Vec<f64> = r.per_horizon.iter().map(|(_, m)| m.mae.unwrap()).collect();
    assert_eq!(mae, vec![0.0, 2.0, 4.0]);
    assert_eq!(r.overall.mae, Some(2.0));
    assert_eq!(r.overall.count, 6);
}

#[test]
fn empty_sets_are_absent_not_zero() {
    let r = evaluate(&[col(&[1.0])], &[col(&[0.2])], &[col(&[1.0])], &[1], 1.0).unwrap();
    let m = r.per_horizon[0].1;
    assert_eq!(m.mae, Some(0.8));
    assert_eq!(m.mape, None);
    let r = evaluate(&[col(&[1.0])], &[col(&[3.0])], &[col(&[0.0])], &[1], 1.0).unwrap();
    assert_eq!(r.overall.mae, None);
    assert_eq!(r.overall.rmse, None);
    assert_eq!(r.overall.count, 0);
    let mut csv = Vec::new();
    r.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap(), "horizon,mae,rmse,mape,count\n1,,,,0\nall,,,,0\n");
}

#[test]
fn bad_horizon_and_shapes_are_rejected() {
    let p = col(&[1.0]);
    assert!(evaluate(&[p.clone()], &[p.clone()], &[p.clone()], &[2], 1.0).is_err());
    assert!(evaluate(&[p.clone()], &[p.clone()], &[p.clone()], &[0], 1.0).is_err());
    assert!(evaluate(&[p.clone()], &[col(&[1.0, 2.0])], &[p.clone()], &[1], 1.0).is_err());
    assert!(evaluate(&[p.clone()], &[], &[], &[1], 1.0).is_err());
}

fn cells() -> impl Strategy<Value = Vec<(f64, f64, bool)>> {
    prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64, any::<bool>()), 1..40)
}

fn split(c: &[(f64, f64, bool)]) -> (Tensor, Tensor, Tensor) {
    let p = col(&c.iter().map(|x| x.0).collect::<Vec<_>>());
    let t = col(&c.iter().map(|x| x.1).collect::<Vec<_>>());
    let m = col(&c.iter().map(|x| if x.2 { 1.0 } else { 0.0 }).collect::<Vec<_>>());
    (p, t, m)
}

proptest! {
    #[test]
    fn mae_bounded_by_rmse(c in cells()) {
        let (p, t, m) = split(&c);
        let r = evaluate(&[p], &[t], &[m], &[1], 1.0).unwrap();
        if let (Some(mae), Some(rmse)) = (r.overall.mae, r.overall.rmse) {
            prop_assert!(mae >= 0.0);
            prop_assert!(mae <= rmse + 1e-12);
        }
    }

    #[test]
    fn perfect_forecast_scores_zero(c in cells()) {
        let (_, t, m) = split(&c);
        let r = evaluate(&[t.clone()], &[t], &[m], &[1], 1.0).unwrap();
        if r.overall.count > 0 {
            prop_assert_eq!(r.overall.mae, Some(0.0));
            prop_assert_eq!(r.overall.rmse, Some(0.0));
        }
        if r.overall.mape_count > 0 {
            prop_assert_eq!(r.overall.mape, Some(0.0));
        }
    }

    #[test]
    fn cell_order_does_not_matter(c in cells(), rot in 0usize..40) {
        let (p, t, m) = split(&c);
        let mut d = c.clone();
        d.rotate_left(rot % c.len());
        let (p2, t2, m2) = split(&d);
        let a = evaluate(&[p], &[t], &[m], &[1], 1.0).unwrap().overall;
        let b = evaluate(&[p2], &[t2], &[m2], &[1], 1.0).unwrap().overall;
        prop_assert_eq!(a.count, b.count);
        prop_assert_eq!(a.mape_count, b.mape_count);
        for (x, y) in [(a.mae, b.mae), (a.rmse, b.rmse), (a.mape, b.mape)] {
            match (x, y) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0)),
                (x, y) => prop_assert_eq!(x, y),
            }
        }
    }

    #[test]
    fn masked_values_are_ignored(c in cells(), junk in -1e3..1e3f64) {
        let (p, t, m) = split(&c);
        let mut p2 = p.clone();
        for (k, cell) in c.iter().enumerate() {
            if !cell.2 { p2.set(0, k, junk); }
        }
        let a = evaluate(&[p], &[t.clone()], &[m.clone()], &[1], 1.0).unwrap();
        let b = evaluate(&[p2], &[t], &[m], &[1], 1.0).unwrap();
        prop_assert_eq!(a, b);
    }
}
