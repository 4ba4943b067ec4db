use fbms::model::model_from_json;
use fbms::{fit, Dataset, DeletionMode, DriverConfig};
use proptest::prelude::*;

fn sample() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (8usize..40).prop_flat_map(|n| {
        (
            proptest::collection::btree_set(0u32..10_000, n),
            proptest::collection::vec(-1.0f64..1.0, n),
        )
            .prop_map(|(xs, ys)| {
                let x: Vec<f64> = xs.into_iter().map(|v| v as f64 / 10_000.0).collect();
                let y = ys[..x.len()].to_vec();
                (x, y)
            })
    })
}

fn config(mode: DeletionMode) -> DriverConfig {
    let mut cfg = DriverConfig::for_dimension(1, 6);
    cfg.deletion_mode = mode;
    cfg.record = true;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trace_matches_model((x, y) in sample()) {
        let ds = Dataset::from_1d(&x, &y).unwrap();
        let res = fit(&ds, &config(DeletionMode::Cumulative)).unwrap();
        let mut total = 0;
        for rec in &res.trace.scales {
            total += rec.n_bwd;
            prop_assert_eq!(rec.c_cum, total);
            prop_assert!(rec.n_bwd <= rec.n_fwd);
            prop_assert!(rec.mse_fwd <= rec.mse_pre * (1.0 + 1e-12) + 1e-15);
            let bound = rec.vartheta * rec.vartheta * rec.eps * rec.eps / rec.n as f64;
            prop_assert!(rec.mse_post - rec.mse_fwd <= bound * (1.0 + 1e-9) + 1e-15);
        }
        prop_assert_eq!(res.model.entries.len(), total);

        let predicted = res.model.predict_normalized(&ds.locations).unwrap();
        let gap = (&predicted - &res.fitted).amax();
        prop_assert!(gap <= 1e-9, "gap {}", gap);
        let r = res.residual(&ds.observations);
        let mse = r.norm_squared() / ds.n() as f64;
        prop_assert!((mse - res.trace.final_mse()).abs() <= 1e-10);
    }

    #[test]
    fn residual_orthogonal_after_deletion((x, y) in sample(), per_column in any::<bool>()) {
        let ds = Dataset::from_1d(&x, &y).unwrap();
        let mode = if per_column { DeletionMode::PerColumn } else { DeletionMode::Cumulative };
        let res = fit(&ds, &config(mode)).unwrap();
        for rec in &res.trace.scales {
            let detail = rec.detail.as_ref().unwrap();
            let basis = &detail.basis;
            if basis.is_empty() {
                continue;
            }
            let r = basis.residual(&detail.target);
            let proj = basis.columns.transpose() * &r;
            let scale = detail.target.norm() * basis.columns.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
            prop_assert!(proj.amax() <= 1e-8 * scale.max(1e-300), "scale {}: {}", rec.s, proj.amax());
            if mode == DeletionMode::PerColumn {
                for d in &detail.deletions {
                    prop_assert!(d.criterion <= d.threshold);
                }
            }
        }
    }

    #[test]
    fn model_json_roundtrip((x, y) in sample()) {
        let ds = Dataset::from_1d(&x, &y).unwrap();
        let res = fit(&ds, &config(DeletionMode::Cumulative)).unwrap();
        let text = serde_json::to_string(&res.model).unwrap();
        let back = model_from_json(&text).unwrap();
        prop_assert_eq!(&back, &res.model);
    }
}
