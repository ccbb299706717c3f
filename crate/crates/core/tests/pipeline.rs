use rayon::prelude::*;

use jcrc::classify::predict_panel;
use jcrc::curves::{join_panel, CurvePanel, TimeMap};
use jcrc::pipeline::fit_all;
use jcrc::simeval::{metric_ca, simulate_study2, Scenario, SimConfig2};
use jcrc::RunConfig;

fn halves(sim: &SimConfig2) -> (CurvePanel, CurvePanel) {
    let data = simulate_study2(sim).unwrap();
    (
        data.panel.select_ids(&data.truth.train_ids()).unwrap(),
        data.panel.select_ids(&data.truth.test_ids()).unwrap(),
    )
}

/// New ids, reversed row order.
fn renamed(panel: &CurvePanel) -> CurvePanel {
    let rename = |id: &str| format!("new-{}", id.chars().rev().collect::<String>());
    let mut curves = panel.curves.clone();
    let mut scalars = panel.scalars.clone();
    curves.iter_mut().for_each(|c| c.subject_id = rename(&c.subject_id));
    scalars.iter_mut().for_each(|s| s.subject_id = rename(&s.subject_id));
    curves.reverse();
    join_panel(curves, scalars).unwrap()
}

#[test]
fn predictions_do_not_depend_on_subject_ids() {
    let cfg = RunConfig::default().with_k(18, 10);
    let (train, test) = halves(&SimConfig2::new(Scenario::A, 3));
    let fit = fit_all(&train, &cfg, TimeMap::default(), false).unwrap();
    let base = predict_panel(&fit.registration, &fit.classifier, &test, cfg.predict_max_iter).unwrap();
    let other = renamed(&test);
    let moved = predict_panel(&fit.registration, &fit.classifier, &other, cfg.predict_max_iter).unwrap();
    for (c, p) in test.curves.iter().zip(&base) {
        let j = other.curves.iter().position(|o| o.x1 == c.x1).unwrap();
        assert_eq!(moved[j].label, p.label);
        assert_eq!(moved[j].pi_hat.to_bits(), p.pi_hat.to_bits());
    }
}

#[test]
fn null_scenario_is_chance_level() {
    let cfg = RunConfig::default().with_k(18, 10);
    let ca: Vec<f64> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let (train, test) = halves(&SimConfig2::new(Scenario::A, seed).null());
            let fit = fit_all(&train, &cfg, TimeMap::default(), false).unwrap();
            let preds = predict_panel(&fit.registration, &fit.classifier, &test, cfg.predict_max_iter).unwrap();
            let labels: Vec<u8> = preds.iter().map(|p| p.label).collect();
            metric_ca(&test.require_labels().unwrap(), &labels).unwrap()
        })
        .collect();
    let mean = ca.iter().sum::<f64>() / ca.len() as f64;
    assert!((0.35..=0.65).contains(&mean), "mean CA {mean}");
}
