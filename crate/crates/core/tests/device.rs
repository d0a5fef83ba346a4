use mtjsnn::mtj::{
    characterize, debounce, extract_lifetimes, simulate_spikes, simulate_telegraph, switching_rate, Debouncer,
    DeviceBundle, Dwell, MtjState, RunLength, TelegraphTrace,
};
use mtjsnn::seed;
use proptest::prelude::*;

const NS: f64 = 1e-9;

fn trace(runs: &[(MtjState, f64)]) -> TelegraphTrace {
    TelegraphTrace {
        runs: runs.iter().map(|&(state, d)| Dwell { state, dwell: d * NS }).collect(),
    }
}

fn dwells(t: &TelegraphTrace) -> Vec<(MtjState, f64)> {
    t.runs
        .iter()
        .map(|r| (r.state, (r.dwell / NS * 1e6).round() / 1e6))
        .collect()
}

#[test]
fn short_p_runs_fold_into_the_burst() {
    use MtjState::*;
    let raw = trace(&[(P, 2.0), (AP, 0.2), (P, 0.1), (AP, 0.3), (P, 0.4), (AP, 0.1), (P, 5.0)]);
    let out = debounce(&raw, 1.0 * NS, 0.0);
    assert_eq!(dwells(&out), vec![(P, 2.0), (AP, 1.1), (P, 5.0)]);
}

#[test]
fn symmetric_minimum_needs_persistence_on_both_sides() {
    use MtjState::*;
    let raw = trace(&[(P, 2.0), (AP, 0.2), (P, 0.1), (AP, 3.0), (P, 0.3), (AP, 0.4), (P, 2.0)]);
    let out = debounce(&raw, 0.5 * NS, 0.5 * NS);
    // short runs on either side are absorbed by the state they interrupt
    assert_eq!(dwells(&out), vec![(P, 2.3), (AP, 3.7), (P, 2.0)]);
}

#[test]
fn zero_minimum_is_identity() {
    use MtjState::*;
    let raw = trace(&[(AP, 0.01), (P, 0.02), (AP, 3.0)]);
    assert_eq!(debounce(&raw, 0.0, 0.0), raw);
}

#[test]
fn streaming_debouncer_matches_batch() {
    use MtjState::*;
    let raw = trace(&[(P, 0.3), (AP, 0.2), (P, 1.5), (AP, 0.7), (P, 0.9), (AP, 0.1), (P, 2.0)]);
    let mut d = Debouncer::new(1.0 * NS, 0.0);
    let mut runs: Vec<Dwell> = raw.runs.iter().filter_map(|&r| d.push(r)).collect();
    runs.extend(d.finish());
    assert_eq!(TelegraphTrace { runs }, debounce(&raw, 1.0 * NS, 0.0));
}

fn arb_trace() -> impl Strategy<Value = TelegraphTrace> {
    (any::<bool>(), prop::collection::vec(0.01f64..5.0, 1..60)).prop_map(|(start_p, ds)| {
        let mut state = if start_p { MtjState::P } else { MtjState::AP };
        let runs = ds
            .into_iter()
            .map(|d| {
                let r = Dwell { state, dwell: d * NS };
                state = state.flip();
                r
            })
            .collect();
        TelegraphTrace { runs }
    })
}

proptest! {
    #[test]
    fn debounce_alternates_and_keeps_duration(t in arb_trace(), mp in 0.0f64..2.0, ma in 0.0f64..2.0) {
        let out = debounce(&t, mp * NS, ma * NS);
        prop_assert!((out.duration() - t.duration()).abs() < 1e-18 * t.runs.len() as f64 + 1e-21);
        prop_assert!(out.runs.windows(2).all(|w| w[0].state != w[1].state));
        prop_assert!(out.runs.len() <= t.runs.len());
        // every run after the first and before the last meets its minimum
        if out.runs.len() > 2 {
            for r in &out.runs[1..out.runs.len() - 1] {
                let min = if r.state == MtjState::P { mp } else { ma } * NS;
                prop_assert!(r.dwell >= min * (1.0 - 1e-12));
            }
        }
    }
}

#[test]
fn one_point_grid_is_one_lifetime_extraction() {
    let b = DeviceBundle::nominal();
    let len = RunLength {
        max_time: 20.0 * NS,
        target_dwells: None,
    };
    let map = characterize(&b, &[0.0], &[0.0], len, 11).unwrap();
    let (v_me, v_i) = b.terminals(0.0, 0.0).unwrap();
    let mut rng = seed::stream(11, "characterize", 0);
    let t = simulate_telegraph(&b, v_me, v_i, len, &mut rng).unwrap();
    assert_eq!(map.estimate(0, 0), extract_lifetimes(&t, true).ok().as_ref());
    assert!(map.point(0, 0).rearmed.is_none());
}

#[test]
fn debounced_bundle_adds_rearmed_view_of_the_same_run() {
    let mut b = DeviceBundle::nominal();
    b.min_p_dwell = 0.5 * NS;
    let len = RunLength {
        max_time: 50.0 * NS,
        target_dwells: None,
    };
    let map = characterize(&b, &[0.0], &[0.0], len, 3).unwrap();
    let p = map.point(0, 0);
    let (raw, re) = (p.estimate.unwrap(), p.rearmed.unwrap());
    assert!(re.n_p <= raw.n_p);
    assert!(re.tau_p >= raw.tau_p);
    let n = p.neuron_estimate().unwrap();
    assert_eq!(
        (n.tau_p, n.n_p, n.tau_ap, n.n_ap),
        (re.tau_p, re.n_p, raw.tau_ap, raw.n_ap)
    );
}

#[test]
fn telegraph_runs_cover_the_simulated_time() {
    let b = DeviceBundle::nominal();
    let len = RunLength {
        max_time: 10.0 * NS,
        target_dwells: None,
    };
    let t = simulate_telegraph(&b, 0.0, 0.0, len, &mut seed::from_seed(2)).unwrap();
    assert!((t.duration() - 10.0 * NS).abs() <= b.dt);
    assert_eq!(t.runs[0].state, MtjState::P);
    let again = simulate_telegraph(&b, 0.0, 0.0, len, &mut seed::from_seed(2)).unwrap();
    assert_eq!(t, again);
}

#[test]
fn spikes_are_ordered_and_reproducible() {
    let mut b = DeviceBundle::nominal();
    b.min_p_dwell = 1.0 * NS;
    let run = simulate_spikes(&b, 0.0, 0.0, 3, 1e-6, &mut seed::from_seed(9)).unwrap();
    assert_eq!(run.spike_times.len(), 3);
    assert_eq!(run.p_dwells.len(), 3);
    assert!(run.spike_times.windows(2).all(|w| w[0] < w[1]));
    // re-armed waits all last the minimum
    assert!(run.p_dwells.iter().all(|&d| d >= 1.0 * NS));
    assert!(run.spike_times[0] == run.p_dwells[0]);
    assert!(run.elapsed >= run.spike_times[2]);
    let again = simulate_spikes(&b, 0.0, 0.0, 3, 1e-6, &mut seed::from_seed(9)).unwrap();
    assert_eq!(run.spike_times, again.spike_times);
}

#[test]
fn spike_run_stops_at_the_limit() {
    let b = DeviceBundle::nominal();
    let run = simulate_spikes(&b, 0.0, 0.0, 1000, 5.0 * NS, &mut seed::from_seed(1)).unwrap();
    assert!(run.spike_times.len() < 1000);
    assert!(run.spike_times.iter().all(|&t| t <= 5.0 * NS));
    assert!(simulate_spikes(&b, 0.0, 0.0, 0, NS, &mut seed::from_seed(1)).is_err());
}

#[test]
fn positive_current_favours_ap_at_zero_field() {
    // electron spin torque from positive V_I pushes toward AP
    let b = DeviceBundle::nominal();
    let len = RunLength {
        max_time: 400.0 * NS,
        target_dwells: None,
    };
    let rate = |vi: f64| {
        let t = simulate_telegraph(&b, 0.0, vi, len, &mut seed::from_seed(4)).unwrap();
        switching_rate(&extract_lifetimes(&t, true).unwrap())
    };
    let (lo, hi) = (rate(-0.1), rate(0.1));
    assert!(lo < hi, "R(-0.1) = {lo}, R(0.1) = {hi}");
}
