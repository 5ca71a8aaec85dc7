mod common;

use proptest::prelude::*;
use webenv_core::obs::prune_and_flatten;
use webenv_core::quiescence::{read_trace, write_trace};
use webenv_core::{first_idle_instant, parse_action, QuiescenceVerdict};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn quiescence_matches_the_grid_scan(case in common::trace_case()) {
        let fast = first_idle_instant(&case.events, case.action as f64, &case.params());
        prop_assert_eq!(fast, common::grid_first_idle(&case));
    }

    #[test]
    fn flatten_reaches_a_fixpoint(tree in common::tree()) {
        let once = prune_and_flatten(tree.clone());
        let twice = prune_and_flatten(once.clone());
        if let Err(e) = common::flatten_holds(&tree, &once, &twice) {
            return Err(TestCaseError::fail(e));
        }
    }

    #[test]
    fn actions_round_trip(a in common::action()) {
        prop_assert_eq!(parse_action(&a.to_json()), Ok(a.clone()));
        let with_schema = {
            let mut v = a.to_value();
            v["schema"] = "action/1".into();
            v.to_string()
        };
        prop_assert_eq!(parse_action(&with_schema), Ok(a));
    }

    #[test]
    fn traces_round_trip(case in common::trace_case()) {
        prop_assert_eq!(read_trace(&write_trace(&case.events)).unwrap(), case.events);
    }

    #[test]
    fn idle_never_precedes_the_window(case in common::trace_case()) {
        if let QuiescenceVerdict::Idle { at } = first_idle_instant(&case.events, case.action as f64, &case.params()) {
            prop_assert!(at >= (case.action + case.window) as f64);
            prop_assert!(at <= (case.action + case.timeout) as f64);
        }
    }
}
