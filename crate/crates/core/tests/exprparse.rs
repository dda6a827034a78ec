use proptest::prelude::*;

use gaussbound::exprparse::parse;

fn atom() -> impl Strategy<Value = String> {
    prop_oneof![
        (0.0f64..100.0).prop_map(|v| format!("{v}")),
        Just("x1".to_string()),
        Just("x2".to_string()),
        Just("t".to_string()),
    ]
}

fn expr() -> impl Strategy<Value = String> {
    atom().prop_recursive(4, 32, 2, |inner| {
        prop_oneof![
            (inner.clone(), prop::sample::select(vec!["+", "-", "*", "/", "^"]), inner.clone())
                .prop_map(|(a, op, b)| format!("({a}) {op} ({b})")),
            (prop::sample::select(vec!["sin", "cos", "exp", "tanh", "abs", "sqrt"]), inner.clone())
                .prop_map(|(f, a)| format!("{f}({a})")),
            inner.prop_map(|a| format!("-{a}")),
        ]
    })
}

proptest! {
    #[test]
    fn valid_strings_parse_and_evaluate_without_panicking(s in expr(), x1 in -3.0f64..3.0, x2 in -3.0f64..3.0, t in 0.0f64..2.0) {
        let e = parse(&s, 2).unwrap();
        // Division by zero or a negative square root is a reported error, not a panic.
        let _ = e.eval(&[x1, x2], t);
    }

    #[test]
    fn arbitrary_input_never_panics_and_errors_are_positioned(s in "[ -~]{0,40}") {
        if let Err(err) = parse(&s, 2) {
            prop_assert!(err.pos <= s.len(), "position {} past end of {:?}", err.pos, s);
        }
    }

    #[test]
    fn evaluation_is_pure(s in expr(), x1 in -3.0f64..3.0, t in 0.0f64..2.0) {
        let e = parse(&s, 2).unwrap();
        let first = e.eval(&[x1, 0.5], t);
        for _ in 0..1000 {
            let again = e.eval(&[x1, 0.5], t);
            match (&first, &again) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a.to_bits(), b.to_bits()),
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                _ => prop_assert!(false, "result changed between evaluations"),
            }
        }
    }
}

#[test]
fn truncated_inputs_report_the_failure_position() {
    let e = parse("2 + sin(x1", 1).unwrap_err();
    assert_eq!(e.pos, 10);
    let e = parse("2 + y", 1).unwrap_err();
    assert_eq!(e.pos, 4);
    let e = parse("x3", 2).unwrap_err();
    assert_eq!(e.pos, 0);
}
