mod common;

use common::{gradcheck, model_probes, op_cases, rel_err};

const TOL: f64 = 1e-4;

#[test]
fn every_operation_matches_finite_differences() {
    let cases = op_cases();
    assert!(cases.len() >= 25);
    for case in cases {
        let err = gradcheck(&case.inputs, &case.f).unwrap();
        assert!(err < TOL, "{}: worst relative error {err:e}", case.name);
    }
}

#[test]
fn full_model_parameter_probes() {
    let probes = model_probes(16).unwrap();
    let mut informative = 0;
    for p in &probes {
        let e = rel_err(p.analytic, p.numeric);
        assert!(e < TOL, "{}[{}]: analytic {} numeric {} (rel {e:e})", p.param, p.index, p.analytic, p.numeric);
        if p.numeric.abs() > 1e-8 {
            informative += 1;
        }
    }
    assert!(informative >= 10, "only {informative} probes had a non-negligible gradient");
}
