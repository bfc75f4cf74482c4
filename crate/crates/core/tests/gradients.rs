use r2reid::gradcheck::{format_table, run_suite, Scope, DEFAULT_SEEDS};

#[test]
fn every_backward_pass_matches_finite_differences() {
    let rows = run_suite(Scope::All, DEFAULT_SEEDS).unwrap();
    let table = format_table(&rows);
    println!("{table}");
    for row in &rows {
        assert!(row.passed(), "{} failed:\n{table}", row.op);
    }
}
