//! Forward passes checked against plain nested-loop references in f64.

#[path = "support/oracle_cases.rs"]
mod cases;

#[test]
fn conv1d_matches_reference() {
    cases::conv1d_matches_reference();
}

#[test]
fn conv2d_matches_reference() {
    cases::conv2d_matches_reference();
}

#[test]
fn residual_blocks_match_reference() {
    cases::residual_blocks_match_reference();
}

#[test]
fn cgru_cell_matches_reference() {
    cases::cgru_cell_matches_reference();
}

#[test]
fn cgru_model_matches_reference() {
    cases::cgru_model_matches_reference();
}

#[test]
fn resnet_model_matches_reference() {
    cases::resnet_model_matches_reference();
}
