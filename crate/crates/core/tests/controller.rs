//! Closed-loop behaviour of the admittance controller inside full sessions.

#[path = "support/controller_cases.rs"]
mod cases;

#[test]
fn equilibrium_velocity_matches_the_integral_gain() {
    cases::equilibrium_velocity_matches_the_integral_gain();
}

#[test]
fn clamped_error_halts_the_needle_within_a_second() {
    cases::clamped_error_halts_the_needle_within_a_second();
}

#[test]
fn pi_law_stops_when_feedback_exceeds_handle_force() {
    cases::pi_law_stops_when_feedback_exceeds_handle_force();
}

#[test]
fn randomized_collaborative_ticks_never_retract() {
    cases::randomized_collaborative_ticks_never_retract();
}
