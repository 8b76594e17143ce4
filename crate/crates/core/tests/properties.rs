mod common;

use common::identities;

const CASES: u32 = 1000;

#[test]
fn sum_is_count_times_avg() {
    identities::sum_is_count_times_avg(CASES).unwrap();
}

#[test]
fn groups_partition_the_count() {
    identities::groups_partition_the_count(CASES).unwrap();
}

#[test]
fn strengthening_never_increases_count() {
    identities::strengthening_never_increases_count(CASES).unwrap();
}

#[test]
fn exact_and_larger_models_agree() {
    identities::exact_and_larger_models_agree(CASES).unwrap();
}

#[test]
fn save_load_preserves_answers() {
    identities::save_load_preserves_answers(CASES).unwrap();
}

#[test]
fn rdc_is_symmetric_and_rank_invariant() {
    identities::rdc_is_symmetric_and_rank_invariant(CASES).unwrap();
}
