mod support;

use stp_core::tree::{ExecTree, Link, TreeError};
use stp_core::StepId;

#[test]
fn active_path_matches_oracles_on_500_trees() {
    let mut total = 0;
    for seed in 0..500 {
        total += support::check_random_tree(seed, 200).unwrap();
    }
    assert!(total > 500 * 20, "trees are too small: {total} nodes");
}

#[test]
fn second_branch_is_rejected() {
    let mut t = ExecTree::new();
    let c = t.append(0, Link::Sequential, StepId::new("1"), true).unwrap();
    t.append(c, Link::Branch, StepId::new("1.1"), false).unwrap();
    let err = t.append(c, Link::Branch, StepId::new("2.1"), false).unwrap_err();
    assert!(matches!(err, TreeError::StructureViolation(_)));
    assert!(t.branches_well_formed());
}

#[test]
fn branch_needs_conditional_parent() {
    let mut t = ExecTree::new();
    let a = t.append(0, Link::Sequential, StepId::new("1"), false).unwrap();
    assert!(t.append(a, Link::Branch, StepId::new("1.1"), false).is_err());
}

#[test]
fn iterations_are_numbered() {
    let mut t = ExecTree::new();
    let l = t.append(0, Link::Sequential, StepId::new("1"), false).unwrap();
    let i1 = t.append(l, Link::Iteration, StepId::new("1.1"), false).unwrap();
    let i2 = t.append(l, Link::Iteration, StepId::new("1.1"), false).unwrap();
    assert_eq!(t.node(i1).unwrap().iteration, Some(1));
    assert_eq!(t.node(i2).unwrap().iteration, Some(2));
    assert_eq!(t.active_path(), vec![0, l, i2]);
}
