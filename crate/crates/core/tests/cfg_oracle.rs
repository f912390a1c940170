mod support;

use stp_core::lang::build_cfg;
use stp_core::parse_program;

fn check(seed: u64) {
    let mut r = support::rng(seed);
    let g = support::random_program(&mut r, 4, 40);
    assert!(support::count(&g) <= 40 && support::depth(&g) <= 4);
    let src = support::render(&g);
    let program = parse_program(&src).unwrap_or_else(|e| panic!("seed {seed}: {e}\n{src}"));
    let cfg = build_cfg(&program);
    let oracle = support::CfgOracle::new(&g);
    let paths = oracle.paths();
    assert_eq!(cfg.nodes.len(), paths.len(), "seed {seed}\n{src}");
    for path in paths {
        let id = support::id_of(&path);
        let got: support::EdgeSet =
            cfg.moves(&stp_core::StepId::new(id.clone())).iter().map(|e| (e.kind, e.target.to_string())).collect();
        let want = oracle.successors(&path);
        assert_eq!(got, want, "seed {seed}, step {id}\n{src}\n{}", cfg.render());
    }
}

#[test]
fn successors_match_ast_walk_on_200_programs() {
    for seed in 0..200 {
        check(seed);
    }
}
