mod support;

use stp_core::lang::{KindTag, StatementKind};
use stp_core::parse_program;

#[test]
fn reference_listings_parse_with_expected_kinds() {
    for (name, src, kinds) in support::CORPUS {
        let p = parse_program(src).unwrap_or_else(|e| panic!("{name}: {e}"));
        let got: Vec<&str> = p.all_statements().iter().map(|s| s.kind.tag().as_str()).collect();
        assert_eq!(&got, kinds, "{name}");
    }
}

#[test]
fn function_definition_kinds_are_exact() {
    let (_, src, _) = support::CORPUS.iter().find(|(n, _, _)| *n == "function_def").unwrap();
    let p = parse_program(src).unwrap();
    let tags: std::collections::BTreeSet<KindTag> = p.all_statements().iter().map(|s| s.kind.tag()).collect();
    let want = [KindTag::FunctionDef, KindTag::FunctionInputs, KindTag::Assignment, KindTag::FunctionReturns];
    assert_eq!(tags, want.into_iter().collect());
    match &p.statements[0].kind {
        StatementKind::FunctionDef { name } => assert_eq!(name, "calculateArea"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn comments_are_not_statements() {
    let (_, src, _) = support::CORPUS.iter().find(|(n, _, _)| *n == "comments").unwrap();
    let p = parse_program(src).unwrap();
    assert!(p.all_statements().iter().all(|s| !s.text.contains('#')));
}

#[test]
fn fuzz_corpus_never_panics() {
    let corpus = support::fuzz_corpus(1000, 7);
    let panics: Vec<usize> = (0..corpus.len()).filter(|i| !support::survives(&corpus[*i])).collect();
    assert!(panics.is_empty(), "panicked on cases {panics:?}");
}

#[test]
fn generated_programs_parse() {
    let mut r = support::rng(3);
    for _ in 0..100 {
        let g = support::random_program(&mut r, 4, 40);
        let src = support::render(&g);
        let p = parse_program(&src).unwrap_or_else(|e| panic!("{e}\n{src}"));
        assert_eq!(p.all_statements().len(), support::count(&g), "{src}");
    }
}
