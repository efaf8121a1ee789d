use contactdiff::dantzig::{SetTag, WorkingSets};
use contactdiff::lcp::{FrictionPair, LcpProblem};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn problem(contacts: usize) -> LcpProblem {
    let n = 2 * contacts;
    let pairs = (0..contacts)
        .map(|c| FrictionPair { index: 2 * c + 1, normal: 2 * c, mu: 0.5 })
        .collect();
    LcpProblem::new(DMatrix::identity(n, n), DVector::zeros(n), pairs).unwrap()
}

const TAGS: [SetTag; 6] = [SetTag::Untouched, SetTag::C, SetTag::N, SetTag::F, SetTag::H, SetTag::L];

proptest! {
    #[test]
    fn sets_partition_indices(tags in proptest::collection::vec(0usize..6, 1..12)) {
        let ws = WorkingSets::from_tags(tags.iter().map(|&t| TAGS[t]).collect());
        let mut seen = vec![0; ws.len()];
        for set in [ws.cc(), ws.cn(), ws.ccf(), ws.cnh(), ws.cnl(), ws.untouched()] {
            for i in set {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn friction_tags_only_on_friction_rows(contacts in 1usize..5, tags in proptest::collection::vec(0usize..6, 10)) {
        let p = problem(contacts);
        let tags: Vec<SetTag> = (0..p.dim()).map(|i| TAGS[tags[i]]).collect();
        let ok = tags.iter().enumerate().all(|(i, t)| match t {
            SetTag::Untouched => true,
            SetTag::C | SetTag::N => !p.is_friction(i),
            // friction rows are only classified after their normal
            _ => p.friction_of(i).is_some_and(|(n, _)| tags[n] != SetTag::Untouched),
        });
        prop_assert_eq!(WorkingSets::from_tags(tags).check(&p).is_ok(), ok);
    }
}
