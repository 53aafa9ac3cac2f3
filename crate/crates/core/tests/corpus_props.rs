use fragforge_core::corpus::{build_corpus, parse_record, serialize, CorpusOptions};
use fragforge_core::molgraph::parse_smiles;
use fragforge_core::toygen::{toy_corpus, ToyGenOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn records_round_trip_and_reparse(seed in any::<u64>()) {
        let mols = toy_corpus(&mut ChaCha8Rng::seed_from_u64(seed), 20, &ToyGenOptions::default());
        let opts = CorpusOptions { pair_merge_rate: 0.2, ..CorpusOptions::default() };
        let (records, stats) = build_corpus(&mols, &opts, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(stats.records, records.len());
        for r in &records {
            let e = parse_record(&r.text).unwrap();
            prop_assert_eq!(e.kind, r.kind);
            prop_assert_eq!(&serialize(&e), r);
            prop_assert!(parse_smiles(r.target()).is_ok());
        }
        let (again, _) = build_corpus(&mols, &opts, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(again, records);
    }
}
