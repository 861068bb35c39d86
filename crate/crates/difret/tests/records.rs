use difret::config::PipelineConfig;
use difret::jsonl::{read_records, write_records, DocRecord, PairRecord};
use proptest::prelude::*;

fn doc() -> impl Strategy<Value = DocRecord> {
    ("[a-z0-9]{1,8}", proptest::option::of(any::<String>()), any::<String>())
        .prop_map(|(id, title, body)| DocRecord { id, title, body })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jsonl_round_trips_arbitrary_text(docs in proptest::collection::vec(doc(), 0..12)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_records(&path, &docs).unwrap();
        let back: Vec<(usize, DocRecord)> = read_records(&path).unwrap();
        prop_assert_eq!(back.iter().map(|(_, d)| d.clone()).collect::<Vec<_>>(), docs.clone());
        prop_assert_eq!(back.iter().map(|(n, _)| *n).collect::<Vec<_>>(), (1..=docs.len()).collect::<Vec<_>>());
        let text = std::fs::read_to_string(&path).unwrap();
        prop_assert_eq!(text.lines().count(), docs.len());
    }

    #[test]
    fn config_survives_toml_and_hashes_track_sections(
        seed in any::<u32>(),
        epochs in 1usize..100,
        lr in 1e-5f64..1e-1,
        sizes in proptest::collection::vec(2usize..64, 1..5),
        width in prop_oneof![Just(16usize), Just(32), Just(64)],
    ) {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus.jsonl");
        write_records(&corpus, &[PairRecord { qid: "q".into(), doc_id: "d".into() }]).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.seed = seed as u64;
        cfg.paths.corpus = corpus;
        cfg.paths.workdir = dir.path().join("work");
        cfg.train.epochs = epochs;
        cfg.train.learning_rate = lr;
        cfg.docid.codebook_sizes = sizes;
        cfg.denoiser.width = width;
        let path = dir.path().join("c.toml");
        std::fs::write(&path, cfg.to_toml()).unwrap();
        let back = PipelineConfig::load(&path).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.train_hash().unwrap(), cfg.train_hash().unwrap());

        let mut later = cfg.clone();
        later.train.epochs += 1;
        prop_assert_eq!(later.docid_hash().unwrap(), cfg.docid_hash().unwrap());
        prop_assert_ne!(later.train_hash().unwrap(), cfg.train_hash().unwrap());
        let mut reseeded = cfg.clone();
        reseeded.seed ^= 1;
        prop_assert_ne!(reseeded.ingest_hash().unwrap(), cfg.ingest_hash().unwrap());
        prop_assert_ne!(reseeded.train_hash().unwrap(), cfg.train_hash().unwrap());
    }
}
