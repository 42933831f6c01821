use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use chrono::{DateTime, TimeZone, Utc};
use proptest::prelude::*;

use webpurge_core::store::{EntryStatus, FaultPoint, PutSummary, Store, StoreError, StoreIndexEntry, INDEX_FILE};

#[derive(Clone, Debug)]
enum Op {
    Put(u8, u8),
    Remove(u8),
    Status(u8, bool, i64),
    Replace(u8, u8),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0u8..5, any::<u8>()).prop_map(|(k, b)| Op::Put(k, b)),
        1 => (0u8..5).prop_map(Op::Remove),
        2 => (0u8..5, any::<bool>(), 0i64..1000).prop_map(|(k, s, d)| Op::Status(k, s, d)),
        1 => (0u8..5, any::<u8>()).prop_map(|(k, b)| Op::Replace(k, b)),
    ]
}

fn hash(k: u8) -> String {
    format!("{k:016x}{}", "ab".repeat(24))
}

fn id(k: u8) -> String {
    format!("{k:016x}")
}

fn blob(k: u8, b: u8) -> Vec<u8> {
    vec![b; 40 + k as usize]
}

type Model = BTreeMap<String, (StoreIndexEntry, Vec<u8>)>;

fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

fn name(k: u8) -> String {
    format!("file{k}.bin")
}

/// The state `op` should lead to; `false` when the store must refuse it.
fn step(model: &mut Model, op: &Op) -> bool {
    match *op {
        Op::Put(k, b) => {
            let active = model.get(&id(k)).is_some_and(|(e, _)| e.status == EntryStatus::Active);
            if !active {
                let entry = StoreIndexEntry {
                    recipe_id: id(k),
                    original_path: format!("/d/{}", name(k)),
                    file_name: name(k),
                    size_bytes: 1000 + k as u64,
                    status: EntryStatus::Active,
                    last_maintained_at: t0(),
                };
                model.insert(id(k), (entry, blob(k, b)));
            }
            true
        }
        Op::Remove(k) => model.remove(&id(k)).is_some(),
        Op::Status(k, stale, days) => match model.get_mut(&id(k)) {
            None => false,
            Some((e, _)) => {
                e.status = if stale { EntryStatus::Stale } else { EntryStatus::Restored };
                e.last_maintained_at = t0() + chrono::Duration::days(days);
                true
            }
        },
        Op::Replace(k, b) => match model.get_mut(&id(k)) {
            None => false,
            Some((_, data)) => {
                *data = blob(k, b);
                true
            }
        },
    }
}

fn apply(store: &mut Store, op: &Op) -> Result<(), StoreError> {
    match *op {
        Op::Put(k, b) => {
            let path = format!("/d/{}", name(k));
            let s = PutSummary {
                hash_full: &hash(k),
                original_path: &path,
                file_name: &name(k),
                size_bytes: 1000 + k as u64,
                last_maintained_at: t0(),
            };
            let got = store.put(&blob(k, b), &s)?;
            assert_eq!(got, id(k));
            Ok(())
        }
        Op::Remove(k) => store.remove(&id(k)),
        Op::Status(k, stale, days) => {
            let status = if stale { EntryStatus::Stale } else { EntryStatus::Restored };
            store.update_status(&id(k), status, t0() + chrono::Duration::days(days))
        }
        Op::Replace(k, b) => store.replace_blob(&id(k), &blob(k, b)),
    }
}

fn snapshot(store: &Store) -> Model {
    store.list().into_iter().map(|e| (e.recipe_id.clone(), (e.clone(), store.get(&e.recipe_id).unwrap()))).collect()
}

/// Only the index, blobs, the lock and the quarantine directory remain.
fn tidy(dir: &Path) -> bool {
    fs::read_dir(dir).unwrap().all(|e| {
        let name = e.unwrap().file_name().to_string_lossy().into_owned();
        name == INDEX_FILE || name == ".lock" || name == "quarantine" || name.ends_with(".wrcp")
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, ..ProptestConfig::default() })]

    #[test]
    fn store_matches_model_across_crashes(
        ops in prop::collection::vec((op(), prop::option::weighted(0.2, 0usize..5)), 1..24)
    ) {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("store");
        let mut store = Store::init(&root).unwrap();
        let mut model = Model::new();
        for (op, fault) in &ops {
            let before = model.clone();
            match fault {
                None => {
                    let legal = step(&mut model, op);
                    prop_assert_eq!(apply(&mut store, op).is_ok(), legal);
                    prop_assert_eq!(snapshot(&store), model.clone());
                }
                Some(f) => {
                    store.inject_fault(Some(FaultPoint::ALL[*f]));
                    let mut after = model.clone();
                    let legal = step(&mut after, op);
                    let crashed = apply(&mut store, op).is_err() && legal;
                    drop(store);
                    store = Store::open(&root).unwrap();
                    let got = snapshot(&store);
                    if !crashed {
                        // the fault point was not on this operation's path
                        prop_assert_eq!(&got, &after);
                    }
                    for key in before.keys().chain(after.keys()).chain(got.keys()) {
                        let (g, b, a) = (got.get(key), before.get(key), after.get(key));
                        let entry_ok = g.map(|x| &x.0) == b.map(|x| &x.0) || g.map(|x| &x.0) == a.map(|x| &x.0);
                        prop_assert!(entry_ok, "{key}: {g:?} is neither {b:?} nor {a:?}");
                        if let Some((_, data)) = g {
                            let blob_ok = b.is_some_and(|x| &x.1 == data) || a.is_some_and(|x| &x.1 == data);
                            prop_assert!(blob_ok, "{key}: unexpected blob");
                        }
                    }
                    model = got;
                }
            }
            prop_assert!(tidy(&root));
        }
        let index = fs::read(root.join(INDEX_FILE)).unwrap();
        drop(store);
        let store = Store::open(&root).unwrap();
        prop_assert!(store.repair_report().is_clean());
        prop_assert_eq!(snapshot(&store), model);
        prop_assert_eq!(fs::read(root.join(INDEX_FILE)).unwrap(), index);
    }
}
