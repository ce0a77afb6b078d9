use spikeplace::dataset::{write_synthetic, Dataset, MANIFEST_FILE};
use spikeplace::event::build_histogram;
use spikeplace::synth::{Role, RouteConfig};
use spikeplace::Error;

fn small_route() -> RouteConfig {
    RouteConfig {
        n_places: 4,
        ..RouteConfig::default()
    }
}

#[test]
fn synthetic_dataset_survives_a_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_route();
    let manifest = write_synthetic(&cfg, 11, dir.path()).unwrap();
    assert!(manifest.ends_with(MANIFEST_FILE));

    let mem = Dataset::synthetic(&cfg, 11).unwrap();
    let disk = Dataset::load(dir.path()).unwrap();
    assert_eq!(disk.manifest, mem.manifest);
    assert_eq!(disk.traverses.len(), mem.traverses.len());
    for (a, b) in mem.traverses.iter().zip(&disk.traverses) {
        assert!(a.stream.events() == b.stream.events());
        assert_eq!(a.track, b.track);
    }
    for role in [Role::Train, Role::Test] {
        let pa = mem.places(role).unwrap();
        let pb = disk.places(role).unwrap();
        assert_eq!(pa.len(), pb.len());
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!((x.place_id, x.traverse_id, x.window), (y.place_id, y.traverse_id, y.window));
            assert_eq!(
                build_histogram(&x.stream, x.window).unwrap(),
                build_histogram(&y.stream, y.window).unwrap()
            );
        }
    }
}

#[test]
fn every_traverse_yields_every_place() {
    let cfg = small_route();
    let ds = Dataset::synthetic(&cfg, 3).unwrap();
    for t in &ds.traverses {
        assert_eq!(ds.places_of(t).unwrap().len(), cfg.n_places);
    }
}

#[test]
fn manifest_version_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(&small_route(), 1, dir.path()).unwrap();
    let path = dir.path().join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"version\": 1", "\"version\": 9", 1)).unwrap();
    assert!(matches!(
        Dataset::load(dir.path()),
        Err(Error::VersionMismatch { found: 9, .. })
    ));
}

#[test]
fn missing_event_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(&small_route(), 1, dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("traverse00.evt")).unwrap();
    let err = Dataset::load(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.is_data_error());
}
