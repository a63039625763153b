use std::fs;

use dndarray::dataio::{self, DnbHeader, FormatError, MAGIC};
use dndarray::{run, Communicator, DType, DndArray, Error, LoopbackConfig};

#[test]
fn save_and_load_across_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let shape = [7, 4, 3];
    let want = DndArray::<f64>::random_uniform(&shape, None, 9, &Communicator::solo())
        .unwrap()
        .into_local();
    for p in 1..=4 {
        for save_split in [None, Some(0), Some(1), Some(2)] {
            let path = dir.path().join(format!("a_{p}_{save_split:?}.dnb"));
            run(LoopbackConfig::new(p), |c| {
                let a = DndArray::<f64>::random_uniform(&shape, save_split, 9, &c).unwrap();
                dataio::save(&a, &path).unwrap();
            });
            let bytes = fs::read(&path).unwrap();
            assert_eq!(&bytes[..4], MAGIC);
            for load_split in [None, Some(0), Some(2)] {
                let got = run(LoopbackConfig::new(p), |c| {
                    let a = dataio::load::<f64>(&path, load_split, &c).unwrap();
                    (a.split(), a.gather().unwrap())
                });
                for (split, g) in got {
                    assert_eq!(split, load_split);
                    assert_eq!(g, want);
                }
            }
        }
    }
}

#[test]
fn header_layout_is_little_endian() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.dnb");
    let a = DndArray::<f32>::zeros(&[2, 3], Some(0), &Communicator::solo()).unwrap();
    dataio::save(&a, &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    let mut expected = b"DNB1".to_vec();
    expected.push(1);
    expected.push(2);
    expected.extend(2u64.to_le_bytes());
    expected.extend(3u64.to_le_bytes());
    assert_eq!(&bytes[..expected.len()], expected.as_slice());
    assert_eq!(bytes.len(), expected.len() + 6 * 4);
    let h = DnbHeader::read(&path).unwrap();
    assert_eq!((h.dtype, h.shape()), (DType::F32, vec![2, 3]));
}

#[test]
fn corrupt_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.dnb");
    fs::write(&path, b"NOPE\x02\x01\x00\x00\x00\x00\x00\x00\x00\x00").unwrap();
    assert!(matches!(DnbHeader::read(&path), Err(FormatError::BadMagic { .. })));

    let good = dir.path().join("good.dnb");
    dataio::save(&DndArray::<f64>::ones(&[3, 2], None, &Communicator::solo()).unwrap(), &good).unwrap();
    let mut bytes = fs::read(&good).unwrap();
    bytes.pop();
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(DnbHeader::read(&path), Err(FormatError::Truncated { .. })));

    let err = dataio::load::<f32>(&good, Some(0), &Communicator::solo()).unwrap_err();
    assert!(matches!(err, Error::Format(FormatError::DtypeMismatch { .. })), "{err}");
}

#[test]
fn csv_conversion_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("x.csv");
    let dst = dir.path().join("x.dnb");
    fs::write(&src, "a,b,c\n1,2,3\n4, 5 ,6.5\n").unwrap();
    let h = dataio::csv_to_dnb(&src, &dst, DType::F64, true).unwrap();
    assert_eq!(h.shape(), vec![2, 3]);
    let got = run(LoopbackConfig::new(2), |c| {
        dataio::load::<f64>(&dst, Some(1), &c).unwrap().gather().unwrap().into_data()
    });
    for g in got {
        assert_eq!(g, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.5]);
    }

    fs::write(&src, "1,2\n3\n").unwrap();
    let err = dataio::parse_csv(&src, false).unwrap_err();
    assert!(matches!(err, FormatError::Ragged { line: 2, .. }), "{err}");
    fs::write(&src, "1,x\n").unwrap();
    assert!(matches!(dataio::parse_csv(&src, false), Err(FormatError::Parse { .. })));
}
