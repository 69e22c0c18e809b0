use lspd_core::data::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_graph_dataset, load_point_clouds,
    convert_ppi_dir, parse_graph_dataset, parse_npy, save_checkpoint, save_graph_dataset,
    save_point_clouds, synth_multilabel_graphs, synth_shapes, SynthGraphConfig, SynthShapeConfig,
    CHECKPOINT_VERSION,
};
use lspd_core::{
    knn_graph, DgcnnSpec, Error, GatSpec, Model, ModelSpec, Neighborhoods, Split, Task, Tensor,
};
use proptest::prelude::*;
use std::path::Path;

const MINIMAL: &str = r#"{
  "feature_dim": 2, "label_dim": 3, "task": "multilabel",
  "graphs": [{
    "split": "train", "num_nodes": 2, "edges": [[0, 1]],
    "features": [[1.0, 2.0], [3.0, 4.0]],
    "labels": [[1, 0, 1], [0, 0, 1]]
  }]
}"#;

#[test]
fn minimal_graph_file_yields_both_edge_directions() {
    let ds = parse_graph_dataset(MINIMAL).unwrap();
    assert_eq!(ds.task, Task::Multilabel);
    let g = &ds.graphs[0];
    assert_eq!(g.graph.senders(0), &[1]);
    assert_eq!(g.graph.senders(1), &[0]);
    assert_eq!(g.features.row(1), &[3.0, 4.0]);
    assert_eq!(g.labels.row(0), &[1.0, 0.0, 1.0]);
}

#[test]
fn graph_file_errors_name_the_problem() {
    let wide = MINIMAL.replace("[3.0, 4.0]", "[3.0, 4.0, 5.0]");
    let msg = parse_graph_dataset(&wide).unwrap_err().to_string();
    assert!(msg.contains("width 3") && msg.contains("declared width is 2"), "{msg}");

    let typo = MINIMAL.replace("\"split\": \"train\"", "\"split\": 7");
    match parse_graph_dataset(&typo).unwrap_err() {
        Error::Parse { location, .. } => assert_eq!(location, "graphs[0].split"),
        other => panic!("{other}"),
    }

    let far = MINIMAL.replace("[[0, 1]]", "[[0, 2]]");
    let msg = parse_graph_dataset(&far).unwrap_err().to_string();
    assert!(msg.contains("graphs[0].edges[0]"), "{msg}");

    let half = MINIMAL.replace("[0, 0, 1]", "[0, 0.5, 1]");
    assert!(matches!(parse_graph_dataset(&half), Err(Error::Validation(_))));

    let extra = MINIMAL.replace("\"task\"", "\"colour\": 1, \"task\"");
    assert!(matches!(parse_graph_dataset(&extra), Err(Error::Parse { .. })));

    let huge = MINIMAL.replace("1.0, 2.0", "1e50, 2.0");
    assert!(parse_graph_dataset(&huge).is_err());
}

#[test]
fn graph_datasets_round_trip() {
    let ds = synth_multilabel_graphs(&SynthGraphConfig {
        n_graphs: 4,
        nodes_per_graph: 25,
        ..SynthGraphConfig::default()
    })
    .unwrap();
    let back = parse_graph_dataset(&ds.to_json()).unwrap();
    assert_eq!(back, ds);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    save_graph_dataset(&ds, &path).unwrap();
    assert_eq!(load_graph_dataset(&path).unwrap(), ds);

    let missing = load_graph_dataset(dir.path().join("nope.json")).unwrap_err();
    assert!(matches!(missing, Error::Io { .. }), "{missing:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn mutated_graph_files_never_panic(pos in 0usize..MINIMAL.len(), byte in any::<u8>(), cut in any::<bool>()) {
        let mut bytes = MINIMAL.as_bytes().to_vec();
        if cut {
            bytes.truncate(pos);
        } else {
            bytes[pos] = byte;
        }
        let text = String::from_utf8_lossy(&bytes);
        if let Ok(ds) = parse_graph_dataset(&text) {
            prop_assert!(ds.validate().is_ok());
        }
    }
}

#[test]
fn standardize_uses_train_statistics() {
    let mut ds = synth_multilabel_graphs(&SynthGraphConfig {
        n_graphs: 5,
        nodes_per_graph: 40,
        ..SynthGraphConfig::default()
    })
    .unwrap();
    ds.standardize().unwrap();
    let f = ds.feature_dim;
    let train: Vec<&Tensor> = ds.split(Split::Train).map(|g| &g.features).collect();
    let rows: usize = train.iter().map(|t| t.rows()).sum();
    for c in 0..f {
        let vals: Vec<f64> = train
            .iter()
            .flat_map(|t| (0..t.rows()).map(move |i| t.at(i, c) as f64))
            .collect();
        let mean = vals.iter().sum::<f64>() / rows as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rows as f64;
        assert!(mean.abs() < 1e-4 && (var - 1.0).abs() < 1e-3, "feature {c}");
    }
}

fn write_cloud(path: &Path, rows: &[[f32; 3]]) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    let text: String = rows
        .iter()
        .map(|p| format!("{} {} {}\n", p[0], p[1], p[2]))
        .collect();
    std::fs::write(path, text).unwrap();
}

#[test]
fn point_cloud_directory_examples() {
    let dir = tempfile::tempdir().unwrap();
    let rows = [[0.0, 0.5, 1.0], [1.0, 1.0, -1.0]];
    write_cloud(&dir.path().join("train/mug/a.txt"), &rows);
    let ds = load_point_clouds(dir.path()).unwrap();
    assert_eq!(ds.classes, vec!["mug"]);
    assert_eq!(ds.clouds.len(), 1);
    assert_eq!(ds.clouds[0].split, Split::Train);
    assert_eq!(ds.clouds[0].points.row(1), &[1.0, 1.0, -1.0]);

    std::fs::write(dir.path().join("train/mug/b.txt"), "1 2\n3 4\n").unwrap();
    let msg = load_point_clouds(dir.path()).unwrap_err().to_string();
    assert!(msg.contains("b.txt:1") && msg.contains("expected 3 coordinates"), "{msg}");

    let flat = tempfile::tempdir().unwrap();
    for i in 0..10 {
        write_cloud(&flat.path().join(format!("cup/{i:02}.txt")), &rows);
    }
    let ds = load_point_clouds(flat.path()).unwrap();
    let splits: Vec<Split> = ds.clouds.iter().map(|c| c.split).collect();
    assert_eq!(splits[8], Split::Val);
    assert_eq!(splits[9], Split::Test);
    assert!(splits[..8].iter().all(|&s| s == Split::Train));

    assert!(load_point_clouds(tempfile::tempdir().unwrap().path()).is_err());
}

#[test]
fn point_clouds_round_trip() {
    let ds = synth_shapes(&SynthShapeConfig {
        seed: 5,
        per_class: 5,
        points_per_cloud: 16,
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_point_clouds(&ds, dir.path()).unwrap();
    let back = load_point_clouds(dir.path()).unwrap();
    assert_eq!(back.classes.len(), 4);
    let key = |c: &lspd_core::data::PointCloud, classes: &[String]| {
        (
            c.split,
            classes[c.label].clone(),
            c.points.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        )
    };
    let mut a: Vec<_> = ds.clouds.iter().map(|c| key(c, &ds.classes)).collect();
    let mut b: Vec<_> = back.clouds.iter().map(|c| key(c, &back.classes)).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
}

/// Plug-in mutual information (nats) of two binary variables.
fn binary_mi(pairs: &[(bool, bool)]) -> f64 {
    let n = pairs.len() as f64;
    let mut joint = [[0f64; 2]; 2];
    for &(a, b) in pairs {
        joint[a as usize][b as usize] += 1.0 / n;
    }
    let pa = [joint[0][0] + joint[0][1], joint[1][0] + joint[1][1]];
    let pb = [joint[0][0] + joint[1][0], joint[0][1] + joint[1][1]];
    let mut mi = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            if joint[a][b] > 0.0 {
                mi += joint[a][b] * (joint[a][b] / (pa[a] * pb[b])).ln();
            }
        }
    }
    mi
}

#[test]
fn synthetic_graphs_are_deterministic_and_informative() {
    let cfg = SynthGraphConfig {
        n_graphs: 6,
        nodes_per_graph: 80,
        ..SynthGraphConfig::default()
    };
    let a = synth_multilabel_graphs(&cfg).unwrap();
    assert_eq!(a, synth_multilabel_graphs(&cfg).unwrap());
    assert_ne!(
        a,
        synth_multilabel_graphs(&SynthGraphConfig { seed: 1, ..cfg.clone() }).unwrap()
    );
    assert!(a.validate().is_ok());
    for s in Split::ALL {
        assert!(a.split(s).next().is_some(), "{s}");
    }

    let mut best = 0f64;
    for f in 0..a.feature_dim {
        for l in 0..a.label_dim {
            let pairs: Vec<(bool, bool)> = a
                .graphs
                .iter()
                .flat_map(|g| (0..g.num_nodes()).map(move |i| (g.features.at(i, f) > 0.0, g.labels.at(i, l) == 1.0)))
                .collect();
            best = best.max(binary_mi(&pairs));
        }
    }
    assert!(best > 0.05, "{best}");
}

#[test]
fn synthetic_shapes_have_the_promised_geometry() {
    let ds = synth_shapes(&SynthShapeConfig {
        seed: 2,
        per_class: 10,
        points_per_cloud: 64,
    })
    .unwrap();
    assert_eq!(ds.clouds.len(), 40);
    assert_eq!(
        ds,
        synth_shapes(&SynthShapeConfig {
            seed: 2,
            per_class: 10,
            points_per_cloud: 64,
        })
        .unwrap()
    );
    let sigma = 0.01;
    for c in ds.clouds.iter().filter(|c| c.label == 0) {
        for i in 0..64 {
            let r = c.points.row(i).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((1.0 - 3.0 * sigma..=1.0 + 3.0 * sigma).contains(&r), "{r}");
        }
    }
    let mut connected = 0;
    for c in &ds.clouds {
        let g = knn_graph(&c.points, 10).unwrap();
        if g.weak_components() == 1 {
            connected += 1;
        }
    }
    assert!(connected as f64 >= 0.99 * ds.clouds.len() as f64, "{connected}");
    for s in Split::ALL {
        assert!(ds.split(s).count() > 0);
    }
}

fn small_model() -> (ModelSpec, lspd_core::ParamSet) {
    let spec = ModelSpec::Gat(GatSpec::ppi_student().scaled(6, 3, 8));
    let params = Model::new(spec.clone()).unwrap().init(9);
    (spec, params)
}

#[test]
fn checkpoints_round_trip_bitwise() {
    let (spec, params) = small_model();
    let bytes = encode_checkpoint(&spec, &params).unwrap();
    let (s2, p2) = decode_checkpoint(&bytes).unwrap();
    assert_eq!(s2, spec);
    for ((n1, t1), (n2, t2)) in params.entries().iter().zip(p2.entries()) {
        assert_eq!(n1, n2);
        assert_eq!(t1.shape(), t2.shape());
        assert!(t1.data().iter().zip(t2.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &spec, &params).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), (spec, params));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let (spec, params) = small_model();
    let bytes = encode_checkpoint(&spec, &params).unwrap();
    for cut in [0, 3, 7, 20, bytes.len() / 2, bytes.len() - 1] {
        let err = decode_checkpoint(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "cut {cut}: {err}");
    }
    let mut bumped = bytes.clone();
    bumped[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    let msg = decode_checkpoint(&bumped).unwrap_err().to_string();
    assert!(msg.contains("version 2"), "{msg}");

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(decode_checkpoint(&trailing), Err(Error::Format(_))));

    let other = ModelSpec::Gat(GatSpec::ppi_student().scaled(6, 3, 4));
    assert!(matches!(
        encode_checkpoint(&other, &params),
        Err(Error::Integrity(_))
    ));
    let dgcnn = ModelSpec::Dgcnn(DgcnnSpec::modelnet_student(4).scaled(8));
    assert!(encode_checkpoint(&dgcnn, &params).is_err());
}

fn npy_bytes(descr: &str, shape: &[usize], payload: &[u8]) -> Vec<u8> {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    let shape = if dims.len() == 1 {
        format!("({},)", dims[0])
    } else {
        format!("({})", dims.join(", "))
    };
    let mut header =
        format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape}, }}");
    while (10 + header.len() + 1) % 64 != 0 {
        header.push(' ');
    }
    header.push('\n');
    let mut out = b"\x93NUMPY\x01\x00".to_vec();
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(payload);
    out
}

fn f64_npy(shape: &[usize], data: &[f64]) -> Vec<u8> {
    let payload: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    npy_bytes("<f8", shape, &payload)
}

#[test]
fn npy_examples() {
    let a = parse_npy(&f64_npy(&[2, 2], &[1.0, -2.5, 3.0, 4.0])).unwrap();
    assert_eq!(a.shape, vec![2, 2]);
    assert_eq!(a.data, vec![1.0, -2.5, 3.0, 4.0]);

    let ints: Vec<u8> = [7i64, -1].iter().flat_map(|v| v.to_le_bytes()).collect();
    assert_eq!(parse_npy(&npy_bytes("<i8", &[2], &ints)).unwrap().data, vec![7.0, -1.0]);
    assert_eq!(parse_npy(&npy_bytes("|b1", &[3], &[1, 0, 1])).unwrap().data, vec![1.0, 0.0, 1.0]);
    let f32s: Vec<u8> = [0.5f32].iter().flat_map(|v| v.to_le_bytes()).collect();
    assert_eq!(parse_npy(&npy_bytes("<f4", &[1, 1], &f32s)).unwrap().data, vec![0.5]);

    assert!(parse_npy(b"not numpy at all").is_err());
    let short = f64_npy(&[3], &[1.0, 2.0, 3.0]);
    assert!(parse_npy(&short[..short.len() - 4]).is_err());
    assert!(parse_npy(&npy_bytes(">f8", &[1], &[0; 8])).is_err());
}

#[test]
fn ppi_layout_converts_per_graph() {
    let dir = tempfile::tempdir().unwrap();
    // two graphs in train (ids 5 and 2), one each in valid and test
    let write = |prefix: &str, ids: &[f64], links: &str| {
        let n = ids.len();
        let feats: Vec<f64> = (0..n * 2).map(|v| v as f64).collect();
        let labels: Vec<f64> = (0..n * 3).map(|v| (v % 2) as f64).collect();
        let nodes: Vec<String> = (0..n).map(|i| format!("{{\"id\": {i}, \"test\": false}}")).collect();
        let json = format!("{{\"directed\": false, \"nodes\": [{}], \"links\": [{links}]}}", nodes.join(","));
        let p = dir.path();
        std::fs::write(p.join(format!("{prefix}_graph.json")), json).unwrap();
        std::fs::write(p.join(format!("{prefix}_graph_id.npy")), f64_npy(&[n], ids)).unwrap();
        std::fs::write(p.join(format!("{prefix}_feats.npy")), f64_npy(&[n, 2], &feats)).unwrap();
        std::fs::write(p.join(format!("{prefix}_labels.npy")), f64_npy(&[n, 3], &labels)).unwrap();
    };
    write(
        "train",
        &[5.0, 2.0, 5.0, 2.0],
        r#"{"source": 0, "target": 2}, {"source": 3, "target": 1}"#,
    );
    write("valid", &[1.0, 1.0], r#"{"source": 0, "target": 1}"#);
    write("test", &[1.0], "");
    let ds = convert_ppi_dir(dir.path()).unwrap();
    assert_eq!((ds.feature_dim, ds.label_dim), (2, 3));
    assert_eq!(ds.graphs.len(), 4);
    // graph id 2 (nodes 1 and 3) comes first
    let g = &ds.graphs[0];
    assert_eq!(g.features.row(0), &[2.0, 3.0]);
    assert_eq!(g.features.row(1), &[6.0, 7.0]);
    assert_eq!(g.graph.senders(0), &[1]);
    assert_eq!(g.graph.senders(1), &[0]);
    assert_eq!(ds.graphs[2].split, Split::Val);
    assert_eq!(ds.graphs[3].split, Split::Test);

    write("valid", &[1.0, 2.0], r#"{"source": 0, "target": 1}"#);
    let msg = convert_ppi_dir(dir.path()).unwrap_err().to_string();
    assert!(msg.contains("different graphs"), "{msg}");
}
