mod common;

use common::*;
use geoanchor_core::geometry::{BinaryMask, DepthMap, PointCloud, RgbImage, Vec3};
use geoanchor_core::io::*;
use geoanchor_core::Error;

#[test]
fn obj_and_ply_meshes_round_trip_exactly() {
    let mesh = asymmetric_mesh();
    let dir = tempfile::tempdir().unwrap();
    for name in ["m.obj", "m.ply"] {
        let p = dir.path().join(name);
        save_mesh(&p, &mesh).unwrap();
        let back = load_mesh(&p).unwrap();
        // The OBJ reader may renumber vertices; triangles must survive as-is.
        assert_eq!(back.triangles().collect::<Vec<_>>(), mesh.triangles().collect::<Vec<_>>(), "{name}");
        if name.ends_with(".ply") {
            assert_eq!(back.vertices(), mesh.vertices());
            assert_eq!(back.faces(), mesh.faces());
        }
    }
}

#[test]
fn obj_polygons_are_triangulated() {
    let src = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
    let mesh = read_obj(&mut src.as_bytes()).unwrap();
    assert_eq!(mesh.faces().len(), 2);
    assert!(read_obj(&mut "v 0 0\nf 1 2 3\n".as_bytes()).is_err());
}

#[test]
fn clouds_round_trip_with_and_without_normals() {
    let pts = vec![Vec3::new(0.1, -2.0, 3.5), Vec3::new(1e-7, 4.0, -0.25), Vec3::new(7.0, 8.0, 9.0)];
    let nrm = vec![Vec3::unit_x(), Vec3::unit_y(), Vec3::unit_z()];
    let dir = tempfile::tempdir().unwrap();
    for cloud in [PointCloud::new(pts.clone()), PointCloud::with_normals(pts.clone(), nrm).unwrap()] {
        for name in ["c.ply", "c.xyz"] {
            let p = dir.path().join(name);
            save_cloud(&p, &cloud).unwrap();
            assert_eq!(load_cloud(&p).unwrap(), cloud, "{name}");
        }
    }
}

#[test]
fn xyz_parsing_errors_carry_line_numbers() {
    let ok = read_xyz("# header\n1 2 3\n\n4 5 6 # trailing\n".as_bytes()).unwrap();
    assert_eq!(ok.len(), 2);
    match read_xyz("1 2 3\n1 2\n".as_bytes()) {
        Err(Error::Parse(msg)) => assert!(msg.contains("line 2"), "{msg}"),
        other => panic!("{other:?}"),
    }
    assert!(read_xyz("1 2 x\n".as_bytes()).is_err());
}

#[test]
fn unknown_extensions_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.stl");
    assert!(matches!(save_mesh(&p, &asymmetric_mesh()), Err(Error::Parse(_))));
    assert!(matches!(load_cloud(&p), Err(Error::Parse(_))));
}

#[test]
fn images_and_masks_round_trip() {
    let mut img = RgbImage::new(7, 5);
    img.set(3, 2, [1, 2, 3]);
    img.set(6, 4, [255, 0, 128]);
    assert_eq!(decode_png_rgb(&encode_png_rgb(&img).unwrap()).unwrap(), img);
    let mask = BinaryMask::from_fn(9, 4, |x, y| (x + y) % 3 == 0);
    assert_eq!(decode_png_mask(&encode_png_mask(&mask).unwrap()).unwrap(), mask);
    assert_eq!(image_digest(&img), image_digest(&img.clone()));
    let mut other = img.clone();
    other.set(0, 0, [0, 0, 1]);
    assert_ne!(image_digest(&img), image_digest(&other));
}

#[test]
fn depth_round_trips_to_quantization() {
    let mut d = DepthMap::new(6, 3);
    d.set(0, 0, 1.2345);
    d.set(5, 2, 40.0);
    d.set(2, 1, 70.0); // beyond u16 range at 1 mm
    d.set(3, 1, -1.0);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.png");
    save_depth(&p, &d, DepthEncoding::default()).unwrap();
    assert!(depth_sidecar_path(&p).exists());
    let back = load_depth(&p).unwrap();
    let half_step = 5e-4 + 1e-12;
    assert!((back.get(0, 0) - 1.2345).abs() <= half_step);
    assert!((back.get(5, 2) - 40.0).abs() <= half_step);
    assert_eq!(back.get(2, 1), 0.0);
    assert_eq!(back.get(3, 1), 0.0);
    assert_eq!(back.valid_count(), 2);

    let coarse = DepthEncoding { scale: 0.01, invalid: 0 };
    save_depth(&p, &d, coarse).unwrap();
    assert!((load_depth(&p).unwrap().get(2, 1) - 70.0).abs() < 5e-3);
    assert!(save_depth(&p, &d, DepthEncoding { scale: 0.0, invalid: 0 }).is_err());

    std::fs::remove_file(depth_sidecar_path(&p)).unwrap();
    // Without a sidecar the default millimeter encoding applies; the file
    // was last written at 1 cm steps, so values read back 10x smaller.
    assert!((load_depth(&p).unwrap().get(0, 0) - 0.123).abs() < 1e-12);
}

#[test]
fn cameras_round_trip_through_json() {
    let cams = ring_cameras(5, 3.0, 1.0, 64, 70.0);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cams.json");
    save_cameras(&p, &cams).unwrap();
    assert_eq!(load_cameras(&p).unwrap(), cams);
    std::fs::write(&p, "[{\"intrinsics\": 3}]").unwrap();
    assert!(load_cameras(&p).is_err());
}
