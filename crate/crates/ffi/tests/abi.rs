use std::ffi::{CStr, CString};
use std::ptr;

use alf_ffi::*;

const PP4: AlfGridSpec = AlfGridSpec { x_min: -102.4, x_max: 102.4, y_min: -38.4, y_max: 38.4, v_x: 0.4, v_y: 0.4 };

fn last_error() -> String {
    let p = alf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn schema(bits: u8, k: usize) -> *mut AlfSchema {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { alf_schema_new(&PP4, bits, k, &mut s) }, AlfStatus::Ok);
    s
}

fn boxes() -> Vec<AlfBox> {
    vec![
        AlfBox { x: 1.0, y: 2.0, w: 1.9, l: 4.6, yaw: 0.1, score: 0.9 },
        AlfBox { x: -10.0, y: 5.0, w: 0.7, l: 0.8, yaw: 1.0, score: 0.5 },
    ]
}

#[test]
fn version_and_grid_dims() {
    let v = unsafe { CStr::from_ptr(alf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let (mut h, mut w) = (0, 0);
    assert_eq!(unsafe { alf_grid_dims(&PP4, &mut h, &mut w) }, AlfStatus::Ok);
    assert_eq!((h, w), (512, 192));
    assert!(alf_last_error_message().is_null());

    let bad = AlfGridSpec { v_x: 0.0, ..PP4 };
    assert_eq!(unsafe { alf_grid_dims(&bad, &mut h, &mut w) }, AlfStatus::Config);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { alf_grid_dims(ptr::null(), &mut h, &mut w) }, AlfStatus::NullPointer);
    assert!(last_error().contains("grid"));
}

#[test]
fn encode_decode_round_trip() {
    let s = schema(8, 20);
    unsafe {
        assert_eq!(alf_schema_payload_bytes(s), 120);
        let mut bps = 0.0;
        assert_eq!(alf_schema_bandwidth_bps(s, 10.0, &mut bps), AlfStatus::Ok);
        assert_eq!(bps, 9600.0);

        let b = boxes();
        let mut buf = [0u8; 120];
        let mut n = 0;
        assert_eq!(alf_encode(s, b.as_ptr(), b.len(), buf.as_mut_ptr(), buf.len(), &mut n), AlfStatus::Ok);
        assert_eq!(n, 120);

        let mut outb = [AlfBox { x: 0.0, y: 0.0, w: 0.0, l: 0.0, yaw: 0.0, score: 0.0 }; 20];
        let mut count = 0;
        let st = alf_decode(s, buf.as_ptr(), n, ptr::null(), outb.as_mut_ptr(), outb.len(), &mut count);
        assert_eq!(st, AlfStatus::Ok);
        assert_eq!(count, 2);
        assert!((outb[0].x - 1.0).abs() < 0.5 && (outb[0].score - 0.9).abs() < 0.01);

        let pose = AlfPose { x: 5.0, y: 0.0, yaw: 0.0 };
        let mut moved = outb;
        alf_decode(s, buf.as_ptr(), n, &pose, moved.as_mut_ptr(), moved.len(), &mut count);
        assert!((moved[0].x - outb[0].x - 5.0).abs() < 1e-9);

        assert_eq!(
            alf_decode(s, buf.as_ptr(), n, ptr::null(), outb.as_mut_ptr(), 1, &mut count),
            AlfStatus::BufferTooSmall
        );
        assert_eq!(count, 2);
        assert_eq!(alf_decode(s, buf.as_ptr(), 119, ptr::null(), outb.as_mut_ptr(), 20, &mut count), AlfStatus::Decode);
        assert_eq!(alf_encode(s, b.as_ptr(), b.len(), buf.as_mut_ptr(), 10, &mut n), AlfStatus::BufferTooSmall);
        assert_eq!(n, 120);

        let nan = [AlfBox { x: f64::NAN, ..b[0] }];
        assert_eq!(alf_encode(s, nan.as_ptr(), 1, buf.as_mut_ptr(), 120, &mut n), AlfStatus::InvalidArgument);
        assert_eq!(alf_encode(s, ptr::null(), 0, buf.as_mut_ptr(), 120, &mut n), AlfStatus::Ok);
        assert_eq!(alf_encode(s, ptr::null(), 1, buf.as_mut_ptr(), 120, &mut n), AlfStatus::NullPointer);
        alf_schema_free(s);
    }
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { alf_schema_new(&PP4, 0, 20, &mut s) }, AlfStatus::Config);
    assert!(s.is_null());
}

#[test]
fn rasterize_matches_core() {
    let b = boxes();
    let mut v = vec![0f32; 512 * 192];
    assert_eq!(unsafe { alf_rasterize(&PP4, b.as_ptr(), b.len(), v.as_mut_ptr(), v.len()) }, AlfStatus::Ok);
    let core: Vec<_> = b.iter().map(|&x| x.into()).collect();
    let want = alf_core::raster::rasterize(&core, &PP4.into());
    assert_eq!(v, want.map.data());
    assert_eq!(unsafe { alf_rasterize(&PP4, b.as_ptr(), b.len(), v.as_mut_ptr(), 100) }, AlfStatus::BufferTooSmall);
}

#[test]
fn efs_forward_save_load() {
    let grid = AlfGridSpec { x_min: -16.0, x_max: 16.0, y_min: -8.0, y_max: 8.0, v_x: 0.5, v_y: 0.5 };
    let mut e = ptr::null_mut();
    unsafe {
        assert_eq!(alf_efs_new(&grid, 16, 8, 8, 4, 3, &mut e), AlfStatus::Ok);
        let (mut hb, mut wb, mut h, mut w, mut c) = (0, 0, 0, 0, 0);
        assert_eq!(alf_efs_dims(e, &mut hb, &mut wb, &mut h, &mut w, &mut c), AlfStatus::Ok);
        assert_eq!((hb, wb, h, w, c), (64, 32, 16, 8, 8));

        let bev: Vec<f32> = (0..hb * wb).map(|i| ((i % 7) as f32) / 7.0).collect();
        let ego: Vec<f32> = (0..h * w * c).map(|i| ((i % 11) as f32 - 5.0) / 5.0).collect();
        let mut f = vec![0f32; h * w * c];
        let st = alf_efs_forward(e, bev.as_ptr(), bev.len(), ego.as_ptr(), ego.len(), f.as_mut_ptr(), f.len());
        assert_eq!(st, AlfStatus::Ok);
        assert!(f.iter().all(|v| v.is_finite()) && f.iter().any(|&v| v != 0.0));

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("p.bin").to_str().unwrap()).unwrap();
        assert_eq!(alf_efs_save(e, path.as_ptr()), AlfStatus::Ok);
        let mut e2 = ptr::null_mut();
        assert_eq!(alf_efs_load(path.as_ptr(), &mut e2), AlfStatus::Ok);
        let mut g = vec![0f32; f.len()];
        alf_efs_forward(e2, bev.as_ptr(), bev.len(), ego.as_ptr(), ego.len(), g.as_mut_ptr(), g.len());
        assert_eq!(f, g);

        let st = alf_efs_forward(e, bev.as_ptr(), 10, ego.as_ptr(), ego.len(), f.as_mut_ptr(), f.len());
        assert_eq!(st, AlfStatus::Shape);
        let missing = CString::new(dir.path().join("none").to_str().unwrap()).unwrap();
        assert_eq!(alf_efs_load(missing.as_ptr(), &mut e2), AlfStatus::Io);
        alf_efs_free(e);
        alf_efs_free(e2);
        assert_eq!(alf_efs_new(&grid, 16, 8, 7, 4, 3, &mut e), AlfStatus::Config);
    }
}
