use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use hyperdisc::cluster;
use hyperdisc::embedder::EncoderParams;
use hyperdisc::hypmath::{self, BallPoint, Geometry, TangentVector};
use hyperdisc_ffi::*;

fn last_error() -> Option<String> {
    let p = hd_last_error_message();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

#[test]
fn geometry_calls_match_library() {
    let (x, y) = ([0.3, -0.2, 0.1], [-0.5, 0.1, 0.4]);
    let mut d = 0.0;
    assert_eq!(unsafe { hd_poincare_distance(x.as_ptr(), y.as_ptr(), 3, &mut d) }, HdStatus::Ok);
    assert!(last_error().is_none());
    let (bx, by) = (BallPoint::new(x.to_vec()).unwrap(), BallPoint::new(y.to_vec()).unwrap());
    assert_eq!(d, hypmath::poincare_distance(&bx, &by).unwrap());

    let (mut gx, mut gy) = ([0.0; 3], [0.0; 3]);
    assert_eq!(
        unsafe { hd_distance_grad(x.as_ptr(), y.as_ptr(), 3, gx.as_mut_ptr(), gy.as_mut_ptr()) },
        HdStatus::Ok
    );
    let (ex, ey) = hypmath::distance_grad(&bx, &by).unwrap();
    assert_eq!((gx.to_vec(), gy.to_vec()), (ex, ey));

    let v = [0.7, -1.2, 0.3];
    let mut p = [0.0; 3];
    let mut back = [0.0; 3];
    assert_eq!(unsafe { hd_exp_map_origin(v.as_ptr(), 3, p.as_mut_ptr()) }, HdStatus::Ok);
    assert_eq!(p.to_vec(), hypmath::exp_map_origin(&TangentVector(v.to_vec())).into_inner());
    assert_eq!(unsafe { hd_log_map_origin(p.as_ptr(), 3, back.as_mut_ptr()) }, HdStatus::Ok);
    for (a, b) in back.iter().zip(&v) {
        assert!((a - b).abs() < 1e-12);
    }

    let pts = [0.1, 0.2, -0.3, 0.0, 0.2, -0.1];
    let mut m = [0.0; 2];
    assert_eq!(unsafe { hd_frechet_mean(pts.as_ptr(), 3, 2, ptr::null(), m.as_mut_ptr()) }, HdStatus::Ok);
    let bp: Vec<BallPoint> = pts.chunks(2).map(|c| BallPoint::new(c.to_vec()).unwrap()).collect();
    assert_eq!(m.to_vec(), hypmath::frechet_mean_uniform(&bp).unwrap().into_inner());
}

#[test]
fn errors_carry_status_and_message() {
    let (x, y) = ([1.0, 0.5], [0.0, 0.0]);
    let mut d = 0.0;
    assert_eq!(unsafe { hd_poincare_distance(x.as_ptr(), y.as_ptr(), 2, &mut d) }, HdStatus::OutsideBall);
    assert!(last_error().unwrap().contains("norm"));
    assert_eq!(unsafe { hd_poincare_distance(ptr::null(), y.as_ptr(), 2, &mut d) }, HdStatus::NullPointer);
    assert_eq!(unsafe { hd_poincare_distance(y.as_ptr(), y.as_ptr(), 2, ptr::null_mut()) }, HdStatus::NullPointer);
    let (mut ga, mut gb) = ([0.0; 2], [0.0; 2]);
    assert_eq!(
        unsafe { hd_distance_grad(y.as_ptr(), y.as_ptr(), 2, ga.as_mut_ptr(), gb.as_mut_ptr()) },
        HdStatus::InvalidArgument
    );
    assert_eq!(unsafe { hd_frechet_mean(x.as_ptr(), 0, 2, ptr::null(), ga.as_mut_ptr()) }, HdStatus::Empty);
    let nan = [f64::NAN, 0.0];
    let mut out = [0.0; 2];
    assert_eq!(unsafe { hd_exp_map_origin(nan.as_ptr(), 2, out.as_mut_ptr()) }, HdStatus::NonFinite);

    let mut model = ptr::null_mut();
    let pts = [0.1, 0.2, 0.3, 0.1];
    assert_eq!(unsafe { hd_kmeans(pts.as_ptr(), 2, 2, 3, 0, 10, 1, 0, &mut model) }, HdStatus::InvalidArgument);
    assert_eq!(unsafe { hd_kmeans(pts.as_ptr(), 2, 2, 1, 0, 10, 1, 7, &mut model) }, HdStatus::InvalidArgument);
    assert!(model.is_null());
    assert!(last_error().unwrap().contains("geometry"));

    let bad = CString::new("{\"dims\": [2]}").unwrap();
    let mut enc = ptr::null_mut();
    assert_eq!(unsafe { hd_encoder_from_json(bad.as_ptr(), &mut enc) }, HdStatus::Parse);
    assert!(enc.is_null());

    // A success clears the message.
    assert_eq!(unsafe { hd_poincare_distance(y.as_ptr(), y.as_ptr(), 2, &mut d) }, HdStatus::Ok);
    assert!(last_error().is_none());
}

#[test]
fn encoder_handle_round_trip() {
    let params = EncoderParams::init(&[5, 4, 3, 2], Geometry::Poincare, 9).unwrap();
    let json = CString::new(serde_json::to_string(&params).unwrap()).unwrap();
    let mut enc = ptr::null_mut();
    assert_eq!(unsafe { hd_encoder_from_json(json.as_ptr(), &mut enc) }, HdStatus::Ok);
    let (mut fi, mut fo) = (0usize, 0usize);
    assert_eq!(unsafe { hd_encoder_dims(enc, &mut fi, &mut fo) }, HdStatus::Ok);
    assert_eq!((fi, fo), (5, 2));
    let feature = [0.5, -1.0, 2.0, 0.0, 0.3];
    let mut z = [0.0; 2];
    assert_eq!(unsafe { hd_encoder_encode(enc, feature.as_ptr(), 5, z.as_mut_ptr(), 2) }, HdStatus::Ok);
    assert_eq!(z.to_vec(), params.embed(&feature).unwrap());
    assert_eq!(
        unsafe { hd_encoder_encode(enc, feature.as_ptr(), 4, z.as_mut_ptr(), 2) },
        HdStatus::DimensionMismatch
    );
    assert_eq!(
        unsafe { hd_encoder_encode(enc, feature.as_ptr(), 5, z.as_mut_ptr(), 3) },
        HdStatus::DimensionMismatch
    );
    unsafe {
        hd_encoder_free(enc);
        hd_encoder_free(ptr::null_mut());
    }
}

#[test]
fn kmeans_handle_matches_library() {
    let pts: Vec<f64> = (0..40).map(|i| ((i * 37 % 23) as f64 / 23.0 - 0.5) * 0.8).collect();
    for geometry in [HdGeometry::Poincare, HdGeometry::Euclidean] {
        let mut model = ptr::null_mut();
        assert_eq!(
            unsafe { hd_kmeans(pts.as_ptr(), 20, 2, 4, 3, 50, 2, geometry as i32, &mut model) },
            HdStatus::Ok
        );
        let rows: Vec<Vec<f64>> = pts.chunks(2).map(<[f64]>::to_vec).collect();
        let g = if geometry == HdGeometry::Poincare { Geometry::Poincare } else { Geometry::Euclidean };
        let expect = cluster::kmeans_restarts(&rows, 4, 3, 50, g, 2).unwrap();
        assert_eq!(unsafe { hd_cluster_model_k(model) }, 4);
        let mut assign = vec![0usize; 20];
        assert_eq!(unsafe { hd_cluster_model_assignment(model, assign.as_mut_ptr(), 20) }, HdStatus::Ok);
        assert_eq!(assign, expect.assignment);
        let mut cents = vec![0.0; 8];
        assert_eq!(unsafe { hd_cluster_model_centroids(model, cents.as_mut_ptr(), 8) }, HdStatus::Ok);
        assert_eq!(cents, expect.centroids.concat());
        let mut inertia = 0.0;
        assert_eq!(unsafe { hd_cluster_model_inertia(model, &mut inertia) }, HdStatus::Ok);
        assert_eq!(inertia, expect.inertia);
        assert_eq!(
            unsafe { hd_cluster_model_centroids(model, cents.as_mut_ptr(), 6) },
            HdStatus::DimensionMismatch
        );
        unsafe { hd_cluster_model_free(model) };
    }
    assert_eq!(unsafe { hd_cluster_model_k(ptr::null()) }, 0);
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_is_current_and_declares_api() {
    let header = std::fs::read_to_string(crate_dir().join("include/hyperdisc.h")).unwrap();
    for name in [
        "hd_last_error_message",
        "hd_poincare_distance",
        "hd_distance_grad",
        "hd_exp_map_origin",
        "hd_log_map_origin",
        "hd_frechet_mean",
        "hd_encoder_from_json",
        "hd_encoder_dims",
        "hd_encoder_encode",
        "hd_encoder_free",
        "hd_kmeans",
        "hd_cluster_model_k",
        "hd_cluster_model_inertia",
        "hd_cluster_model_assignment",
        "hd_cluster_model_centroids",
        "hd_cluster_model_free",
        "typedef struct HdEncoder HdEncoder",
        "typedef struct HdClusterModel HdClusterModel",
        "HD_STATUS_OK = 0",
        "HD_GEOMETRY_EUCLIDEAN = 1",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

// Compiles the C smoke program against the header and the static library, then runs it.
// Skipped when no C compiler is available.
#[test]
fn c_program_links_and_runs() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    // The test executable lives in <target>/<profile>/deps.
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libhyperdisc_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let out_dir = std::env::temp_dir().join(format!("hyperdisc-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&out_dir).unwrap();
    let bin = out_dir.join("smoke");
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
    std::fs::remove_dir_all(&out_dir).ok();
}
