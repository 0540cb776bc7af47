use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use lsbo_core::gp::{GpHyper, GpSurrogate};
use lsbo_core::vae::{VaeArch, VaeModel};
use lsbo_core::rng;
use lsbo_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    unsafe {
        lsbo_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn saved_model(dir: &std::path::Path) -> (VaeModel, CString) {
    let m = VaeModel::new(VaeArch::new(6, 2, vec![8]), 1.0, 0.0, &mut rng::stream(3, "vae-init", 0)).unwrap();
    let p = dir.join("m.ckpt");
    m.save(&p).unwrap();
    (m, CString::new(p.to_str().unwrap()).unwrap())
}

#[test]
fn model_round_trip_matches_core() {
    let dir = tempfile::tempdir().unwrap();
    let (core, path) = saved_model(dir.path());
    let mut h: *mut LsboModel = ptr::null_mut();
    unsafe {
        assert_eq!(lsbo_model_load(path.as_ptr(), &mut h), LsboStatus::Ok);
        assert_eq!(lsbo_model_latent_dim(h), 2);
        assert_eq!(lsbo_model_input_dim(h), 6);

        let x = [0.1, 0.9, 0.3, 0.0, 1.0, 0.5];
        let mut z = [0.0; 2];
        assert_eq!(lsbo_model_encode(h, x.as_ptr(), 6, z.as_mut_ptr(), 2), LsboStatus::Ok);
        assert_eq!(z.to_vec(), core.encode_mean(&x).unwrap());

        let mut xr = [0.0; 6];
        assert_eq!(lsbo_model_decode(h, z.as_ptr(), 2, xr.as_mut_ptr(), 6), LsboStatus::Ok);
        assert_eq!(xr.to_vec(), core.decode(&z).unwrap());

        let mut l = -1.0;
        assert_eq!(lsbo_model_lcl(h, z.as_ptr(), 2, &mut l), LsboStatus::Ok);
        assert_eq!(l, lsbo_core::vae::lcl(&core, &z).unwrap());

        let mut cp = [0.0; 2];
        let mut conv = false;
        assert_eq!(
            lsbo_model_consistent_point(h, z.as_ptr(), 2, 50, 100, 1e-6, cp.as_mut_ptr(), &mut conv),
            LsboStatus::Ok
        );
        assert!(cp.iter().all(|v| v.is_finite()));
        lsbo_model_free(h);
    }
}

#[test]
fn errors_are_reported_not_panicked() {
    let dir = tempfile::tempdir().unwrap();
    let (_, path) = saved_model(dir.path());
    let mut h: *mut LsboModel = ptr::null_mut();
    unsafe {
        let missing = CString::new(dir.path().join("nope").to_str().unwrap()).unwrap();
        assert_eq!(lsbo_model_load(missing.as_ptr(), &mut h), LsboStatus::Io);
        assert!(h.is_null());
        assert!(!last_error().is_empty());

        let junk = dir.path().join("junk");
        std::fs::write(&junk, b"not a checkpoint").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(lsbo_model_load(junk.as_ptr(), &mut h), LsboStatus::Format);

        assert_eq!(lsbo_model_load(ptr::null(), &mut h), LsboStatus::NullPointer);
        assert_eq!(lsbo_model_load(path.as_ptr(), ptr::null_mut()), LsboStatus::NullPointer);

        assert_eq!(lsbo_model_load(path.as_ptr(), &mut h), LsboStatus::Ok);
        assert!(last_error().is_empty());
        let x = [0.0; 5];
        let mut z = [0.0; 2];
        assert_eq!(lsbo_model_encode(h, x.as_ptr(), 5, z.as_mut_ptr(), 2), LsboStatus::InvalidArgument);
        assert!(last_error().contains("length 5"));
        assert_eq!(lsbo_model_encode(ptr::null(), x.as_ptr(), 5, z.as_mut_ptr(), 2), LsboStatus::NullPointer);
        assert_eq!(
            lsbo_model_consistent_point(h, z.as_ptr(), 2, 0, 10, 1e-6, z.as_mut_ptr(), ptr::null_mut()),
            LsboStatus::InvalidArgument
        );
        lsbo_model_free(h);
        lsbo_model_free(ptr::null_mut());
        assert_eq!(lsbo_model_latent_dim(ptr::null()), 0);
    }
}

#[test]
fn gp_matches_core() {
    let z = [0.0, 0.0, 1.0, 0.5, -0.5, 2.0];
    let y = [0.1, 0.7, 0.3];
    let hyper = GpHyper {
        signal_var: 1.5,
        lengthscale: 0.8,
        noise_var: 1e-3,
    };
    let core = GpSurrogate::with_hyper(&[vec![0.0, 0.0], vec![1.0, 0.5], vec![-0.5, 2.0]], &y, hyper).unwrap();
    let mut g: *mut LsboGp = ptr::null_mut();
    unsafe {
        assert_eq!(lsbo_gp_with_hyper(z.as_ptr(), y.as_ptr(), 3, 2, 1.5, 0.8, 1e-3, &mut g), LsboStatus::Ok);
        let q = [0.3, 0.2];
        let (mut m, mut v) = (0.0, 0.0);
        assert_eq!(lsbo_gp_predict(g, q.as_ptr(), 2, &mut m, &mut v), LsboStatus::Ok);
        assert_eq!((m, v), core.predict(&q));
        let mut lml = 0.0;
        assert_eq!(lsbo_gp_log_marginal_likelihood(g, &mut lml), LsboStatus::Ok);
        assert_eq!(lml, core.log_marginal_likelihood());
        let mut h = [0.0; 3];
        assert_eq!(lsbo_gp_hyper(g, h.as_mut_ptr()), LsboStatus::Ok);
        assert_eq!(h, [1.5, 0.8, 1e-3]);
        assert_eq!(lsbo_gp_predict(g, q.as_ptr(), 3, &mut m, &mut v), LsboStatus::InvalidArgument);
        lsbo_gp_free(g);

        let mut f: *mut LsboGp = ptr::null_mut();
        assert_eq!(lsbo_gp_fit(z.as_ptr(), y.as_ptr(), 3, 2, 7, &mut f), LsboStatus::Ok);
        assert_eq!(lsbo_gp_hyper(f, h.as_mut_ptr()), LsboStatus::Ok);
        assert!(h.iter().all(|v| *v > 0.0));
        lsbo_gp_free(f);

        assert_eq!(lsbo_gp_with_hyper(z.as_ptr(), y.as_ptr(), 3, 0, 1.0, 1.0, 1e-3, &mut f), LsboStatus::InvalidArgument);
    }
}

#[test]
fn acquisition_passthrough() {
    assert_eq!(lsbo_ucb(0.5, 0.04, 2.0), 0.9);
    assert_eq!(lsbo_ei(0.2, 0.09, 0.1, 0.0), lsbo_core::acquisition::ei(0.2, 0.09, 0.1, 0.0));
    let v = unsafe { CStr::from_ptr(lsbo_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/lsbo.h");
    let src = format!("#include \"{header}\"\nint main(void) {{ LsboModel *m = 0; return (int)lsbo_model_latent_dim(m); }}\n");
    let dir = tempfile::tempdir().unwrap();
    let c = dir.path().join("t.c");
    std::fs::write(&c, src).unwrap();
    let Ok(out) = Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&c).output() else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
