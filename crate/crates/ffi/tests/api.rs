use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use dcpf_ffi::*;

struct Net(*mut DcpfNetwork);

impl Drop for Net {
    fn drop(&mut self) {
        unsafe { dcpf_network_free(self.0) }
    }
}

struct Params(*mut DcpfParams);

impl Drop for Params {
    fn drop(&mut self) {
        unsafe { dcpf_params_free(self.0) }
    }
}

struct Data(*mut DcpfDataset);

impl Drop for Data {
    fn drop(&mut self) {
        unsafe { dcpf_dataset_free(self.0) }
    }
}

fn last_error() -> String {
    let p = dcpf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn load(spec: &str) -> Net {
    let c = CString::new(spec).unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { dcpf_network_load(c.as_ptr(), &mut out) }, DcpfStatus::Ok);
    Net(out)
}

fn hot(net: &Net) -> Params {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { dcpf_params_hot(net.0, &mut out) }, DcpfStatus::Ok);
    Params(out)
}

fn flows(net: &Net, params: &Params, p: &[f64]) -> Vec<f64> {
    let mut f = vec![0.0; unsafe { dcpf_network_n_branches(net.0) }];
    let status = unsafe { dcpf_dc_flows(net.0, params.0, p.as_ptr(), p.len(), f.as_mut_ptr(), f.len()) };
    assert_eq!(status, DcpfStatus::Ok, "{}", last_error());
    f
}

#[test]
fn sizes_and_branch_ids() {
    let net = load("case14");
    unsafe {
        assert_eq!(dcpf_network_n_buses(net.0), 14);
        assert_eq!(dcpf_network_n_injections(net.0), 13);
        assert_eq!(dcpf_network_n_branches(net.0), 20);
        let mut ids = vec![0usize; 20];
        assert_eq!(dcpf_network_branch_ids(net.0, ids.as_mut_ptr(), ids.len()), DcpfStatus::Ok);
        assert_eq!(ids, (1..=20).collect::<Vec<_>>());
        assert_eq!(dcpf_network_n_branches(ptr::null()), 0);
    }
    assert!(unsafe { CStr::from_ptr(dcpf_version()) }.to_str().unwrap().starts_with("0."));
}

#[test]
fn angle_and_ptdf_paths_agree_with_matrix() {
    let net = load("case14");
    let params = hot(&net);
    let p: Vec<f64> = (0..13).map(|i| 0.1 * (i as f64 - 6.0)).collect();
    let a = flows(&net, &params, &p);

    let mut b = vec![0.0; 20];
    let status = unsafe { dcpf_ptdf_flows(net.0, params.0, p.as_ptr(), 13, b.as_mut_ptr(), 20) };
    assert_eq!(status, DcpfStatus::Ok);

    // flows = PTDF (p - gamma) + rho
    let mut m = vec![0.0; 20 * 13];
    assert_eq!(unsafe { dcpf_ptdf(net.0, params.0, m.as_mut_ptr(), m.len()) }, DcpfStatus::Ok);
    let mut x = vec![0.0; unsafe { dcpf_params_dim(params.0) }];
    assert_eq!(x.len(), 20 + 13 + 20);
    assert_eq!(unsafe { dcpf_params_get(params.0, x.as_mut_ptr(), x.len()) }, DcpfStatus::Ok);
    let (gamma, rho) = (&x[20..33], &x[33..]);
    for e in 0..20 {
        let c: f64 = (0..13).map(|k| m[e * 13 + k] * (p[k] - gamma[k])).sum::<f64>() + rho[e];
        assert!((a[e] - b[e]).abs() <= 1e-12);
        assert!((a[e] - c).abs() <= 1e-12, "branch {e}: {} vs {c}", a[e]);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let net = load("case14");
    let params = hot(&net);
    let mut f = vec![0.0; 20];
    let p = vec![0.0; 12];
    let status = unsafe { dcpf_dc_flows(net.0, params.0, p.as_ptr(), p.len(), f.as_mut_ptr(), 20) };
    assert_eq!(status, DcpfStatus::Dimension);
    assert!(last_error().contains("expected 13"));

    let mut out = ptr::null_mut();
    assert_eq!(unsafe { dcpf_network_remove_branch(net.0, 14, &mut out) }, DcpfStatus::Islanding);
    assert!(out.is_null());
    assert_eq!(unsafe { dcpf_network_remove_branch(net.0, 99, &mut out) }, DcpfStatus::UnknownBranch);

    let bogus = CString::new("/no/such/case.m").unwrap();
    assert_eq!(unsafe { dcpf_network_load(bogus.as_ptr(), &mut out) }, DcpfStatus::Io);
    assert_eq!(unsafe { dcpf_network_load(ptr::null(), &mut out) }, DcpfStatus::NullPointer);
    assert_eq!(unsafe { dcpf_params_hot(ptr::null(), &mut ptr::null_mut()) }, DcpfStatus::NullPointer);

    // an exactly zero coefficient is refused, a vanishing one on a bridge makes B' singular
    let mut x = vec![0.0; 53];
    unsafe { dcpf_params_get(params.0, x.as_mut_ptr(), 53) };
    x[13] = 0.0;
    assert_eq!(unsafe { dcpf_params_set(params.0, x.as_ptr(), 53) }, DcpfStatus::Ok);
    let z = vec![0.1; 13];
    let status = unsafe { dcpf_dc_flows(net.0, params.0, z.as_ptr(), 13, f.as_mut_ptr(), 20) };
    assert_eq!(status, DcpfStatus::InvalidArgument);
    x[13] = 1e-15;
    assert_eq!(unsafe { dcpf_params_set(params.0, x.as_ptr(), 53) }, DcpfStatus::Ok);
    let status = unsafe { dcpf_dc_flows(net.0, params.0, z.as_ptr(), 13, f.as_mut_ptr(), 20) };
    assert_eq!(status, DcpfStatus::Singular, "{}", last_error());

    x[0] = f64::NAN;
    assert_eq!(unsafe { dcpf_params_set(params.0, x.as_ptr(), 53) }, DcpfStatus::InvalidArgument);
    assert_eq!(unsafe { dcpf_loss(net.0, ptr::null(), params.0, 0, &mut DcpfLoss::default()) }, DcpfStatus::NullPointer);
}

#[test]
fn outage_and_projection() {
    let net = load("case14");
    let params = hot(&net);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { dcpf_network_remove_branch(net.0, 3, &mut out) }, DcpfStatus::Ok);
    let outaged = Net(out);
    assert_eq!(unsafe { dcpf_network_n_branches(outaged.0) }, 19);

    // parameters for the intact case do not fit the outaged one until projected
    let p = vec![0.05; 13];
    let mut f = vec![0.0; 19];
    let status = unsafe { dcpf_dc_flows(outaged.0, params.0, p.as_ptr(), 13, f.as_mut_ptr(), 19) };
    assert_ne!(status, DcpfStatus::Ok);
    let mut proj = ptr::null_mut();
    assert_eq!(unsafe { dcpf_params_project(params.0, outaged.0, &mut proj) }, DcpfStatus::Ok);
    let proj = Params(proj);
    assert_eq!(unsafe { dcpf_params_dim(proj.0) }, 19 + 13 + 19);
    assert_eq!(flows(&outaged, &proj, &p).len(), 19);
}

#[test]
fn dataset_loss_gradient_and_training() {
    let net = load("case14");
    let init = hot(&net);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { dcpf_dataset_generate(net.0, 60, 0.1, 5, 0.75, &mut out) }, DcpfStatus::Ok);
    let data = Data(out);
    unsafe {
        assert_eq!(dcpf_dataset_len(data.0, DCPF_SUBSET_TRAIN), 45);
        assert_eq!(dcpf_dataset_len(data.0, DCPF_SUBSET_TEST), 15);
        assert_eq!(dcpf_dataset_len(data.0, 7), 0);
    }

    let loss = |p: &Params, subset: i32| {
        let mut l = DcpfLoss::default();
        assert_eq!(unsafe { dcpf_loss(net.0, data.0, p.0, subset, &mut l) }, DcpfStatus::Ok);
        l
    };
    let before = loss(&init, DCPF_SUBSET_TRAIN);
    assert_eq!(before.n_scenarios, 45);
    assert!(before.sq_two_norm > 0.0 && before.inf_norm > 0.0);

    // directional derivative matches a central difference
    let dim = unsafe { dcpf_params_dim(init.0) };
    let mut g = vec![0.0; dim];
    let status = unsafe { dcpf_gradient(net.0, data.0, init.0, DCPF_SUBSET_TRAIN, g.as_mut_ptr(), dim) };
    assert_eq!(status, DcpfStatus::Ok);
    let mut x = vec![0.0; dim];
    unsafe { dcpf_params_get(init.0, x.as_mut_ptr(), dim) };
    let dir: Vec<f64> = (0..dim).map(|i| ((i * 7 % 11) as f64 - 5.0) / 5.0).collect();
    let h = 1e-5;
    let shifted = |s: f64| {
        let mut q = ptr::null_mut();
        unsafe { dcpf_params_cold(net.0, false, &mut q) };
        let q = Params(q);
        let y: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
        unsafe { dcpf_params_set(q.0, y.as_ptr(), dim) };
        loss(&q, DCPF_SUBSET_TRAIN).sq_two_norm
    };
    let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
    let an: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
    assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{an} vs {fd}");

    let mut trained = ptr::null_mut();
    let status = unsafe { dcpf_train(net.0, data.0, init.0, DCPF_METHOD_LBFGS, 0, &mut trained) };
    assert_eq!(status, DcpfStatus::Ok, "{}", last_error());
    let trained = Params(trained);
    assert!(loss(&trained, DCPF_SUBSET_TRAIN).sq_two_norm < before.sq_two_norm);
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { dcpf_train(net.0, data.0, init.0, 5, 0, &mut none) }, DcpfStatus::InvalidArgument);
    assert!(none.is_null());

    // files written through the C API load back
    let dir = tempfile::tempdir().unwrap();
    let ds_path = CString::new(dir.path().join("d.ds").to_str().unwrap()).unwrap();
    let p_path = CString::new(dir.path().join("p.json").to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(dcpf_dataset_save(data.0, ds_path.as_ptr()), DcpfStatus::Ok);
        assert_eq!(dcpf_params_save(trained.0, net.0, p_path.as_ptr()), DcpfStatus::Ok);
        let (mut d2, mut p2) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(dcpf_dataset_load(net.0, ds_path.as_ptr(), &mut d2), DcpfStatus::Ok);
        assert_eq!(dcpf_params_load(net.0, p_path.as_ptr(), &mut p2), DcpfStatus::Ok);
        let (_d2, p2) = (Data(d2), Params(p2));
        assert_eq!(loss(&p2, DCPF_SUBSET_TEST), loss(&trained, DCPF_SUBSET_TEST));

        let other = load("case30");
        let mut bad = ptr::null_mut();
        assert_eq!(dcpf_params_load(other.0, p_path.as_ptr(), &mut bad), DcpfStatus::ChecksumMismatch);
    }
}

#[test]
fn header_compiles_and_links_from_c() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // integration test binaries live in target/<profile>/deps, next to the cdylib's parent
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    assert!(lib_dir.join("libdcpf_ffi.so").exists(), "cdylib not found in {}", lib_dir.display());
    let out_dir = tempfile::tempdir().unwrap();
    let bin = out_dir.path().join("smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg("-ldcpf_ffi")
        .status()
        .expect("C compiler runs");
    assert!(status.success());
    let out = Command::new(&bin).env("LD_LIBRARY_PATH", &lib_dir).output().unwrap();
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with(env!("CARGO_PKG_VERSION")));
}
