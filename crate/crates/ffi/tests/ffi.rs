use std::ffi::{c_char, c_void, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use advgen_ffi::*;
use serde_json::{json, Value};

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    advgen_string_free(p);
    s
}

unsafe fn take_json(p: *mut c_char) -> Value {
    serde_json::from_str(&take(p)).unwrap()
}

fn last_error() -> String {
    let p = advgen_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn metrics_round_trip() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(advgen_normalize_answer(c("The Denver  Broncos.").as_ptr(), &mut out), AdvgenStatus::Ok);
        assert_eq!(take(out), "denver broncos");

        let (mut em, mut f1) = (true, 0.0);
        let st = advgen_em_f1(c("Denver").as_ptr(), c("the Denver Broncos").as_ptr(), &mut em, &mut f1);
        assert_eq!(st, AdvgenStatus::Ok);
        assert!(!em);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(advgen_normalize_answer(ptr::null(), &mut out), AdvgenStatus::NullPointer);
        assert!(last_error().contains("text"));

        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(advgen_normalize_answer(bad.as_ptr().cast(), &mut out), AdvgenStatus::InvalidUtf8);

        let mut idx = 0usize;
        assert_eq!(advgen_assign_arm(c("a").as_ptr(), 0, &mut idx), AdvgenStatus::InvalidArgument);
        assert_eq!(advgen_assign_arm(c("annotator-0001").as_ptr(), 4, &mut idx), AdvgenStatus::Ok);
        assert_eq!(idx, 2);

        assert_eq!(
            advgen_self_train_relabel(c("{not json").as_ptr(), c("x").as_ptr(), 5, 2, &mut out),
            AdvgenStatus::Json
        );
    }
}

#[test]
fn sal_forward_matches_core() {
    let (len, d_k) = (5usize, 3usize);
    let q: Vec<f64> = (0..len * d_k).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
    let k: Vec<f64> = (0..len * d_k).map(|i| ((i * 5 % 13) as f64 - 6.0) / 4.0).collect();
    let mut probs = vec![-1.0; len * len];
    let st = unsafe { advgen_sal_forward(q.as_ptr(), k.as_ptr(), len, d_k, 2, 1, 5, probs.as_mut_ptr()) };
    assert_eq!(st, AdvgenStatus::Ok);
    for i in 0..len {
        for j in 0..len {
            let p = probs[i * len + j];
            let admissible = i <= j && j - i < 2 && i >= 1;
            if admissible {
                let dot: f64 = (0..d_k).map(|t| q[i * d_k + t] * k[j * d_k + t]).sum();
                let want = 1.0 / (1.0 + (-dot / (d_k as f64).sqrt()).exp());
                assert!((p - want).abs() < 1e-12, "({i},{j})");
            } else {
                assert_eq!(p, 0.0, "({i},{j})");
            }
        }
    }
    let st = unsafe { advgen_sal_forward(q.as_ptr(), k.as_ptr(), len, 0, 2, 0, 5, probs.as_mut_ptr()) };
    assert_eq!(st, AdvgenStatus::Shape);
}

#[test]
fn relabel_and_decontaminate() {
    unsafe {
        let verdict = json!({
            "example_id": "e",
            "n_correct": 0,
            "predictions": [
                {"text": "Apple", "confidence": 0.5}, {"text": "Apple", "confidence": 0.5},
                {"text": "Apple", "confidence": 0.5}, {"text": "Pear", "confidence": 0.9},
                {"text": "Pear", "confidence": 0.9}, {"text": "Fig", "confidence": 0.9}
            ]
        });
        let mut out = ptr::null_mut();
        let st = advgen_self_train_relabel(c(&verdict.to_string()).as_ptr(), c("Fig").as_ptr(), 5, 2, &mut out);
        assert_eq!(st, AdvgenStatus::Ok);
        let d = take_json(out);
        assert_eq!(d["state"], "relabelled");
        assert_eq!(d["answer"], "Apple");

        let text = "one two three four five six seven eight nine ten";
        let cands = json!([
            {"id": "a", "text": text, "source": "external"},
            {"id": "b", "text": "completely different words live here in this passage today", "source": "external"}
        ]);
        let eval = json!([{"id": "e", "text": format!("prefix {text} suffix"), "source": "eval_set"}]);
        let st = advgen_decontaminate(c(&cands.to_string()).as_ptr(), c(&eval.to_string()).as_ptr(), 8, &mut out);
        assert_eq!(st, AdvgenStatus::Ok, "{}", last_error());
        let d = take_json(out);
        assert_eq!(d["kept"][0]["id"], "b");
        assert_eq!(d["dropped"][0]["id"], "a");
    }
}

unsafe extern "C" fn echo_model(
    _ctx: *mut c_void,
    _arm: *const c_char,
    _passage: *const c_char,
    question: *const c_char,
    out: *mut c_char,
    cap: usize,
) -> i32 {
    // Answers "Scheele" unless the question mentions Priestley.
    let q = CStr::from_ptr(question).to_string_lossy();
    let ans: &[u8] = if q.contains("Priestley") { b"Joseph Priestley\0" } else { b"Scheele\0" };
    if ans.len() > cap {
        return 1;
    }
    ptr::copy_nonoverlapping(ans.as_ptr().cast(), out, ans.len());
    0
}

#[test]
fn eval_service_handle() {
    let passages = json!([{
        "id": "p1",
        "text": "Oxygen was discovered by Carl Wilhelm Scheele in Uppsala in 1773. Joseph Priestley published in 1774.",
        "source": "eval_set"
    }]);
    let config = json!({"arms": ["model-a", "model-b"]});
    unsafe {
        let mut svc = ptr::null_mut();
        let st = advgen_eval_service_new(
            c(&config.to_string()).as_ptr(),
            c(&passages.to_string()).as_ptr(),
            ptr::null(),
            Some(echo_model),
            ptr::null_mut(),
            &mut svc,
        );
        assert_eq!(st, AdvgenStatus::Ok, "{}", last_error());

        let mut out = ptr::null_mut();
        assert_eq!(advgen_eval_service_start_session(svc, c("ann-1").as_ptr(), &mut out), AdvgenStatus::Ok);
        let start = take_json(out);
        let session = start["session_id"].as_str().unwrap().to_string();
        let token = start["arm_token"].as_str().unwrap().to_string();
        assert!(!start.to_string().contains("model-"));

        // Questions are refused until onboarding passes.
        let text = passages[0]["text"].as_str().unwrap();
        let span = |a: &str| {
            let s = text.find(a).unwrap();
            (s, s + a.len())
        };
        let (s0, e0) = span("1773");
        let st = advgen_eval_service_submit_question(svc, c(&session).as_ptr(), c("When?").as_ptr(), s0, e0, &mut out);
        assert_eq!(st, AdvgenStatus::Rejected);

        let core = advgen::eval_service::default_onboarding();
        let answers: Vec<(usize, usize)> = core.iter().map(|i| (i.answer_start, i.answer_end)).collect();
        let st = advgen_eval_service_submit_onboarding(
            svc,
            c(&session).as_ptr(),
            c(&serde_json::to_string(&answers).unwrap()).as_ptr(),
            &mut out,
        );
        assert_eq!(st, AdvgenStatus::Ok, "{}", last_error());
        assert_eq!(take_json(out)["passed"], true);

        let st = advgen_eval_service_submit_question(svc, c(&session).as_ptr(), c("In what year?").as_ptr(), s0, e0, &mut out);
        assert_eq!(st, AdvgenStatus::Ok, "{}", last_error());
        let r1 = take_json(out);
        assert_eq!(r1["fooled"], true);
        let (s1, e1) = span("Joseph Priestley");
        let st = advgen_eval_service_submit_question(svc, c(&session).as_ptr(), c("Who, Priestley?").as_ptr(), s1, e1, &mut out);
        assert_eq!(st, AdvgenStatus::Ok);
        let r2 = take_json(out);
        assert_eq!(r2["fooled"], false);

        assert_eq!(advgen_eval_service_validation_queue(svc, &mut out), AdvgenStatus::Ok);
        assert_eq!(take_json(out).as_array().unwrap().len(), 1);
        let id = r1["record_id"].as_str().unwrap();
        assert_eq!(advgen_eval_service_validate(svc, c(id).as_ptr(), true, c("v1").as_ptr()), AdvgenStatus::Ok);
        assert_eq!(advgen_eval_service_validate(svc, c(id).as_ptr(), false, c("v1").as_ptr()), AdvgenStatus::State);

        assert_eq!(advgen_eval_service_export_stats(svc, c(&token).as_ptr(), &mut out), AdvgenStatus::Ok, "{}", last_error());
        let stats = take_json(out);
        assert!((stats["vmer"].as_f64().unwrap() - 50.0).abs() < 1e-9, "{stats}");
        assert_eq!(advgen_eval_service_export_stats(svc, c("arm-000000000000").as_ptr(), &mut out), AdvgenStatus::NotFound);

        advgen_eval_service_free(svc);
        advgen_eval_service_free(ptr::null_mut());
    }
}

#[test]
fn header_compiles_and_links_from_c() {
    let Ok(cc) = std::env::var("CC").or_else(|_| which("cc")) else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include/advgen.h");
    assert!(header.exists(), "build script did not write the header");
    // The test binary lives in target/<profile>/deps; the static library one level up.
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    if !lib_dir.join("libadvgen_ffi.a").exists() {
        eprintln!("static library not built; skipping");
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let bin = tmp.path().join("smoke");
    let status = Command::new(&cc)
        .arg(crate_dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(lib_dir.join("libadvgen_ffi.a"))
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}

fn which(name: &str) -> Result<String, ()> {
    std::env::var_os("PATH")
        .and_then(|paths| std::env::split_paths(&paths).map(|p| p.join(name)).find(|p| p.is_file()))
        .map(|p| p.to_string_lossy().into_owned())
        .ok_or(())
}
