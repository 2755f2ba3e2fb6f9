use std::ffi::{CStr, CString};
use std::ptr;

use harvest_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(harvest_last_error()) }.to_string_lossy().into_owned()
}

struct Handles {
    model: *mut HarvestModel,
    portrait: *mut HarvestPortrait,
}

impl Handles {
    fn fix1() -> Self {
        let mut model = ptr::null_mut();
        let mut portrait = ptr::null_mut();
        unsafe {
            assert_eq!(harvest_model_fix1(&mut model), HarvestStatus::Ok);
            assert_eq!(harvest_portrait_build(model, &mut portrait), HarvestStatus::Ok);
        }
        Self { model, portrait }
    }
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            harvest_portrait_free(self.portrait);
            harvest_model_free(self.model);
        }
    }
}

#[test]
fn constants_match_the_fixture() {
    let h = Handles::fix1();
    let mut c = HarvestConstants::default();
    assert_eq!(unsafe { harvest_model_constants(h.model, &mut c) }, HarvestStatus::Ok);
    assert!((c.x_tilde - 0.375).abs() < 1e-12);
    assert!((c.kappa - 1.6).abs() < 1e-15);
    assert!(c.x_tilde < c.x_star && c.k_tilde > c.k_star);
}

#[test]
fn classify_and_value_at_the_singular_point() {
    let h = Handles::fix1();
    let mut c = HarvestConstants::default();
    let mut region = HarvestRegion::Unsupported;
    let mut j = 0.0;
    unsafe {
        harvest_model_constants(h.model, &mut c);
        assert_eq!(harvest_classify(h.portrait, c.x_star, c.k_star, &mut region), HarvestStatus::Ok);
        assert_eq!(harvest_value(h.portrait, c.x_star, c.k_star, 40.0, &mut j), HarvestStatus::Ok);
    }
    assert_eq!(region, HarvestRegion::SingularPoint);
    let closed = c.k_star * (0.1 * 0.1 + 0.5 - 2.0 * c.x_star) / 1.5;
    assert!((j - closed).abs() < 1e-9);
}

#[test]
fn simulate_returns_owned_strings() {
    let h = Handles::fix1();
    let mut schedule = ptr::null_mut();
    let mut csv = ptr::null_mut();
    unsafe {
        assert_eq!(harvest_simulate(h.portrait, 0.375, 1.0, 40.0, 0.05, &mut schedule, &mut csv), HarvestStatus::Ok);
        let text = CStr::from_ptr(schedule).to_str().unwrap();
        let v: serde_json::Value = serde_json::from_str(text).unwrap();
        assert_eq!(v["phases"][0]["phase"], "SingularTildeArc");
        assert!(CStr::from_ptr(csv).to_str().unwrap().starts_with("t,x,K,u,z,lambda,J_running\n"));
        harvest_string_free(schedule);
        harvest_string_free(csv);

        // The trajectory is optional.
        let mut only = ptr::null_mut();
        assert_eq!(harvest_simulate(h.portrait, 0.1, 0.3, 40.0, 0.05, &mut only, ptr::null_mut()), HarvestStatus::Ok);
        harvest_string_free(only);
    }
}

#[test]
fn error_codes() {
    let h = Handles::fix1();
    let mut j = 0.0;
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(harvest_value(ptr::null(), 0.5, 0.5, 40.0, &mut j), HarvestStatus::NullPointer);
        assert!(last_error().contains("portrait"));
        assert_eq!(harvest_value(h.portrait, 0.5, 0.5, 40.0, ptr::null_mut()), HarvestStatus::NullPointer);
        assert_eq!(harvest_value(h.portrait, 1.5, 0.5, 40.0, &mut j), HarvestStatus::Unsupported);
        assert_eq!(harvest_value(h.portrait, 0.5, 0.5, -1.0, &mut j), HarvestStatus::InvalidArgument);
        assert_eq!(harvest_value(h.portrait, f64::NAN, 0.5, 40.0, &mut j), HarvestStatus::InvalidArgument);

        let bad = CString::new("{not json").unwrap();
        assert_eq!(harvest_model_from_json(bad.as_ptr(), &mut m), HarvestStatus::Parse);
        assert!(m.is_null());
        let g0 = CString::new(r#"{"production":{"type":"logistic","a":1,"k":1},"delta":1.5,"gamma":0,"p":2,"c":0.5,"r":0.1}"#).unwrap();
        assert_eq!(harvest_model_from_json(g0.as_ptr(), &mut m), HarvestStatus::AssumptionFailure);
        assert!(last_error().contains("V2"));
        assert_eq!(harvest_model_from_json(ptr::null(), &mut m), HarvestStatus::NullPointer);

        let ok = CString::new(r#"{"production":{"type":"logistic","a":1,"k":1},"delta":1.5,"gamma":0.1,"p":2,"c":0.5,"r":0.1}"#).unwrap();
        assert_eq!(harvest_model_from_json(ok.as_ptr(), &mut m), HarvestStatus::Ok);
        assert!(last_error().is_empty());
        harvest_model_free(m);

        // Freeing null is a no-op.
        harvest_model_free(ptr::null_mut());
        harvest_portrait_free(ptr::null_mut());
        harvest_string_free(ptr::null_mut());
    }
}

#[test]
fn status_messages_are_static() {
    for s in [HarvestStatus::Ok, HarvestStatus::Parse, HarvestStatus::Panic] {
        let msg = unsafe { CStr::from_ptr(harvest_status_message(s)) };
        assert!(!msg.to_bytes().is_empty());
    }
}
