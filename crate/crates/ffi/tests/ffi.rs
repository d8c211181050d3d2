use std::ffi::{c_char, CString};
use std::ptr;

use ucfollow_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { ucf_last_error_message(buf.as_mut_ptr() as *mut c_char, buf.len()) };
    String::from_utf8_lossy(&buf[..n.min(255)]).into_owned()
}

struct Image {
    rgb: Vec<f64>,
    depth: Vec<f64>,
    width: usize,
    height: usize,
}

impl Image {
    /// Gray background at 6 m with a red block at 2 m whose left edge is `x0`.
    fn with_block(x0: usize) -> Image {
        let (width, height) = (64, 48);
        let mut rgb = vec![0.5; width * height * 3];
        let mut depth = vec![6.0; width * height];
        for r in 12..36 {
            for c in x0..x0 + 10 {
                let p = r * width + c;
                rgb[3 * p..3 * p + 3].copy_from_slice(&[0.9, 0.1, 0.1]);
                depth[p] = 2.0;
            }
        }
        Image {
            rgb,
            depth,
            width,
            height,
        }
    }

    fn frame(&self) -> UcfFrame {
        UcfFrame {
            width: self.width,
            height: self.height,
            rgb: self.rgb.as_ptr(),
            depth: self.depth.as_ptr(),
            max_depth: 10.0,
        }
    }
}

#[test]
fn iou_and_errors() {
    let a = UcfBox {
        x1: 0.0,
        y1: 0.0,
        x2: 2.0,
        y2: 2.0,
    };
    let b = UcfBox {
        x1: 1.0,
        y1: 1.0,
        x2: 3.0,
        y2: 3.0,
    };
    let mut out = 0.0;
    assert_eq!(unsafe { ucf_iou(&a, &b, &mut out) }, UcfStatus::Ok);
    assert!((out - 1.0 / 7.0).abs() < 1e-12);
    assert_eq!(unsafe { ucf_iou(&a, ptr::null(), &mut out) }, UcfStatus::NullPointer);
    assert!(last_error().contains("null"));
    let bad = UcfBox {
        x1: 1.0,
        y1: 0.0,
        x2: 0.5,
        y2: 1.0,
    };
    assert_eq!(unsafe { ucf_iou(&a, &bad, &mut out) }, UcfStatus::Contract);
    assert!(!last_error().is_empty());
}

#[test]
fn baseline_tracks_through_the_c_abi() {
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(ucf_tracker_new_baseline(4.0, &mut t), UcfStatus::Ok);
        let (first, second) = (Image::with_block(20), Image::with_block(24));
        let mut out = UcfBox {
            x1: 0.0,
            y1: 0.0,
            x2: 0.0,
            y2: 0.0,
        };
        assert_eq!(ucf_tracker_step(t, &first.frame(), &mut out, ptr::null_mut()), UcfStatus::Contract);
        let init = UcfBox {
            x1: 20.0 / 64.0,
            y1: 12.0 / 48.0,
            x2: 30.0 / 64.0,
            y2: 36.0 / 48.0,
        };
        assert_eq!(ucf_tracker_init(t, &first.frame(), &init), UcfStatus::Ok);
        let mut conf = 0.0;
        assert_eq!(ucf_tracker_step(t, &second.frame(), &mut out, &mut conf), UcfStatus::Ok);
        assert!((out.x1 - 24.0 / 64.0).abs() < 1e-9, "{out:?}");
        assert!((0.0..=1.0).contains(&conf));
        let mut d = 0.0;
        assert_eq!(ucf_depth_at_box(&second.frame(), &out, &mut d), UcfStatus::Ok);
        assert_eq!(d, 2.0);
        ucf_tracker_free(t);
    }
}

#[test]
fn dtrd_tracker_lifecycle() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(ucf_model_new_untrained(3, &mut m), UcfStatus::Ok);
        let mut t = ptr::null_mut();
        assert_eq!(ucf_tracker_new_dtrd(m, false, &mut t), UcfStatus::Ok);
        ucf_model_free(m);
        let img = Image::with_block(20);
        let init = UcfBox {
            x1: 0.3,
            y1: 0.25,
            x2: 0.47,
            y2: 0.75,
        };
        assert_eq!(ucf_tracker_init(t, &img.frame(), &init), UcfStatus::Ok);
        let mut out = init;
        assert_eq!(ucf_tracker_step(t, &img.frame(), &mut out, ptr::null_mut()), UcfStatus::Ok);
        assert!(out.x1 < out.x2 && out.y1 < out.y2);
        ucf_tracker_free(t);

        let missing = CString::new("/nonexistent/dtrd.ckpt").unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(ucf_model_load(missing.as_ptr(), &mut m), UcfStatus::Io);
        assert!(m.is_null());
    }
}

#[test]
fn controller_round_trip() {
    unsafe {
        let mut cfg = std::mem::zeroed::<UcfControlConfig>();
        assert_eq!(ucf_control_config_default(&mut cfg), UcfStatus::Ok);
        assert_eq!(cfg.follow_distance, 2.0);
        let mut c = ptr::null_mut();
        assert_eq!(ucf_controller_new(&cfg, &mut c), UcfStatus::Ok);
        let centered = UcfBox {
            x1: 0.4,
            y1: 0.2,
            x2: 0.6,
            y2: 0.9,
        };
        let (mut v, mut w) = (1.0, 1.0);
        assert_eq!(ucf_controller_follow(c, &centered, 2.0, 0.05, &mut v, &mut w), UcfStatus::Ok);
        assert_eq!((v, w), (0.0, 0.0));
        assert_eq!(ucf_controller_follow(c, &centered, 3.0, 0.05, &mut v, &mut w), UcfStatus::Ok);
        assert!(v > 0.0);
        assert_eq!(ucf_controller_follow(c, ptr::null(), 0.0, 0.05, &mut v, &mut w), UcfStatus::Ok);
        assert_eq!((v, w), (0.0, 0.0));
        assert_eq!(ucf_controller_follow(c, &centered, 3.0, 0.0, &mut v, &mut w), UcfStatus::Contract);
        ucf_controller_free(c);

        cfg.v_min = 2.0;
        cfg.v_max = 1.0;
        let mut c = ptr::null_mut();
        assert_eq!(ucf_controller_new(&cfg, &mut c), UcfStatus::Config);
    }
}

#[test]
fn generated_header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/ucfollow.h")).unwrap();
    for name in [
        "ucf_iou",
        "ucf_model_load",
        "ucf_tracker_new_baseline",
        "ucf_tracker_new_dtrd",
        "ucf_tracker_init",
        "ucf_tracker_step",
        "ucf_controller_follow",
        "ucf_last_error_message",
        "UCF_STATUS_OK",
        "typedef struct UcfTracker UcfTracker",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
    // The header must be valid C on its own when a compiler is around.
    if let Ok(out) = std::process::Command::new("cc")
        .args(["-std=c99", "-fsyntax-only", "-x", "c", "-"])
        .arg("-I")
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .and_then(|mut child| {
            use std::io::Write;
            child.stdin.take().unwrap().write_all(b"#include \"ucfollow.h\"\nint main(void){return 0;}\n")?;
            child.wait_with_output()
        })
    {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
