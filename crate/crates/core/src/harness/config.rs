//! Sectioned key=value config files. Keys not given keep their defaults;
//! unknown sections or keys are rejected. Angles are written in degrees.

use std::path::Path;

use ini::Ini;

use super::{ExperimentConfig, HarnessError};
use crate::geometry::Vec3;

fn bad(section: &str, key: &str, value: &str) -> HarnessError {
    HarnessError::Config(format!("[{section}] {key} = {value:?} is not valid"))
}

fn num<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T, HarnessError> {
    value.trim().parse().map_err(|_| bad(section, key, value))
}

fn vec3(section: &str, key: &str, value: &str) -> Result<Vec3, HarnessError> {
    let parts: Vec<f64> = value.split(',').map(|p| num(section, key, p)).collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [x, y, z] => Ok(Vec3::new(*x, *y, *z)),
        _ => Err(bad(section, key, value)),
    }
}

fn deg(section: &str, key: &str, value: &str) -> Result<f64, HarnessError> {
    num::<f64>(section, key, value).map(f64::to_radians)
}

fn apply(cfg: &mut ExperimentConfig, section: &str, key: &str, v: &str) -> Result<(), HarnessError> {
    let (s, k) = (section, key);
    let w = &mut cfg.world;
    match (s, k) {
        ("cameras", "fx") => w.stereo_fx = num(s, k, v)?,
        ("cameras", "fy") => w.stereo_fy = num(s, k, v)?,
        ("cameras", "cx") => w.stereo_cx = num(s, k, v)?,
        ("cameras", "cy") => w.stereo_cy = num(s, k, v)?,
        ("cameras", "width") => w.stereo_width = num(s, k, v)?,
        ("cameras", "height") => w.stereo_height = num(s, k, v)?,
        ("cameras", "baseline") => w.baseline = num(s, k, v)?,
        ("cameras", "stereo_position") => w.stereo_position = vec3(s, k, v)?,
        ("cameras", "overhead_f") => w.overhead_f = num(s, k, v)?,
        ("cameras", "overhead_width") => w.overhead_width = num(s, k, v)?,
        ("cameras", "overhead_height") => w.overhead_height = num(s, k, v)?,
        ("cameras", "overhead_position") => w.overhead_position = vec3(s, k, v)?,
        ("noise", "systematic_sigma") => w.actuation.systematic_sigma = num(s, k, v)?,
        ("noise", "jitter_sigma") => w.actuation.jitter_sigma = num(s, k, v)?,
        ("noise", "rot_jitter_deg") => w.actuation.rot_jitter_sigma = deg(s, k, v)?,
        ("noise", "dropout") => w.render_noise.dropout = num(s, k, v)?,
        ("noise", "blob_rate") => w.render_noise.blob_rate = num(s, k, v)?,
        ("noise", "blob_radius_px") => w.render_noise.blob_radius_px = num(s, k, v)?,
        ("noise", "in_hand_deg") => w.in_hand_sigma = deg(s, k, v)?,
        ("noise", "label_flip_rate") => cfg.label_flip_rate = num(s, k, v)?,
        ("needle", "arc_extent_deg") => w.arc_extent = deg(s, k, v)?,
        ("needle", "occlusion_radius") => w.occlusion_radius = num(s, k, v)?,
        ("needle", "capture_half_widths") => w.capture_half_widths = vec3(s, k, v)?,
        ("servo", "max_iterations") => {
            let n = num(s, k, v)?;
            cfg.acquire.servo.max_iterations = n;
            cfg.handover.servo.max_iterations = n;
        }
        ("servo", "tolerance") => {
            let t = num(s, k, v)?;
            cfg.acquire.servo.tolerance = t;
            cfg.handover.servo.tolerance = t;
        }
        ("servo", "step_cap") => {
            let c = num(s, k, v)?;
            cfg.acquire.servo.step_cap = c;
            cfg.handover.servo.step_cap = c;
        }
        ("servo", "acquire_increment_deg") => cfg.acquire.increment = deg(s, k, v)?,
        ("servo", "max_rotations") => cfg.acquire.max_rotations = num(s, k, v)?,
        ("servo", "flat_tolerance_deg") => cfg.handover.flat_tolerance = deg(s, k, v)?,
        ("servo", "tip_tolerance_deg") => cfg.handover.tip_tolerance = deg(s, k, v)?,
        ("servo", "trans_tol") => cfg.handover.trans_tol = vec3(s, k, v)?,
        ("grasp", "beta_decay") => cfg.grasp.beta_decay = num(s, k, v)?,
        ("grasp", "stop_threshold") => cfg.grasp.stop_threshold = num(s, k, v)?,
        ("grasp", "initial_step") => cfg.grasp.initial_step = num(s, k, v)?,
        ("grasp", "descent") => cfg.grasp.descent = num(s, k, v)?,
        ("grasp", "max_steps") => cfg.grasp.max_steps = num(s, k, v)?,
        ("grasp", "grasp_offset_deg") => cfg.grasp.grasp_offset = deg(s, k, v)?,
        ("sim", "workspace_center") => w.workspace_center = vec3(s, k, v)?,
        ("sim", "remote_center_left") => w.remote_centers[0] = vec3(s, k, v)?,
        ("sim", "remote_center_right") => w.remote_centers[1] = vec3(s, k, v)?,
        ("sim", "home_left") => w.home_positions[0] = vec3(s, k, v)?,
        ("sim", "home_right") => w.home_positions[1] = vec3(s, k, v)?,
        ("sim", "reach") => w.reach = vec3(s, k, v)?,
        ("sim", "tau_max") => w.tau_max = num(s, k, v)?,
        ("sim", "step_latency") => w.step_latency = num(s, k, v)?,
        ("ransac", "inlier_radius") => cfg.ransac.inlier_radius = num(s, k, v)?,
        ("ransac", "iterations") => cfg.ransac.iterations = num(s, k, v)?,
        ("ransac", "min_inliers") => cfg.ransac.min_inliers = num(s, k, v)?,
        ("ransac", "seed") => cfg.ransac.seed = num(s, k, v)?,
        _ => return Err(HarnessError::Config(format!("unknown key [{s}] {k}"))),
    }
    Ok(())
}

/// Overlays the file's settings on `base`.
pub fn parse_config(text: &str, base: &ExperimentConfig) -> Result<ExperimentConfig, HarnessError> {
    let ini = Ini::load_from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut cfg = base.clone();
    for (section, props) in ini.iter() {
        let section = section.unwrap_or("");
        for (key, value) in props.iter() {
            apply(&mut cfg, section, key, value)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path, base: &ExperimentConfig) -> Result<ExperimentConfig, HarnessError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| HarnessError::IoFailure(format!("{}: {e}", path.display())))?;
    parse_config(&text, base)
}

fn v3(v: &Vec3) -> String {
    format!("{}, {}, {}", v.x, v.y, v.z)
}

/// Every key with its current value, in the format `parse_config` reads.
pub fn to_ini(cfg: &ExperimentConfig) -> String {
    let w = &cfg.world;
    let d = f64::to_degrees;
    let sections: Vec<(&str, Vec<(&str, String)>)> = vec![
        (
            "cameras",
            vec![
                ("fx", w.stereo_fx.to_string()),
                ("fy", w.stereo_fy.to_string()),
                ("cx", w.stereo_cx.to_string()),
                ("cy", w.stereo_cy.to_string()),
                ("width", w.stereo_width.to_string()),
                ("height", w.stereo_height.to_string()),
                ("baseline", w.baseline.to_string()),
                ("stereo_position", v3(&w.stereo_position)),
                ("overhead_f", w.overhead_f.to_string()),
                ("overhead_width", w.overhead_width.to_string()),
                ("overhead_height", w.overhead_height.to_string()),
                ("overhead_position", v3(&w.overhead_position)),
            ],
        ),
        (
            "noise",
            vec![
                ("systematic_sigma", w.actuation.systematic_sigma.to_string()),
                ("jitter_sigma", w.actuation.jitter_sigma.to_string()),
                ("rot_jitter_deg", d(w.actuation.rot_jitter_sigma).to_string()),
                ("dropout", w.render_noise.dropout.to_string()),
                ("blob_rate", w.render_noise.blob_rate.to_string()),
                ("blob_radius_px", w.render_noise.blob_radius_px.to_string()),
                ("in_hand_deg", d(w.in_hand_sigma).to_string()),
                ("label_flip_rate", cfg.label_flip_rate.to_string()),
            ],
        ),
        (
            "needle",
            vec![
                ("arc_extent_deg", d(w.arc_extent).to_string()),
                ("occlusion_radius", w.occlusion_radius.to_string()),
                ("capture_half_widths", v3(&w.capture_half_widths)),
            ],
        ),
        (
            "servo",
            vec![
                ("max_iterations", cfg.handover.servo.max_iterations.to_string()),
                ("tolerance", cfg.handover.servo.tolerance.to_string()),
                ("step_cap", cfg.handover.servo.step_cap.to_string()),
                ("acquire_increment_deg", d(cfg.acquire.increment).to_string()),
                ("max_rotations", cfg.acquire.max_rotations.to_string()),
                ("flat_tolerance_deg", d(cfg.handover.flat_tolerance).to_string()),
                ("tip_tolerance_deg", d(cfg.handover.tip_tolerance).to_string()),
                ("trans_tol", v3(&cfg.handover.trans_tol)),
            ],
        ),
        (
            "grasp",
            vec![
                ("beta_decay", cfg.grasp.beta_decay.to_string()),
                ("stop_threshold", cfg.grasp.stop_threshold.to_string()),
                ("initial_step", cfg.grasp.initial_step.to_string()),
                ("descent", cfg.grasp.descent.to_string()),
                ("max_steps", cfg.grasp.max_steps.to_string()),
                ("grasp_offset_deg", d(cfg.grasp.grasp_offset).to_string()),
            ],
        ),
        (
            "sim",
            vec![
                ("workspace_center", v3(&w.workspace_center)),
                ("remote_center_left", v3(&w.remote_centers[0])),
                ("remote_center_right", v3(&w.remote_centers[1])),
                ("home_left", v3(&w.home_positions[0])),
                ("home_right", v3(&w.home_positions[1])),
                ("reach", v3(&w.reach)),
                ("tau_max", w.tau_max.to_string()),
                ("step_latency", w.step_latency.to_string()),
            ],
        ),
        (
            "ransac",
            vec![
                ("inlier_radius", cfg.ransac.inlier_radius.to_string()),
                ("iterations", cfg.ransac.iterations.to_string()),
                ("min_inliers", cfg.ransac.min_inliers.to_string()),
                ("seed", cfg.ransac.seed.to_string()),
            ],
        ),
    ];
    let mut out = String::new();
    for (name, keys) in sections {
        out.push_str(&format!("[{name}]\n"));
        for (k, v) in keys {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push('\n');
    }
    out
}
