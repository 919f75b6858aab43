// temporary diagnostic, removed before ship
use splatrig_core::io;
use splatrig_core::losses::{total_loss, LossWeights};
use splatrig_core::mesh_rig::{all_frames, pose, FrameData};
use splatrig_core::renderer::{rasterize_backward, rasterize_forward, RenderOptions};
use splatrig_core::splat_model::init_avatar;
use splatrig_core::trainer::{backward_chain, project_splats};

#[test]
#[ignore]
fn measure_mean2d_grads() {
    let dataset = io::load_dataset(std::path::Path::new("/tmp/ds_full/manifest.json")).unwrap();
    let avatar = init_avatar(dataset.topology.clone(), &dataset.neutral_vertices).unwrap();
    let frame = &dataset.frames[0];
    let FrameData::Params(params) = &frame.data else { panic!() };
    let vertices = pose(dataset.rig.as_ref().unwrap(), params).unwrap();
    let tri_frames = all_frames(&vertices, &avatar.topology).unwrap();
    let (_, cam) = &dataset.cameras[0];
    let target = &frame.images[0].1;

    let (globals, projected) = project_splats(&avatar, &tri_frames, cam, 0);
    let opts = RenderOptions { retain_state: true, ..Default::default() };
    let rendered = rasterize_forward(&projected, cam.width as usize, cam.height as usize, &opts);
    let loss = total_loss(&rendered.image, target, &avatar.splats, &rendered.visible, &LossWeights::default()).unwrap();
    println!("l1 {} dssim {}", loss.l1, loss.dssim);
    let back = rasterize_backward(&rendered, &projected, &loss.d_image).unwrap();
    let mut norms: Vec<f64> = back.grads.iter().map(|g| g.mean2d_norm()).collect();
    norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| norms[((norms.len() - 1) as f64 * p) as usize];
    println!(
        "mean2d grad norms: p10 {:.2e} p50 {:.2e} p90 {:.2e} max {:.2e}",
        q(0.1), q(0.5), q(0.9), q(1.0)
    );
    let over = norms.iter().filter(|&&n| n > 2e-4).count();
    println!("over threshold 2e-4: {over}/{}", norms.len());
    let _ = backward_chain(&avatar, &tri_frames, &globals, &projected, cam, 0, &back, &loss);
}
