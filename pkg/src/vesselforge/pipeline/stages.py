"""The six pipeline stages.  Each reads declared inputs and writes into its own folder."""

from __future__ import annotations

import dataclasses
import json

import numpy as np
import torch

from ..lddmm import DeformLossConfig, FlowConfig, OptimConfig, ScalingGate, optimize_momenta
from ..lddmm.energy import misalignment_energy
from ..lddmm.optimize import write_history_csv, write_state_json
from ..logbseg import (
    BalancedGate, NetConfig, SegNetwork, TrainConfig, load_checkpoint, predict_samples,
    save_checkpoint, train, write_loss_csv,
)
from ..logbseg.inference import ensemble_from_samples
from ..mesh import (
    MeshError, largest_component, marching_cubes, quality_report, read_obj, remesh_uniform,
    smooth_minimize, write_obj,
)
from ..metrics import (
    MetricError, asd, dice_voxel, hausdorff, snr_std_regression, surface_ensemble_stats,
    write_metrics_csv, write_std_sidecar,
)
from ..phantom import (
    Centerline, InletOutletSpec, PhantomSpec, analytic_surface, branching_spec, centerline_sdf,
    make_phantom, phantom_sdf, random_vessel_spec, straight_tube_spec,
)
from ..volume import PreprocessConfig, VoxelGrid, clip_normalize, gradient_magnitude_field, load_volume, save_volume


def _sub_seed(seed, k):
    return int(np.random.SeedSequence([seed, k]).generate_state(1)[0] >> 1)


def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _preprocess(cfg):
    pre = cfg.params["preprocess"]
    return PreprocessConfig(float(pre["clip_lo"]), float(pre["clip_hi"]), crop_dims=tuple(pre["crop_dims"]))


# ---------------------------------------------------------------------------
# phantom


def _case_spec(ph, seed):
    dims = tuple(ph["dims"])
    common = dict(
        foreground=float(ph["foreground"]), background=float(ph["background"]), noise_sd=float(ph["noise_sd"]),
        blur_sigma=float(ph["blur_sigma"]), seed=seed, cap_buffer=float(ph["cap_buffer"]),
    )
    kind = ph["kind"]
    if kind != "custom" and tuple(ph["spacing"]) != (1.0, 1.0, 1.0):
        raise ValueError(f"phantom kind {kind!r} is generated on a unit-spacing grid")
    if kind == "tube":
        return straight_tube_spec(float(ph["radius"]), dims, int(ph["axis"]), **common)
    if kind == "branching":
        return branching_spec(float(ph["trunk_radius"]), float(ph["branch_radius"]), int(ph["n_branches"]), dims,
                              **common)
    if kind == "random":
        spec = random_vessel_spec(seed, dims)
        return dataclasses.replace(spec, **common)
    cls = tuple(Centerline(c["points"], c["radii"]) for c in ph["centerlines"])
    return PhantomSpec(dims=dims, spacing=tuple(ph["spacing"]), centerlines=cls, **common)


def truth_surface(spec: PhantomSpec):
    if len(spec.centerlines) == 1:
        return analytic_surface(spec)
    # iso-surface of the signed distance; sign flipped so the inside is high
    grid = spec.empty_grid()
    sdf = phantom_sdf(grid.coordinates().reshape(-1, 3), spec.centerlines).reshape(spec.dims)
    return marching_cubes(grid.with_data(-sdf), 0.0)


def stage_phantom(ctx):
    ph = ctx.cfg.block("phantom")
    if ph["kind"] == "import":
        image = load_volume(ctx.external_input("image.nrrd"))
        save_volume(image, ctx.output("image.nrrd"))
        for name in ("label.nrrd", "io.json"):
            if any(p.endswith(name) for p in ctx.external):
                data = ctx.external_input(name).read_bytes()
                ctx.output(name).write_bytes(data)
    else:
        spec = _case_spec(ph, _sub_seed(ctx.seed, 0))
        image, label, io = make_phantom(spec)
        save_volume(image, ctx.output("image.nrrd"))
        save_volume(label, ctx.output("label.nrrd"))
        _write_json(io.to_dict(), ctx.output("io.json"))
        _write_json(spec.to_dict(), ctx.output("spec.json"))
        write_obj(truth_surface(spec), ctx.output("truth.obj"))
    for k in range(int(ph["train_cases"])):
        spec = random_vessel_spec(_sub_seed(ctx.seed, k + 1), tuple(ph["dims"]), float(ph["train_noise_sd"]),
                                  float(ph["blur_sigma"]))
        image, label, _ = make_phantom(spec)
        save_volume(image, ctx.output(f"train_cases/{k:03d}_image.nrrd"))
        save_volume(label, ctx.output(f"train_cases/{k:03d}_label.nrrd"))


# ---------------------------------------------------------------------------
# train / segment


def stage_train(ctx):
    images = ctx.inputs_matching("phantom/train_cases/*_image.nrrd")
    labels = ctx.inputs_matching("phantom/train_cases/*_label.nrrd")
    dataset = [(load_volume(i), load_volume(l)) for i, l in zip(images, labels)]
    net_p = ctx.cfg.block("network")
    tr = ctx.cfg.block("train")
    net = SegNetwork(NetConfig(
        blocks=net_p["blocks"], channels=net_p["channels"], scales=tuple(tuple(s) for s in net_p["scales"]),
        learn_sigma=net_p["learn_sigma"], init_logvar=float(net_p["init_logvar"]), seed=_sub_seed(ctx.seed, 0),
    ))
    tcfg = TrainConfig(
        lr=float(tr["lr"]), epochs=int(tr["epochs"]), batch_size=int(tr["batch_size"]),
        beta=None if tr["beta"] is None else float(tr["beta"]), seed=_sub_seed(ctx.seed, 1),
        crop=tuple(tr["crop"]), pool_size=int(tr["pool_size"]),
    )
    gate = BalancedGate(quota=tcfg.batch_size // 2, batch_size=tcfg.batch_size)
    net, history = train(net, dataset, tcfg, gate, _preprocess(ctx.cfg))
    save_checkpoint(net, ctx.output("net.logb"))
    write_loss_csv(history, ctx.output("loss_seg.csv"))


def stage_segment(ctx):
    seg = ctx.cfg.block("segment")
    net = load_checkpoint(ctx.input("train/net.logb"))
    image = load_volume(ctx.input("phantom/image.nrrd"))
    x = clip_normalize(image, _preprocess(ctx.cfg))
    crop = min(ctx.cfg.params["preprocess"]["crop_dims"])
    tile = crop if any(n > crop for n in x.dims) else None
    samples = predict_samples(net, x, int(seg["samples"]), _sub_seed(ctx.seed, 0), tile, int(seg["overlap"]))
    ens = ensemble_from_samples(samples)
    save_volume(ens.mean, ctx.output("prob_mean.nrrd"))
    save_volume(ens.std, ctx.output("prob_std.nrrd"))
    save_volume(ens.mean.with_data((ens.mean.data > seg["threshold"]).astype(float)), ctx.output("seg.nrrd"))
    for k, s in enumerate(samples):
        save_volume(s, ctx.output(f"samples/sample_{k:02d}.nrrd"))


# ---------------------------------------------------------------------------
# surfaces


def surface_from_grid(grid: VoxelGrid, iso=0.5):
    """Closed iso-surface: zero padding caps regions that touch the border; largest piece kept."""
    padded = VoxelGrid(np.pad(grid.data, 1), grid.spacing, tuple(np.asarray(grid.origin) - grid.spacing))
    return largest_component(marching_cubes(padded, iso))


def stage_reconstruct(ctx):
    rc = ctx.cfg.block("reconstruct")
    prob = load_volume(ctx.input("segment/prob_mean.nrrd"))
    mesh = surface_from_grid(prob, float(rc["iso"]))
    if int(rc["target_vertices"]) > 0:
        mesh = remesh_uniform(mesh, int(rc["target_vertices"]), int(rc["remesh_iterations"]))
    if int(rc["smooth_steps"]) > 0:
        mesh = smooth_minimize(mesh, tuple(rc["smooth_weights"]), int(rc["smooth_steps"]), float(rc["smooth_lr"]))
    write_obj(mesh, ctx.output("mesh.obj"))
    with open(ctx.output("quality.json"), "w") as fh:
        fh.write(quality_report(mesh).to_json() + "\n")


def stage_deform(ctx):
    de = ctx.cfg.block("deform")
    mesh = read_obj(ctx.input("reconstruct/mesh.obj"))
    image = load_volume(ctx.input("phantom/image.nrrd"))
    field, _ = gradient_magnitude_field(image)
    gate = None
    if de["gate"] and ctx.has("phantom/io.json"):
        with open(ctx.input("phantom/io.json")) as fh:
            gate = ScalingGate(InletOutletSpec.from_dict(json.load(fh)))
    torch.set_num_threads(1)
    w1, w2, w3, w4 = (float(w) for w in de["weights"])
    out, state, history = optimize_momenta(
        mesh, field, gate,
        flow=FlowConfig(float(de["T"]), int(de["steps"])),
        loss_cfg=DeformLossConfig(w1, w2, w3, w4, float(de["eps"])),
        opt=OptimConfig(float(de["lr"]), int(de["epochs"]), int(de["n_control"]),
                        None if de["sigma"] is None else float(de["sigma"])),
        seed=_sub_seed(ctx.seed, 0),
    )
    write_obj(out, ctx.output("deformed.obj"))
    write_history_csv(history, ctx.output("loss_deform.csv"))
    write_state_json(state, ctx.output("state.json"), gate)
    with open(ctx.output("quality.json"), "w") as fh:
        fh.write(quality_report(out).to_json() + "\n")


# ---------------------------------------------------------------------------
# evaluate


def region_masks(spec: PhantomSpec, grid: VoxelGrid):
    """'main' and 'branch' voxel masks by nearest centreline (trunk is the first)."""
    pts = grid.coordinates().reshape(-1, 3)
    d = np.stack([centerline_sdf(pts, cl) for cl in spec.centerlines])
    owner = np.argmin(d, axis=0).reshape(grid.dims)
    return {"main": owner == 0, "branch": owner > 0}


def stage_evaluate(ctx):
    case = ctx.cfg.case
    window = int(ctx.cfg.params["evaluate"]["snr_window"])
    rows = []
    image = load_volume(ctx.input("phantom/image.nrrd"))
    seg = load_volume(ctx.input("segment/seg.nrrd"))
    mesh = read_obj(ctx.input("reconstruct/mesh.obj"))
    deformed = read_obj(ctx.input("deform/deformed.obj")) if ctx.has("deform/deformed.obj") else None

    if ctx.has("phantom/label.nrrd"):
        label = load_volume(ctx.input("phantom/label.nrrd"))
        rows.append((case, "dice", "all", dice_voxel(seg, label)))
        if ctx.has("phantom/spec.json"):
            with open(ctx.input("phantom/spec.json")) as fh:
                spec = PhantomSpec.from_dict(json.load(fh))
            if len(spec.centerlines) > 1:
                for region, m in region_masks(spec, label).items():
                    rows.append((case, "dice", region, dice_voxel(seg.data * m, label.data * m)))
    if ctx.has("phantom/truth.obj"):
        truth = read_obj(ctx.input("phantom/truth.obj"))
        rows.append((case, "asd_reconstructed", "all", asd(mesh, truth)))
        rows.append((case, "hausdorff_reconstructed", "all", hausdorff(mesh, truth)))
        if deformed is not None:
            rows.append((case, "asd_deformed", "all", asd(deformed, truth)))
            rows.append((case, "hausdorff_deformed", "all", hausdorff(deformed, truth)))
    if deformed is not None:
        field, _ = gradient_magnitude_field(image)
        rows.append((case, "misalignment_initial", "all", misalignment_energy(mesh, field)))
        rows.append((case, "misalignment_final", "all", misalignment_energy(deformed, field)))

    thr = float(ctx.cfg.params["segment"]["threshold"])
    meshes = []
    for p in ctx.inputs_matching("segment/samples/*"):
        try:
            meshes.append(surface_from_grid(load_volume(p), thr))
        except MeshError:
            pass  # a sample with no foreground contributes no surface
    if len(meshes) >= 2:
        stats = surface_ensemble_stats(meshes, image, window)
        write_obj(stats.mean_surface, ctx.output("mean_surface.obj"))
        write_std_sidecar(stats, ctx.output("std_sidecar.csv"))
        rows.append((case, "median_std", "all", float(np.median(stats.std))))
        rows.append((case, "median_snr", "all", float(np.median(stats.snr))))
        try:
            rows.append((case, "snr_std_slope", "all",
                         snr_std_regression(stats.snr, np.maximum(stats.std, 1e-12))))
        except MetricError:
            pass
    write_metrics_csv(rows, ctx.output("metrics.csv"))


STAGE_FUNCS = {
    "phantom": stage_phantom,
    "train": stage_train,
    "segment": stage_segment,
    "reconstruct": stage_reconstruct,
    "deform": stage_deform,
    "evaluate": stage_evaluate,
}
