"""Stage orchestration over a working directory.

Layout of a workdir:

  dataset.json            manifest (generate writes it)
  meshes/, labels/        shape geometry and ground truth
  views/<id>.json         selected viewpoints per shape
  renders/<id>/           rendered channel images per shape
  train/                  checkpoint + loss log
  infer/                  predicted labels + marginals per shape
  export/                 colored PLY meshes

Every stage validates its inputs, echoes the effective config into its
output directory, and is deterministic given identical inputs and seeds.
"""

from __future__ import annotations

import csv
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import crf as crf_mod
from . import net as net_mod
from . import storage, synth, views as views_mod
from .config import PipelineConfig, echo_config
from .dataset import (DatasetManifest, ShapeEntry, load_manifest,
                      save_manifest, split_shapes, validate_labels)
from .mesh import (build_pairwise_graph, load_face_labels, load_mesh,
                   sample_surface, save_face_labels)
from .render import render_views
from .train import TrainShape, evaluate, train


def _parallel(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def generate_dataset(workdir, family: str, count: int, seed: int,
                     noise: float = 0.0, test_fraction: float = 1 / 3,
                     append: bool = False) -> DatasetManifest:
    """Write ``count`` procedural shapes plus labels and a manifest."""
    workdir = Path(workdir)
    (workdir / "meshes").mkdir(parents=True, exist_ok=True)
    (workdir / "labels").mkdir(parents=True, exist_ok=True)
    entries = []
    label_names = list(synth.LABEL_NAMES[family])
    if append and (workdir / "dataset.json").exists():
        old = load_manifest(workdir / "dataset.json")
        entries = list(old.shapes)
        merged = list(old.label_names)
        for name in label_names:
            if name not in merged:
                merged.append(name)
        label_names = merged
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    splits = split_shapes(count, test_fraction, rng)
    for i in range(count):
        shape_id = f"{family}_{seed:03d}_{i:03d}"
        spec = synth.SyntheticShapeSpec(family=family, seed=seed * 10007 + i,
                                        noise=noise)
        mesh, labels = synth.generate_shape(spec)
        synth.save_mesh_obj(workdir / "meshes" / f"{shape_id}.obj", mesh)
        save_face_labels(workdir / "labels" / f"{shape_id}.txt", labels)
        entries.append(ShapeEntry(
            shape_id=shape_id, category=family,
            mesh_path=f"meshes/{shape_id}.obj",
            label_path=f"labels/{shape_id}.txt", split=splits[i]))
    save_manifest(workdir / "dataset.json", label_names, entries)
    return load_manifest(workdir / "dataset.json")


def stage_views(workdir, cfg: PipelineConfig) -> None:
    """Select viewpoints for every shape and store them as JSON."""
    workdir = Path(workdir)
    manifest = load_manifest(workdir / "dataset.json")
    out = workdir / "views"
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)
    settings = cfg.render_settings()

    def one(entry):
        mesh = load_mesh(manifest.mesh_file(entry))
        if cfg.fixed_views:
            vpset = views_mod.fixed_dodecahedron_views(mesh)
        else:
            points = sample_surface(mesh, cfg.num_points,
                                    seed=_shape_seed(cfg.seed, entry))
            vpset = views_mod.select_views(
                mesh, points, settings,
                coverage_target=cfg.coverage_target,
                max_per_scale=cfg.max_views_per_scale)
        storage.save_viewpoints(out / f"{entry.shape_id}.json", vpset)
        return entry.shape_id

    _parallel(one, list(manifest.shapes), cfg.workers)


def stage_render(workdir, cfg: PipelineConfig) -> None:
    """Render 4 in-plane rotations per selected viewpoint per shape."""
    workdir = Path(workdir)
    manifest = load_manifest(workdir / "dataset.json")
    out = workdir / "renders"
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)
    settings = cfg.render_settings()

    def one(entry):
        vp_file = workdir / "views" / f"{entry.shape_id}.json"
        if not vp_file.exists():
            raise FileNotFoundError(
                f"no viewpoints for {entry.shape_id}; run the views stage")
        mesh = load_mesh(manifest.mesh_file(entry))
        vpset = storage.load_viewpoints(vp_file)
        rendered = render_views(mesh, vpset, settings)
        storage.save_views(out / entry.shape_id, rendered,
                           mesh_radius=mesh.radius)
        return entry.shape_id

    _parallel(one, list(manifest.shapes), cfg.workers)


def _shape_seed(seed: int, entry: ShapeEntry) -> int:
    h = 0
    for ch in entry.shape_id:
        h = (h * 131 + ord(ch)) % (2 ** 31)
    return (seed * 1000003 + h) % (2 ** 31)


def _train_shape(manifest, workdir, entry, cfg: PipelineConfig) -> TrainShape:
    mesh = load_mesh(manifest.mesh_file(entry))
    labels = load_face_labels(manifest.label_file(entry), mesh,
                              manifest.num_labels)
    graph = build_pairwise_graph(mesh, cutoff_factor=cfg.geodesic_cutoff)
    view_dir = workdir / "renders" / entry.shape_id
    if not (view_dir / "manifest.txt").exists():
        raise FileNotFoundError(
            f"no renders for {entry.shape_id}; run the render stage")
    ids, _ = storage.list_view_ids(view_dir)
    ids = sorted(ids)

    def get_view(i, _dir=view_dir, _ids=ids):
        return storage.load_view(_dir, _ids[i])

    return TrainShape(shape_id=entry.shape_id, category=entry.category,
                      mesh=mesh, labels=labels, graph=graph,
                      num_views=len(ids), get_view=get_view)


def load_split(workdir, cfg: PipelineConfig, split: str):
    workdir = Path(workdir)
    manifest = load_manifest(workdir / "dataset.json")
    validate_labels(manifest)
    entries = manifest.of_split(split)
    return [_train_shape(manifest, workdir, e, cfg) for e in entries]


def stage_train(workdir, cfg: PipelineConfig) -> Path:
    """Train on the train split; write checkpoint, loss log, config."""
    workdir = Path(workdir)
    out = workdir / "train"
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)
    shapes = load_split(workdir, cfg, "train")
    if not shapes:
        raise ValueError("train split is empty")
    result = train(shapes, cfg.train_config())
    ckpt = out / "checkpoint.ckpt"
    rng_state = {"seed": cfg.seed}
    storage.save_training_checkpoint(
        ckpt, net=result.net, crf=result.crf, velocity=result.velocity,
        epoch=cfg.epochs, rng_state=rng_state,
        meta={"mode": cfg.mode, "seconds": round(result.seconds, 3)})
    with open(out / "loss_log.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "step", "nll", "reg", "accuracy"])
        for row in result.log:
            writer.writerow([row[0], row[1], f"{row[2]:.6f}",
                             f"{row[3]:.6f}", f"{row[4]:.6f}"])
    return ckpt


def _load_checkpoint(workdir):
    ckpt_path = Path(workdir) / "train" / "checkpoint.ckpt"
    if not ckpt_path.exists():
        raise FileNotFoundError(f"no checkpoint at {ckpt_path}; train first")
    return storage.load_training_checkpoint(ckpt_path)


def stage_infer(workdir, cfg: PipelineConfig, split: str = "test") -> None:
    """Predict labels and marginals for every shape in the split."""
    from .train import infer_shape
    workdir = Path(workdir)
    out = workdir / "infer"
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)
    state = _load_checkpoint(workdir)
    shapes = load_split(workdir, cfg, split)
    tcfg = cfg.train_config()

    def one(shape):
        pred, marg, _ = infer_shape(state["net"], state["crf"], shape, tcfg)
        save_face_labels(out / f"{shape.shape_id}_labels.txt", pred)
        storage.save_surface_array(out / f"{shape.shape_id}_marginals.bin",
                                   marg.q)
        return shape.shape_id

    _parallel(one, shapes, cfg.workers)


def stage_eval(workdir, cfg: PipelineConfig, split: str = "test",
               stream=None) -> "EvalResult":
    """Print per-category and aggregate accuracy for the split."""
    stream = stream or sys.stdout
    workdir = Path(workdir)
    state = _load_checkpoint(workdir)
    shapes = load_split(workdir, cfg, split)
    result = evaluate(state["net"], state["crf"], shapes, cfg.train_config())
    print(f"{'category':<16}{'shapes':>8}{'accuracy':>10}", file=stream)
    for cat, acc in result.per_category.items():
        n = sum(1 for _, c, _ in result.per_shape if c == cat)
        print(f"{cat:<16}{n:>8}{acc:>10.3f}", file=stream)
    print(f"{'Category Avg.':<16}{'':>8}{result.category_average:>10.3f}",
          file=stream)
    print(f"{'Dataset Avg.':<16}{'':>8}{result.dataset_average:>10.3f}",
          file=stream)
    return result


def stage_export(workdir, cfg: PipelineConfig, split: str = "test") -> None:
    """Write label-colored PLY meshes from inferred (or true) labels."""
    workdir = Path(workdir)
    manifest = load_manifest(workdir / "dataset.json")
    out = workdir / "export"
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)
    for entry in manifest.of_split(split):
        mesh = load_mesh(manifest.mesh_file(entry))
        pred_file = workdir / "infer" / f"{entry.shape_id}_labels.txt"
        if not pred_file.exists():
            raise FileNotFoundError(
                f"no inferred labels for {entry.shape_id}; run infer")
        labels = load_face_labels(pred_file)
        if labels.size != mesh.num_faces:
            raise ValueError(
                f"{entry.shape_id}: {labels.size} labels for "
                f"{mesh.num_faces} faces")
        storage.export_labeled_ply(out / f"{entry.shape_id}.ply", mesh,
                                   labels)
