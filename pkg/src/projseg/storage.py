"""On-disk formats: rendered view directories, viewpoint lists, network
and training checkpoints, marginals, and colored PLY exports.

Images persist as 16-bit grayscale PNGs, reference images as raw
little-endian int32, and checkpoints as a magic-tagged binary with a
JSON header, raw little-endian float32 parameter blocks and a trailing
CRC32.  All writers are byte-deterministic for identical inputs.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np
from PIL import Image

from .net import LayerSpec, NetworkParams
from .render import Camera, RenderedView
from .views import Viewpoint, ViewpointSet


class CheckpointError(ValueError):
    """Corrupt, truncated, or incompatible checkpoint file."""


# ---------------------------------------------------------------------------
# viewpoint sets (JSON)

def save_viewpoints(path, vpset: ViewpointSet) -> None:
    data = {
        "covered_fraction_per_scale":
            [float(v) for v in vpset.covered_fraction_per_scale],
        "viewpoints": [
            {"order": i,
             "eye": [float(v) for v in vp.eye],
             "target": [float(v) for v in vp.target],
             "scale_index": int(vp.scale_index),
             "coverage": float(vp.coverage)}
            for i, vp in enumerate(vpset.selected)],
    }
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n",
                          encoding="utf-8")


def load_viewpoints(path) -> ViewpointSet:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    vps = sorted(data["viewpoints"], key=lambda d: d["order"])
    selected = tuple(
        Viewpoint(eye=np.asarray(d["eye"]), target=np.asarray(d["target"]),
                  scale_index=int(d["scale_index"]),
                  coverage=float(d["coverage"]))
        for d in vps)
    return ViewpointSet(
        selected=selected,
        covered_fraction_per_scale=np.asarray(
            data["covered_fraction_per_scale"]))


# ---------------------------------------------------------------------------
# rendered views (one directory per shape)

def _write_png16(path, arr: np.ndarray) -> None:
    q = np.round(np.clip(arr, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(q, mode="I;16").save(path, format="PNG")


def _read_png16(path) -> np.ndarray:
    img = np.asarray(Image.open(path), dtype=np.uint16)
    return (img.astype(np.float32) / 65535.0)


def save_views(view_dir, views, *, mesh_radius: float) -> None:
    view_dir = Path(view_dir)
    view_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"num_views {len(views)}"]
    if views:
        W, H = views[0].camera.resolution
        lines.append(f"resolution {W} {H}")
        lines.append(f"has_height {int(views[0].height is not None)}")
    lines.append(f"mesh_radius {mesh_radius!r}")
    for view in views:
        stem = f"view_{view.view_id:04d}"
        _write_png16(view_dir / f"{stem}_shaded.png", view.shaded)
        _write_png16(view_dir / f"{stem}_depth.png", view.depth)
        if view.height is not None:
            _write_png16(view_dir / f"{stem}_height.png", view.height)
        (view_dir / f"{stem}_ref.raw").write_bytes(
            view.reference.astype("<i4").tobytes())
        cam = view.camera
        nums = [float(v) for v in (*cam.eye, *cam.target, *cam.up,
                                   cam.fov_y, cam.near, cam.far)]
        lines.append(
            "view {} eye {!r} {!r} {!r} target {!r} {!r} {!r} "
            "up {!r} {!r} {!r} fov {!r} near {!r} far {!r}".format(
                view.view_id, *nums))
    (view_dir / "manifest.txt").write_text("\n".join(lines) + "\n",
                                           encoding="utf-8")


def list_view_ids(view_dir):
    manifest = Path(view_dir) / "manifest.txt"
    ids = []
    meta = {}
    for line in manifest.read_text(encoding="utf-8").splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "view":
            ids.append(int(parts[1]))
        elif parts[0] == "resolution":
            meta["resolution"] = (int(parts[1]), int(parts[2]))
        elif parts[0] == "has_height":
            meta["has_height"] = bool(int(parts[1]))
        elif parts[0] == "mesh_radius":
            meta["mesh_radius"] = float(parts[1])
    return ids, meta


def load_view(view_dir, view_id: int) -> RenderedView:
    view_dir = Path(view_dir)
    cam = None
    for line in (view_dir / "manifest.txt").read_text(
            encoding="utf-8").splitlines():
        parts = line.split()
        if parts and parts[0] == "view" and int(parts[1]) == view_id:
            vals = [float(v) for v in parts[3:6] + parts[7:10] + parts[11:14]]
            resolution = None
            cam = dict(eye=np.asarray(vals[0:3]), target=np.asarray(vals[3:6]),
                       up=np.asarray(vals[6:9]), fov_y=float(parts[15]),
                       near=float(parts[17]), far=float(parts[19]))
    if cam is None:
        raise FileNotFoundError(f"view {view_id} not in {view_dir}")
    stem = f"view_{view_id:04d}"
    shaded = _read_png16(view_dir / f"{stem}_shaded.png")
    depth = _read_png16(view_dir / f"{stem}_depth.png")
    H, W = shaded.shape
    reference = np.frombuffer(
        (view_dir / f"{stem}_ref.raw").read_bytes(),
        dtype="<i4").reshape(H, W).astype(np.int32)
    height_path = view_dir / f"{stem}_height.png"
    height = _read_png16(height_path) if height_path.exists() else None
    camera = Camera(resolution=(W, H), **cam)
    return RenderedView(shaded=shaded, depth=depth, reference=reference,
                        camera=camera, view_id=view_id, height=height)


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"PROJSEG1"
_VERSION = 1


def _layer_to_dict(spec: LayerSpec) -> dict:
    return {"kind": spec.kind, "in": spec.in_channels,
            "out": spec.out_channels, "kernel": spec.kernel,
            "stride": spec.stride, "dilation": spec.dilation,
            "relu": spec.relu}


def _layer_from_dict(d) -> LayerSpec:
    return LayerSpec(kind=d["kind"], in_channels=d["in"],
                     out_channels=d["out"], kernel=d["kernel"],
                     stride=d["stride"], dilation=d["dilation"],
                     relu=d["relu"])


def _pack_blocks(header: dict, arrays) -> bytes:
    header = dict(header)
    header["arrays"] = [{"name": name, "shape": list(arr.shape)}
                        for name, arr in arrays]
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = b"".join(np.ascontiguousarray(arr, dtype="<f4").tobytes()
                    for _, arr in arrays)
    blob = _MAGIC + struct.pack("<II", _VERSION, len(head)) + head + body
    return blob + struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)


def _unpack_blocks(blob: bytes):
    if len(blob) < len(_MAGIC) + 12 or blob[:len(_MAGIC)] != _MAGIC:
        raise CheckpointError("bad magic string")
    crc_stored = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != crc_stored:
        raise CheckpointError("checksum mismatch")
    version, head_len = struct.unpack("<II", blob[8:16])
    if version != _VERSION:
        raise CheckpointError(f"unsupported version {version}")
    header = json.loads(blob[16:16 + head_len].decode("utf-8"))
    offset = 16 + head_len
    arrays = {}
    for meta in header["arrays"]:
        count = int(np.prod(meta["shape"])) if meta["shape"] else 1
        end = offset + 4 * count
        arrays[meta["name"]] = np.frombuffer(
            blob[offset:end], dtype="<f4").reshape(meta["shape"]).copy()
        offset = end
    if offset != len(blob) - 4:
        raise CheckpointError("trailing bytes in checkpoint")
    return header, arrays


def _network_blocks(params: NetworkParams, prefix: str = "net"):
    out = []
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        out.append((f"{prefix}.w{i}", w))
        out.append((f"{prefix}.b{i}", b))
    return out


def _network_from_blocks(header, arrays, prefix: str = "net"):
    layers = tuple(_layer_from_dict(d) for d in header["layers"])
    weights = [arrays[f"{prefix}.w{i}"] for i in range(len(layers))]
    biases = [arrays[f"{prefix}.b{i}"] for i in range(len(layers))]
    return NetworkParams(layers, weights, biases)


def save_network(path, params: NetworkParams, extra: dict | None = None):
    header = {"kind": "network",
              "layers": [_layer_to_dict(s) for s in params.layers]}
    if extra:
        header["extra"] = extra
    Path(path).write_bytes(_pack_blocks(header, _network_blocks(params)))


def load_network(path) -> NetworkParams:
    header, arrays = _unpack_blocks(Path(path).read_bytes())
    if header.get("kind") not in ("network", "training"):
        raise CheckpointError("not a network checkpoint")
    return _network_from_blocks(header, arrays)


def save_training_checkpoint(path, *, net: NetworkParams, crf,
                             velocity: dict, epoch: int, rng_state: dict,
                             meta: dict | None = None) -> None:
    arrays = _network_blocks(net)
    arrays.append(("crf.w", np.asarray([crf.w_adj, crf.w_dist])))
    arrays.append(("crf.w_label", crf.w_label))
    for i, v in enumerate(velocity.get("weights", [])):
        arrays.append((f"vel.w{i}", v))
    for i, v in enumerate(velocity.get("biases", [])):
        arrays.append((f"vel.b{i}", v))
    arrays.append(("vel.crf", np.asarray([velocity.get("w_adj", 0.0),
                                          velocity.get("w_dist", 0.0)])))
    arrays.append(("vel.crf_label",
                   velocity.get("w_label", np.zeros_like(crf.w_label))))
    header = {"kind": "training", "epoch": int(epoch),
              "layers": [_layer_to_dict(s) for s in net.layers],
              "rng_state": rng_state, "meta": meta or {}}
    Path(path).write_bytes(_pack_blocks(header, arrays))


def load_training_checkpoint(path):
    from .crf import CrfParams
    header, arrays = _unpack_blocks(Path(path).read_bytes())
    if header.get("kind") != "training":
        raise CheckpointError("not a training checkpoint")
    net = _network_from_blocks(header, arrays)
    crf = CrfParams(w_adj=float(arrays["crf.w"][0]),
                    w_dist=float(arrays["crf.w"][1]),
                    w_label=arrays["crf.w_label"].astype(np.float64))
    velocity = {
        "weights": [arrays[f"vel.w{i}"] for i in range(len(net.layers))],
        "biases": [arrays[f"vel.b{i}"] for i in range(len(net.layers))],
        "w_adj": float(arrays["vel.crf"][0]),
        "w_dist": float(arrays["vel.crf"][1]),
        "w_label": arrays["vel.crf_label"].astype(np.float64),
    }
    return {"net": net, "crf": crf, "velocity": velocity,
            "epoch": header["epoch"], "rng_state": header["rng_state"],
            "meta": header.get("meta", {})}


# ---------------------------------------------------------------------------
# surface arrays (confidences / marginals): header (F, L) + float32 data

def save_surface_array(path, values: np.ndarray) -> None:
    F, L = values.shape
    blob = b"PSURF1\x00\x00" + struct.pack("<II", F, L) \
        + np.ascontiguousarray(values, dtype="<f4").tobytes()
    Path(path).write_bytes(blob)


def load_surface_array(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:8] != b"PSURF1\x00\x00":
        raise CheckpointError("bad surface array header")
    F, L = struct.unpack("<II", blob[8:16])
    return np.frombuffer(blob[16:], dtype="<f4").reshape(F, L).copy()


# ---------------------------------------------------------------------------
# PLY export with per-face colors

LABEL_PALETTE = np.asarray([
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
], dtype=np.uint8)


def export_labeled_ply(path, mesh, labels) -> None:
    labels = np.asarray(labels, dtype=np.int64)
    colors = LABEL_PALETTE[labels % len(LABEL_PALETTE)]
    lines = [
        "ply", "format ascii 1.0",
        f"element vertex {mesh.num_vertices}",
        "property float x", "property float y", "property float z",
        f"element face {mesh.num_faces}",
        "property list uchar int vertex_indices",
        "property uchar red", "property uchar green", "property uchar blue",
        "end_header",
    ]
    for v in mesh.vertices:
        lines.append(f"{v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for f, c in zip(mesh.faces, colors):
        lines.append(f"3 {f[0]} {f[1]} {f[2]} {c[0]} {c[1]} {c[2]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
