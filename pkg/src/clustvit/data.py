"""Deterministic synthetic segmentation scenes plus netpbm file I/O.

Scenes are a textured background (class 1) with occluding rectangles,
circles, and triangles of classes 2..C. Generation is a pure function of
(spec, split, image index), so datasets are bit-reproducible. Images are
stored as binary PPM (P6), masks as binary PGM (P5, pixel value = class
id), and cached pseudo-cluster label files live next to each sample.
"""

import os
from dataclasses import dataclass, replace

import numpy as np

from .pseudo import pseudo_clusters

SPLIT_OFFSETS = {"train": 0, "val": 1, "test": 2}

# Background-dominated "sparse" scenes vs many-object "diverse" scenes.
DATA_PRESETS = {
    "sparse": dict(num_classes=3, shapes_min=1, shapes_max=2, background_fraction=0.85),
    "diverse": dict(num_classes=6, shapes_min=4, shapes_max=8, background_fraction=0.45),
}

_CLASS_COLORS = np.array([
    (0.36, 0.44, 0.30),   # class 1: background
    (0.85, 0.25, 0.25),
    (0.25, 0.45, 0.85),
    (0.92, 0.80, 0.25),
    (0.55, 0.30, 0.70),
    (0.30, 0.75, 0.70),
    (0.90, 0.55, 0.20),
    (0.75, 0.75, 0.75),
])


@dataclass
class SceneSpec:
    seed: int
    image_size: tuple = (64, 64)
    num_classes: int = 3
    shapes_min: int = 1
    shapes_max: int = 2
    background_fraction: float = 0.85
    count: int = 64
    split: str = "train"

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"need >= 2 classes, got {self.num_classes}")
        if not 0.0 < self.background_fraction < 1.0:
            raise ValueError(f"background fraction must be in (0,1)")
        if self.split not in SPLIT_OFFSETS:
            raise ValueError(f"unknown split {self.split!r}")
        if self.num_classes > len(_CLASS_COLORS):
            raise ValueError(f"at most {len(_CLASS_COLORS)} classes supported")


@dataclass
class Sample:
    image: np.ndarray   # H x W x 3 floats in [0, 1]
    mask: np.ndarray    # H x W ints >= 1
    id: str


def preset_spec(name, seed, **overrides):
    if name not in DATA_PRESETS:
        raise ValueError(f"unknown data preset {name!r}; choose from {sorted(DATA_PRESETS)}")
    kw = dict(DATA_PRESETS[name])
    kw.update(overrides)
    return SceneSpec(seed=seed, **kw)


def _shape_mask(rng, kind, h, w, area):
    """Boolean pixel mask for one shape of roughly the requested area,
    shrunk as needed to stay inside the frame."""
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == 0:  # rectangle
        ratio = rng.uniform(0.5, 2.0)
        bw = max(2, min(w, int(round(np.sqrt(area * ratio)))))
        bh = max(2, min(h, int(round(area / bw))))
        x0 = int(rng.integers(0, w - bw + 1))
        y0 = int(rng.integers(0, h - bh + 1))
        return (yy >= y0) & (yy < y0 + bh) & (xx >= x0) & (xx < x0 + bw)
    if kind == 1:  # circle
        r = max(1.5, min(np.sqrt(area / np.pi), min(h, w) / 2 - 1))
        cy = rng.uniform(r, h - r)
        cx = rng.uniform(r, w - r)
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r ** 2
    # triangle: right triangle with legs sized for the exact target area,
    # in one of four random orientations (vertex order keeps the area)
    side = max(4, min(min(h, w), int(round(np.sqrt(area * 2.0)))))
    y0 = int(rng.integers(0, h - side + 1))
    x0 = int(rng.integers(0, w - side + 1))
    corners = np.array([(0, 0), (0, side), (side, side), (side, 0)], dtype=float)
    drop = int(rng.integers(0, 4))
    pts = np.delete(corners, drop, axis=0) + (y0, x0)
    (ay, ax), (by, bx), (cy, cx) = pts
    d1 = (xx - bx) * (ay - by) - (ax - bx) * (yy - by)
    d2 = (xx - cx) * (by - cy) - (bx - cx) * (yy - cy)
    d3 = (xx - ax) * (cy - ay) - (cx - ax) * (yy - ay)
    neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
    pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
    return ~(neg & pos)


def generate_sample(spec, index):
    """One deterministic scene; later shapes occlude earlier ones."""
    seq = np.random.SeedSequence(
        entropy=spec.seed, spawn_key=(SPLIT_OFFSETS[spec.split], index))
    rng = np.random.default_rng(np.random.PCG64(seq))
    h, w = spec.image_size
    image = np.clip(
        _CLASS_COLORS[0] + rng.normal(0.0, 0.04, size=(h, w, 3)), 0.0, 1.0)
    mask = np.ones((h, w), dtype=np.int64)
    n_shapes = int(rng.integers(spec.shapes_min, spec.shapes_max + 1))
    if n_shapes > 0:
        for placed in range(n_shapes):
            # size each shape from the background still left to cover, so
            # occlusion overlap self-corrects toward the target fraction
            bg_now = float((mask == 1).mean())
            deficit = max(bg_now - spec.background_fraction, 0.01)
            remaining = n_shapes - placed
            # exponent > 1: shapes pile up mid-frame, so the background
            # density under a new shape is below the global average
            area = deficit / remaining / max(bg_now, 0.25) ** 1.6 * h * w
            area = max(16.0, area * rng.uniform(0.85, 1.2))
            kind = int(rng.integers(0, 3))
            cls = int(rng.integers(2, spec.num_classes + 1))
            m = _shape_mask(rng, kind, h, w, area)
            mask[m] = cls
            color = _CLASS_COLORS[cls - 1] + rng.normal(0.0, 0.05, size=3)
            noise = rng.normal(0.0, 0.04, size=(int(m.sum()), 3))
            image[m] = np.clip(color + noise, 0.0, 1.0)
    return Sample(image, mask, f"{spec.split}_{index:05d}")


def generate(spec):
    return [generate_sample(spec, i) for i in range(spec.count)]


# -- netpbm I/O ----------------------------------------------------------

def _write_netpbm(path, magic, payload, w, h):
    with open(path, "wb") as f:
        f.write(f"{magic}\n{w} {h}\n255\n".encode("ascii"))
        f.write(payload.tobytes())


def write_ppm(path, image):
    """Image floats in [0,1] -> binary P6 with maxval 255."""
    arr = np.asarray(image)
    h, w, _ = arr.shape
    _write_netpbm(path, "P6", np.clip(np.rint(arr * 255), 0, 255).astype(np.uint8), w, h)


def write_pgm(path, mask):
    """Integer class map -> binary P5; pixel value is the class id."""
    arr = np.asarray(mask)
    if arr.min() < 0 or arr.max() > 255:
        raise ValueError(f"mask values outside [0,255]: {arr.min()}..{arr.max()}")
    h, w = arr.shape
    _write_netpbm(path, "P5", arr.astype(np.uint8), w, h)


def _parse_netpbm(blob, path):
    """Header parser handling arbitrary whitespace and # comments; parse
    failures report the byte offset."""
    off = 0

    def fail(msg):
        raise ValueError(f"{path}: {msg} at byte {off}")

    def next_token():
        nonlocal off
        while off < len(blob):
            c = blob[off:off + 1]
            if c == b"#":
                while off < len(blob) and blob[off:off + 1] != b"\n":
                    off += 1
            elif c.isspace():
                off += 1
            else:
                break
        if off >= len(blob):
            fail("unexpected end of header")
        start = off
        while off < len(blob) and not blob[off:off + 1].isspace():
            off += 1
        return blob[start:off]

    magic = next_token()
    if magic not in (b"P5", b"P6"):
        fail(f"unsupported magic {magic!r}")
    fields = []
    for _ in range(3):
        tok = next_token()
        if not tok.isdigit():
            fail(f"expected integer, got {tok!r}")
        fields.append(int(tok))
    w, h, maxval = fields
    if maxval != 255:
        fail(f"unsupported maxval {maxval}")
    off += 1  # single whitespace byte after maxval
    channels = 3 if magic == b"P6" else 1
    need = w * h * channels
    payload = blob[off:off + need]
    if len(payload) < need:
        fail(f"truncated payload: need {need} bytes, have {len(payload)}")
    return magic, w, h, np.frombuffer(payload, dtype=np.uint8)


def read_ppm(path):
    with open(path, "rb") as f:
        blob = f.read()
    magic, w, h, data = _parse_netpbm(blob, path)
    if magic != b"P6":
        raise ValueError(f"{path}: expected P6, got {magic.decode()}")
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


def read_pgm(path):
    with open(path, "rb") as f:
        blob = f.read()
    magic, w, h, data = _parse_netpbm(blob, path)
    if magic != b"P5":
        raise ValueError(f"{path}: expected P5, got {magic.decode()}")
    return data.reshape(h, w).astype(np.int64)


def write_sample(root, sample):
    write_ppm(os.path.join(root, f"{sample.id}.ppm"), sample.image)
    write_pgm(os.path.join(root, f"{sample.id}.pgm"), sample.mask)


def read_sample(root, sample_id):
    return Sample(
        read_ppm(os.path.join(root, f"{sample_id}.ppm")),
        read_pgm(os.path.join(root, f"{sample_id}.pgm")),
        sample_id,
    )


# -- on-disk dataset layout ----------------------------------------------

def pc_filename(sample_id, patch_size, k):
    return f"{sample_id}.pc_k{k}_p{patch_size}.txt"


def write_dataset(root, spec, splits, patch_size, k):
    """Generate every split, cache pseudo-cluster labels, and write the
    manifest. ``splits`` maps split name -> image count. Split seeds derive
    from the master seed through fixed per-split offsets."""
    lines = []
    for split in ("train", "val", "test"):
        if split not in splits or splits[split] <= 0:
            continue
        split_dir = os.path.join(root, split)
        os.makedirs(split_dir, exist_ok=True)
        split_spec = replace(spec, split=split, count=splits[split])
        for sample in generate(split_spec):
            write_sample(split_dir, sample)
            pcm = pseudo_clusters(sample.mask, patch_size, k)
            pc_file = pc_filename(sample.id, patch_size, k)
            with open(os.path.join(split_dir, pc_file), "w") as f:
                f.write(" ".join(str(v) for v in pcm.labels) + "\n")
            lines.append(f"{split}\t{sample.id}\t{sample.id}.ppm\t{sample.id}.pgm\t{pc_file}\n")
    with open(os.path.join(root, "manifest.txt"), "w") as f:
        f.writelines(lines)


@dataclass
class ManifestEntry:
    split: str
    id: str
    image_path: str
    mask_path: str
    pc_path: str


def read_manifest(root):
    path = os.path.join(root, "manifest.txt")
    if not os.path.exists(path):
        raise FileNotFoundError(f"no manifest at {path}")
    entries = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            split, sid, img, msk, pc = line.rstrip("\n").split("\t")
            entries.append(ManifestEntry(
                split, sid,
                os.path.join(root, split, img),
                os.path.join(root, split, msk),
                os.path.join(root, split, pc)))
    return entries


def load_entry(entry):
    sample = Sample(read_ppm(entry.image_path), read_pgm(entry.mask_path), entry.id)
    if not os.path.exists(entry.pc_path):
        raise FileNotFoundError(f"missing pseudo-cluster file {entry.pc_path}")
    with open(entry.pc_path) as f:
        labels = np.array([int(v) for v in f.read().split()], dtype=np.int64)
    return sample, labels
