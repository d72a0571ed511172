"""Dataset plumbing: pair lists, image loading, batch assembly, and a
fully synthetic stick-figure dataset for desk-scale runs.

Wire formats. An annotation file holds one CSV record per image:
``name,x0,y0,v0,...,x17,y17,v17``. A pair list holds one CSV line per
training pair: ``cond,target`` or ``cond,target,cond_mask,target_mask``
with paths relative to the list's directory. Identity is the filename
prefix before the first underscore.
"""

import colorsys
import dataclasses
import os

import numpy as np
import torch
from PIL import Image, ImageDraw

from .pose_encoding import (KeypointSet, NUM_JOINTS, encode_pose,
                            read_annotation_file, write_annotation_file)

# Limb segments as joint index pairs, OpenPose ordering. Used to draw the
# synthetic figures and grouped below for per-identity coloring.
SKELETON_EDGES = [
    (0, 1),                       # head-neck
    (1, 2), (2, 3), (3, 4),       # right arm
    (1, 5), (5, 6), (6, 7),       # left arm
    (1, 8), (8, 9), (9, 10),      # right leg
    (1, 11), (11, 12), (12, 13),  # left leg
    (0, 14), (0, 15), (14, 16), (15, 17),  # face
]

_LIMB_GROUPS = {
    "head": [(0, 1), (0, 14), (0, 15), (14, 16), (15, 17)],
    "right_arm": [(1, 2), (2, 3), (3, 4)],
    "left_arm": [(1, 5), (5, 6), (6, 7)],
    "right_leg": [(1, 8), (8, 9), (9, 10)],
    "left_leg": [(1, 11), (11, 12), (12, 13)],
}


def identity_of(path):
    """Identity label: filename prefix before the first underscore."""
    stem = os.path.splitext(os.path.basename(path))[0]
    return stem.split("_")[0]


@dataclasses.dataclass
class PairRecord:
    condition_image: str
    target_image: str
    condition_keypoints: KeypointSet
    target_keypoints: KeypointSet
    condition_mask: str = None
    target_mask: str = None

    @property
    def identity(self):
        return identity_of(self.condition_image)


@dataclasses.dataclass
class SyntheticSpec:
    num_identities: int = 8
    poses_per_identity: int = 2
    image_size: tuple = (32, 16)  # (height, width)
    seed: int = 0

    def validate(self):
        if self.num_identities < 1 or self.poses_per_identity < 1:
            raise ValueError("need at least one identity and one pose")
        h, w = self.image_size
        if h < 16 or w < 12 or h % 4 or w % 4:
            raise ValueError("image_size must be at least 16x12 and "
                             "divisible by 4, got %r" % (self.image_size,))


@dataclasses.dataclass
class SyntheticDataset:
    root: str
    pair_list: str
    annotation_file: str
    records: list


def load_image(path, expected_size=None):
    """8-bit RGB file -> HWC float32 in [-1, 1] (v/127.5 - 1)."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float32)
    if expected_size is not None and arr.shape[:2] != tuple(expected_size):
        raise ValueError("%s is %dx%d, expected %dx%d" %
                         (path, arr.shape[0], arr.shape[1],
                          expected_size[0], expected_size[1]))
    return arr / 127.5 - 1.0


def resize_image(image, size):
    """Explicit bilinear resize of an HWC [-1, 1] image to (height, width)."""
    h, w = size
    u8 = to_uint8(image)
    out = Image.fromarray(u8).resize((w, h), Image.BILINEAR)
    return np.asarray(out, dtype=np.float32) / 127.5 - 1.0


def load_mask(path, expected_size=None):
    """Grayscale file -> HxW float32 mask of {0, 1} (threshold 128)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    if expected_size is not None and arr.shape != tuple(expected_size):
        raise ValueError("%s is %dx%d, expected %dx%d" %
                         (path, arr.shape[0], arr.shape[1],
                          expected_size[0], expected_size[1]))
    return (arr >= 128).astype(np.float32)


def to_uint8(image):
    """HWC [-1, 1] float -> uint8 pixels."""
    arr = np.asarray(image, dtype=np.float32)
    return np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)


def save_image(image, path):
    Image.fromarray(to_uint8(image)).save(path)


def load_pairs(pair_list_path, annotation_path):
    """Read a pair list plus its annotation file into PairRecords.

    Image sizes are read from the files on disk; keypoints are validated
    against them. Missing images, missing annotation records, and
    malformed lines all fail loudly with the offending line number.
    """
    annotations = read_annotation_file(annotation_path)
    root = os.path.dirname(os.path.abspath(pair_list_path))

    def build(name, lineno):
        if name not in annotations:
            raise ValueError("%s:%d: no annotation record for %r"
                             % (pair_list_path, lineno, name))
        path = os.path.join(root, name)
        if not os.path.exists(path):
            raise FileNotFoundError("%s:%d: image %s not found"
                                    % (pair_list_path, lineno, path))
        with Image.open(path) as im:
            w, h = im.size
        kps = KeypointSet(joints=annotations[name], image_size=(h, w))
        kps.validate()
        return path, kps

    records = []
    with open(pair_list_path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) not in (2, 4):
                raise ValueError("%s:%d: expected 2 or 4 fields, got %d"
                                 % (pair_list_path, lineno, len(parts)))
            cond_path, cond_kps = build(parts[0], lineno)
            targ_path, targ_kps = build(parts[1], lineno)
            cond_mask = targ_mask = None
            if len(parts) == 4:
                cond_mask = os.path.join(root, parts[2])
                targ_mask = os.path.join(root, parts[3])
                for m in (cond_mask, targ_mask):
                    if not os.path.exists(m):
                        raise FileNotFoundError("%s:%d: mask %s not found"
                                                % (pair_list_path, lineno, m))
            records.append(PairRecord(cond_path, targ_path, cond_kps,
                                      targ_kps, cond_mask, targ_mask))
    return records


def identities(records):
    return {r.identity for r in records}


def identity_overlap(records_a, records_b):
    """Identities appearing in both lists; empty means disjoint splits."""
    return identities(records_a) & identities(records_b)


@dataclasses.dataclass
class Batch:
    """Stacked tensors for one training step, NCHW float32."""

    condition_images: torch.Tensor   # B x 3 x H x W
    target_images: torch.Tensor      # B x 3 x H x W
    condition_poses: torch.Tensor    # B x 18 x H x W
    target_poses: torch.Tensor       # B x 18 x H x W
    records: list

    @property
    def pose_pair(self):
        """B x 36 x H x W condition+target heatmap stack."""
        return torch.cat([self.condition_poses, self.target_poses], dim=1)

    def __len__(self):
        return self.condition_images.shape[0]


def _hwc_to_tensor(arrs):
    return torch.from_numpy(
        np.ascontiguousarray(np.stack(arrs).transpose(0, 3, 1, 2)))


def assemble_batch(records, batch_size, sigma, seed=0):
    """Sample batch_size records without replacement and stack tensors.

    The draw is a pure function of `seed` (pass a per-step seed sequence
    for stateless, resumable sampling). When fewer records exist than
    batch_size the whole set is used.
    """
    if not records:
        raise ValueError("no records to sample from")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))[:batch_size]
    chosen = [records[i] for i in order]
    cond_imgs, targ_imgs, cond_maps, targ_maps = [], [], [], []
    for rec in chosen:
        cond_imgs.append(load_image(rec.condition_image,
                                    rec.condition_keypoints.image_size))
        targ_imgs.append(load_image(rec.target_image,
                                    rec.target_keypoints.image_size))
        cond_maps.append(encode_pose(rec.condition_keypoints, sigma).data)
        targ_maps.append(encode_pose(rec.target_keypoints, sigma).data)
    return Batch(
        condition_images=_hwc_to_tensor(cond_imgs),
        target_images=_hwc_to_tensor(targ_imgs),
        condition_poses=_hwc_to_tensor(cond_maps),
        target_poses=_hwc_to_tensor(targ_maps),
        records=chosen,
    )


def _identity_palette(identity_index, num_identities):
    """Distinct per-limb-group RGB colors; no two identities share one."""
    hue = identity_index / max(1, num_identities)
    palette = {}
    for k, group in enumerate(sorted(_LIMB_GROUPS)):
        g_hue = (hue + 0.13 * k) % 1.0
        sat = 0.85 - 0.1 * (k % 3)
        val = 0.95 - 0.08 * (k % 2)
        rgb = colorsys.hsv_to_rgb(g_hue, sat, val)
        palette[group] = tuple(int(round(255 * c)) for c in rgb)
    return palette


def _synthesize_keypoints(rng, image_size):
    """One plausible stick figure in normalized coords, then integer pixels."""
    h, w = image_size
    lean = rng.uniform(-0.04, 0.04)
    cx = 0.5 + rng.uniform(-0.08, 0.08)
    pts = {}
    pts[0] = (cx + lean, 0.10)                      # nose
    pts[1] = (cx, 0.24)                             # neck
    sh_y = 0.27
    pts[2] = (cx - 0.18, sh_y)                      # right shoulder
    pts[5] = (cx + 0.18, sh_y)                      # left shoulder
    for sh, elb, wri, side in ((2, 3, 4, -1), (5, 6, 7, 1)):
        a1 = rng.uniform(0.15, 1.1)
        a2 = a1 + rng.uniform(-0.5, 0.5)
        ex = pts[sh][0] + side * 0.16 * np.sin(a1)
        ey = pts[sh][1] + 0.16 * np.cos(a1)
        pts[elb] = (ex, ey)
        pts[wri] = (ex + side * 0.15 * np.sin(a2), ey + 0.15 * np.cos(a2))
    hip_y = 0.55
    pts[8] = (cx - 0.10, hip_y)                     # right hip
    pts[11] = (cx + 0.10, hip_y)                    # left hip
    for hip, kne, ank, side in ((8, 9, 10, -1), (11, 12, 13, 1)):
        a1 = rng.uniform(-0.35, 0.35)
        a2 = a1 + rng.uniform(-0.3, 0.3)
        kx = pts[hip][0] + side * 0.05 + 0.12 * np.sin(a1)
        ky = pts[hip][1] + 0.18 * np.cos(a1)
        pts[kne] = (kx, ky)
        pts[ank] = (kx + 0.12 * np.sin(a2), ky + 0.18 * np.cos(a2))
    nx, ny = pts[0]
    pts[14] = (nx - 0.05, ny - 0.02)                # right eye
    pts[15] = (nx + 0.05, ny - 0.02)                # left eye
    pts[16] = (nx - 0.09, ny + 0.02)                # right ear
    pts[17] = (nx + 0.09, ny + 0.02)                # left ear
    joints = []
    for i in range(NUM_JOINTS):
        x, y = pts[i]
        px = int(round(np.clip(x, 0.05, 0.95) * (w - 1)))
        py = int(round(np.clip(y, 0.03, 0.97) * (h - 1)))
        joints.append((px, py, True))
    return KeypointSet(joints=joints, image_size=(h, w))


def _render_figure(keypoints, palette):
    """Draw the figure on black; returns (HWC uint8 image, HxW bool mask)."""
    h, w = keypoints.image_size
    im = Image.new("RGB", (w, h), (0, 0, 0))
    draw = ImageDraw.Draw(im)
    coords = {i: (x, y) for i, (x, y, _) in enumerate(keypoints.joints)}
    width = max(1, min(h, w) // 16)
    for group in sorted(_LIMB_GROUPS):
        color = palette[group]
        for a, b in _LIMB_GROUPS[group]:
            draw.line([coords[a], coords[b]], fill=color, width=width)
    # head blob around the nose
    nx, ny = coords[0]
    r = max(1, min(h, w) // 10)
    draw.ellipse([nx - r, ny - r, nx + r, ny + r], fill=palette["head"])
    arr = np.asarray(im)
    mask = arr.any(axis=2)
    return arr, mask


def make_synthetic_dataset(spec, out_dir):
    """Write a toy dataset to disk and load it back through the normal
    pipeline, so file parsing and image I/O are exercised for real.

    Each identity gets a unique limb color palette and
    `poses_per_identity` randomized stick poses; every ordered pose pair
    within an identity becomes a training pair. Keypoints are integer
    pixels and exact by construction. Output is byte-deterministic for a
    fixed spec.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    os.makedirs(out_dir, exist_ok=True)
    img_dir = os.path.join(out_dir, "images")
    mask_dir = os.path.join(out_dir, "masks")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(mask_dir, exist_ok=True)
    annotations = {}
    names = {}
    for ident in range(spec.num_identities):
        palette = _identity_palette(ident, spec.num_identities)
        for pose in range(spec.poses_per_identity):
            kps = _synthesize_keypoints(rng, spec.image_size)
            arr, mask = _render_figure(kps, palette)
            name = "id%04d_p%02d.png" % (ident, pose)
            Image.fromarray(arr).save(os.path.join(img_dir, name))
            Image.fromarray((mask * np.uint8(255))).save(
                os.path.join(mask_dir, name))
            annotations["images/" + name] = kps.joints
            names[(ident, pose)] = name
    ann_path = os.path.join(out_dir, "annotations.txt")
    write_annotation_file(ann_path, annotations)
    pair_path = os.path.join(out_dir, "pairs.txt")
    with open(pair_path, "w") as f:
        for ident in range(spec.num_identities):
            for a in range(spec.poses_per_identity):
                for b in range(spec.poses_per_identity):
                    if a == b:
                        continue
                    f.write("images/%s,images/%s,masks/%s,masks/%s\n"
                            % (names[(ident, a)], names[(ident, b)],
                               names[(ident, a)], names[(ident, b)]))
    records = load_pairs(pair_path, ann_path)
    return SyntheticDataset(root=out_dir, pair_list=pair_path,
                            annotation_file=ann_path, records=records)
