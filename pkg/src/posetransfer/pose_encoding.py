"""Keypoint sets and their Gaussian heatmap encoding.

A pose is 18 joints in the OpenPose/COCO ordering. Each visible joint
becomes one heatmap channel exp(-d^2 / sigma^2) where d is the pixel
distance to the joint; invisible joints give all-zero channels.
"""

import dataclasses

import numpy as np

NUM_JOINTS = 18

# OpenPose 18-joint ordering. Index 0/1 (nose/neck) define the head
# segment used by the PCKh metric.
JOINT_NAMES = [
    "nose", "neck",
    "right_shoulder", "right_elbow", "right_wrist",
    "left_shoulder", "left_elbow", "left_wrist",
    "right_hip", "right_knee", "right_ankle",
    "left_hip", "left_knee", "left_ankle",
    "right_eye", "left_eye", "right_ear", "left_ear",
]

DEFAULT_SIGMA = 6.0  # heatmap width in pixels

_FIELDS_PER_LINE = 1 + 3 * NUM_JOINTS


@dataclasses.dataclass
class KeypointSet:
    """18 (x, y, visible) joints tied to an image of size (height, width).

    Coordinates are zero-indexed pixels, x along width and y along
    height. Invisible joints carry no positional meaning.
    """

    joints: list
    image_size: tuple

    def validate(self):
        if len(self.joints) != NUM_JOINTS:
            raise ValueError(
                "expected %d joints, got %d" % (NUM_JOINTS, len(self.joints)))
        h, w = self.image_size
        if h <= 0 or w <= 0:
            raise ValueError("bad image size %r" % (self.image_size,))
        for i, (x, y, vis) in enumerate(self.joints):
            if not vis:
                continue
            if not (0 <= x <= w - 1 and 0 <= y <= h - 1):
                raise ValueError(
                    "joint %d (%s) at (%s, %s) outside %dx%d image"
                    % (i, JOINT_NAMES[i], x, y, h, w))

    def visible_mask(self):
        return np.array([bool(v) for _, _, v in self.joints])

    def coords(self):
        """(18, 2) array of (x, y); invisible rows are whatever was stored."""
        return np.array([[x, y] for x, y, _ in self.joints], dtype=np.float64)

    def num_visible(self):
        return int(self.visible_mask().sum())

    def shifted(self, dx, dy):
        """Translate all visible joints by (dx, dy) pixels."""
        moved = [(x + dx, y + dy, vis) if vis else (x, y, vis)
                 for x, y, vis in self.joints]
        return KeypointSet(joints=moved, image_size=self.image_size)


@dataclasses.dataclass
class PoseHeatmap:
    """H x W x 18 float32 stack of per-joint Gaussian bumps in [0, 1]."""

    data: np.ndarray
    sigma: float

    @property
    def image_size(self):
        return self.data.shape[0], self.data.shape[1]

    def channel(self, joint_index):
        return self.data[:, :, joint_index]

    def validate(self):
        if self.data.ndim != 3 or self.data.shape[2] != NUM_JOINTS:
            raise ValueError("heatmap must be HxWx%d, got %r"
                             % (NUM_JOINTS, self.data.shape))
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ValueError("heatmap values outside [0, 1]")


def encode_pose(keypoints, sigma=DEFAULT_SIGMA):
    """Render a KeypointSet as an H x W x 18 heatmap.

    Visible joint i gives channel exp(-((x-x_i)^2 + (y-y_i)^2) / sigma^2),
    peaking at 1 on the joint pixel. Invisible joints give zeros.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive, got %r" % (sigma,))
    keypoints.validate()
    h, w = keypoints.image_size
    data = np.zeros((h, w, NUM_JOINTS), dtype=np.float32)
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    inv = 1.0 / (sigma * sigma)
    for i, (x, y, vis) in enumerate(keypoints.joints):
        if not vis:
            continue
        d2 = (xs - float(x)) ** 2 + (ys - float(y)) ** 2
        data[:, :, i] = np.exp(-d2 * inv)
    return PoseHeatmap(data=data, sigma=float(sigma))


def concat_pose_pair(condition, target):
    """Stack condition and target heatmaps into an H x W x 36 array."""
    if condition.image_size != target.image_size:
        raise ValueError("heatmap sizes differ: %r vs %r"
                         % (condition.image_size, target.image_size))
    return np.concatenate([condition.data, target.data], axis=2)


def _fmt_num(v):
    f = float(v)
    if f.is_integer():
        return str(int(f))
    return repr(f)


def format_annotation_record(image_name, joints):
    """One CSV line: name,x0,y0,v0,...,x17,y17,v17 (invisible -> -1,-1,0)."""
    if "," in image_name:
        raise ValueError("image name may not contain commas: %r" % image_name)
    if len(joints) != NUM_JOINTS:
        raise ValueError("expected %d joints, got %d" % (NUM_JOINTS, len(joints)))
    parts = [image_name]
    for x, y, vis in joints:
        if vis:
            parts += [_fmt_num(x), _fmt_num(y), "1"]
        else:
            parts += ["-1", "-1", "0"]
    return ",".join(parts)


def parse_annotation_record(line):
    """Inverse of format_annotation_record. Returns (name, joints)."""
    parts = line.strip().split(",")
    if len(parts) != _FIELDS_PER_LINE:
        raise ValueError("annotation record has %d fields, expected %d"
                         % (len(parts), _FIELDS_PER_LINE))
    name = parts[0]
    joints = []
    for i in range(NUM_JOINTS):
        x_s, y_s, v_s = parts[1 + 3 * i: 4 + 3 * i]
        try:
            x, y, vis = float(x_s), float(y_s), int(v_s)
        except ValueError as exc:
            raise ValueError("joint %d of %r: %s" % (i, name, exc)) from None
        if vis not in (0, 1):
            raise ValueError("joint %d of %r: visibility must be 0/1, got %r"
                             % (i, name, v_s))
        joints.append((x, y, bool(vis)))
    return name, joints


def read_annotation_file(path):
    """Parse an annotation file into an ordered {image_name: joints} dict."""
    records = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                name, joints = parse_annotation_record(line)
            except ValueError as exc:
                raise ValueError("%s:%d: %s" % (path, lineno, exc)) from None
            if name in records:
                raise ValueError("%s:%d: duplicate record for %r"
                                 % (path, lineno, name))
            records[name] = joints
    return records


def write_annotation_file(path, records):
    """Write {image_name: joints} in a stable, re-parseable form."""
    with open(path, "w") as f:
        for name, joints in records.items():
            f.write(format_annotation_record(name, joints) + "\n")
