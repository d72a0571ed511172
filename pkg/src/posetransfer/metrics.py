"""Evaluation metrics: SSIM, PSNR, Inception-style score, their masked
variants, and PCKh keypoint accuracy, plus report assembly.

All metrics run on numpy HWC float images in [-1, 1] (mapped to [0, 1]
internally) and are independent of the torch model stack. Score
backends are pluggable objects so a real classifier or pose estimator
can be swapped in without touching the metric code.
"""

import dataclasses
import math

import numpy as np
from PIL import Image
from scipy.signal import fftconvolve

from .pose_encoding import KeypointSet, NUM_JOINTS

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DEFAULT_IS_SPLITS = 10
MASK_FILL = 0.0  # mid-gray in [-1, 1]


def _to01(image, what):
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError("%s must be HxW or HxWxC, got shape %r"
                         % (what, arr.shape))
    if arr.min() < -1.0 - 1e-6 or arr.max() > 1.0 + 1e-6:
        raise ValueError("%s values outside [-1, 1]" % what)
    return (arr + 1.0) / 2.0


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Normalized 2D Gaussian tap weights."""
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed(x, window):
    # window is symmetric, so convolution equals correlation
    return fftconvolve(x, window, mode="valid")


def ssim(image_a, image_b):
    """Mean structural similarity over valid 11x11 Gaussian windows.

    Inputs share a shape of at least the window size; the similarity is
    averaged over windows and channels with the standard stabilizers
    C1=(0.01 L)^2, C2=(0.03 L)^2 for dynamic range L=1.
    """
    a = _to01(image_a, "image_a")
    b = _to01(image_b, "image_b")
    if a.shape != b.shape:
        raise ValueError("image shapes differ: %r vs %r" % (a.shape, b.shape))
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError("images must be at least %dx%d for SSIM, got %r"
                         % (SSIM_WINDOW, SSIM_WINDOW, a.shape[:2]))
    window = gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mu_x = _windowed(x, window)
        mu_y = _windowed(y, window)
        var_x = _windowed(x * x, window) - mu_x ** 2
        var_y = _windowed(y * y, window) - mu_y ** 2
        cov = _windowed(x * y, window) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
        vals.append(num / den)
    return float(np.mean(vals))


def _composite(image, mask, what):
    arr = np.asarray(image, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != arr.shape[:2]:
        raise ValueError("mask shape %r does not match %s %r"
                         % (m.shape, what, arr.shape))
    if ((m != 0.0) & (m != 1.0)).any():
        raise ValueError("mask must be binary")
    return np.where(m[:, :, None] > 0, arr, MASK_FILL)


def mask_ssim(image_a, image_b, mask):
    """SSIM after compositing both images over mid-gray outside the mask.

    An all-ones mask reproduces plain ssim exactly.
    """
    return ssim(_composite(image_a, mask, "image_a"),
                _composite(image_b, mask, "image_b"))


def psnr(image_a, image_b):
    """Peak signal-to-noise ratio in dB over the [0, 1] dynamic range.

    Identical images give math.inf.
    """
    a = _to01(image_a, "image_a")
    b = _to01(image_b, "image_b")
    if a.shape != b.shape:
        raise ValueError("image shapes differ: %r vs %r" % (a.shape, b.shape))
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _classify_all(images, classifier):
    probs = []
    num_labels = None
    for i, img in enumerate(images):
        p = np.asarray(classifier.classify(img), dtype=np.float64)
        if p.ndim != 1:
            raise ValueError("classifier output for image %d is not a "
                             "vector" % i)
        if num_labels is None:
            num_labels = p.shape[0]
        elif p.shape[0] != num_labels:
            raise ValueError("classifier label count changed at image %d" % i)
        if (p < 0).any() or abs(float(p.sum()) - 1.0) > 1e-5:
            raise ValueError("classifier output for image %d is not a "
                             "probability vector" % i)
        probs.append(p)
    return np.stack(probs)


def inception_score(images, classifier, splits=DEFAULT_IS_SPLITS):
    """exp(mean KL(p(y|x) || p(y))) per split; returns (mean, std).

    The image list is cut into `splits` contiguous chunks; p(y) is the
    per-chunk marginal. std is the population deviation over chunks.
    """
    if splits < 1:
        raise ValueError("splits must be >= 1")
    if len(images) < splits:
        raise ValueError("need at least %d images for %d splits, got %d"
                         % (splits, splits, len(images)))
    probs = _classify_all(images, classifier)
    scores = []
    for chunk in np.array_split(probs, splits):
        marginal = chunk.mean(axis=0)
        logp = np.where(chunk > 0, np.log(np.where(chunk > 0, chunk, 1.0)), 0.0)
        logm = np.where(marginal > 0, np.log(np.where(marginal > 0, marginal,
                                                      1.0)), 0.0)
        kl = (chunk * (logp - logm[None, :])).sum(axis=1)
        scores.append(float(np.exp(kl.mean())))
    return float(np.mean(scores)), float(np.std(scores))


def mask_is(images, masks, classifier, splits=DEFAULT_IS_SPLITS):
    """Inception-style score of images composited over mid-gray."""
    if len(images) != len(masks):
        raise ValueError("got %d images but %d masks"
                         % (len(images), len(masks)))
    composited = [_composite(img, m, "image")
                  for img, m in zip(images, masks)]
    return inception_score(composited, classifier, splits)


def pckh(generated_keypoints, target_keypoints, alpha=0.5):
    """Fraction of target-visible joints whose generated location lies
    within alpha times the target head segment (nose to neck).

    Joints missing from the generated set count as misses. A zero-length
    or invisible head segment is an error.
    """
    generated_keypoints.validate()
    target_keypoints.validate()
    nose = target_keypoints.joints[0]
    neck = target_keypoints.joints[1]
    if not (nose[2] and neck[2]):
        raise ValueError("degenerate head segment: nose or neck not visible "
                         "in target")
    head = math.hypot(nose[0] - neck[0], nose[1] - neck[1])
    if head == 0.0:
        raise ValueError("degenerate head segment: nose and neck coincide")
    thresh = alpha * head
    visible = 0
    hits = 0
    for i in range(NUM_JOINTS):
        tx, ty, tvis = target_keypoints.joints[i]
        if not tvis:
            continue
        visible += 1
        gx, gy, gvis = generated_keypoints.joints[i]
        if not gvis:
            continue
        if math.hypot(gx - tx, gy - ty) <= thresh:
            hits += 1
    if visible == 0:
        raise ValueError("no visible joints in target")
    return hits / visible


class RandomProjectionClassifier:
    """Deterministic stand-in for a pretrained label classifier.

    Average-pools the image to a small grid, applies a fixed random
    projection, and softmaxes. Useful because identical images map to
    identical probability vectors while distinct content spreads out.
    """

    def __init__(self, num_labels=10, seed=0, pooled=(8, 8), scale=4.0):
        rng = np.random.default_rng(seed)
        self.num_labels = num_labels
        self.pooled = pooled
        self.scale = scale
        dim = pooled[0] * pooled[1] * 3
        self.weights = rng.normal(0.0, 1.0 / np.sqrt(dim), (num_labels, dim))

    def classify(self, image):
        arr = _to01(image, "image")
        if arr.shape[2] != 3:
            raise ValueError("classifier expects RGB, got %d channels"
                             % arr.shape[2])
        ph, pw = self.pooled
        u8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
        small = Image.fromarray(u8).resize((pw, ph), Image.BILINEAR)
        feat = np.asarray(small, dtype=np.float64).reshape(-1) / 255.0
        z = self.scale * (self.weights @ feat)
        z -= z.max()
        e = np.exp(z)
        return e / e.sum()


class AnnotationEchoEstimator:
    """Pose 'estimator' that returns the keypoints it was given.

    Keypoints enter this system as annotations, so the default PCKh
    pathway scores generated images against the very keypoints the
    generator was asked to hit. A real estimator can be plugged in
    through the same estimate() surface.
    """

    def __init__(self, keypoints_by_index):
        self._by_index = list(keypoints_by_index)
        self._cursor = 0

    def estimate(self, image):
        kps = self._by_index[self._cursor % len(self._by_index)]
        self._cursor += 1
        return kps


@dataclasses.dataclass
class MetricReport:
    """One evaluation row set, ordered like the usual results tables."""

    ssim: float
    inception_mean: float
    inception_std: float
    mask_ssim: float
    mask_is_mean: float
    mask_is_std: float
    psnr: float
    pckh: float
    num_pairs: int = 0

    @staticmethod
    def _fmt(v, std=None):
        if v is None:
            return "n/a"
        if math.isinf(v):
            return "inf"
        s = "%.4f" % v
        if std is not None:
            s += " +/- %.4f" % std
        return s

    def rows(self):
        return [
            ("SSIM", self._fmt(self.ssim)),
            ("IS", self._fmt(self.inception_mean, self.inception_std)),
            ("mask-SSIM", self._fmt(self.mask_ssim)),
            ("mask-IS", self._fmt(self.mask_is_mean, self.mask_is_std)),
            ("PSNR", self._fmt(self.psnr)),
            ("PCKh", self._fmt(self.pckh)),
        ]

    def to_lines(self):
        lines = ["pairs = %d" % self.num_pairs]
        for key, value in self.rows():
            lines.append("%s = %s" % (key, value))
        return lines

    def format_table(self, label="model"):
        out = ["%-10s %s" % ("metric", label)]
        for key, value in self.rows():
            out.append("%-10s %s" % (key, value))
        return "\n".join(out)


def evaluate_images(generated, targets, target_keypoints, masks=None,
                    generated_keypoints=None, classifier=None,
                    splits=DEFAULT_IS_SPLITS):
    """Score a generated/target image list with every applicable metric.

    masks enable the masked variants; a classifier enables the
    inception-style scores; generated_keypoints default to the target
    annotations (see AnnotationEchoEstimator).
    """
    if len(generated) != len(targets):
        raise ValueError("got %d generated images but %d targets"
                         % (len(generated), len(targets)))
    if not generated:
        raise ValueError("nothing to evaluate")
    if len(target_keypoints) != len(targets):
        raise ValueError("got %d keypoint sets for %d targets"
                         % (len(target_keypoints), len(targets)))
    ssim_vals = [ssim(g, t) for g, t in zip(generated, targets)]
    psnr_vals = [psnr(g, t) for g, t in zip(generated, targets)]
    if generated_keypoints is None:
        generated_keypoints = target_keypoints
    pckh_vals = [pckh(g, t)
                 for g, t in zip(generated_keypoints, target_keypoints)]
    m_ssim = None
    m_is = (None, None)
    i_s = (None, None)
    if classifier is not None:
        i_s = inception_score(generated, classifier, splits)
    if masks is not None:
        if len(masks) != len(targets):
            raise ValueError("got %d masks for %d targets"
                             % (len(masks), len(targets)))
        m_ssim = float(np.mean([mask_ssim(g, t, m) for g, t, m
                                in zip(generated, targets, masks)]))
        if classifier is not None:
            m_is = mask_is(generated, masks, classifier, splits)
    return MetricReport(
        ssim=float(np.mean(ssim_vals)),
        inception_mean=i_s[0], inception_std=i_s[1],
        mask_ssim=m_ssim,
        mask_is_mean=m_is[0], mask_is_std=m_is[1],
        psnr=float(np.mean(psnr_vals)),
        pckh=float(np.mean(pckh_vals)),
        num_pairs=len(generated),
    )


def _gather_eval_inputs(records, sigma):
    from .data import load_image, load_mask
    from .pose_encoding import encode_pose

    conds, targets, cond_poses, targ_poses, masks, kps = [], [], [], [], [], []
    have_masks = all(r.target_mask is not None for r in records)
    for rec in records:
        conds.append(load_image(rec.condition_image,
                                rec.condition_keypoints.image_size))
        targets.append(load_image(rec.target_image,
                                  rec.target_keypoints.image_size))
        cond_poses.append(encode_pose(rec.condition_keypoints, sigma))
        targ_poses.append(encode_pose(rec.target_keypoints, sigma))
        kps.append(rec.target_keypoints)
        if have_masks:
            masks.append(load_mask(rec.target_mask,
                                   rec.target_keypoints.image_size))
    return conds, targets, cond_poses, targ_poses, (masks or None), kps


def evaluate_model(checkpoint_path, records, classifier=None,
                   pose_estimator=None, splits=DEFAULT_IS_SPLITS, sigma=None):
    """Generate every pair from a checkpoint and score the results."""
    from .checkpoint import load_generator

    if not records:
        raise ValueError("no evaluation pairs")
    gen, meta = load_generator(checkpoint_path)
    if sigma is None:
        sigma = (meta.get("training") or {}).get("sigma", 6.0)
    conds, targets, cond_poses, targ_poses, masks, kps = \
        _gather_eval_inputs(records, sigma)
    generated = [gen.generate(c, pc, pt)
                 for c, pc, pt in zip(conds, cond_poses, targ_poses)]
    generated_kps = None
    if pose_estimator is not None:
        generated_kps = [pose_estimator.estimate(img) for img in generated]
    return generated, evaluate_images(
        generated, targets, kps, masks=masks,
        generated_keypoints=generated_kps, classifier=classifier,
        splits=splits)


def evaluate_real_data(records, classifier=None, splits=DEFAULT_IS_SPLITS,
                       sigma=6.0):
    """The reference row: score target images against themselves."""
    if not records:
        raise ValueError("no evaluation pairs")
    _, targets, _, _, masks, kps = _gather_eval_inputs(records, sigma)
    return evaluate_images(targets, targets, kps, masks=masks,
                           classifier=classifier, splits=splits)
