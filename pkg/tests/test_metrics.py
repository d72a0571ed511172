import math

import numpy as np
import pytest

from oracles import naive_ssim
from posetransfer.metrics import (DEFAULT_IS_SPLITS, AnnotationEchoEstimator,
                                  MetricReport, RandomProjectionClassifier,
                                  evaluate_images, evaluate_model,
                                  evaluate_real_data, gaussian_window,
                                  inception_score, mask_is, mask_ssim, pckh,
                                  psnr, ssim)
from posetransfer.pose_encoding import NUM_JOINTS, KeypointSet


def rand_image(seed, shape=(16, 14, 3)):
    rng = np.random.default_rng(seed)
    return rng.uniform(-1.0, 1.0, shape)


def square_keypoints(image_size=(32, 16)):
    h, w = image_size
    joints = [(w // 2, 2, True), (w // 2, 8, True)]
    rng = np.random.default_rng(7)
    while len(joints) < NUM_JOINTS:
        joints.append((int(rng.integers(0, w)), int(rng.integers(0, h)),
                       True))
    return KeypointSet(joints=joints, image_size=image_size)


class StubClassifier:
    """Maps an image to a one-hot vector chosen by its mean value."""

    def __init__(self, num_labels):
        self.num_labels = num_labels

    def classify(self, image):
        idx = int(round((float(np.mean(image)) + 1.0) * 10)) % self.num_labels
        p = np.zeros(self.num_labels)
        p[idx] = 1.0
        return p


class ConstantClassifier:
    def classify(self, image):
        return np.full(4, 0.25)


class BrokenClassifier:
    def classify(self, image):
        return np.array([0.9, 0.9])


def test_gaussian_window_normalized_and_symmetric():
    w = gaussian_window()
    assert w.shape == (11, 11)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(w, w.T)
    assert w[5, 5] == w.max()


def test_ssim_identity_is_exactly_one():
    x = rand_image(0)
    assert ssim(x, x) == 1.0


def test_ssim_symmetric():
    a, b = rand_image(1), rand_image(2)
    assert ssim(a, b) == ssim(b, a)


def test_ssim_constant_extremes_closed_form():
    # flat white vs flat black: means 1 and 0, no variance, so each
    # window evaluates to c1 / (1 + c1)
    a = np.ones((16, 16))
    b = -np.ones((16, 16))
    c1 = 0.01 ** 2
    want = c1 / (1.0 + c1)
    got = ssim(a, b)
    assert got < 1e-3
    assert got == pytest.approx(want, abs=1e-12)


def test_ssim_matches_window_loop_oracle():
    rng = np.random.default_rng(3)
    a = rng.uniform(-1.0, 1.0, (16, 14))
    b = np.clip(a + rng.normal(0, 0.2, a.shape), -1.0, 1.0)
    want = naive_ssim((a + 1) / 2, (b + 1) / 2, gaussian_window())
    assert ssim(a, b) == pytest.approx(want, abs=1e-10)


def test_ssim_input_validation():
    with pytest.raises(ValueError, match="differ"):
        ssim(np.zeros((16, 14)), np.zeros((16, 12)))
    with pytest.raises(ValueError, match="at least 11x11"):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))
    with pytest.raises(ValueError, match="outside"):
        ssim(np.full((16, 14), 2.0), np.zeros((16, 14)))


def test_mask_ssim_full_mask_equals_plain():
    a, b = rand_image(4), rand_image(5)
    mask = np.ones(a.shape[:2])
    assert mask_ssim(a, b, mask) == ssim(a, b)


def test_mask_ssim_empty_mask_is_one():
    a, b = rand_image(6), rand_image(7)
    assert mask_ssim(a, b, np.zeros(a.shape[:2])) == 1.0


def test_mask_ssim_ignores_outside_differences():
    a = rand_image(8)
    mask = np.zeros(a.shape[:2])
    mask[4:12, 4:10] = 1.0
    b = a.copy()
    outside = mask == 0
    b[outside] = np.clip(a[outside] + 0.7, -1, 1)
    assert mask_ssim(a, b, mask) == 1.0
    assert ssim(a, b) < 1.0


def test_mask_must_be_binary():
    a = rand_image(9)
    with pytest.raises(ValueError, match="binary"):
        mask_ssim(a, a, np.full(a.shape[:2], 0.5))
    with pytest.raises(ValueError, match="mask shape"):
        mask_ssim(a, a, np.ones((4, 4)))


def test_psnr_identity_is_inf():
    x = rand_image(10)
    assert psnr(x, x) == math.inf
    assert math.isinf(psnr(x, x))


def test_psnr_full_range_error_is_zero_db():
    a = np.ones((4, 4))
    b = -np.ones((4, 4))
    assert psnr(a, b) == pytest.approx(0.0, abs=1e-12)


def test_psnr_known_value():
    # a constant error of 0.1 on the [0, 1] scale gives exactly 20 dB
    a = np.zeros((8, 8))
    b = np.full((8, 8), 0.2)
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)


def test_psnr_symmetric():
    a, b = rand_image(11), rand_image(12)
    assert psnr(a, b) == psnr(b, a)


def test_inception_score_constant_classifier_is_one():
    imgs = [rand_image(i) for i in range(10)]
    mean, std = inception_score(imgs, ConstantClassifier(), splits=5)
    assert mean == 1.0
    assert std == 0.0


def test_inception_score_uniform_one_hots_hit_label_count():
    # L equally used one-hot labels with a single split: KL is log L for
    # every image, so the score is exactly L
    labels = 5
    imgs = [np.full((12, 12, 3), -1.0 + 0.2 * i) for i in range(labels)]
    cls = StubClassifier(labels)
    seen = {tuple(cls.classify(im)) for im in imgs}
    assert len(seen) == labels
    mean, std = inception_score(imgs, cls, splits=1)
    assert mean == pytest.approx(labels, abs=1e-6)
    assert std == 0.0


def test_inception_score_invariances():
    labels = 4
    imgs = [np.full((12, 12, 3), -1.0 + 0.2 * i) for i in range(labels)]
    cls = StubClassifier(labels)
    base, _ = inception_score(imgs, cls, splits=1)
    shuffled, _ = inception_score(imgs[::-1], cls, splits=1)
    doubled, _ = inception_score(imgs + imgs, cls, splits=1)
    assert shuffled == pytest.approx(base, abs=1e-12)
    assert doubled == pytest.approx(base, abs=1e-12)


def test_inception_score_at_least_one():
    imgs = [rand_image(i) for i in range(12)]
    mean, _ = inception_score(imgs, RandomProjectionClassifier(seed=0),
                              splits=3)
    assert mean >= 1.0 - 1e-9


def test_inception_score_validation():
    imgs = [rand_image(0)]
    with pytest.raises(ValueError, match="splits"):
        inception_score(imgs, ConstantClassifier(), splits=0)
    with pytest.raises(ValueError, match="at least"):
        inception_score(imgs, ConstantClassifier(), splits=2)
    with pytest.raises(ValueError, match="probability"):
        inception_score([rand_image(0), rand_image(1)], BrokenClassifier(),
                        splits=1)


def test_mask_is_ones_matches_plain():
    imgs = [rand_image(i) for i in range(6)]
    masks = [np.ones(im.shape[:2]) for im in imgs]
    cls = RandomProjectionClassifier(seed=1)
    assert mask_is(imgs, masks, cls, splits=2) == \
        inception_score(imgs, cls, splits=2)


def test_mask_is_zero_masks_collapse_to_one():
    imgs = [rand_image(i) for i in range(6)]
    masks = [np.zeros(im.shape[:2]) for im in imgs]
    mean, std = mask_is(imgs, masks, RandomProjectionClassifier(seed=1),
                        splits=3)
    assert mean == 1.0 and std == 0.0


def test_mask_is_length_mismatch():
    imgs = [rand_image(0)]
    with pytest.raises(ValueError, match="masks"):
        mask_is(imgs, [], ConstantClassifier(), splits=1)


def test_pckh_identity_is_one():
    kps = square_keypoints()
    assert pckh(kps, kps) == 1.0


def test_pckh_far_displacement_is_zero():
    kps = square_keypoints()
    # head segment is 6px, threshold 3px; a 10px shift misses everywhere
    moved = kps.shifted(10, 10)
    moved = KeypointSet(joints=moved.joints, image_size=(64, 64))
    target = KeypointSet(joints=kps.joints, image_size=(64, 64))
    assert pckh(moved, target) == 0.0


def test_pckh_half_hits():
    h, w = 64, 64
    joints = [(10, 10, True), (10, 16, True)]  # head length 6, thresh 3
    for i in range(2, NUM_JOINTS):
        joints.append((30, 2 * i, True))
    target = KeypointSet(joints=joints, image_size=(h, w))
    gen_joints = []
    for i, (x, y, v) in enumerate(joints):
        off = 2 if i < NUM_JOINTS // 2 else 20
        gen_joints.append((x + off, y, v))
    gen = KeypointSet(joints=gen_joints, image_size=(h, w))
    assert pckh(gen, target) == pytest.approx(0.5, abs=1e-12)


def test_pckh_excludes_invisible_targets():
    kps = square_keypoints()
    joints = list(kps.joints)
    joints[5] = (joints[5][0], joints[5][1], False)
    joints[6] = (joints[6][0], joints[6][1], False)
    target = KeypointSet(joints=joints, image_size=kps.image_size)
    # generated nails every joint the target still shows
    assert pckh(target, target) == 1.0
    # and the two hidden joints do not enter the denominator: spoil them
    spoiled = list(joints)
    spoiled[5] = (0, 0, True)
    spoiled[6] = (0, 0, True)
    gen = KeypointSet(joints=spoiled, image_size=kps.image_size)
    assert pckh(gen, target) == 1.0


def test_pckh_invisible_generated_counts_as_miss():
    kps = square_keypoints()
    joints = list(kps.joints)
    joints[4] = (joints[4][0], joints[4][1], False)
    gen = KeypointSet(joints=joints, image_size=kps.image_size)
    assert pckh(gen, kps) == pytest.approx((NUM_JOINTS - 1) / NUM_JOINTS,
                                           abs=1e-12)


def test_pckh_degenerate_head_rejected():
    kps = square_keypoints()
    hidden = list(kps.joints)
    hidden[0] = (hidden[0][0], hidden[0][1], False)
    bad = KeypointSet(joints=hidden, image_size=kps.image_size)
    with pytest.raises(ValueError, match="degenerate head"):
        pckh(kps, bad)
    merged = list(kps.joints)
    merged[1] = merged[0]
    bad2 = KeypointSet(joints=merged, image_size=kps.image_size)
    with pytest.raises(ValueError, match="coincide"):
        pckh(kps, bad2)


def test_pckh_translation_invariant():
    big = (128, 128)
    target = KeypointSet(joints=square_keypoints().joints, image_size=big)
    gen_joints = [(x + 1, y + 1, v) for x, y, v in target.joints]
    gen = KeypointSet(joints=gen_joints, image_size=big)
    score = pckh(gen, target)
    assert pckh(gen.shifted(20, 20), target.shifted(20, 20)) == score


def test_random_projection_classifier_behaviour():
    cls_a = RandomProjectionClassifier(seed=3)
    cls_b = RandomProjectionClassifier(seed=3)
    img = rand_image(13)
    pa, pb = cls_a.classify(img), cls_b.classify(img)
    assert np.array_equal(pa, pb)
    assert pa.shape == (10,)
    assert (pa >= 0).all()
    assert pa.sum() == pytest.approx(1.0, abs=1e-12)
    other = cls_a.classify(rand_image(14))
    assert not np.array_equal(pa, other)


def test_annotation_echo_estimator_cycles():
    est = AnnotationEchoEstimator(["a", "b"])
    assert [est.estimate(None) for _ in range(3)] == ["a", "b", "a"]


def test_report_formatting():
    rep = MetricReport(ssim=0.5, inception_mean=2.0, inception_std=0.25,
                       mask_ssim=None, mask_is_mean=None, mask_is_std=None,
                       psnr=math.inf, pckh=1.0, num_pairs=3)
    rows = rep.rows()
    assert [k for k, _ in rows] == ["SSIM", "IS", "mask-SSIM", "mask-IS",
                                    "PSNR", "PCKh"]
    values = dict(rows)
    assert values["SSIM"] == "0.5000"
    assert values["IS"] == "2.0000 +/- 0.2500"
    assert values["mask-SSIM"] == "n/a"
    assert values["PSNR"] == "inf"
    assert rep.to_lines()[0] == "pairs = 3"
    assert "PCKh" in rep.format_table()


def test_evaluate_images_identity_pairs():
    imgs = [rand_image(i) for i in range(4)]
    kps = [square_keypoints((16, 14))] * 4
    masks = [np.ones((16, 14))] * 4
    rep = evaluate_images(imgs, imgs, kps, masks=masks,
                          classifier=RandomProjectionClassifier(seed=0),
                          splits=2)
    assert rep.ssim == 1.0
    assert rep.mask_ssim == 1.0
    assert rep.psnr == math.inf
    assert rep.pckh == 1.0
    assert rep.num_pairs == 4
    assert rep.inception_mean >= 1.0 - 1e-9
    assert rep.mask_is_mean == rep.inception_mean


def test_evaluate_images_optional_blocks_default_off():
    imgs = [rand_image(i) for i in range(2)]
    rep = evaluate_images(imgs, imgs, [square_keypoints((16, 14))] * 2)
    assert rep.inception_mean is None
    assert rep.mask_ssim is None
    assert dict(rep.rows())["IS"] == "n/a"


def test_evaluate_images_validation():
    imgs = [rand_image(0)]
    kps = [square_keypoints((16, 14))]
    with pytest.raises(ValueError, match="targets"):
        evaluate_images(imgs, imgs + imgs, kps + kps)
    with pytest.raises(ValueError, match="keypoint"):
        evaluate_images(imgs, imgs, kps + kps)
    with pytest.raises(ValueError, match="nothing"):
        evaluate_images([], [], [])


def test_evaluate_model_deterministic(toy_run):
    records = toy_run["dataset"].records[:6]
    gen_a, rep_a = evaluate_model(toy_run["result"].final_checkpoint,
                                  records,
                                  classifier=RandomProjectionClassifier(),
                                  splits=2)
    gen_b, rep_b = evaluate_model(toy_run["result"].final_checkpoint,
                                  records,
                                  classifier=RandomProjectionClassifier(),
                                  splits=2)
    assert len(gen_a) == 6
    assert all(np.array_equal(x, y) for x, y in zip(gen_a, gen_b))
    assert rep_a == rep_b
    assert 0.0 < rep_a.ssim < 1.0
    assert rep_a.mask_ssim is not None


def test_evaluate_model_uses_checkpoint_sigma(toy_run):
    records = toy_run["dataset"].records[:2]
    _, with_meta = evaluate_model(toy_run["result"].final_checkpoint, records)
    _, explicit = evaluate_model(toy_run["result"].final_checkpoint, records,
                                 sigma=toy_run["train_config"].sigma)
    assert with_meta == explicit


def test_evaluate_real_data_reference_row(toy_dataset):
    rep = evaluate_real_data(toy_dataset.records, sigma=2.0,
                             classifier=RandomProjectionClassifier(),
                             splits=4)
    assert rep.ssim == 1.0
    assert rep.mask_ssim == 1.0
    assert rep.psnr == math.inf
    assert rep.pckh == 1.0
    assert rep.num_pairs == len(toy_dataset.records)


def test_default_split_count():
    assert DEFAULT_IS_SPLITS == 10
