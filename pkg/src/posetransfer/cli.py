"""Command line front end.

Subcommands: synth, train, generate, pose-sweep, evaluate, ablate.
Configuration comes from an INI file with [generator], [discriminator]
and [training] sections; any field can be overridden on the command
line with --set section.key=value. Flag > file > built-in default.
"""

import argparse
import dataclasses
import datetime
import importlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, load_generator
from .data import (SyntheticSpec, load_image, load_pairs,
                   make_synthetic_dataset, save_image, to_uint8)
from .discriminators import DiscriminatorConfig
from .generator import Generator, GeneratorConfig, count_parameters
from .losses import LossWeights
from .metrics import (DEFAULT_IS_SPLITS, MetricReport, RandomProjectionClassifier,
                      evaluate_images, evaluate_model, evaluate_real_data)
from .pose_encoding import KeypointSet, encode_pose, read_annotation_file
from .training import TrainingConfig, train

OUT_ROOT_ENV = "POSETRANSFER_OUT"
_WEIGHT_KEYS = {
    "lambda_adversarial": "adversarial",
    "lambda_l1": "l1",
    "lambda_perceptual": "perceptual",
}


class ConfigError(Exception):
    pass


@dataclasses.dataclass
class ResolvedConfig:
    generator: GeneratorConfig
    discriminator: DiscriminatorConfig
    training: TrainingConfig

    def to_dict(self):
        return {
            "generator": dataclasses.asdict(self.generator),
            "discriminator": dataclasses.asdict(self.discriminator),
            "training": dataclasses.asdict(self.training),
        }


def _coerce(value, target_type, key):
    try:
        if target_type is bool:
            v = value.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError("not a boolean: %r" % value)
        if target_type is int:
            return int(value)
        if target_type is float:
            return float(value)
        if target_type is tuple:
            parts = value.lower().replace("x", " ").split()
            return tuple(int(p) for p in parts)
        if target_type is str:
            return value
    except ValueError as exc:
        raise ConfigError("bad value for %s: %s" % (key, exc)) from None
    raise ConfigError("cannot parse option %s" % key)


def _apply_option(resolved, section, key, value):
    targets = {
        "generator": resolved.generator,
        "discriminator": resolved.discriminator,
        "training": resolved.training,
    }
    if section not in targets:
        raise ConfigError("unknown config section %r" % section)
    obj = targets[section]
    if section == "training" and key in _WEIGHT_KEYS:
        setattr(obj.weights, _WEIGHT_KEYS[key],
                _coerce(value, float, "training." + key))
        return
    for f in dataclasses.fields(obj):
        if f.name == key:
            setattr(obj, key, _coerce(value, f.type, section + "." + key))
            return
    raise ConfigError("unknown option %s.%s" % (section, key))


def resolve_config(config_path=None, overrides=(), seed=None):
    """Defaults, then the INI file, then --set overrides, then --seed."""
    import configparser

    resolved = ResolvedConfig(GeneratorConfig(), DiscriminatorConfig(),
                              TrainingConfig(weights=LossWeights()))
    if config_path is not None:
        if not os.path.exists(config_path):
            raise ConfigError("config file %s not found" % config_path)
        parser = configparser.ConfigParser()
        parser.read(config_path)
        for section in parser.sections():
            for key, value in parser.items(section):
                _apply_option(resolved, section, key, value)
    for item in overrides:
        if "=" not in item:
            raise ConfigError("--set needs section.key=value, got %r" % item)
        dotted, value = item.split("=", 1)
        if "." not in dotted:
            raise ConfigError("--set needs section.key=value, got %r" % item)
        section, key = dotted.split(".", 1)
        _apply_option(resolved, section, key, value)
    if seed is not None:
        resolved.training.seed = seed
    try:
        resolved.generator.validate()
        resolved.discriminator.validate()
        resolved.training.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return resolved


def _default_out(name):
    root = os.environ.get(OUT_ROOT_ENV, "runs")
    return os.path.join(root, name)


def _load_backend(spec_str):
    """'module:attr' -> object (instantiated when it is a plain factory)."""
    mod_name, sep, attr = spec_str.partition(":")
    if not sep:
        raise ConfigError("backend spec must look like module:attr, got %r"
                          % spec_str)
    try:
        obj = getattr(importlib.import_module(mod_name), attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigError("cannot load backend %r: %s" % (spec_str, exc))
    if isinstance(obj, type):
        obj = obj()
    elif callable(obj) and not hasattr(obj, "classify") \
            and not hasattr(obj, "estimate"):
        obj = obj()
    return obj


def _classifier_from(args):
    spec_str = getattr(args, "backend_classifier", "random")
    if spec_str == "none":
        return None
    if spec_str == "random":
        return RandomProjectionClassifier(seed=0)
    return _load_backend(spec_str)


def _estimator_from(args):
    spec_str = getattr(args, "backend_pose_estimator", "annotations")
    if spec_str in ("annotations", "none"):
        return None
    return _load_backend(spec_str)


def _load_records(args):
    pairs = args.pairs
    annotations = args.annotations
    if args.data is not None:
        pairs = pairs or os.path.join(args.data, "pairs.txt")
        annotations = annotations or os.path.join(args.data,
                                                  "annotations.txt")
    if pairs is None or annotations is None:
        raise ConfigError("need --data DIR or both --pairs and --annotations")
    return load_pairs(pairs, annotations)


def _write_manifest(out_dir, command, resolved, artifacts, started):
    manifest = {
        "command": command,
        "package_version": __version__,
        "seed": resolved.training.seed if resolved else None,
        "config": resolved.to_dict() if resolved else None,
        "artifacts": artifacts,
        "started_at": started,
        "finished_at": datetime.datetime.now().isoformat(timespec="seconds"),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def cmd_synth(args):
    spec = SyntheticSpec(num_identities=args.identities,
                         poses_per_identity=args.poses,
                         image_size=(args.height, args.width),
                         seed=args.seed)
    out = args.out or _default_out("synthetic")
    ds = make_synthetic_dataset(spec, out)
    print("wrote %d pairs under %s" % (len(ds.records), ds.root))
    return 0


def cmd_train(args):
    resolved = resolve_config(args.config, args.set, args.seed)
    records = _load_records(args)
    out_dir = args.out or _default_out("train")
    n_params = count_parameters(resolved.generator, resolved.discriminator)
    if args.dry_run:
        print("dry run: would train %d steps on %d pairs into %s"
              % (resolved.training.iterations, len(records), out_dir))
        print("model parameters: %d" % n_params)
        print(json.dumps(resolved.to_dict(), indent=2, sort_keys=True))
        return 0
    started = datetime.datetime.now().isoformat(timespec="seconds")
    t0 = time.time()
    every = max(1, resolved.training.iterations // 10)

    def progress(report):
        if report["step"] % every == 0 or report["step"] == 1:
            print("step %5d  d=%.4f  g_adv=%.4f  l1=%.4f  percep=%.4f  "
                  "full=%.4f" % (report["step"], report["d_loss"],
                                 report["g_adv"], report["l1"],
                                 report["percep"], report["full"]))

    result = train(resolved.generator, resolved.discriminator,
                   resolved.training, records, out_dir,
                   resume_from=args.resume, progress=progress)
    load_checkpoint(result.final_checkpoint)  # validate before declaring success
    manifest = _write_manifest(out_dir, "train", resolved, {
        "final_checkpoint": result.final_checkpoint,
        "checkpoints": result.checkpoints,
        "loss_log": result.log_path,
    }, started)
    print("trained %d steps in %.1fs; final checkpoint %s"
          % (len(result.history), time.time() - t0, result.final_checkpoint))
    print("manifest: %s" % manifest)
    return 0


def _condition_keypoints(name, target_records, annotation_path):
    base = os.path.basename(name)
    for rec_name, joints in target_records.items():
        if os.path.basename(rec_name) == base:
            return joints
    if annotation_path:
        extra = read_annotation_file(annotation_path)
        for rec_name, joints in extra.items():
            if os.path.basename(rec_name) == base:
                return joints
    raise ConfigError("no keypoint record for condition image %r; add it to "
                      "the keypoint file or pass --annotations" % base)


def _load_condition(args, gen):
    h, w = gen.config.image_size
    image = load_image(args.condition, (h, w))
    targets = read_annotation_file(args.keypoints)
    joints = _condition_keypoints(args.condition, targets, args.annotations)
    cond_kps = KeypointSet(joints=joints, image_size=(h, w))
    cond_base = os.path.basename(args.condition)
    names = [n for n in targets
             if os.path.basename(n) != cond_base]
    if not names:
        raise ConfigError("keypoint file %s holds no target records"
                          % args.keypoints)
    return image, cond_kps, [(n, KeypointSet(joints=targets[n],
                                             image_size=(h, w)))
                             for n in names]


def cmd_generate(args):
    gen, meta = load_generator(args.checkpoint)
    sigma = args.sigma or (meta.get("training") or {}).get("sigma", 6.0)
    image, cond_kps, target_list = _load_condition(args, gen)
    cond_pose = encode_pose(cond_kps, sigma)
    out = args.out or _default_out("generated.png")
    if args.dry_run:
        print("dry run: would write %d image(s) under %s"
              % (len(target_list), out))
        return 0
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    written = []
    if len(target_list) == 1:
        pose = encode_pose(target_list[0][1], sigma)
        save_image(gen.generate(image, cond_pose, pose), out)
        written.append(out)
    else:
        stem, ext = os.path.splitext(out)
        for i, (_, kps) in enumerate(target_list):
            pose = encode_pose(kps, sigma)
            path = "%s_%03d%s" % (stem, i, ext or ".png")
            save_image(gen.generate(image, cond_pose, pose), path)
            written.append(path)
    for path in written:
        if not os.path.exists(path):
            raise RuntimeError("expected output %s missing" % path)
    print("wrote %d image(s): %s" % (len(written), ", ".join(written)))
    return 0


def cmd_pose_sweep(args):
    gen, meta = load_generator(args.checkpoint)
    sigma = args.sigma or (meta.get("training") or {}).get("sigma", 6.0)
    image, cond_kps, target_list = _load_condition(args, gen)
    cond_pose = encode_pose(cond_kps, sigma)
    out = args.out or _default_out("sweep.png")
    if args.dry_run:
        print("dry run: would write a 1x%d sweep grid to %s"
              % (len(target_list) + 1, out))
        return 0
    # condition leftmost, one tile per pose; width is (1 + poses) * W
    tiles = [to_uint8(image)]
    for _, kps in target_list:
        pose = encode_pose(kps, sigma)
        tiles.append(to_uint8(gen.generate(image, cond_pose, pose)))
    grid = np.concatenate(tiles, axis=1)
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    save_image(grid.astype(np.float32) / 127.5 - 1.0, out)
    print("wrote sweep grid with %d poses: %s" % (len(target_list), out))
    return 0


def _print_reports(reports):
    names = [name for name, _ in reports]
    rows = [rep.rows() for _, rep in reports]
    widths = [max(len(n), max(len(r[i][1]) for r in rows))
              for i, n in enumerate(names)]
    header = "%-10s" % "metric"
    for n, w in zip(names, widths):
        header += "  %-*s" % (w, n)
    print(header)
    for i in range(len(rows[0])):
        line = "%-10s" % rows[0][i][0]
        for r, w in zip(rows, widths):
            line += "  %-*s" % (w, r[i][1])
        print(line)


def cmd_evaluate(args):
    records = _load_records(args)
    classifier = _classifier_from(args)
    estimator = _estimator_from(args)
    if args.dry_run:
        print("dry run: would evaluate %d pairs from %s"
              % (len(records), args.checkpoint))
        return 0
    _, report = evaluate_model(args.checkpoint, records,
                               classifier=classifier, pose_estimator=estimator,
                               splits=args.splits)
    reports = [("model", report)]
    if args.real_data_row:
        reports.append(("real", evaluate_real_data(
            records, classifier=classifier, splits=args.splits)))
    _print_reports(reports)
    if args.report:
        os.makedirs(os.path.dirname(os.path.abspath(args.report)),
                    exist_ok=True)
        with open(args.report, "w") as f:
            for name, rep in reports:
                f.write("[%s]\n" % name)
                for line in rep.to_lines():
                    f.write(line + "\n")
        print("report: %s" % args.report)
    return 0


def cmd_ablate(args):
    with open(args.matrix) as f:
        matrix = json.load(f)
    runs = matrix.get("runs")
    if not runs:
        raise ConfigError("ablation matrix needs a non-empty 'runs' list")
    base = resolve_config(args.config, args.set, args.seed)
    records = _load_records(args)
    out_dir = args.out or _default_out("ablation")
    plans = []
    for run in runs:
        if "name" not in run:
            raise ConfigError("every ablation run needs a name")
        overrides = ["%s=%s" % (k, v)
                     for k, v in run.get("overrides", {}).items()]
        resolved = resolve_config(args.config, list(args.set) + overrides,
                                  args.seed)
        plans.append((run["name"], resolved))
    if args.dry_run:
        for name, resolved in plans:
            print("dry run: %s -> %s" % (name,
                                         json.dumps(resolved.to_dict(),
                                                    sort_keys=True)))
        return 0
    started = datetime.datetime.now().isoformat(timespec="seconds")
    classifier = _classifier_from(args)
    results = []
    for name, resolved in plans:
        run_dir = os.path.join(out_dir, name)
        print("== ablation run %s ==" % name)
        result = train(resolved.generator, resolved.discriminator,
                       resolved.training, records, run_dir)
        _, report = evaluate_model(result.final_checkpoint, records,
                                   classifier=classifier, splits=args.splits)
        n_params = count_parameters(resolved.generator, resolved.discriminator)
        is_default = resolved.generator == base.generator
        results.append({
            "name": name,
            "default": is_default,
            "parameters": n_params,
            "checkpoint": result.final_checkpoint,
            "metrics": {k: v for k, v in zip(
                ("ssim", "is_mean", "is_std", "mask_ssim", "mask_is_mean",
                 "mask_is_std", "psnr", "pckh"),
                (report.ssim, report.inception_mean, report.inception_std,
                 report.mask_ssim, report.mask_is_mean, report.mask_is_std,
                 report.psnr, report.pckh))},
        })
    def fmt(v):
        if v is None:
            return "n/a"
        return "inf" if v == float("inf") else "%.4f" % v

    columns = ("SSIM", "IS", "mask-SSIM", "mask-IS", "PSNR", "PCKh")
    lines = ["%-22s %12s  %s" % ("run", "params",
                                 "  ".join("%-9s" % c for c in columns))]
    for res in results:
        m = res["metrics"]
        name = res["name"] + (" (default)" if res["default"] else "")
        cells = (m["ssim"], m["is_mean"], m["mask_ssim"], m["mask_is_mean"],
                 m["psnr"], m["pckh"])
        lines.append("%-22s %12d  %s" % (name, res["parameters"],
                                         "  ".join("%-9s" % fmt(v)
                                                   for v in cells)))
    table = "\n".join(lines)
    print(table)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "ablation_table.txt"), "w") as f:
        f.write(table + "\n")
    with open(os.path.join(out_dir, "ablation_results.json"), "w") as f:
        json.dump(results, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_manifest(out_dir, "ablate", base, {
        "table": os.path.join(out_dir, "ablation_table.txt"),
        "results": os.path.join(out_dir, "ablation_results.json"),
        "runs": [r["name"] for r in results],
    }, started)
    return 0


def _add_config_flags(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--set", action="append", default=[],
                   metavar="SECTION.KEY=VALUE",
                   help="override one config field")
    p.add_argument("--seed", type=int, help="override training.seed")


def _add_data_flags(p):
    p.add_argument("--data", help="dataset dir with pairs.txt/annotations.txt")
    p.add_argument("--pairs", help="pair list file")
    p.add_argument("--annotations", help="annotation file")


def _add_backend_flags(p):
    p.add_argument("--backend-classifier", default="random",
                   help="'random', 'none', or module:attr")
    p.add_argument("--backend-pose-estimator", default="annotations",
                   help="'annotations', 'none', or module:attr")
    p.add_argument("--splits", type=int, default=DEFAULT_IS_SPLITS,
                   help="inception score splits")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="posetransfer",
        description="Pose-guided person image generation")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic stick-figure dataset")
    p.add_argument("--out", help="output dataset dir")
    p.add_argument("--identities", type=int, default=8)
    p.add_argument("--poses", type=int, default=2)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    _add_config_flags(p)
    _add_data_flags(p)
    p.add_argument("--out", help="run directory")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="transfer a condition image to "
                                        "target poses")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--condition", required=True, help="condition image")
    p.add_argument("--keypoints", required=True,
                   help="annotation file with target keypoint records")
    p.add_argument("--annotations",
                   help="extra annotation file holding the condition record")
    p.add_argument("--sigma", type=float, help="heatmap width override")
    p.add_argument("--out", help="output image path")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("pose-sweep", help="one condition, many poses, "
                                          "one grid image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--condition", required=True)
    p.add_argument("--keypoints", required=True)
    p.add_argument("--annotations")
    p.add_argument("--sigma", type=float)
    p.add_argument("--out", help="grid image path")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_pose_sweep)

    p = sub.add_parser("evaluate", help="score a checkpoint on a pair list")
    p.add_argument("--checkpoint", required=True)
    _add_data_flags(p)
    _add_backend_flags(p)
    p.add_argument("--report", help="write key=value report here")
    p.add_argument("--real-data-row", action="store_true",
                   help="also score target images against themselves")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run a matrix of config variants")
    p.add_argument("--matrix", required=True, help="JSON matrix file")
    _add_config_flags(p)
    _add_data_flags(p)
    _add_backend_flags(p)
    p.add_argument("--out", help="ablation root dir")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
