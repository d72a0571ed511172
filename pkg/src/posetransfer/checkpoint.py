"""Self-contained npz checkpoints.

One archive holds a JSON metadata blob (format version, step, full
model/training configs) plus every model tensor, buffer, and Adam
moment. Keys are written in sorted order and the payload carries no
timestamps, so identical state produces identical bytes and a
save -> load -> save round trip is byte-exact.
"""

import dataclasses
import json

import numpy as np
import torch

from .discriminators import AppearanceDiscriminator, DiscriminatorConfig, PoseDiscriminator
from .generator import Generator, GeneratorConfig

FORMAT_VERSION = 1
META_KEY = "meta_json"
_OPT_FIELDS = ("step", "exp_avg", "exp_avg_sq")


@dataclasses.dataclass
class Checkpoint:
    meta: dict
    arrays: dict

    @property
    def step(self):
        return self.meta["step"]


def _module_arrays(prefix, module):
    return {prefix + "." + k: v.detach().cpu().numpy().copy()
            for k, v in module.state_dict().items()}


def _optimizer_arrays(prefix, optimizer):
    out = {}
    for idx, st in optimizer.state_dict()["state"].items():
        for field in _OPT_FIELDS:
            v = st[field]
            arr = (v.detach().cpu().numpy().copy() if torch.is_tensor(v)
                   else np.asarray(v, dtype=np.float64))
            out["%s.%d.%s" % (prefix, idx, field)] = arr
    return out


def save_arrays(path, meta, arrays):
    """Canonical writer: meta as JSON bytes, keys sorted, npz container."""
    payload = dict(arrays)
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    payload[META_KEY] = np.frombuffer(blob, dtype=np.uint8)
    np.savez(path, **dict(sorted(payload.items())))


def save_checkpoint(path, generator, disc_appearance=None, disc_pose=None,
                    opt_generator=None, opt_discriminator=None, step=0,
                    training_config=None):
    """Write model (and optionally judge/optimizer) state at `step`.

    training_config is a plain dict echoed into the metadata so a run
    can be resumed from the file alone.
    """
    meta = {
        "version": FORMAT_VERSION,
        "step": int(step),
        "generator": dataclasses.asdict(generator.config),
        "discriminator": (dataclasses.asdict(disc_appearance.config)
                          if disc_appearance is not None else None),
        "training": training_config,
    }
    arrays = _module_arrays("g", generator)
    if disc_appearance is not None:
        arrays.update(_module_arrays("da", disc_appearance))
    if disc_pose is not None:
        arrays.update(_module_arrays("dp", disc_pose))
    if opt_generator is not None:
        arrays.update(_optimizer_arrays("og", opt_generator))
    if opt_discriminator is not None:
        arrays.update(_optimizer_arrays("od", opt_discriminator))
    save_arrays(path, meta, arrays)


def load_checkpoint(path):
    with np.load(path) as f:
        arrays = {k: f[k] for k in f.files}
    blob = arrays.pop(META_KEY, None)
    if blob is None:
        raise ValueError("%s is not a checkpoint (missing metadata)" % path)
    meta = json.loads(bytes(blob.tobytes()).decode("utf-8"))
    if meta.get("version") != FORMAT_VERSION:
        raise ValueError("unsupported checkpoint version %r in %s"
                         % (meta.get("version"), path))
    return Checkpoint(meta=meta, arrays=arrays)


def generator_config_from(meta):
    d = dict(meta["generator"])
    d["image_size"] = tuple(d["image_size"])
    return GeneratorConfig(**d)


def discriminator_config_from(meta):
    if meta.get("discriminator") is None:
        return None
    return DiscriminatorConfig(**meta["discriminator"])


def _load_module(module, arrays, prefix):
    want = prefix + "."
    # .copy() (not ascontiguousarray, which promotes 0-dim to 1-dim)
    # keeps scalar tensors scalar and yields writable C-ordered memory
    state = {k[len(want):]: torch.from_numpy(v.copy())
             for k, v in arrays.items() if k.startswith(want)}
    if not state:
        raise ValueError("checkpoint holds no %r tensors" % prefix)
    module.load_state_dict(state, strict=True)


def _load_optimizer(optimizer, arrays, prefix):
    want = prefix + "."
    per_idx = {}
    for k, v in arrays.items():
        if not k.startswith(want):
            continue
        _, idx_s, field = k.split(".")
        per_idx.setdefault(int(idx_s), {})[field] = v
    if not per_idx:
        return False
    sd = optimizer.state_dict()
    state = {}
    for idx, fields in per_idx.items():
        state[idx] = {
            "step": torch.tensor(float(fields["step"])),
            "exp_avg": torch.from_numpy(fields["exp_avg"].copy()),
            "exp_avg_sq": torch.from_numpy(fields["exp_avg_sq"].copy()),
        }
    sd["state"] = state
    optimizer.load_state_dict(sd)
    return True


def load_generator(path):
    """Rebuild just the generator for inference. Returns (model, meta)."""
    ckpt = load_checkpoint(path)
    gen = Generator(generator_config_from(ckpt.meta))
    _load_module(gen, ckpt.arrays, "g")
    gen.eval()
    return gen, ckpt.meta


def restore_models(ckpt):
    """Rebuild generator and both discriminators with loaded weights."""
    gen = Generator(generator_config_from(ckpt.meta))
    _load_module(gen, ckpt.arrays, "g")
    dconf = discriminator_config_from(ckpt.meta)
    if dconf is None:
        raise ValueError("checkpoint carries no discriminator config")
    disc_a = AppearanceDiscriminator(dconf)
    disc_p = PoseDiscriminator(dconf)
    _load_module(disc_a, ckpt.arrays, "da")
    _load_module(disc_p, ckpt.arrays, "dp")
    return gen, disc_a, disc_p
