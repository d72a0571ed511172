"""Alternating adversarial training with deterministic, resumable runs.

Batches are drawn by a stateless per-step RNG (seeded by run seed and
step index), so resuming from a checkpoint replays the exact batch
sequence a straight-through run would have seen.
"""

import dataclasses
import itertools
import math
import os

import torch

from . import checkpoint as ckpt_io
from .data import assemble_batch
from .discriminators import AppearanceDiscriminator, PoseDiscriminator
from .generator import Generator
from .losses import LossWeights, RandomConvExtractor, adversarial_losses, full_loss, l1_loss, perceptual_loss
from .pose_encoding import DEFAULT_SIGMA

LOG_HEADER = "step,d_loss,g_adv,l1,percep,full"


@dataclasses.dataclass
class TrainingConfig:
    iterations: int = 200
    batch_size: int = 8
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    weights: LossWeights = dataclasses.field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_interval: int = 100
    sigma: float = DEFAULT_SIGMA

    def validate(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.checkpoint_interval < 1:
            raise ValueError("checkpoint_interval must be >= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        self.weights.validate()

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


@dataclasses.dataclass
class TrainState:
    generator: Generator
    disc_appearance: AppearanceDiscriminator
    disc_pose: PoseDiscriminator
    opt_generator: torch.optim.Adam
    opt_discriminator: torch.optim.Adam
    extractor: object
    config: TrainingConfig
    step: int = 0


def create_state(gen_config, disc_config, train_config, extractor=None):
    """Fresh models and optimizers, seeded for reproducible init."""
    train_config.validate()
    torch.manual_seed(train_config.seed)
    generator = Generator(gen_config)
    disc_a = AppearanceDiscriminator(disc_config)
    disc_p = PoseDiscriminator(disc_config)
    if extractor is None:
        extractor = RandomConvExtractor(seed=train_config.seed)
    betas = (train_config.beta1, train_config.beta2)
    opt_g = torch.optim.Adam(generator.parameters(),
                             lr=train_config.learning_rate, betas=betas)
    opt_d = torch.optim.Adam(
        itertools.chain(disc_a.parameters(), disc_p.parameters()),
        lr=train_config.learning_rate, betas=betas)
    return TrainState(generator, disc_a, disc_p, opt_g, opt_d,
                      extractor, train_config, step=0)


def restore_state(path, extractor=None, train_config=None):
    """Rebuild a TrainState, optimizers included, from a checkpoint."""
    ckpt = ckpt_io.load_checkpoint(path)
    if train_config is None:
        if ckpt.meta.get("training") is None:
            raise ValueError("%s has no training config; pass one" % path)
        train_config = TrainingConfig.from_dict(ckpt.meta["training"])
    gen_config = ckpt_io.generator_config_from(ckpt.meta)
    disc_config = ckpt_io.discriminator_config_from(ckpt.meta)
    if disc_config is None:
        raise ValueError("%s was saved without discriminators; cannot "
                         "resume training from it" % path)
    state = create_state(gen_config, disc_config, train_config, extractor)
    ckpt_io._load_module(state.generator, ckpt.arrays, "g")
    ckpt_io._load_module(state.disc_appearance, ckpt.arrays, "da")
    ckpt_io._load_module(state.disc_pose, ckpt.arrays, "dp")
    ckpt_io._load_optimizer(state.opt_generator, ckpt.arrays, "og")
    ckpt_io._load_optimizer(state.opt_discriminator, ckpt.arrays, "od")
    state.step = ckpt.step
    return state


def _check_finite(value, name, step):
    if not math.isfinite(value):
        raise RuntimeError("non-finite %s loss (%r) at step %d; aborting"
                           % (name, value, step))


def train_step(batch, state):
    """One discriminator update followed by one generator update.

    Returns the scalar loss report for the step. Raises on any
    non-finite loss term before optimizer state can be poisoned.
    """
    w = state.config.weights
    step = state.step + 1
    gen, disc_a, disc_p = state.generator, state.disc_appearance, state.disc_pose
    gen.train()
    disc_a.train()
    disc_p.train()
    cond, target = batch.condition_images, batch.target_images
    pose_t = batch.target_poses

    with torch.no_grad():
        fake_detached = gen(cond, batch.pose_pair)
    real_scores = (disc_a(cond, target), disc_p(target, pose_t))
    fake_scores = (disc_a(cond, fake_detached), disc_p(fake_detached, pose_t))
    d_loss, _ = adversarial_losses(real_scores, fake_scores)
    _check_finite(d_loss.item(), "discriminator", step)
    state.opt_discriminator.zero_grad()
    (w.adversarial * d_loss).backward()
    state.opt_discriminator.step()

    fake = gen(cond, batch.pose_pair)
    fake_scores = (disc_a(cond, fake), disc_p(fake, pose_t))
    _, g_adv = adversarial_losses(real_scores, fake_scores)
    rec = l1_loss(fake, target)
    percep = perceptual_loss(fake, target, state.extractor)
    total = full_loss(g_adv, rec, percep, w)
    for name, term in (("adversarial", g_adv), ("l1", rec),
                       ("perceptual", percep), ("full", total)):
        _check_finite(term.item(), name, step)
    state.opt_generator.zero_grad()
    total.backward()
    state.opt_generator.step()

    return {
        "step": step,
        "d_loss": d_loss.item(),
        "g_adv": g_adv.item(),
        "l1": rec.item(),
        "percep": percep.item(),
        "full": total.item(),
    }


def _save(state, path):
    try:
        ckpt_io.save_checkpoint(
            path, state.generator, state.disc_appearance, state.disc_pose,
            state.opt_generator, state.opt_discriminator,
            step=state.step, training_config=state.config.to_dict())
    except OSError as exc:
        raise RuntimeError("checkpoint write failed at step %d: %s"
                           % (state.step, exc)) from exc


@dataclasses.dataclass
class TrainResult:
    final_checkpoint: str
    log_path: str
    history: list
    checkpoints: list


def train(gen_config, disc_config, train_config, records, out_dir,
          extractor=None, resume_from=None, progress=None):
    """Run (or resume) a full training loop in out_dir.

    Writes loss_log.csv (one row per executed step), periodic
    checkpoints, and a final checkpoint at the last step. Identical
    configs and seed reproduce identical logs and checkpoint bytes.
    """
    train_config.validate()
    os.makedirs(out_dir, exist_ok=True)
    if resume_from is not None:
        state = restore_state(resume_from, extractor, train_config)
    else:
        state = create_state(gen_config, disc_config, train_config, extractor)
    if state.step >= train_config.iterations:
        raise ValueError("nothing to do: checkpoint is at step %d of %d"
                         % (state.step, train_config.iterations))
    log_path = os.path.join(out_dir, "loss_log.csv")
    history = []
    checkpoints = []
    with open(log_path, "w") as log:
        log.write(LOG_HEADER + "\n")
        for step in range(state.step + 1, train_config.iterations + 1):
            batch = assemble_batch(records, train_config.batch_size,
                                   train_config.sigma,
                                   seed=[train_config.seed, step])
            report = train_step(batch, state)
            state.step = step
            log.write("%d,%.8f,%.8f,%.8f,%.8f,%.8f\n"
                      % (report["step"], report["d_loss"], report["g_adv"],
                         report["l1"], report["percep"], report["full"]))
            history.append(report)
            if progress is not None:
                progress(report)
            if (step % train_config.checkpoint_interval == 0
                    or step == train_config.iterations):
                path = os.path.join(out_dir, "checkpoint_%06d.npz" % step)
                _save(state, path)
                checkpoints.append(path)
    return TrainResult(final_checkpoint=checkpoints[-1], log_path=log_path,
                       history=history, checkpoints=checkpoints)
