"""Losses and the adversarial training loop.

Composition happens before every loss: the generator's raw output is pasted
into the ground-truth context, so both the reconstruction term and the
discriminators only ever see images that are correct outside the mask, and
generator gradients for out-of-mask pixels are exactly zero.

Discriminator inputs are 8-channel [rgb, sketch, color, mask]. Fake samples
pair the composited output with the sample's own mask; real samples pair the
genuine image with the same conditioning and a freshly drawn random mask.
Every random draw in the loop is a pure function of (seed, step), which is
what makes a resumed run bit-identical to an uninterrupted one.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import rngs
from .autodiff import AdamState, Tensor, adam_step, grad, no_grad
from .config import Config
from .dataset import Loader
from .maskgen import local_crop_box, sample_mask
from .model import (
    DiscriminatorConfig,
    GeneratorConfig,
    build_params,
    discriminator_forward,
    discriminator_param_shapes,
    generator_forward,
    generator_param_shapes,
)
from .raster import BinaryMask

METRICS_HEADER = ("step", "d_loss", "g_loss", "rec", "gp", "drift")


class TrainingAbort(RuntimeError):
    """Raised when a loss goes non-finite; names the first bad tensor."""


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1e-3
    lam: float = 100.0
    epsilon_drift: float = 1e-3
    gan_variant: str = "wgan_gp"

    def __post_init__(self):
        if min(self.alpha, self.lam, self.epsilon_drift) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.gan_variant not in ("wgan_gp", "original_gan"):
            raise ValueError(f"unknown gan_variant {self.gan_variant!r}")

    @classmethod
    def from_config(cls, cfg: Config) -> "LossWeights":
        return cls(
            alpha=cfg.get_float("train.alpha"),
            lam=cfg.get_float("train.lambda"),
            epsilon_drift=cfg.get_float("train.epsilon_drift"),
            gan_variant=cfg.get_str("train.gan_variant"),
        )


def rec_loss(output: Tensor, target: Tensor, mask: Tensor) -> Tensor:
    """Mean |composited - target| over all elements.

    mask is (N,1,S,S) with 1 inside the edit region; the composition step
    restores ground truth outside it, so those elements contribute zero and
    carry zero gradient.
    """
    if output.data.shape != target.data.shape:
        raise ValueError(f"output shape {output.data.shape} != target shape {target.data.shape}")
    if mask.data.shape != (output.data.shape[0], 1) + output.data.shape[2:]:
        raise ValueError(f"mask shape {mask.data.shape} does not fit output {output.data.shape}")
    comp = composite_batch(output, target, mask)
    return ad.mean(ad.absolute(comp - target))


def composite_batch(output: Tensor, target: Tensor, mask: Tensor) -> Tensor:
    """output inside the mask, target outside; all (N,C,S,S) vs (N,1,S,S)."""
    one_minus = ad.add(ad.neg(mask), 1.0)
    return ad.add(ad.mul(output, mask), ad.mul(target, one_minus))


def wgan_gp_loss(disc, i_real: Tensor, i_fake: Tensor, lam: float, rng_seed: int):
    """Critic loss E[D(f)] - E[D(r)] + lam * E[(|grad D(u)| - 1)^2].

    disc maps an (N,8,S,S) tensor to per-sample scores. The penalty
    differentiates the scores with respect to the interpolated input in
    create-graph mode, so the returned loss supports the second backward
    the optimizer needs. Components carry the raw (unweighted) pieces plus
    the real scores for the drift term.
    """
    if i_real.data.shape != i_fake.data.shape:
        raise ValueError(f"real shape {i_real.data.shape} != fake shape {i_fake.data.shape}")
    n = i_real.data.shape[0]
    t = np.random.default_rng(rng_seed).random((n, 1, 1, 1))
    blend = (t * i_real.data + (1.0 - t) * i_fake.data).astype(i_real.data.dtype)
    u = Tensor(blend, requires_grad=True, name="gp/interpolate")

    scores_real = disc(i_real)
    scores_fake = disc(i_fake)
    e_real = ad.mean(scores_real)
    e_fake = ad.mean(scores_fake)

    du = grad(ad.tsum(disc(u)), u, create_graph=True)
    norms = ad.sqrt(ad.add(ad.sum_sq(ad.reshape(du, (n, -1)), axis=1), 1e-12))
    gp = ad.mean(ad.pow_const(ad.add(norms, -1.0), 2.0))

    d_loss = ad.add(ad.add(e_fake, ad.neg(e_real)), ad.mul(gp, lam))
    components = {
        "e_real": e_real,
        "e_fake": e_fake,
        "gp": gp,
        "scores_real": scores_real,
    }
    return d_loss, components


def original_gan_loss(disc, i_real: Tensor, i_fake: Tensor):
    """Stabilized logistic forms of the minimax loss; ablation arm only.

    Scores become logits through a clip at +-30 (the squash saturates there
    anyway and the clip keeps log terms finite). The generator gets the
    non-saturating direction.
    """
    lr = ad.clip(disc(i_real), -30.0, 30.0)
    lf = ad.clip(disc(i_fake), -30.0, 30.0)
    # -log sigmoid(x) == softplus(-x)
    d_loss = ad.add(ad.mean(ad.softplus(ad.neg(lr))), ad.mean(ad.softplus(lf)))
    g_loss = ad.mean(ad.softplus(ad.neg(lf)))
    return d_loss, g_loss


def total_loss(components: dict, weights: LossWeights):
    """Eq-style recombination: g = alpha*rec - E[D(f)]; d = core + drift.

    The drift term epsilon*E[D(r)^2] lives in the discriminator total only;
    it regularizes the critic's output scale and involves no generator path.
    """
    rec = components["rec"]
    e_fake = components["e_fake"]
    e_real = components["e_real"]
    gp = components["gp"]
    sr = components["scores_real"]
    drift = ad.mean(ad.mul(sr, sr))
    g_total = ad.add(ad.mul(rec, weights.alpha), ad.neg(e_fake))
    d_core = ad.add(ad.add(e_fake, ad.neg(e_real)), ad.mul(gp, weights.lam))
    d_total = ad.add(d_core, ad.mul(drift, weights.epsilon_drift))
    return g_total, d_total, drift


@dataclass
class TrainState:
    params: dict
    opt_g: AdamState
    opt_d: AdamState
    step: int = 0
    seed: int = 0
    # running means of (d_loss, g_loss, rec, gp, drift), float32 so the
    # checkpoint round-trip is lossless
    avg: np.ndarray = field(default_factory=lambda: np.zeros(5, dtype=np.float32))
    avg_count: int = 0

    def update_averages(self, row):
        c = self.avg_count
        self.avg = ((self.avg * c + np.asarray(row, dtype=np.float32)) / (c + 1)).astype(np.float32)
        self.avg_count = c + 1


def init_state(gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig, seed: int, lr: float) -> TrainState:
    params = build_params(gen_cfg, disc_cfg, seed)
    return TrainState(params=params, opt_g=AdamState(lr=lr), opt_d=AdamState(lr=lr), seed=seed)


def state_arrays(state: TrainState) -> dict:
    arrays = {name: p.data for name, p in state.params.items()}
    for tag, opt in (("g", state.opt_g), ("d", state.opt_d)):
        for name, m in opt.m.items():
            arrays[f"opt/{tag}/m/{name}"] = m
        for name, v in opt.v.items():
            arrays[f"opt/{tag}/v/{name}"] = v
        arrays[f"opt/{tag}/step"] = np.array([opt.step], dtype=np.float32)
    arrays["stats/avg"] = state.avg
    arrays["stats/count"] = np.array([state.avg_count], dtype=np.float32)
    return arrays


def save_state(state: TrainState, path):
    ad.save_checkpoint(path, state_arrays(state), step=state.step)


def load_state(path, gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig, lr: float) -> TrainState:
    step, arrays = ad.load_checkpoint(path)
    shapes = {}
    shapes.update(generator_param_shapes(gen_cfg))
    shapes.update(discriminator_param_shapes(disc_cfg))
    params = {}
    for name, shape in shapes.items():
        if name not in arrays:
            raise ValueError(f"{path}: checkpoint is missing parameter {name}")
        if arrays[name].shape != shape:
            raise ValueError(
                f"{path}: {name} has shape {arrays[name].shape}, config wants {shape}"
            )
        params[name] = Tensor(arrays[name].copy(), requires_grad=True, name=name)
    state = TrainState(params=params, opt_g=AdamState(lr=lr), opt_d=AdamState(lr=lr), step=step)
    for tag, opt in (("g", state.opt_g), ("d", state.opt_d)):
        opt.step = int(arrays[f"opt/{tag}/step"][0]) if f"opt/{tag}/step" in arrays else 0
        for name in params:
            mk, vk = f"opt/{tag}/m/{name}", f"opt/{tag}/v/{name}"
            if mk in arrays:
                opt.m[name] = arrays[mk].copy()
                opt.v[name] = arrays[vk].copy()
    if "stats/avg" in arrays:
        state.avg = arrays["stats/avg"].copy()
        state.avg_count = int(arrays["stats/count"][0])
    return state


def _fresh_masks(side: int, n: int, seed: int, batch_index: int) -> np.ndarray:
    """Random masks for the real discriminator inputs, (N,1,S,S) float32."""
    out = np.empty((n, 1, side, side), dtype=np.float32)
    for i in range(n):
        _, bm = sample_mask(side, side, rngs.subseed(seed, rngs.REAL_MASK, batch_index, i))
        out[i, 0] = bm.bits
    return out


def _boxes_from_masks(mask_planes: np.ndarray, crop: int) -> list:
    return [local_crop_box(BinaryMask(m[0] > 0.5), crop) for m in mask_planes]


def _nan_diagnostic(step: int, roots) -> str:
    for root in roots:
        bad = ad.find_first_nonfinite(root)
        if bad is not None:
            where = f" ({bad.name})" if bad.name else ""
            return (
                f"non-finite loss at step {step}: first bad tensor is "
                f"op={bad.op!r}{where} shape={bad.data.shape}"
            )
    return f"non-finite loss at step {step}: source not in retained graph"


def _prepare_batch(loader: Loader, seed: int, batch_index: int):
    """Batch tensors with the noise plane refreshed for this presentation."""
    b = loader.batch_at(batch_index)
    inputs = b.inputs.copy()
    n, _, side, _ = inputs.shape
    noise = rngs.rng_for(seed, rngs.NOISE, batch_index).standard_normal((n, side, side))
    inputs[:, 8] = noise.astype(np.float32)
    return Tensor(b.targets), Tensor(inputs), b

def train(
    loader: Loader,
    gen_cfg: GeneratorConfig,
    disc_cfg: DiscriminatorConfig,
    weights: LossWeights,
    *,
    steps: int,
    out_dir,
    seed: int = 0,
    lr: float = 2e-4,
    n_critic: int = 1,
    checkpoint_every: int = 500,
    resume=None,
    progress=None,
) -> TrainState:
    """Run the adversarial loop; returns the final state.

    Writes ckpt_<step>.fsck at the cadence (plus the initial and final
    step) and appends per-step rows to metrics.csv. `resume` names a
    checkpoint to continue from; the caller must pass the original run's
    seed (seeds are run configuration, not checkpoint state), and then
    everything downstream of (seed, step) is recomputed identically.
    """
    if n_critic < 1:
        raise ValueError(f"n_critic must be >= 1, got {n_critic}")
    os.makedirs(out_dir, exist_ok=True)
    if resume is not None:
        state = load_state(resume, gen_cfg, disc_cfg, lr)
    else:
        state = init_state(gen_cfg, disc_cfg, seed, lr)
    state.seed = seed
    gen_p = {k: v for k, v in state.params.items() if k.startswith("gen/")}
    disc_p = {k: v for k, v in state.params.items() if k.startswith("disc/")}
    side = gen_cfg.side
    crop = disc_cfg.local_side

    ckpt_path = os.path.join(out_dir, "ckpt_{:06d}.fsck")
    if state.step == 0:
        save_state(state, ckpt_path.format(0))
    metrics_path = os.path.join(out_dir, "metrics.csv")
    write_header = not os.path.exists(metrics_path)
    metrics = open(metrics_path, "a", newline="")
    writer = csv.writer(metrics)
    if write_header:
        writer.writerow(METRICS_HEADER)

    def disc_on(t, boxes):
        return discriminator_forward(disc_cfg, disc_p, t, boxes)

    try:
        target_step = state.step + steps
        while state.step < target_step:
            s = state.step
            for i in range(n_critic):
                bi = s * n_critic + i
                targets, inputs, _ = _prepare_batch(loader, state.seed, bi)
                mask = Tensor(inputs.data[:, 7:8])
                cond = Tensor(inputs.data[:, 3:7])  # sketch + color, shared by real/fake
                boxes = _boxes_from_masks(inputs.data[:, 7:8], crop)

                with no_grad():
                    raw = generator_forward(gen_cfg, gen_p, inputs)
                    comp = composite_batch(raw, targets, mask)
                fake_full = Tensor(np.concatenate([comp.data, cond.data, mask.data], axis=1))
                real_mask = _fresh_masks(side, targets.data.shape[0], state.seed, bi)
                real_full = Tensor(np.concatenate([targets.data, cond.data, real_mask], axis=1))

                if weights.gan_variant == "wgan_gp":
                    _, comps = wgan_gp_loss(
                        lambda t: disc_on(t, boxes),
                        real_full,
                        fake_full,
                        weights.lam,
                        rngs.subseed(state.seed, rngs.GP_BLEND, bi),
                    )
                    comps["rec"] = Tensor(np.float32(0.0))
                    _, d_total, drift = total_loss(comps, weights)
                    gp_val = comps["gp"].item()
                else:
                    d_total, _ = original_gan_loss(
                        lambda t: disc_on(t, boxes), real_full, fake_full
                    )
                    sr = disc_on(real_full, boxes)
                    drift = ad.mean(ad.mul(sr, sr))
                    d_total = ad.add(d_total, ad.mul(drift, weights.epsilon_drift))
                    gp_val = 0.0
                if not np.isfinite(d_total.data).all():
                    raise TrainingAbort(_nan_diagnostic(s, [d_total]))
                d_grads = grad(d_total, list(disc_p.values()))
                adam_step(state.opt_d, disc_p, {k: g.data for k, g in zip(disc_p, d_grads)})
                d_val, drift_val = d_total.item(), drift.item()

            # generator update on the last critic batch (same noise plane)
            raw = generator_forward(gen_cfg, gen_p, inputs)
            comp = composite_batch(raw, targets, mask)
            rec = rec_loss(raw, targets, mask)
            fake_full = ad.concat([comp, cond, mask], axis=1)
            if weights.gan_variant == "wgan_gp":
                adv = ad.mean(disc_on(fake_full, boxes))
                g_total = ad.add(ad.mul(rec, weights.alpha), ad.neg(adv))
            else:
                _, g_adv = original_gan_loss(
                    lambda t: disc_on(t, boxes), real_full, fake_full
                )
                g_total = ad.add(ad.mul(rec, weights.alpha), g_adv)
            if not np.isfinite(g_total.data).all():
                raise TrainingAbort(_nan_diagnostic(s, [g_total]))
            g_grads = grad(g_total, list(gen_p.values()))
            adam_step(state.opt_g, gen_p, {k: g.data for k, g in zip(gen_p, g_grads)})

            row = (s, d_val, g_total.item(), rec.item(), gp_val, drift_val)
            writer.writerow(row)
            metrics.flush()
            state.update_averages(row[1:])
            state.step = s + 1
            if state.step % checkpoint_every == 0 or state.step == target_step:
                save_state(state, ckpt_path.format(state.step))
            if progress is not None:
                progress(row)
    finally:
        metrics.close()
    return state


def evaluate_rec(samples, gen_cfg: GeneratorConfig, params: dict, batch: int = 4) -> float:
    """Held-out masked L1: mean over samples of the composited error."""
    gen_p = {k: v for k, v in params.items() if k.startswith("gen/")}
    total, count = 0.0, 0
    with no_grad():
        for lo in range(0, len(samples), batch):
            chunk = samples[lo : lo + batch]
            inputs = Tensor(np.stack([s.input for s in chunk]))
            targets = Tensor(np.stack([s.target for s in chunk]))
            mask = Tensor(inputs.data[:, 7:8])
            raw = generator_forward(gen_cfg, gen_p, inputs)
            total += rec_loss(raw, targets, mask).item() * len(chunk)
            count += len(chunk)
    return total / max(count, 1)
