"""Losses and the two training stages.

Stage one fits the correspondence net: paired (music, motion) windows are
labelled 1 when aligned and 0 when not, and the loss is the squared error of
the predicted probability against that label, averaged per class.

Stage two trains the generator with a weighted sum of frame MSE, a perceptual
term in the frozen motion-encoder feature space, and an adversarial term
``+mean(D(G(x)))`` against a gradient-penalized critic. Because the generator
minimizes the critic's score on fakes, the critic is trained to score fakes
high and real motion low; ``wasserstein_estimate`` reports the absolute gap so
curves read the same under either sign convention.
"""

import contextlib
import copy
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .exceptions import InvalidInputError, ShapeError, TrainingDivergenceError
from .models import ModelBundle, ModelConfig, amc_forward
from .motion_data import sample_aligned_windows, sample_batch


@dataclass(frozen=True)
class AmcTrainConfig:
    batch: int = 32
    lr: float = 1e-3
    iterations: int = 2000
    window: int = 60
    seed: int = 0
    scale_range: tuple = (0.8, 1.2)

    def __post_init__(self):
        object.__setattr__(self, "scale_range", tuple(self.scale_range))
        if self.batch < 2:
            raise InvalidInputError("AMC batch needs at least one positive and one negative pair")
        if self.iterations < 0 or self.window < 1 or self.lr <= 0:
            raise InvalidInputError("iterations >= 0, window >= 1 and lr > 0 required")


@dataclass(frozen=True)
class GenTrainConfig:
    batch: int = 32
    lambda_mse: float = 1.0
    lambda_per: float = 0.1
    lambda_adv: float = 0.01
    n_critic: int = 5
    gp_weight: float = 10.0
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    iterations: int = 1000
    window: int = 60
    seed: int = 0
    finetune_frontend: bool = True

    def __post_init__(self):
        if min(self.lambda_mse, self.lambda_per, self.lambda_adv) < 0:
            raise InvalidInputError("loss weights must be nonnegative")
        if self.n_critic < 1:
            raise InvalidInputError("n_critic must be >= 1")
        if self.batch < 1 or self.iterations < 0 or self.gp_weight < 0:
            raise InvalidInputError("batch >= 1, iterations >= 0, gp_weight >= 0 required")


# --- losses ----------------------------------------------------------------


def _mean(a):
    return a.mean() if isinstance(a, torch.Tensor) else np.mean(np.asarray(a, dtype=np.float64))


def _check_finite(**parts):
    values = {k: float(v.detach()) if isinstance(v, torch.Tensor) else float(v) for k, v in parts.items()}
    bad = {k: v for k, v in values.items() if not math.isfinite(v)}
    if bad:
        raise TrainingDivergenceError(f"non-finite loss terms: {bad}", bad)


def amc_loss(p_pos, p_neg):
    """Mean squared error of positive-pair probabilities against 1 plus negatives against 0."""
    if len(p_pos) == 0 or len(p_neg) == 0:
        raise InvalidInputError("amc_loss needs at least one positive and one negative probability")
    return _mean((p_pos - 1.0) ** 2) + _mean(p_neg**2)


def mse_loss(y_hat, y):
    if y_hat.shape != y.shape:
        raise ShapeError(f"shape mismatch {tuple(y_hat.shape)} vs {tuple(y.shape)}")
    return _mean((y_hat - y) ** 2)


def perceptual_loss(motion_encoder, y_hat, y):
    """MSE between motion-encoder features of generated and reference motion."""
    if y_hat.shape != y.shape:
        raise ShapeError(f"shape mismatch {tuple(y_hat.shape)} vs {tuple(y.shape)}")
    enc = motion_encoder.motion_encoder if isinstance(motion_encoder, ModelBundle) else motion_encoder
    numpy_in = not isinstance(y_hat, torch.Tensor)
    if numpy_in:
        dtype = next(enc.parameters()).dtype
        y_hat, y = torch.as_tensor(y_hat, dtype=dtype), torch.as_tensor(y, dtype=dtype)
        if y_hat.dim() == 2:
            y_hat, y = y_hat[None], y[None]
        with torch.no_grad():
            return float(((enc(y_hat) - enc(y)) ** 2).mean())
    return ((enc(y_hat) - enc(y)) ** 2).mean()


def weighted_generator_loss(mse, per, adv, cfg):
    return cfg.lambda_mse * mse + cfg.lambda_per * per + cfg.lambda_adv * adv


def generator_loss(y_hat, y, d_fake_scores, cfg, motion_encoder=None):
    """Weighted sum of MSE, perceptual and adversarial terms.

    Returns ``(total, parts)`` with ``parts = {"mse", "per", "adv"}``. Without a
    motion encoder the perceptual term is 0.
    """
    if len(d_fake_scores) != len(y_hat):
        raise ShapeError("one critic score per generated window required")
    mse = mse_loss(y_hat, y)
    per = perceptual_loss(motion_encoder, y_hat, y) if motion_encoder is not None else 0.0 * mse
    adv = _mean(d_fake_scores)
    _check_finite(mse=mse, per=per, adv=adv)
    return weighted_generator_loss(mse, per, adv, cfg), {"mse": mse, "per": per, "adv": adv}


def critic_loss(d_real, d_fake, gp, gp_weight):
    if len(d_real) != len(d_fake):
        raise ShapeError("real and fake critic batches must have equal size")
    loss = _mean(d_real) - _mean(d_fake) + gp_weight * gp
    _check_finite(critic=loss)
    return loss


def gradient_penalty(critic_fn, y_real, y_fake, rng, create_graph=False):
    """Mean of ``(||grad D(v)|| - 1)^2`` at random interpolates between real and fake.

    ``critic_fn`` is a ``ModelBundle``, a ``Critic`` module or any callable mapping
    ``(B, ...)`` tensors to ``(B,)`` scores. ``rng`` is a numpy Generator; one
    mixing weight is drawn per sample.
    """
    if y_real.shape != y_fake.shape:
        raise ShapeError("real and fake batches must match in shape")
    fn = critic_fn.critic if isinstance(critic_fn, ModelBundle) else critic_fn
    real = torch.as_tensor(y_real)
    fake = torch.as_tensor(y_fake, dtype=real.dtype)
    u = torch.as_tensor(rng.uniform(size=real.shape[0]), dtype=real.dtype)
    u = u.view(-1, *([1] * (real.dim() - 1)))
    mixed = (u * real.detach() + (1 - u) * fake.detach()).requires_grad_(True)
    scores = fn(mixed)
    (grad,) = torch.autograd.grad(scores.sum(), mixed, create_graph=create_graph)
    norms = grad.flatten(1).norm(dim=1)
    return ((norms - 1.0) ** 2).mean()


def wasserstein_estimate(d_real, d_fake):
    """Absolute gap between mean critic scores on fake and real batches."""
    if len(d_real) == 0 or len(d_fake) == 0:
        raise InvalidInputError("wasserstein_estimate needs nonempty batches")
    return abs(float(_mean(d_fake)) - float(_mean(d_real)))


# --- training loops --------------------------------------------------------


@dataclass
class TrainState:
    """Everything needed to continue a run: model, optimizers, RNG streams, position."""

    bundle: ModelBundle
    iteration: int = 0
    optimizers: dict = field(default_factory=dict)
    rng_states: dict = field(default_factory=dict)

    def resume_payload(self, optimizers, rngs):
        return {
            "iteration": self.iteration,
            "optimizers": {k: opt.state_dict() for k, opt in optimizers.items()},
            "rng_states": {k: r.bit_generator.state for k, r in rngs.items()},
        }


def _restore(optimizers, rngs, resume):
    for k, opt in optimizers.items():
        if k in resume.get("optimizers", {}):
            opt.load_state_dict(resume["optimizers"][k])
    for k, r in rngs.items():
        if k in resume.get("rng_states", {}):
            r.bit_generator.state = resume["rng_states"][k]


def _rng_streams(seed, names):
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.Generator(np.random.PCG64(c)) for n, c in zip(names, children)}


@contextlib.contextmanager
def _flush_denormals():
    # subnormal floats slow CPU convolutions by orders of magnitude late in training;
    # query numpy's limits first so it does not warn once flushing is on. The flag is
    # process-global CPU state, so it is switched back off on exit.
    np.finfo(np.float32), np.finfo(np.float64)
    torch.set_flush_denormal(True)
    try:
        yield
    finally:
        torch.set_flush_denormal(False)


def init_bundle(model_cfg, seed, stage="amc"):
    torch.manual_seed(seed)
    return ModelBundle(model_cfg, stage)


def pair_accuracy(bundle, corpus, n_pairs=400, window=60, seed=1234, scale_range=(0.8, 1.2)):
    """Fraction of balanced held-out pairs classified correctly at threshold 0.5."""
    rng = np.random.default_rng(seed)
    x, y, labels = sample_batch(corpus, n_pairs, window, rng, scale_range)
    bundle.eval()
    with torch.no_grad():
        p = amc_forward(bundle, torch.as_tensor(x), torch.as_tensor(y)).numpy()
    return float(np.mean((p > 0.5) == (labels > 0.5)))


@_flush_denormals()
def train_amc(
    corpus,
    model_cfg=None,
    cfg=None,
    *,
    resume=None,
    log=None,
    on_checkpoint=None,
    checkpoint_every=0,
):
    """Fit the correspondence net on balanced positive/negative pairs.

    ``log`` is called with each metrics record; ``on_checkpoint(bundle, payload)``
    every ``checkpoint_every`` iterations and at the end, where ``payload`` is
    what ``resume`` expects to continue the run exactly. Returns
    ``(bundle, records)``.
    """
    cfg = cfg or AmcTrainConfig()
    model_cfg = model_cfg or ModelConfig(c_audio=corpus.features[0].shape[1], c_motion=corpus.motions[0].shape[1])
    if resume is not None:
        bundle, start = resume["bundle"], resume["iteration"]
    else:
        bundle, start = init_bundle(model_cfg, cfg.seed, "amc"), 0
    bundle.train()
    opt = torch.optim.Adam(bundle.amc_parameters(), lr=cfg.lr)
    rngs = _rng_streams(cfg.seed, ["pairs"])
    if resume is not None:
        _restore({"amc": opt}, rngs, resume)
    rng = rngs["pairs"]
    half = cfg.batch // 2

    records = []
    last_good = copy.deepcopy(bundle.state_dict())
    for it in range(start, cfg.iterations):
        x, y, labels = sample_batch(corpus, cfg.batch, cfg.window, rng, cfg.scale_range)
        p = amc_forward(bundle, torch.from_numpy(x), torch.from_numpy(y))
        loss = amc_loss(p[:half], p[half:])
        if not torch.isfinite(loss):
            bundle.load_state_dict(last_good)
            raise TrainingDivergenceError(f"AMC loss became non-finite at iteration {it}", {"iter": it})
        opt.zero_grad()
        loss.backward()
        opt.step()
        acc = float(((p.detach() > 0.5).float() == torch.from_numpy(labels)).float().mean())
        rec = {"iter": it, "loss_amc": float(loss.detach()), "acc": acc}
        records.append(rec)
        if log:
            log(rec)
        done = it + 1
        if checkpoint_every and (done % checkpoint_every == 0 or done == cfg.iterations):
            last_good = copy.deepcopy(bundle.state_dict())
            if on_checkpoint:
                payload = TrainState(bundle, done).resume_payload({"amc": opt}, rngs)
                on_checkpoint(bundle, payload)
    bundle.eval()
    return bundle, records


def prepare_generator_bundle(amc_bundle):
    """Copy a stage-one bundle, transfer the music encoder, freeze the motion encoder."""
    if amc_bundle.stage != "amc":
        raise InvalidInputError(f"expected a stage-'amc' bundle, got {amc_bundle.stage!r}")
    bundle = copy.deepcopy(amc_bundle)
    bundle.stage = "generator"
    bundle.transfer_music_encoder()
    return bundle


@_flush_denormals()
def train_generator(
    corpus,
    amc_bundle,
    cfg=None,
    *,
    resume=None,
    log=None,
    on_checkpoint=None,
    checkpoint_every=0,
):
    """Adversarial-perceptual generator training.

    Runs ``n_critic`` critic updates per generator update. Critic batches and
    generator batches come from separate seeded streams, so with the
    adversarial and perceptual weights at zero the generator follows exactly
    the trajectory of plain MSE regression. Returns ``(bundle, records)``.
    """
    cfg = cfg or GenTrainConfig()
    if resume is not None:
        bundle, start = resume["bundle"], resume["iteration"]
    else:
        bundle, start = prepare_generator_bundle(amc_bundle), 0
    for p in bundle.motion_encoder.parameters():
        p.requires_grad_(False)
    bundle.motion_encoder.eval()
    gen_params = bundle.generator_parameters(cfg.finetune_frontend)
    if not cfg.finetune_frontend:
        for p in bundle.generator_frontend.parameters():
            p.requires_grad_(False)
    opt_g = torch.optim.Adam(gen_params, lr=cfg.lr_g, betas=(0.5, 0.9))
    opt_d = torch.optim.Adam(bundle.critic.parameters(), lr=cfg.lr_d, betas=(0.5, 0.9))
    optimizers = {"g": opt_g, "d": opt_d}
    rngs = _rng_streams(cfg.seed, ["gen", "critic", "gp"])
    if resume is not None:
        _restore(optimizers, rngs, resume)

    def G(x):
        return bundle.generator_head(bundle.generator_frontend(x))

    records = []
    last_good = copy.deepcopy(bundle.state_dict())
    for it in range(start, cfg.iterations):
        for _ in range(cfg.n_critic):
            xr, yr = sample_aligned_windows(corpus, cfg.batch, cfg.window, rngs["critic"])
            xf, _ = sample_aligned_windows(corpus, cfg.batch, cfg.window, rngs["critic"])
            with torch.no_grad():
                fake = G(torch.from_numpy(xf))
            real = torch.from_numpy(yr)
            d_real, d_fake = bundle.critic(real), bundle.critic(fake)
            gp = gradient_penalty(bundle.critic, real, fake, rngs["gp"], create_graph=True)
            try:
                loss_d = critic_loss(d_real, d_fake, gp, cfg.gp_weight)
            except TrainingDivergenceError:
                bundle.load_state_dict(last_good)
                raise
            opt_d.zero_grad()
            loss_d.backward()
            opt_d.step()
        w_est = wasserstein_estimate(d_real.detach(), d_fake.detach())

        x, y = sample_aligned_windows(corpus, cfg.batch, cfg.window, rngs["gen"])
        y = torch.from_numpy(y)
        y_hat = G(torch.from_numpy(x))
        try:
            total, parts = generator_loss(y_hat, y, bundle.critic(y_hat), cfg, bundle.motion_encoder)
        except TrainingDivergenceError:
            bundle.load_state_dict(last_good)
            raise
        opt_g.zero_grad()
        total.backward()
        opt_g.step()
        # the critic must not accumulate generator-step gradients
        opt_d.zero_grad()

        rec = {
            "iter": it,
            "loss_mse": float(parts["mse"].detach()),
            "loss_per": float(parts["per"].detach()),
            "loss_adv": float(parts["adv"].detach()),
            "loss_g_total": float(total.detach()),
            "w_estimate": w_est,
            "gp": float(gp.detach()),
            "loss_d": float(loss_d.detach()),
        }
        records.append(rec)
        if log:
            log(rec)
        done = it + 1
        if checkpoint_every and (done % checkpoint_every == 0 or done == cfg.iterations):
            last_good = copy.deepcopy(bundle.state_dict())
            if on_checkpoint:
                on_checkpoint(bundle, TrainState(bundle, done).resume_payload(optimizers, rngs))
    bundle.eval()
    return bundle, records


def smoothed(values, frac=0.1):
    """Means over the first and last ``frac`` of a curve."""
    values = np.asarray(values, dtype=np.float64)
    k = max(1, int(round(len(values) * frac)))
    return float(values[:k].mean()), float(values[-k:].mean())


def config_dict(cfg):
    d = asdict(cfg)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d
