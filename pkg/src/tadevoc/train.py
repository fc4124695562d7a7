"""Two-phase training: spectral-loss pretraining, then hinge-GAN fine-tuning.

All randomness is derived from ``(seed, step, stream)`` so a run resumed from a
checkpoint replays exactly the batches, noise and windows it would have seen
uninterrupted.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .discriminator import DEFAULT_RWD_SPECS, RwdSpec, default_banks, fbrwd_scores, init_discriminators
from .errors import ConfigurationError, InputError
from .features import FeatureStats, MelConfig, compute_feature_stats, log_mel_extract, read_stats, stats_from_bytes, stats_to_bytes, write_stats
from .generator import TOTAL_UPSAMPLING, GeneratorConfig, generator_graph, init_generator, sample_noise
from .losses import AuxLossConfig, aux_stft_loss, generator_objective, group_by_discriminator, hinge_discriminator_loss, hinge_generator_loss
from .optim import AdamState, adam_step
from .pqmf import PqmfBank

log = logging.getLogger(__name__)

# rng stream ids
_DATA, _NOISE, _WINDOWS_D, _WINDOWS_G = 0, 1, 2, 3


@dataclass
class TrainConfig:
    pretrain_steps: int = 2000
    adv_steps: int = 5000
    lr_g_pretrain: float = 1e-4
    lr_g_adv: float = 5e-5
    lr_d: float = 2e-4
    batch_size: int = 4
    segment_seconds: float = 1.0
    window_repeats: int = 2
    seed: int = 0
    grad_clip: float | None = None
    checkpoint_interval: int = 1000

    def validate(self) -> None:
        for name in ("lr_g_pretrain", "lr_g_adv", "lr_d"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.window_repeats < 1:
            raise ConfigurationError("window_repeats must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.pretrain_steps < 0 or self.adv_steps < 0:
            raise ConfigurationError("step counts must be non-negative")
        if self.segment_seconds <= 0:
            raise ConfigurationError("segment_seconds must be positive")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigurationError("grad_clip must be positive when set")

    def segment_samples(self, sample_rate: int) -> int:
        """Segment length cropped down to a whole number of hops (22050 -> 22016)."""
        n = int(round(self.segment_seconds * sample_rate)) // TOTAL_UPSAMPLING * TOTAL_UPSAMPLING
        if n < TOTAL_UPSAMPLING:
            raise ConfigurationError("segment is shorter than one hop")
        return n

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


FULL_SCALE = dict(pretrain_steps=100_000, adv_steps=1_500_000, batch_size=32)


def step_rng(seed: int, step: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, step, stream])


def draw_batch(corpus: Sequence[np.ndarray], batch_size: int, segment_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Random segments (zero-padded when an item is shorter), shape ``(B, L)``."""
    if not corpus:
        raise InputError("empty corpus")
    out = np.zeros((batch_size, segment_samples), dtype=np.float32)
    for b in range(batch_size):
        item = corpus[int(rng.integers(len(corpus)))]
        if len(item) > segment_samples:
            start = int(rng.integers(0, len(item) - segment_samples + 1))
            out[b] = item[start : start + segment_samples]
        else:
            out[b, : len(item)] = item
    return out


def _check_batch(batch) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float32)
    if batch.ndim == 1:
        batch = batch[None, :]
    if batch.ndim != 2 or batch.shape[0] == 0:
        raise InputError(f"batch must be (B, L) with B >= 1, got shape {batch.shape}")
    if batch.shape[1] == 0 or batch.shape[1] % TOTAL_UPSAMPLING:
        raise InputError(f"segment length {batch.shape[1]} is not a positive multiple of {TOTAL_UPSAMPLING}")
    if not np.all(np.isfinite(batch)):
        raise InputError("batch contains non-finite samples")
    return batch


def batch_conditioning(batch: np.ndarray, mel_cfg: MelConfig, stats: FeatureStats) -> np.ndarray:
    """Mel frames aligned with the segment: the trailing centered frame is dropped."""
    frames = batch.shape[1] // TOTAL_UPSAMPLING
    return np.stack([log_mel_extract(seg, mel_cfg, stats).data[:, :frames] for seg in batch])


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float | None) -> dict[str, np.ndarray]:
    if max_norm is None:
        return grads
    total = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if total <= max_norm:
        return grads
    scale = max_norm / (total + 1e-12)
    return {k: (g * scale).astype(g.dtype) for k, g in grads.items()}


def _noise_for(batch: np.ndarray, gen_params: Mapping[str, np.ndarray], rng: np.random.Generator) -> np.ndarray:
    channels = gen_params["input_conv.weight_v"].shape[1]
    frames = batch.shape[1] // TOTAL_UPSAMPLING
    return sample_noise(rng, frames, channels, batch=batch.shape[0])


def pretrain_step(
    batch,
    gen_params: dict[str, np.ndarray],
    opt_state: AdamState,
    cfg: TrainConfig,
    mel_cfg: MelConfig,
    stats: FeatureStats,
    rng: np.random.Generator,
    aux_cfg: AuxLossConfig | None = None,
) -> tuple[dict[str, np.ndarray], float]:
    """One generator update on the spectral reconstruction loss alone."""
    batch = _check_batch(batch)
    mels = batch_conditioning(batch, mel_cfg, stats)
    z = _noise_for(batch, gen_params, rng)
    tape = ad.Tape()
    fake = generator_graph(z, mels, tape.watch(gen_params))
    loss = aux_stft_loss(batch, fake, aux_cfg)
    grads = clip_gradients(ad.backward(tape, loss), cfg.grad_clip)
    adam_step(gen_params, grads, opt_state, cfg.lr_g_pretrain)
    return gen_params, float(loss)


@dataclass
class FakeBatch:
    """Generator output recorded on a tape, ready for the generator update."""

    tape: ad.Tape
    waveform: ad.Var
    real: np.ndarray


def generate_fakes(batch, gen_params, mel_cfg: MelConfig, stats: FeatureStats, rng: np.random.Generator) -> FakeBatch:
    batch = _check_batch(batch)
    mels = batch_conditioning(batch, mel_cfg, stats)
    z = _noise_for(batch, gen_params, rng)
    tape = ad.Tape()
    fake = generator_graph(z, mels, tape.watch(gen_params))
    return FakeBatch(tape, fake, batch)


def discriminator_update(
    fakes: FakeBatch,
    disc_params: dict[str, np.ndarray],
    disc_state: AdamState,
    cfg: TrainConfig,
    rng: np.random.Generator,
    specs: Sequence[RwdSpec] = DEFAULT_RWD_SPECS,
    banks: Sequence[PqmfBank] | None = None,
) -> float:
    """Hinge update of all discriminators; fakes enter as constants (no gradient into G)."""
    banks = banks or default_banks(specs)
    tape = ad.Tape()
    dp = tape.watch(disc_params)
    real_scores, fake_scores = [], []
    fake_values = fakes.waveform.value
    for b in range(fakes.real.shape[0]):
        real_scores += fbrwd_scores(ad.Var(fakes.real[b]), specs, banks, dp, rng, cfg.window_repeats)
        fake_scores += fbrwd_scores(ad.Var(fake_values[b]), specs, banks, dp, rng, cfg.window_repeats)
    real_by_k = group_by_discriminator(real_scores)
    fake_by_k = group_by_discriminator(fake_scores)
    terms = [hinge_discriminator_loss(real_by_k[k], fake_by_k[k]) for k in sorted(real_by_k)]
    d_loss = sum(terms[1:], terms[0])
    grads = clip_gradients(ad.backward(tape, d_loss), cfg.grad_clip)
    adam_step(disc_params, grads, disc_state, cfg.lr_d)
    return float(d_loss)


def generator_update(
    fakes: FakeBatch,
    gen_params: dict[str, np.ndarray],
    disc_params: Mapping[str, np.ndarray],
    gen_state: AdamState,
    cfg: TrainConfig,
    rng: np.random.Generator,
    specs: Sequence[RwdSpec] = DEFAULT_RWD_SPECS,
    banks: Sequence[PqmfBank] | None = None,
    aux_cfg: AuxLossConfig | None = None,
) -> tuple[float, float]:
    """Adversarial + spectral update of G against frozen discriminators, on fresh windows."""
    banks = banks or default_banks(specs)
    frozen = ad.constants(disc_params)
    scores = []
    for b in range(fakes.real.shape[0]):
        length = fakes.real.shape[1]
        item = ad.time_slice(ad.reshape(fakes.waveform, (-1,)), b * length, (b + 1) * length)
        scores += fbrwd_scores(item, specs, banks, frozen, rng, cfg.window_repeats)
    g_adv = hinge_generator_loss(scores, num_discriminators=len(specs))
    g_aux = aux_stft_loss(fakes.real, fakes.waveform, aux_cfg)
    objective = generator_objective(g_adv, g_aux)
    grads = clip_gradients(ad.backward(fakes.tape, objective), cfg.grad_clip)
    adam_step(gen_params, grads, gen_state, cfg.lr_g_adv)
    return float(g_adv), float(g_aux)


def adversarial_step(
    batch,
    gen_params: dict[str, np.ndarray],
    disc_params: dict[str, np.ndarray],
    opt_states: Mapping[str, AdamState],
    cfg: TrainConfig,
    mel_cfg: MelConfig,
    stats: FeatureStats,
    rngs: Sequence[np.random.Generator],
    specs: Sequence[RwdSpec] = DEFAULT_RWD_SPECS,
    aux_cfg: AuxLossConfig | None = None,
) -> dict[str, float]:
    """One D update followed by one G update.

    ``rngs`` supplies (noise, discriminator windows, generator windows).
    """
    if cfg.window_repeats < 1:
        raise ConfigurationError("window_repeats must be >= 1")
    noise_rng, d_rng, g_rng = rngs
    banks = default_banks(specs)
    fakes = generate_fakes(batch, gen_params, mel_cfg, stats, noise_rng)
    d_loss = discriminator_update(fakes, disc_params, opt_states["disc"], cfg, d_rng, specs, banks)
    g_adv, g_aux = generator_update(fakes, gen_params, disc_params, opt_states["gen"], cfg, g_rng, specs, banks, aux_cfg)
    return {"d_loss": d_loss, "g_adv": g_adv, "g_aux": g_aux}


# ----------------------------------------------------------------- driver


def format_log_record(step: int, phase: str, d_loss: float, g_adv: float, g_aux: float, wall_ms: float) -> str:
    return f"step={step} phase={phase} d_loss={d_loss:.9g} g_adv={g_adv:.9g} g_aux={g_aux:.9g} wall_ms={wall_ms:.3f}"


def parse_log_record(line: str) -> dict[str, object]:
    record: dict[str, object] = {}
    for token in line.split():
        key, _, value = token.partition("=")
        record[key] = value if key == "phase" else (int(value) if key == "step" else float(value))
    return record


def _truncate_log(path: Path, last_step: int) -> None:
    """Drop records logged after ``last_step`` (written after the checkpoint being resumed)."""
    if not path.exists():
        return
    kept = [line for line in path.read_text().splitlines() if line and int(parse_log_record(line)["step"]) <= last_step]
    path.write_text("".join(line + "\n" for line in kept))


def stats_path_for(ckpt_path) -> Path:
    return Path(f"{ckpt_path}.stats")


def corpus_stats(corpus: Sequence[np.ndarray], mel_cfg: MelConfig) -> FeatureStats:
    """Corpus statistics rounded through the on-disk float32 format."""
    return stats_from_bytes(stats_to_bytes(compute_feature_stats(corpus, mel_cfg)))


def train(
    corpus: Sequence[np.ndarray],
    cfg: TrainConfig,
    ckpt_path,
    log_path=None,
    gen_config: GeneratorConfig | None = None,
    mel_cfg: MelConfig | None = None,
    aux_cfg: AuxLossConfig | None = None,
    resume: bool = False,
    record_timing: bool = True,
    on_record: Callable[[dict], None] | None = None,
) -> dict[str, np.ndarray]:
    """Run pretraining then adversarial training, checkpointing along the way.

    Returns the final generator parameters.
    """
    cfg.validate()
    mel_cfg = mel_cfg or MelConfig()
    if not corpus:
        raise InputError("training corpus is empty")
    corpus = [np.asarray(x, dtype=np.float32) for x in corpus]
    seg_len = cfg.segment_samples(mel_cfg.sample_rate)
    ckpt_path = Path(ckpt_path)
    stats_file = stats_path_for(ckpt_path)

    if resume and ckpt_path.exists():
        ckpt = load_checkpoint(ckpt_path)
        gen_params, disc_params, opt_states, start = ckpt.gen, ckpt.disc, ckpt.opt, ckpt.step
        stats = read_stats(stats_file)
        log.info("resuming from step %d", start)
    else:
        gen_params = init_generator(gen_config, seed=cfg.seed)
        disc_params, opt_states, start = {}, {}, 0
        stats = corpus_stats(corpus, mel_cfg)
        write_stats(stats_file, stats)
    opt_states.setdefault("gen", AdamState())

    total = cfg.pretrain_steps + cfg.adv_steps
    if log_path and start:
        _truncate_log(Path(log_path), start)
    log_fh = open(log_path, "a" if start else "w") if log_path else None
    try:
        for step in range(start + 1, total + 1):
            t0 = time.perf_counter()
            batch = draw_batch(corpus, cfg.batch_size, seg_len, step_rng(cfg.seed, step, _DATA))
            if step <= cfg.pretrain_steps:
                phase = "pretrain"
                _, g_aux = pretrain_step(
                    batch, gen_params, opt_states["gen"], cfg, mel_cfg, stats, step_rng(cfg.seed, step, _NOISE), aux_cfg
                )
                metrics = {"d_loss": 0.0, "g_adv": 0.0, "g_aux": g_aux}
            else:
                phase = "adversarial"
                if not disc_params:
                    disc_params = init_discriminators(seed=cfg.seed + 1)
                opt_states.setdefault("disc", AdamState())
                rngs = [step_rng(cfg.seed, step, s) for s in (_NOISE, _WINDOWS_D, _WINDOWS_G)]
                metrics = adversarial_step(batch, gen_params, disc_params, opt_states, cfg, mel_cfg, stats, rngs, aux_cfg=aux_cfg)
            wall_ms = (time.perf_counter() - t0) * 1000.0 if record_timing else 0.0
            record = {"step": step, "phase": phase, **metrics, "wall_ms": wall_ms}
            if log_fh:
                log_fh.write(format_log_record(**record) + "\n")
                log_fh.flush()
            boundary = step == cfg.pretrain_steps or step == total
            if boundary or (cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0):
                save_checkpoint(ckpt_path, gen_params, disc_params, opt_states, step)
            if on_record:
                on_record(record)
        if start >= total and not ckpt_path.exists():
            save_checkpoint(ckpt_path, gen_params, disc_params, opt_states, total)
    finally:
        if log_fh:
            log_fh.close()
    return gen_params
