"""Spectral reconstruction loss, hinge adversarial losses and the generator objective.

All functions accept plain arrays or :class:`~tadevoc.autodiff.Var` values and
return a scalar ``Var``; call ``float()`` on the result for a number.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import InputError, UndefinedReferenceError

LOG_MAG_EPS = 1e-7
NUM_DISCRIMINATORS = 4


@dataclass(frozen=True)
class StftResolution:
    fft_size: int
    hop_size: int
    win_size: int

    def __post_init__(self):
        if self.win_size > self.fft_size:
            raise InputError(f"win_size {self.win_size} exceeds fft_size {self.fft_size}")


@dataclass(frozen=True)
class AuxLossConfig:
    resolutions: tuple[StftResolution, ...] = field(
        default_factory=lambda: (
            StftResolution(1024, 120, 600),
            StftResolution(2048, 240, 1200),
            StftResolution(512, 50, 240),
        )
    )

    def __post_init__(self):
        if not self.resolutions:
            raise InputError("AuxLossConfig needs at least one STFT resolution")


def _check_shapes(a, b):
    if np.shape(ad._val(a)) != np.shape(ad._val(b)):
        raise InputError(f"shape mismatch: {np.shape(ad._val(a))} vs {np.shape(ad._val(b))}")


def spectral_convergence(s_ref, s_gen) -> Var:
    """``||S_ref - S_gen||_F / ||S_ref||_F``."""
    _check_shapes(s_ref, s_gen)
    ref_norm = ad.frobenius_norm(s_ref)
    if float(ref_norm) == 0.0:
        raise UndefinedReferenceError("spectral convergence is undefined for an all-zero reference")
    return ad.frobenius_norm(ad.sub(s_ref, s_gen)) / ref_norm


def log_stft_magnitude_loss(s_ref, s_gen) -> Var:
    """Mean absolute difference of natural-log magnitudes (floored at 1e-7)."""
    _check_shapes(s_ref, s_gen)
    return ad.mean(ad.absolute(ad.log(ad.add(s_ref, LOG_MAG_EPS)) - ad.log(ad.add(s_gen, LOG_MAG_EPS))))


def aux_stft_loss(x_ref, x_gen, cfg: AuxLossConfig | None = None) -> Var:
    """Multi-resolution spectral loss averaged over the configured resolutions.

    Waveforms may carry a leading batch axis; norms and means then pool over
    the whole batch.
    """
    cfg = cfg or AuxLossConfig()
    if np.shape(ad._val(x_ref)) != np.shape(ad._val(x_gen)):
        raise InputError(
            f"reference and generated waveforms differ in length: "
            f"{np.shape(ad._val(x_ref))} vs {np.shape(ad._val(x_gen))}"
        )
    terms = []
    for res in cfg.resolutions:
        s_ref = ad.stft_magnitude(x_ref, res.fft_size, res.hop_size, res.win_size)
        s_gen = ad.stft_magnitude(x_gen, res.fft_size, res.hop_size, res.win_size)
        terms.append(spectral_convergence(s_ref, s_gen) + log_stft_magnitude_loss(s_ref, s_gen))
    return sum(terms[1:], terms[0]) / float(len(terms))


def _mean(scores: Sequence) -> Var:
    scores = [ad.as_var(s) for s in scores]
    return sum(scores[1:], scores[0]) / float(len(scores))


def hinge_discriminator_loss(real_scores: Sequence, fake_scores: Sequence) -> Var:
    """``mean(max(0, 1 - real)) + mean(max(0, 1 + fake))``."""
    if len(real_scores) == 0 or len(fake_scores) == 0:
        raise InputError("hinge loss needs at least one real and one fake score")
    real = _mean([ad.relu(1.0 - ad.as_var(s)) for s in real_scores])
    fake = _mean([ad.relu(1.0 + ad.as_var(s)) for s in fake_scores])
    return real + fake


def group_by_discriminator(scores) -> dict[int, list]:
    """Normalize ``[(k, score), ...]`` or ``{k: score | [scores]}`` to ``{k: [scores]}``."""
    grouped: dict[int, list] = defaultdict(list)
    items: Iterable = scores.items() if isinstance(scores, Mapping) else scores
    for k, value in items:
        if isinstance(value, (list, tuple)):
            grouped[int(k)].extend(value)
        else:
            grouped[int(k)].append(value)
    return dict(grouped)


def hinge_generator_loss(fake_scores, num_discriminators: int = NUM_DISCRIMINATORS) -> Var:
    """Sum over discriminators of the negated mean fake score (repeats averaged within k)."""
    grouped = group_by_discriminator(fake_scores)
    if not grouped:
        raise InputError("generator hinge loss needs at least one score")
    missing = sorted(set(range(1, num_discriminators + 1)) - set(grouped))
    if missing:
        raise InputError(f"no scores for discriminator(s) {missing}")
    per_k = [_mean(grouped[k]) for k in sorted(grouped)]
    return -sum(per_k[1:], per_k[0])


def generator_objective(adv, aux) -> Var:
    """Adversarial term plus spectral regularizer, unit weights."""
    return ad.add(adv, aux)
