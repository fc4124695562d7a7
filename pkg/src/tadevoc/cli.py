"""``tadevoc`` command line: copysyn, feats, train, bench and pqmf-check.

Machine-readable output is one ``key=value`` record per line.  Every command
validates its inputs before touching the filesystem.

Seed splits: ``copysyn`` draws the generator noise from ``default_rng(seed)``;
``train`` derives every step's batch, noise and window streams from
``default_rng([seed, step, stream])``; ``bench`` draws the mel-shaped input
and noise from ``default_rng(seed)``; ``pqmf-check`` draws its white noise
from ``default_rng(seed)``.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from contextlib import nullcontext
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .audio import SUPPORTED_RATE, read_wav, require_rate, write_wav, WavAudio
from .checkpoint import load_checkpoint
from .errors import ConfigurationError, InputError, TadevocError
from .features import FeatureStats, MelConfig, log_mel_extract, read_stats, write_mel, write_stats, compute_feature_stats
from .generator import TOTAL_UPSAMPLING, GeneratorConfig, count_parameters, generate, generator_forward, init_generator, sample_noise
from .pqmf import SNR_CAP_DB, design_prototype_bank, roundtrip_snr
from .train import TrainConfig, stats_path_for, train

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SNR_THRESHOLD_DB = 30.0


@dataclass
class BenchReport:
    synthesized_seconds: float
    wall_seconds: float
    rtf: float
    thread_count: int
    parameter_count: int

    def to_line(self) -> str:
        return (
            f"synthesized_seconds={self.synthesized_seconds:.6f} wall_seconds={self.wall_seconds:.6f} "
            f"rtf={self.rtf:.6f} thread_count={self.thread_count} parameter_count={self.parameter_count}"
        )


def _read_mono_22k(path) -> WavAudio:
    audio = read_wav(path)
    require_rate(audio, str(path))
    return audio


def _load_generator(ckpt) -> dict[str, np.ndarray]:
    path = Path(ckpt)
    if not path.is_file():
        raise InputError(f"checkpoint {path} does not exist")
    return load_checkpoint(path).gen


def _load_sidecar_stats(ckpt) -> FeatureStats:
    path = stats_path_for(ckpt)
    if not path.is_file():
        raise InputError(f"feature statistics {path} not found (written next to the checkpoint by `tadevoc train`)")
    return read_stats(path)


def _require_writable_parent(path) -> Path:
    path = Path(path)
    if not path.parent.resolve().is_dir():
        raise InputError(f"output directory {path.parent} does not exist")
    return path


# ----------------------------------------------------------------- commands


def cmd_copysyn(in_wav, checkpoint, out_wav, seed: int = 0) -> int:
    audio = _read_mono_22k(in_wav)
    params = _load_generator(checkpoint)
    stats = _load_sidecar_stats(checkpoint)
    out = _require_writable_parent(out_wav)
    mel = log_mel_extract(audio.samples, MelConfig(), stats)
    wave = generate(mel, params, seed)
    write_wav(out, WavAudio(SUPPORTED_RATE, wave))
    print(f"frames={mel.data.shape[1]} samples={wave.shape[-1]} out={out}")
    return EXIT_OK


def cmd_feats(in_wav, out_mel, stats_path=None, checkpoint=None) -> int:
    """Normalized log-mel features; stats from ``--stats``, the checkpoint sidecar, or the input itself."""
    audio = _read_mono_22k(in_wav)
    cfg = MelConfig()
    out = _require_writable_parent(out_mel)
    new_stats = None
    if stats_path:
        stats = read_stats(stats_path)
    elif checkpoint:
        stats = _load_sidecar_stats(checkpoint)
    else:
        stats = new_stats = compute_feature_stats([audio.samples], cfg)
    mel = log_mel_extract(audio.samples, cfg, stats)
    write_mel(out, mel)
    if new_stats is not None:
        write_stats(Path(f"{out}.stats"), new_stats)
    print(f"mels={mel.data.shape[0]} frames={mel.data.shape[1]} out={out}")
    return EXIT_OK


def load_corpus(data_dir) -> list[np.ndarray]:
    root = Path(data_dir)
    if not root.is_dir():
        raise InputError(f"data directory {root} does not exist")
    files = sorted(root.glob("*.wav"))
    if not files:
        raise InputError(f"no .wav files in {root}")
    return [_read_mono_22k(f).samples for f in files]


def cmd_train(
    data_dir,
    out_ckpt,
    cfg: TrainConfig,
    channels: int = 64,
    log_path=None,
    resume: bool = False,
    record_timing: bool = True,
) -> int:
    cfg.validate()
    corpus = load_corpus(data_dir)
    out = _require_writable_parent(out_ckpt)
    log_path = log_path or Path(f"{out}.log")
    train(
        corpus,
        cfg,
        out,
        log_path=log_path,
        gen_config=GeneratorConfig(channels=channels),
        resume=resume,
        record_timing=record_timing,
    )
    print(f"checkpoint={out} log={log_path}")
    return EXIT_OK


def cmd_bench(checkpoint=None, seconds: float = 1.0, threads: int = 1, seed: int = 0) -> BenchReport:
    """Time generator inference on standard-normal mel-shaped conditioning."""
    if seconds <= 0:
        raise InputError("--seconds must be positive")
    params = _load_generator(checkpoint) if checkpoint else init_generator(seed=seed)
    mel_channels = params["stage0.resblock.tade1.cond_conv.weight_v"].shape[1]
    noise_channels = params["input_conv.weight_v"].shape[1]
    frames = max(1, int(round(seconds * SUPPORTED_RATE / TOTAL_UPSAMPLING)))
    rng = np.random.default_rng(seed)
    mel = rng.standard_normal((mel_channels, frames)).astype(np.float32)
    z = sample_noise(rng, frames, noise_channels)
    with threadpool_limits(limits=threads):
        t0 = time.perf_counter()
        out = generator_forward(z, mel, params)
        wall = time.perf_counter() - t0
    synthesized = out.shape[-1] / SUPPORTED_RATE
    return BenchReport(synthesized, wall, synthesized / wall, threads, count_parameters(params))


def cmd_pqmf_check(bands: int = 4, taps: int = 62, cutoff=None, beta: float = 9.0, seed: int = 0, samples: int = 32768) -> tuple[float, int]:
    bank = design_prototype_bank(bands, taps, cutoff, beta)
    if samples % bands or samples <= 4 * max(bank.taps, 1):
        raise ConfigurationError(f"--samples must be a multiple of {bands} and exceed {4 * max(bank.taps, 1)}")
    x = np.random.default_rng(seed).standard_normal(samples)
    snr = roundtrip_snr(x, bank)
    ok = bands == 1 or snr > SNR_THRESHOLD_DB
    return snr, EXIT_OK if ok else EXIT_FAIL


# ----------------------------------------------------------------- argparse


def _kebab(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tadevoc", description="TADE-conditioned GAN vocoder")
    parser.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP threads")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("copysyn", help="analyse a WAV into mels and resynthesize it")
    p.add_argument("input")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("feats", help="extract normalized log-mel features to a MELF file")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--stats", default=None, help="MSTA statistics file")
    p.add_argument("--ckpt", default=None, help="use the statistics stored next to this checkpoint")

    p = sub.add_parser("train", help="pretrain then adversarially train on a directory of WAVs")
    p.add_argument("data_dir")
    p.add_argument("--out", required=True, help="checkpoint path (stats go to <out>.stats)")
    p.add_argument("--log", default=None, help="training log path (default <out>.log)")
    p.add_argument("--resume", action="store_true", help="continue from --out if it exists")
    p.add_argument("--channels", type=int, default=GeneratorConfig.channels, help="generator width")
    p.add_argument("--no-timing", action="store_true", help="log wall_ms=0 so logs are reproducible byte-for-byte")
    defaults = TrainConfig()
    for name in TrainConfig.field_names():
        default = getattr(defaults, name)
        kind = float if name == "grad_clip" or isinstance(default, float) else int
        p.add_argument(_kebab(name), dest=name, type=kind, default=default)

    p = sub.add_parser("bench", help="measure the real-time factor of generator inference")
    p.add_argument("--ckpt", default=None, help="checkpoint to benchmark (default: freshly initialized generator)")
    p.add_argument("--seconds", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("pqmf-check", help="white-noise roundtrip SNR of a PQMF design")
    p.add_argument("--bands", type=int, default=4)
    p.add_argument("--taps", type=int, default=62)
    p.add_argument("--cutoff", type=float, default=None)
    p.add_argument("--beta", type=float, default=9.0)
    p.add_argument("--samples", type=int, default=32768)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _dispatch(args) -> int:
    if args.command == "copysyn":
        return cmd_copysyn(args.input, args.ckpt, args.out, args.seed)
    if args.command == "feats":
        return cmd_feats(args.input, args.out, args.stats, args.ckpt)
    if args.command == "train":
        cfg = TrainConfig(**{name: getattr(args, name) for name in TrainConfig.field_names()})
        return cmd_train(args.data_dir, args.out, cfg, args.channels, args.log, args.resume, not args.no_timing)
    if args.command == "bench":
        report = cmd_bench(args.ckpt, args.seconds, args.threads or 1, args.seed)
        print(report.to_line())
        return EXIT_OK
    if args.command == "pqmf-check":
        snr, status = cmd_pqmf_check(args.bands, args.taps, args.cutoff, args.beta, args.seed, args.samples)
        exact = args.bands == 1 and snr >= SNR_CAP_DB
        print(f"bands={args.bands} snr_db={snr:.3f} exact={int(exact)} pass={int(status == EXIT_OK)}")
        return status
    raise AssertionError(args.command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    limits = threadpool_limits(limits=args.threads) if args.threads else nullcontext()
    try:
        with limits:
            return _dispatch(args)
    except TadevocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
