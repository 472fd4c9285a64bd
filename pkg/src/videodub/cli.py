"""Command-line entry point.

One binary with subcommands: ``g2p``, ``synth-data``, ``features``,
``train``, ``dub``, ``eval``. Options come from an optional JSON config
file (``--config`` or the ND_CONFIG environment variable) overlaid by
command-line flags, flags winning; the fully resolved configuration is
echoed into every output directory as ``config.json``.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import torch

from . import checkpoint as ckpt
from .audio import extract_energy, extract_pitch, griffin_lim, mel_spectrogram, read_wav, write_wav, MelSpectrogram
from .config import GenerateConfig, ModelConfig, TrainConfig, config_from_dict
from .data import FrameGeometry, load_manifest
from .errors import ConfigError, DataError, GeometryError, NumericError, SchemaError, SignalError, VideodubError
from .evaluation import evaluate, make_embedder, save_report
from .ndf import load_array, save_array
from .synthetic import generate_synthetic_dataset
from .text import Lexicon, PhonemeVocabulary, encode_phonemes, text_to_phonemes
from .training import train

_CONFIG_SECTIONS = {
    "geometry": FrameGeometry,
    "model": ModelConfig,
    "train": TrainConfig,
    "generate": GenerateConfig,
}


def _load_config_file(path: str | None) -> dict:
    path = path or os.environ.get("ND_CONFIG")
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: top level must be an object")
    unknown = sorted(set(data) - set(_CONFIG_SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"{p}: unknown config section(s): {', '.join(unknown)}")
    return data


def _build_section(cls, file_config: dict, section: str, overrides: dict):
    merged = dict(file_config.get(section, {}))
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(cls, merged)


def _echo_config(out_dir: Path, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(resolved, indent=1, sort_keys=True, default=str) + "\n", encoding="utf-8"
    )


def _add_config_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (default: $ND_CONFIG)")


def cmd_g2p(args: argparse.Namespace) -> int:
    lexicon = Lexicon.load(args.lexicon) if args.lexicon else Lexicon.bundled()
    seq = text_to_phonemes(args.text, lexicon, oov_policy=args.oov_policy)
    print(" ".join(seq.symbols))
    return 0


def cmd_synth_data(args: argparse.Namespace) -> int:
    file_config = _load_config_file(args.config)
    gen = _build_section(
        GenerateConfig,
        file_config,
        "generate",
        {
            "num_samples": args.num_samples,
            "vocab_size": args.vocab_size,
            "num_speakers": args.num_speakers,
            "feature_dim": args.feature_dim,
            "seed": args.seed,
        },
    )
    geometry = _build_section(FrameGeometry, file_config, "geometry", {})
    out_dir = Path(args.out)
    indexes = generate_synthetic_dataset(gen, out_dir, geometry)
    _echo_config(out_dir, {"generate": asdict(gen), "geometry": asdict(geometry)})
    counts = {split: len(ix) for split, ix in indexes.items()}
    print(f"wrote {sum(counts.values())} samples to {out_dir} {counts}")
    return 0


def cmd_features(args: argparse.Namespace) -> int:
    file_config = _load_config_file(args.config)
    geometry = _build_section(FrameGeometry, file_config, "geometry", {})
    wave, _ = read_wav(args.wav, expected_rate=geometry.sample_rate)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.wav).stem
    mel = mel_spectrogram(wave, geometry)
    save_array(out_dir / f"{stem}_mel.ndf", mel.frames)
    save_array(out_dir / f"{stem}_pitch.ndf", extract_pitch(wave, geometry))
    save_array(out_dir / f"{stem}_energy.ndf", extract_energy(wave, geometry))
    _echo_config(out_dir, {"geometry": asdict(geometry)})
    print(f"wrote {len(mel)} frames for {args.wav} to {out_dir}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    file_config = _load_config_file(args.config)
    model_cfg = _build_section(ModelConfig, file_config, "model", {"d": args.d})
    train_cfg = _build_section(
        TrainConfig,
        file_config,
        "train",
        {
            "max_steps": args.steps,
            "batch_size": args.batch_size,
            "seed": args.seed,
            "warmup_steps": args.warmup,
        },
    )
    out_dir = Path(args.out)
    _echo_config(out_dir, {"model": asdict(model_cfg), "train": asdict(train_cfg), "dataset": args.data})
    result = train(model_cfg, train_cfg, args.data, out_dir, resume_from=args.resume)
    last = result.history[-1] if result.history else {}
    print(f"trained to step {result.steps}; final checkpoint {result.checkpoint_dir}")
    if last:
        print(f"final losses: mel {last['mel']:.4f} total {last['total']:.4f} r {last['r']:.3f}")
    return 0


def cmd_dub(args: argparse.Namespace) -> int:
    model, info = ckpt.load_model(args.checkpoint)
    model.eval()
    vocab_symbols = list(info.vocab_symbols)

    if (args.text is None) == (args.phonemes is None):
        raise ConfigError("provide exactly one of --text or --phonemes")
    if args.text is not None:
        lexicon = Lexicon.load(args.lexicon) if args.lexicon else Lexicon.bundled()
        seq = text_to_phonemes(args.text, lexicon, oov_policy=args.oov_policy)
        symbols = seq.symbols
    else:
        symbols = args.phonemes.split()
    vocab = PhonemeVocabulary(tuple(vocab_symbols))
    ids = encode_phonemes(symbols, vocab)

    video = load_array(args.video_features)
    if video.ndim != 2:
        raise DataError(f"--video-features must be a rank-2 NDF file, got rank {video.ndim}")
    face = None
    if info.model_config.multi_speaker:
        if not args.face_feature:
            raise DataError("multi-speaker checkpoint requires --face-feature")
        face = torch.from_numpy(load_array(args.face_feature).reshape(-1)).float()

    torch.manual_seed(args.seed)
    out = model.infer(torch.tensor(ids, dtype=torch.long), torch.from_numpy(video).float(), face=face)
    mel = out.mel.numpy()

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_array(out_dir / "mel.ndf", mel)
    save_array(out_dir / "attention.ndf", out.attention.numpy())
    geometry = FrameGeometry()
    mel_obj = MelSpectrogram(frames=mel, geometry=geometry, n_mels=mel.shape[1])
    wave = griffin_lim(mel_obj, iters=args.griffin_lim_iters, seed=args.seed)
    write_wav(out_dir / "out.wav", wave, geometry.sample_rate)
    _echo_config(
        out_dir,
        {
            "checkpoint": str(args.checkpoint),
            "phonemes": symbols,
            "seed": args.seed,
            "model": asdict(info.model_config),
        },
    )
    print(f"wrote {len(mel)} mel frames ({len(wave)} samples) to {out_dir}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    index = load_manifest(args.manifest)
    embedder = None
    if args.embedder and args.embedder != "none":
        embedder = make_embedder(args.embedder, index.root)
    report = evaluate(
        args.checkpoint,
        index,
        embedder=embedder,
        max_offset=args.max_offset,
        seed=args.seed,
    )
    out_dir = Path(args.out)
    path = save_report(report, out_dir)
    _echo_config(out_dir, {"checkpoint": str(args.checkpoint), "manifest": str(args.manifest), "seed": args.seed})
    print(
        f"evaluated {report.num_samples} samples: mel L1 {report.mel_l1:.4f}, "
        f"mean r {report.mean_diagonal_rate:.3f}, lse_d {report.lse_d}, lse_c {report.lse_c}"
    )
    print(f"report at {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="videodub", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("g2p", help="convert text to phoneme symbols")
    p.add_argument("--lexicon", help="lexicon file (default: bundled)")
    p.add_argument("--text", required=True)
    p.add_argument("--oov-policy", choices=["error", "spell"], default="error")
    p.set_defaults(fn=cmd_g2p)

    p = sub.add_parser("synth-data", help="generate a synthetic dataset")
    _add_config_flag(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--num-samples", type=int)
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--num-speakers", type=int)
    p.add_argument("--feature-dim", type=int)
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("features", help="extract mel/pitch/energy from a WAV file")
    _add_config_flag(p)
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_features)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    _add_config_flag(p)
    p.add_argument("--data", required=True, help="dataset directory with manifest.train.jsonl")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--d", type=int, help="hidden size")
    p.add_argument("--resume", help="checkpoint directory to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("dub", help="synthesize mel + audio for text timed by video features")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text")
    p.add_argument("--phonemes", help="space-separated phoneme symbols (alternative to --text)")
    p.add_argument("--lexicon")
    p.add_argument("--oov-policy", choices=["error", "spell"], default="error")
    p.add_argument("--video-features", required=True, help="NDF file of [T_v, F] mouth features")
    p.add_argument("--face-feature", help="NDF file with a 4096-D face feature")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--griffin-lim-iters", type=int, default=30)
    p.set_defaults(fn=cmd_dub)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--embedder", default="none", help="'oracle', 'none', or a registered plugin")
    p.add_argument("--max-offset", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DataError, SchemaError, GeometryError, SignalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except VideodubError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
