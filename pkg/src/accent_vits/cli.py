"""Command line entry point: ``accent-vits {train,synth,eval,make-toy}``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from accent_vits.config import ABLATION_MODES, load_config
from accent_vits.dsp import save_wav
from accent_vits.evaluation import evaluate_manifest
from accent_vits.frontend import PAD, Registry
from accent_vits.inference import DEFAULT_NOISE, Synthesizer, read_phoneme_file
from accent_vits.training import PSEUDO, SpeakerTable, Trainer, load_manifest, load_utterance

logger = logging.getLogger("accent_vits")


def registry_for_manifest(manifest: Path) -> Registry:
    """Inventory per accent = pad + symbols from ``<accent>.g2p`` and the alignments.

    Rule tables are looked up next to the manifest.
    """
    root = manifest.parent
    symbols: dict[str, set[str]] = {}
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.strip().split("|")
        if len(parts) != 6:
            continue  # load_manifest reports it with a line number
        accent, dur = parts[2], root / parts[4]
        syms = symbols.setdefault(accent, set())
        if dur.exists():
            for row in dur.read_text(encoding="utf-8").splitlines():
                if row.strip() and not row.startswith("#"):
                    syms.add(row.split()[0])
    rules: dict[str, dict[str, str]] = {}
    for accent in symbols:
        table = root / f"{accent}.g2p"
        if table.exists():
            rules[accent] = {}
            for row in table.read_text(encoding="utf-8").splitlines():
                if row.strip() and not row.startswith("#") and "\t" in row:
                    ch, sym = row.split("\t", 1)
                    rules[accent][ch] = sym.strip()
            symbols[accent] |= set(rules[accent].values())
    reg = Registry()
    for accent in sorted(symbols):
        reg.register_inventory(accent, [PAD, *sorted(symbols[accent] - {PAD})])
        if accent in rules:
            reg.set_rules(accent, rules[accent])
    return reg.freeze()


def cmd_train(args: argparse.Namespace) -> int:
    exp = load_config(args.config, toy=args.toy)
    train_cfg = exp.train
    overrides = {k: v for k, v in (("steps", args.steps), ("seed", args.seed), ("batch", args.batch)) if v is not None}
    if overrides:
        train_cfg = dataclasses.replace(train_cfg, **overrides)
    manifest = Path(args.data)
    registry = registry_for_manifest(manifest)
    speakers = SpeakerTable()
    records = load_manifest(manifest, registry, None)
    for r in records:
        speakers.add(r.speaker.name)
    model_kw = {"n_symbols": registry.n_symbols, "n_speakers": len(speakers)}
    if args.ablation:
        model_kw["ablation"] = args.ablation
    model_cfg = dataclasses.replace(exp.model, **model_kw)
    utts = [load_utterance(r, registry, bn_seed=train_cfg.seed) for r in records]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps({"model": model_cfg.to_dict(), "train": train_cfg.to_dict()}, indent=2), encoding="utf-8"
    )
    resume = out / "last.ckpt"
    if args.resume and resume.exists():
        trainer = Trainer.from_checkpoint(resume, expected=model_cfg, train_cfg=train_cfg)
        logger.info("resumed from %s at step %d", resume, trainer.step)
    else:
        trainer = Trainer(model_cfg, train_cfg, registry, speakers)
    remaining = max(train_cfg.steps - trainer.step, 0)
    logger.info("training %s for %d steps on %d utterances", model_cfg.ablation, remaining, len(utts))
    trainer.fit(utts, remaining, log_path=out / "train.log", ckpt_dir=out)
    print(out / "last.ckpt")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    synth = Synthesizer.from_checkpoint(args.checkpoint)
    if args.text is not None:
        res = synth.synthesize(args.text, args.accent, args.speaker, args.noise_pr, args.noise_ac, args.seed)
    else:
        seq = read_phoneme_file(args.phonemes, synth.registry, args.accent)
        if seq.durations is not None:
            res = synth.synthesize_with_given_durations(seq, args.speaker, None, args.noise_pr, args.noise_ac, args.seed)
        else:
            res = synth.synthesize(seq, args.accent, args.speaker, args.noise_pr, args.noise_ac, args.seed)
    save_wav(args.out, res.waveform)
    print(f"{args.out}: {len(res.waveform)} samples, durations {res.durations}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    synth = Synthesizer.from_checkpoint(args.checkpoint)
    records = load_manifest(args.manifest, synth.registry, synth.speakers)
    rows = evaluate_manifest(records, synth, args.out, args.embedder, args.noise_pr, args.noise_ac, args.seed)
    for r in rows:
        print(f"{r['accent']:>12s}  n={r['n_utts']:<4d} dur_mae={r['duration_mae']:.3f}  cos={r['speaker_cosine']:.3f}")
    return 0


def cmd_make_toy(args: argparse.Namespace) -> int:
    from accent_vits.toy import write_corpus

    _, manifest = write_corpus(args.out)
    print(manifest)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="accent-vits")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a manifest")
    t.add_argument("--config", default=None, help="YAML/JSON file with model: and train: sections")
    t.add_argument("--data", required=True, help="manifest: utt_id|speaker|accent|wav|dur|bn_or_" + PSEUDO)
    t.add_argument("--out", required=True)
    t.add_argument("--ablation", choices=ABLATION_MODES, default=None)
    t.add_argument("--toy", action="store_true", help="CPU-sized model and training preset")
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--batch", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--resume", action="store_true", help="continue from <out>/last.ckpt")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", help="synthesize a waveform")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--accent", required=True)
    s.add_argument("--speaker", required=True)
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--text")
    src.add_argument("--phonemes", help="symbol per line, optionally with frame counts")
    s.add_argument("--out", required=True)
    s.add_argument("--noise-pr", type=float, default=DEFAULT_NOISE)
    s.add_argument("--noise-ac", type=float, default=DEFAULT_NOISE)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="duration MAE and speaker cosine similarity over a manifest")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--embedder", default="builtin", help="builtin | external:<cmd>")
    e.add_argument("--noise-pr", type=float, default=DEFAULT_NOISE)
    e.add_argument("--noise-ac", type=float, default=DEFAULT_NOISE)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("make-toy", help="write the synthetic two-utterance corpus")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_make_toy)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
