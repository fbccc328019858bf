"""Train every ablation mode on the toy corpus and compare the final loss terms.

    python3 scripts/run_ablations.py --steps 300
"""
from __future__ import annotations

import argparse
import tempfile

import numpy as np

from accent_vits.config import ABLATION_MODES, ModelConfig, TrainConfig
from accent_vits.evaluation import training_duration_mae
from accent_vits.toy import write_corpus
from accent_vits.training import Trainer, load_manifest, load_utterance

TERMS = ("recon", "kl_pr", "kl_ac", "bn_mse", "dur", "adv_g", "adv_d", "fm")


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--seed", type=int, default=1234)
    ap.add_argument("--window", type=int, default=20, help="average the last N steps")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        reg, manifest = write_corpus(tmp)
        utts = [load_utterance(r, reg) for r in load_manifest(manifest, reg)]

    print(f"{'mode':<15s}" + "".join(f"{t:>9s}" for t in TERMS) + f"{'dur_mae':>9s}")
    for mode in ABLATION_MODES:
        tr = Trainer(
            ModelConfig.toy(n_symbols=reg.n_symbols, n_speakers=2, ablation=mode),
            TrainConfig.toy(seed=args.seed),
            reg,
        )
        reports = tr.fit(utts, args.steps)[-args.window :]
        cells = []
        for t in TERMS:
            vals = [getattr(r, t) for r in reports]
            cells.append(f"{np.mean(vals):9.3f}" if vals[0] is not None else f"{'-':>9s}")
        print(f"{mode:<15s}" + "".join(cells) + f"{training_duration_mae(tr.gen, utts):9.3f}", flush=True)


if __name__ == "__main__":
    main()
