"""Overfit the toy preset on the 2-utterance synthetic corpus.

    python3 scripts/toy_overfit.py --steps 2000 --mode full
"""
from __future__ import annotations

import argparse
import json
import time

from accent_vits.config import ABLATION_MODES
from accent_vits.toy import overfit


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--mode", default="full", choices=ABLATION_MODES)
    ap.add_argument("--seed", type=int, default=1234)
    args = ap.parse_args()
    t0 = time.time()

    def progress(tr, rep):
        if tr.step % 100 == 0:
            print(f"step {tr.step:5d}  recon {rep.recon:.3f}  dur {rep.dur:.3f}  kl_ac {rep.kl_ac:.3f}  "
                  f"{time.time() - t0:.0f}s", flush=True)

    s = overfit(args.steps, args.mode, args.seed, callback=progress)
    print(json.dumps({
        "recon_step50": s.recon_step50,
        "recon_final": s.recon_final,
        "ratio": s.ratio,
        "duration_mae": s.duration_mae,
        "seconds": s.seconds,
    }, indent=2))


if __name__ == "__main__":
    main()
