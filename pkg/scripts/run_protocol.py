#!/usr/bin/env python3
"""
Train the victim and run the targeted + untargeted attack protocol.

    python scripts/run_protocol.py --scale desk            # 4 words, 60 + 20 attacks
    python scripts/run_protocol.py --scale paper --jobs 8  # 10 words, 4500 + 500 attacks
    python scripts/run_protocol.py --scale paper --corpus /data/speech_commands_subset

With ``--corpus`` the directory must hold ``<label>/<clip>.wav`` files for
the chosen labels (16 kHz mono PCM16); otherwise the synthetic corpus is used.
"""
import argparse
import sys
from pathlib import Path

from kwsattack.cli import main
from kwsattack.corpus import DEFAULT_LABELS

SCALES = {
    # labels, synthetic clips per label, attacked clips per label
    "desk": (DEFAULT_LABELS[:4], 60, 5),
    "paper": (DEFAULT_LABELS, 80, 50),
}


def run(argv):
    print("$ kwsattack " + " ".join(argv), flush=True)
    code = main(argv)
    if code != 0:
        sys.exit(code)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    ap.add_argument("--scale", choices=SCALES, default="desk")
    ap.add_argument("--corpus", type=Path)
    ap.add_argument("--out", type=Path, default=Path("runs"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    labels, synth_clips, per_label = SCALES[args.scale]
    out = args.out / args.scale
    out.mkdir(parents=True, exist_ok=True)
    if args.corpus:
        corpus = ["--corpus", str(args.corpus)]
    else:
        corpus = ["--synthetic", "--labels", ",".join(labels),
                  "--synthetic-clips", str(synth_clips)]
    model = str(out / "victim.kws")
    run(["train", *corpus, "--seed", str(args.seed), "--model-out", model])
    common = ["evaluate", "--model", model, *corpus, "--clips-per-label", str(per_label),
              "--seed", str(args.seed), "--jobs", str(args.jobs)]
    run([*common, "--out-dir", str(out / "targeted")])
    run([*common, "--untargeted", "--out-dir", str(out / "untargeted")])
    print((out / "targeted" / "matrix.csv").read_text())
