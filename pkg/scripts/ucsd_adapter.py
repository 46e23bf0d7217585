"""Convert one UCSD Anomaly Detection clip into the layout ``aad run`` reads.

Writes ``frame_NNNN.pgm`` files, ``truth.txt`` (one 0/1 label per frame) and
a ready-to-run ``run.ini``. Frame-level ground truth comes from the dataset's
MATLAB file (``UCSDped1.m`` / ``UCSDped2.m``), whose entries look like::

    TestVideoFile{end+1}.gt_frame = [60:152];

Reading the ``.tif`` frames needs Pillow, which is not a package dependency.

Example::

    python scripts/ucsd_adapter.py --dataset UCSD_Anomaly_Dataset.v1p2/UCSDped1 \
        --clip Test003 --out ped1_test003
"""
from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

import numpy as np

from aad.frame_io import natural_key, write_pgm

GT_LINE = re.compile(r"gt_frame\s*=\s*\[([^\]]*)\]")


def parse_gt_file(text: str) -> list[list[tuple[int, int]]]:
    """One list of inclusive 1-based frame ranges per clip, in file order."""
    clips = []
    for match in GT_LINE.finditer(text):
        ranges = []
        for part in re.split(r"[,\s]+", match.group(1).strip()):
            if not part:
                continue
            lo, _, hi = part.partition(":")
            ranges.append((int(lo), int(hi or lo)))
        clips.append(ranges)
    return clips


def frame_labels(ranges, num_frames: int) -> np.ndarray:
    labels = np.zeros(num_frames, dtype=np.int8)
    for lo, hi in ranges:
        labels[max(lo - 1, 0) : min(hi, num_frames)] = 1
    return labels


def read_frames(clip_dir: Path) -> list[np.ndarray]:
    try:
        from PIL import Image
    except ImportError:  # pragma: no cover
        sys.exit("reading .tif frames needs Pillow: pip install Pillow")
    paths = sorted(clip_dir.glob("*.tif"), key=lambda p: natural_key(p.name))
    if not paths:
        sys.exit(f"no .tif frames in {clip_dir}")
    return [np.asarray(Image.open(p).convert("L"), dtype=np.float64) for p in paths]


def convert(dataset: Path, clip: str, out: Path, gt_file: Path | None = None) -> int:
    clip_dir = dataset / "Test" / clip
    frames = read_frames(clip_dir)
    if gt_file is None:
        candidates = sorted((dataset / "Test").glob("*.m"))
        if not candidates:
            sys.exit(f"no ground-truth .m file under {dataset / 'Test'}")
        gt_file = candidates[0]
    clips = parse_gt_file(gt_file.read_text())
    number = int(re.sub(r"\D", "", clip))
    if not 1 <= number <= len(clips):
        sys.exit(f"{gt_file} has no entry for {clip}")
    labels = frame_labels(clips[number - 1], len(frames))

    out.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(frames):
        write_pgm(out / f"frame_{i:04d}.pgm", img)
    (out / "truth.txt").write_text("".join(f"{v}\n" for v in labels))
    (out / "run.ini").write_text(
        "[input]\nframes = .\ntruth = truth.txt\n\n[detector]\nk = 3\n\n[output]\ndir = run\n"
    )
    return len(frames)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dataset", required=True, type=Path, help="UCSDped1 or UCSDped2 directory")
    parser.add_argument("--clip", required=True, help="test clip name, e.g. Test003")
    parser.add_argument("--out", required=True, type=Path)
    parser.add_argument("--gt-file", type=Path, help="ground-truth .m file (default: first one under Test/)")
    args = parser.parse_args(argv)
    n = convert(args.dataset, args.clip, args.out, args.gt_file)
    print(f"wrote {n} frames to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
