"""mian-export: encode a manifest into a MIANEMB1 embedding file."""
from __future__ import annotations

import argparse
import logging
import sys

from .encoders import HashEncoder, HfImageEncoder, HfTextEncoder, PairedEncoder
from .export import ExportError, export
from .manifest import ManifestError, read_manifest


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mian-export")
    ap.add_argument("--manifest", required=True,
                    help="CSV (with header) or JSONL of text,image_path,label")
    ap.add_argument("--out", required=True)
    ap.add_argument("--m", type=int, default=196,
                    help="text token slots (pad/truncate)")
    ap.add_argument("--u", type=int, default=196,
                    help="image patch slots; must match the vision encoder")
    ap.add_argument("--encoder", choices=("hash", "hf"), default="hf")
    ap.add_argument("--d", type=int, default=32,
                    help="embedding width for --encoder hash")
    ap.add_argument("--text-model", default="bert-base-uncased",
                    help="checkpoint name or local path for --encoder hf")
    ap.add_argument("--image-model", default="google/vit-base-patch16-224",
                    help="checkpoint name or local path for --encoder hf")
    return ap


def main(argv=None) -> int:
    logging.basicConfig(format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        rows = read_manifest(args.manifest)
        if args.encoder == "hash":
            encoder = HashEncoder(d=args.d)
        else:
            encoder = PairedEncoder(HfTextEncoder(args.text_model),
                                    HfImageEncoder(args.image_model))
        n = export(rows, args.out, encoder, m=args.m, u=args.u)
    except (ManifestError, ExportError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"wrote {n} of {len(rows)} rows to {args.out} "
          f"(m={args.m}, u={args.u}, d={encoder.d})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
