"""Command-line entry point: ``fsf-export --data DIR --out DIR``."""

import argparse
import logging
import sys

from .errors import ExportError
from .export import DEFAULT_TEMPLATE, ExportSpec, export_features


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsf-export",
        description="Encode an image-folder dataset and class prompts into "
                    "FSF feature files (train.fsf, optional test.fsf, text.fsf).")
    parser.add_argument("--data", required=True,
                        help="dataset root: class subdirectories, or "
                             "train/ and test/ containing them")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--model", default="hashed/64",
                        help="encoder id: hashed/<dim> or clip/<model-id> "
                             "(default: %(default)s)")
    parser.add_argument("--template", default=DEFAULT_TEMPLATE,
                        help="prompt template with one {} placeholder "
                             "(default: %(default)r)")
    parser.add_argument("--templates",
                        help="file with one template per line; overrides "
                             "--template and ensembles the class prototypes")
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress per-class logging")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s")
    templates = (args.template,)
    try:
        if args.templates:
            with open(args.templates, encoding="utf-8") as fh:
                templates = tuple(line.strip() for line in fh if line.strip())
        spec = ExportSpec(
            data_root=args.data, out_dir=args.out, model=args.model,
            templates=templates, batch_size=args.batch_size,
            device=args.device)
        written = export_features(spec)
    except (ExportError, OSError, ValueError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    for name in sorted(written):
        print(f"{name}: {written[name]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
