"""Command-line wrapper around :func:`feature_exporter.export`."""

import argparse
import sys

from .exporter import export


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="feature-export",
        description="Export pooled backbone features for an image folder "
                    "(one subfolder per class) to CSV.")
    parser.add_argument("image_root", help="folder with one subfolder per class")
    parser.add_argument("output_csv", help="destination CSV path")
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--random-init", action="store_true",
                        help="use a seeded randomly initialised backbone "
                             "instead of downloading pretrained weights")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for --random-init weights")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        manifest = export(args.image_root, args.output_csv,
                          pretrained=not args.random_init, seed=args.seed,
                          batch_size=args.batch_size)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"exported {manifest.image_count} rows x {manifest.feature_width} "
          f"features for classes {', '.join(manifest.class_names)}"
          + (f" ({len(manifest.skipped)} skipped)" if manifest.skipped else ""))
    print(f"checksum {manifest.checksum}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
