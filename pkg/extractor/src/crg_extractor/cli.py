"""Command line for the extractor. Mirrors the ExtractJob fields."""

from __future__ import annotations

import argparse
import logging
import sys

from .encoders import ExtractorError
from .extract import ExtractJob, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crg-extract",
        description="Encode class prompts and augmented image views into "
                    "CRG embedding blocks.",
    )
    parser.add_argument("--dataset", required=True, help="dataset name for the manifest")
    parser.add_argument("--images", required=True,
                        help="root directory with one subfolder per class")
    parser.add_argument("--encoder", required=True,
                        help="'clip:<model-id>' or 'toy:<dim>'")
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--template", action="append", dest="templates",
                        help="prompt template with {CLASS}; repeatable", default=None)
    parser.add_argument("--views", type=int, default=16,
                        help="views per image including the original")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--no-ensemble", action="store_true",
                        help="use a single template instead of the averaged ensemble")
    parser.add_argument("--template-index", type=int, default=0,
                        help="which template to use with --no-ensemble")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    job = ExtractJob(
        dataset_name=args.dataset,
        image_root=args.images,
        encoder=args.encoder,
        out_dir=args.out_dir,
        templates=args.templates or ["a photo of a {CLASS}."],
        n_views=args.views,
        seed=args.seed,
        ensemble=not args.no_ensemble,
        template_index=args.template_index,
    )
    try:
        manifest = extract(job)
    except ExtractorError as exc:
        print(f"crg-extract: {exc}", file=sys.stderr)
        return 2
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
