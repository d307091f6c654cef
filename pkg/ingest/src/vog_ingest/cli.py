"""The vog-ingest command line tool."""

from __future__ import annotations

import logging
from pathlib import Path

import click

from .convert import IngestConfig, IngestError, ingest


@click.command()
@click.option("--scene-dir", type=click.Path(exists=True, file_okay=False), required=True,
              help="ScanNet-style export: color/, depth/, pose/, intrinsic/.")
@click.option("--detections", "detection_file", type=click.Path(exists=True, dir_okay=False),
              required=True, help="JSON file with 3D instance detections.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True,
              help="Bundle output directory.")
@click.option("--stride", default=20, show_default=True, help="Keep every Nth frame as a view.")
@click.option("--threshold", default=0.5, show_default=True,
              help="Minimum detection score to keep an object.")
@click.option("--label-map", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON mapping of numeric label ids to text labels.")
@click.option("--verbose", is_flag=True, help="Log conversion details.")
def main(scene_dir, detection_file, out_dir, stride, threshold, label_map, verbose):
    """Convert a ScanNet-style scene export into a vog scene bundle."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(message)s")
    config = IngestConfig(
        scene_dir=Path(scene_dir),
        detection_file=Path(detection_file),
        out_dir=Path(out_dir),
        frame_stride=stride,
        score_threshold=threshold,
        label_map_path=Path(label_map) if label_map else None,
    )
    try:
        bundle_dir = ingest(config)
    except IngestError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"bundle written to {bundle_dir}")


if __name__ == "__main__":
    main()
