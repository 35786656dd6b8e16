import argparse
import sys

import structlog

from steklov_lab.config import settings
from steklov_lab.errors import LabError
from steklov_lab.log import configure_logging
from steklov_lab.services.geometry import circle_polygon, equilateral_triangle, koch_prefractal, square_polygon
from steklov_lab.services.storage import write_boundary

logger = structlog.get_logger()


def export_boundary(args: argparse.Namespace):
    """Build the requested boundary and write it as an `MB d n` file"""

    if args.kind == "circle":
        boundary = circle_polygon(args.size, args.segments)
    elif args.kind == "square":
        boundary = square_polygon(args.size / 2, n_per_side=args.segments)
    else:
        boundary = koch_prefractal(equilateral_triangle(args.size), args.generation, measure=args.measure)

    path = write_boundary(boundary, args.output)
    logger.info(
        "Boundary written",
        path=str(path),
        kind=args.kind,
        n_edges=boundary.polygon.n_edges,
        d=boundary.d,
        total_mass=boundary.total_mass,
    )
    return path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Write a circle, square or Koch boundary file")
    parser.add_argument("kind", choices=("circle", "square", "koch"))
    parser.add_argument("output")
    parser.add_argument("--size", type=float, default=1.0, help="radius (circle) or side length (square, koch)")
    parser.add_argument("--segments", type=int, default=64, help="edges of the circle, or edges per square side")
    parser.add_argument("--generation", type=int, default=3)
    parser.add_argument("--measure", choices=("self_similar", "arclength"), default="self_similar")
    args = parser.parse_args(argv)

    configure_logging(settings.log_level, settings.log_json)
    try:
        export_boundary(args)
    except LabError as e:
        logger.error("Boundary export failed", error=e.message, **e.context)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
