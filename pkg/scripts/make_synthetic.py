"""Generate seeded mixed-size Bookshelf benchmarks."""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List

ROOT_DIR = Path(__file__).resolve().parents[1]
if str(ROOT_DIR) not in sys.path:
    sys.path.insert(0, str(ROOT_DIR))

from src.logging_setup import setup_logging
from src.synthetic import make_synthetic


@dataclass
class DesignRecord:
    name: str
    cells: int
    macros: int
    nets: int
    aux: Path

    def to_row(self) -> List[str]:
        return [self.name, str(self.cells), str(self.macros), str(self.nets), str(self.aux)]


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Write synthetic mixed-size placement benchmarks.")
    parser.add_argument("--cells", type=int, default=1000, help="Standard cells per design")
    parser.add_argument("--macros", type=int, default=0, help="Movable macros per design")
    parser.add_argument("--seed", type=int, default=0, help="First seed")
    parser.add_argument("--count", type=int, default=1, help="Designs to generate with consecutive seeds")
    parser.add_argument("--utilization", type=float, default=0.6, help="Cell area over core area")
    parser.add_argument("--macro-area", type=float, default=0.2, help="Macro share of the movable area")
    parser.add_argument("--pads", type=int, default=None, help="IO pads on the boundary")
    parser.add_argument("--out", type=Path, default=Path("benchmarks"), help="Output directory")
    return parser


def main() -> None:
    args = build_arg_parser().parse_args()
    setup_logging(log_dir=None)
    records: List[DesignRecord] = []
    for seed in range(args.seed, args.seed + args.count):
        design = make_synthetic(
            num_cells=args.cells,
            num_macros=args.macros,
            seed=seed,
            utilization=args.utilization,
            macro_area_fraction=args.macro_area,
            num_pads=args.pads,
        )
        aux = design.write(args.out / design.name)
        records.append(
            DesignRecord(design.name, args.cells, args.macros, design.netlist.num_nets, aux)
        )
    for record in records:
        print(" ".join(record.to_row()))
    print(f"Wrote {len(records)} designs to {args.out}")


if __name__ == "__main__":
    main()
