"""Write the canonical fixture scene configs to configs/scenes/ (input for `rgbdi synth`)."""
import argparse
from pathlib import Path

from rgbdi import fixtures


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "configs" / "scenes"))
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in sorted(fixtures.FIXTURES):
        print(fixtures.dump(name, out / f"{name}.yaml"))


if __name__ == "__main__":
    main()
