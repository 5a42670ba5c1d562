"""AIE of direct (rigid) and deformation tracking on the fixtures, laid out like the comparison table."""
import argparse

from rgbdi.config import PipelineConfig
from rgbdi.pipeline import format_aie_table, track_eval

from imu_ablation import fixture_sequence


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--duration", type=float, default=3.0)
    parser.add_argument("--fixtures", nargs="+", default=["slow", "fast"])
    args = parser.parse_args()
    for i, name in enumerate(args.fixtures):
        seq, _ = fixture_sequence(name, args.duration)
        table = track_eval(PipelineConfig(), seq)
        text = format_aie_table(f"synthetic_{name}", table)
        print(text if i == 0 else text.splitlines()[1])


if __name__ == "__main__":
    main()
