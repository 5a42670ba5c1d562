"""ATE with and without the IMU on the slow and fast fixtures (synthesized in memory)."""
import argparse
import time

from rgbdi import fixtures
from rgbdi.config import PipelineConfig
from rgbdi.frames import SequenceConfig
from rgbdi.pipeline import in_memory, run
from rgbdi.synthetic import GeneratorOptions, scene_from_dict, synthesize, trajectory_from_dict


def fixture_sequence(name, duration):
    spec = fixtures.scene_config(name, duration=duration)
    syn = synthesize(scene_from_dict(spec["scene"]), trajectory_from_dict(spec["trajectory"]),
                     SequenceConfig.from_dict(spec["camera"]), GeneratorOptions(**spec["generator"]))
    return in_memory(syn), syn.peak_angular_rate


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--duration", type=float, default=10.0)
    parser.add_argument("--fixtures", nargs="+", default=["slow", "fast"])
    args = parser.parse_args()
    print(f"{'fixture':<8} {'peak rad/s':>10} {'ATE imu':>10} {'ATE no-imu':>11} {'ratio':>7} {'diverged':>9} {'s':>6}")
    for name in args.fixtures:
        seq, peak = fixture_sequence(name, args.duration)
        t0 = time.perf_counter()
        ate = {}
        diverged = False
        for flag in (True, False):
            cfg = PipelineConfig()
            cfg.toggles.use_imu = flag
            s = run(cfg, seq).summary
            ate[flag] = s["ate_rmse"]
            diverged |= (not flag) and s["diverged"]
        print(f"{name:<8} {peak:>10.2f} {ate[True]:>10.4f} {ate[False]:>11.4f} {ate[False] / ate[True]:>7.2f} "
              f"{str(diverged):>9} {time.perf_counter() - t0:>6.0f}")


if __name__ == "__main__":
    main()
