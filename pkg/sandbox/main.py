from __future__ import annotations
import argparse
import sys
import time
from pathlib import Path

from frostfactor.cli import main as run_command
from frostfactor.synthetic import SyntheticSettings, generate_corpus, write_corpus


def main(args: argparse.Namespace) -> int:
    config_file = Path(args.config_file)
    data_dir = config_file.parent / "data"

    settings = SyntheticSettings(
        n_businesses=args.businesses, n_users=args.users, seed=args.seed
    )
    start_time = time.perf_counter_ns()
    write_corpus(generate_corpus(settings), data_dir)

    status = run_command(["pipeline", "--config", str(config_file)])
    finish_time = time.perf_counter_ns()
    print("Pipeline took {:.1f} s".format((finish_time - start_time) / 1e9))
    return status


if __name__ == "__main__":
    parser = argparse.ArgumentParser(
        description="Generate a synthetic review corpus and run the whole "
        "pipeline on it"
    )
    parser.add_argument(
        "-c",
        "--config-file",
        default=str(Path(__file__).parent / "config.yml"),
        help="YAML configuration of the pipeline. The corpus is written to "
        "a ‘data’ directory next to it.",
    )
    parser.add_argument(
        "-b", "--businesses", type=int, default=200, help="Number of businesses."
    )
    parser.add_argument("-u", "--users", type=int, default=300, help="Number of users.")
    parser.add_argument(
        "-s", "--seed", type=int, default=0, help="Seed of the synthetic corpus."
    )
    args = parser.parse_args()

    sys.exit(main(args))
