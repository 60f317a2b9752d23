"""
Wrapper script for calling the diacritizer with given sets of inference
batch sizes / torch threads to benchmark throughput and peak memory with
each pair iteratively to determine the optimal to set for inference
"""

import argparse
from collections import defaultdict
from datetime import datetime
import os
from pathlib import Path
from statistics import mean
import subprocess
import sys
from tempfile import TemporaryDirectory
from time import gmtime, strftime
from timeit import default_timer as timer
from typing import Tuple


def parse_args() -> argparse.Namespace:
    """
    Parse cmd line arguments

    Returns
    -------
    argparse.Namespace
        Namespace object of parsed cmd line arguments
    """
    parser = argparse.ArgumentParser()
    parser.add_argument(
        "--repeats",
        type=int,
        default=1,
        help=(
            "number of times to run diacritization for the given pair, if"
            " greater than one then the mean elapsed time and max resident"
            " set size will be calculated from all runs"
        ),
    )
    parser.add_argument(
        "--checkpoint",
        required=True,
        help="trained eo or ed checkpoint directory to benchmark with",
    )
    parser.add_argument(
        "--input",
        required=True,
        help="UTF-8 text file to diacritize, one sentence per line",
    )
    parser.add_argument(
        "--batch_sizes",
        nargs="+",
        type=int,
        required=True,
        help="list of inference batch sizes to benchmark with",
    )
    parser.add_argument(
        "--threads",
        nargs="+",
        type=int,
        required=True,
        help="list of numbers of torch threads to benchmark with",
    )

    return parser.parse_args()


def get_peak_memory_usage(profile_file) -> float:
    """
    Read memory usage output from memory-profiler to get peak memory usage.

    File is formatted with one line per sample containing 'MEM 10.00 1.00',
    where 10.00 is memory usage at that time point and 1.00 being the time
    since execution

    Parameters
    ----------
    profile_file : str
        mprof output file, removed once read

    Returns
    -------
    float
        peak memory usage of the process
    """
    with open(profile_file, mode="r", encoding="utf8") as fh:
        contents = [x for x in fh.read().splitlines() if x.startswith("MEM")]

    os.remove(profile_file)

    try:
        return round(max(float(x.split()[1]) for x in contents), 2)
    except ValueError as err:
        print(f"Error in parsing output from memory-profiler:\n{err}")
        print("Returning zero and continuing")
        return 0


def call_command(command) -> subprocess.CompletedProcess:
    """
    Call the given command with subprocess run

    Parameters
    ----------
    command : str
        command to call

    Returns
    -------
    subprocess.CompletedProcess
        completed process object

    Raises
    ------
    SystemExit
        Raised when provided command does not return a zero exit code
    """
    proc = subprocess.run(
        command, shell=True, check=False, capture_output=True
    )

    stdout = proc.stdout.decode()
    stderr = proc.stderr.decode()

    # mprof swallows the return code and always exits with zero, therefore
    # check if an error was logged to stderr
    if proc.returncode != 0 or "ERROR" in stderr:
        print(f"Error in calling {command}")
        print(stdout)
        print(stderr)
        sys.exit(proc.returncode or 1)

    return proc


def count_lines(path) -> Tuple[int, int]:
    """Number of lines and characters of the benchmark input"""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    return len(lines), sum(len(x) for x in lines)


def run_benchmark(
    checkpoint, input_file, output_dir, batch_size, threads
) -> Tuple[float, float]:
    """
    Call the diacritize command with the given parameters and capture both
    the elapsed time and maximum resident set size (i.e. peak memory usage).

    The CLI is called through subprocess.run instead of being imported so
    memory-profiler can follow the whole process.

    Parameters
    ----------
    checkpoint : str
        checkpoint directory
    input_file : str
        text to diacritize
    output_dir : str
        directory to write the output and memory profile to
    batch_size : int
        inference batch size
    threads : int
        torch intra-op threads

    Returns
    -------
    float
        elapsed time in seconds
    float
        maximum resident set size (in mb)
    """
    root = Path(__file__).absolute().parent.parent
    profile_file = os.path.join(output_dir, "benchmark.out")
    output = os.path.join(output_dir, f"diacritized_{batch_size}_{threads}")

    command = (
        f"cd {root} && mprof run --include-children -o {profile_file}"
        f" python3 -m tashkeel.tashkeel diacritize --checkpoint {checkpoint}"
        f" --input {input_file} --output {output} --inference_batch_size"
        f" {batch_size} --threads {threads} --log_level WARNING"
    )

    print(f"Calling diacritizer with:\n\t{command}")

    start = timer()
    call_command(command)
    end = timer()

    elapsed_time = round(end - start, 2)
    max_resident_set_size = get_peak_memory_usage(profile_file)

    print(f"Diacritization completed in {elapsed_time}s")

    return elapsed_time, max_resident_set_size


def main():
    args = parse_args()

    assert (
        max(args.threads) <= os.cpu_count()
    ), "maximum specified number of threads exceeds available cores"

    now = datetime.now().strftime("%d-%m-%y_%H:%M")

    batches_to_threads = [(x, y) for x in args.batch_sizes for y in args.threads]

    n_lines, n_chars = count_lines(args.input)

    print(
        f"\n{n_lines} lines ({n_chars} characters) to benchmark diacritizing"
        f" from {args.input} with {args.checkpoint}"
    )

    benchmarks = [
        f"# Benchmarking initiated at {now}",
        (
            f"# Provided arguments - batch_sizes: {args.batch_sizes} |"
            f" threads: {args.threads} | checkpoint: {args.checkpoint} |"
            f" input: {args.input} | repeats: {args.repeats}"
        ),
        f"# Total lines to benchmark with: {n_lines} ({n_chars} characters)",
        (
            "batch size\tthreads\telapsed time (h:m:s)\tcharacters per"
            " second\tmaximum resident set size (MB)"
        ),
    ]

    total_metrics = defaultdict(lambda: defaultdict(list))
    benchmarks_run = 0

    with TemporaryDirectory() as output_dir:
        while args.repeats > benchmarks_run:
            benchmarks_run += 1
            repeat_start = timer()

            print(
                f"\nRunning benchmarking repeat {benchmarks_run}/{args.repeats}"
            )

            for batch_size, threads in batches_to_threads:
                print(
                    f"\nBeginning benchmarking with batch size {batch_size}"
                    f" and {threads} threads at"
                    f" {datetime.now().strftime('%d-%m-%y %H:%M')}"
                )

                elapsed_time, max_set_size = run_benchmark(
                    checkpoint=args.checkpoint,
                    input_file=os.path.abspath(args.input),
                    output_dir=output_dir,
                    batch_size=batch_size,
                    threads=threads,
                )

                metrics = total_metrics[(batch_size, threads)]
                metrics["elapsed_time"].append(elapsed_time)
                metrics["max_set_size"].append(max_set_size)

            repeat_end = timer()
            print(
                f"Completed benchmarking repeat {benchmarks_run}/"
                f"{args.repeats} in"
                f" {strftime('%H:%M:%S', gmtime(repeat_end - repeat_start))}"
            )

    for compute, metrics in total_metrics.items():
        seconds = mean(metrics["elapsed_time"])
        elapsed_time = strftime("%H:%M:%S", gmtime(round(seconds)))
        throughput = round(n_chars / seconds, 1) if seconds else 0
        max_set_size = round(mean(metrics["max_set_size"]), 2)

        benchmarks.append(
            f"{compute[0]}\t{compute[1]}\t{elapsed_time}\t{throughput}"
            f"\t{max_set_size}"
        )

    outfile = f"tashkeel_benchmark_{now.replace(':', '_')}.tsv"

    with open(outfile, mode="w", encoding="utf8") as fh:
        fh.write("\n".join(benchmarks + ["\n"]))

    print(f"\nBenchmarking complete!\n\nOutput written to {outfile}\n")
    print("\n".join(benchmarks))


if __name__ == "__main__":
    main()
