"General IO related methods"

from datetime import datetime
from fcntl import flock, LOCK_EX, LOCK_NB, LOCK_UN
import json
import os
from pathlib import Path
import sys
from typing import Iterator, List

from .arabic_text import LabeledSequence
from .log import get_logger

log = get_logger("tashkeel")

LOCK_FILE_NAME = "tashkeel.lock"


def acquire_lock(run_dir) -> int:
    """
    Tries to acquire an exclusive file lock on `tashkeel.lock` in the run
    directory so two processes never write to the same run.

    If another process holds the lock the function exits with code 1.

    Parameters
    ----------
    run_dir : str
        run directory to lock, created if missing

    Returns
    -------
    int
        file id of the lock file
    """
    Path(run_dir).mkdir(parents=True, exist_ok=True)
    lock_file = os.path.join(run_dir, LOCK_FILE_NAME)

    if os.path.exists(lock_file):
        lock_fd = os.open(lock_file, flags=os.O_RDWR)
    else:
        lock_fd = os.open(lock_file, flags=os.O_RDWR | os.O_CREAT | os.O_TRUNC)

    try:
        # LOCK_NB makes flock raise instead of waiting
        flock(lock_fd, LOCK_EX | LOCK_NB)
        os.write(
            lock_fd,
            "file lock acquired at"
            f" {datetime.now().strftime('%H:%M:%S')} from process"
            f" {os.getpid()}".encode(),
        )
    except BlockingIOError:
        log.error(
            "Could not acquire exclusive lock on %s, another process is"
            " using this run directory. Exiting now.",
            lock_file,
        )
        os.close(lock_fd)
        sys.exit(1)

    return lock_fd


def release_lock(lock_fd) -> None:
    """
    Release the file lock on the given file descriptor

    Parameters
    ----------
    lock_fd : int
        file id of the lock file
    """
    try:
        # test if provided file descriptor is valid
        os.readlink(f"/proc/self/fd/{lock_fd}")
    except FileNotFoundError:
        pass
    else:
        os.truncate(lock_fd, 0)

        flock(lock_fd, LOCK_UN)
        os.close(lock_fd)


def read_config(config) -> dict:
    """
    Read in the JSON config file

    Parameters
    ----------
    config : str
        filename of config file

    Returns
    -------
    dict
        contents of config file
    """
    log.info("Loading config from %s", config)
    with open(config, "r") as fh:
        return json.load(fh)


def write_json(path, data) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)

    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, ensure_ascii=False, indent=4)


def append_jsonl(path, record) -> None:
    """Append one JSON record as a line, used for per epoch metrics"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)

    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_jsonl(path) -> List[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(x) for x in fh if x.strip()]


def read_lines(path, binary=False) -> List:
    """
    Read a text file into lines without their line endings

    Parameters
    ----------
    path : str
        file to read
    binary : bool
        return bytes lines so undecodable lines can be counted downstream

    Returns
    -------
    list
        lines of the file
    """
    log.info("Reading lines from %s", path)

    if binary:
        with open(path, "rb") as fh:
            return fh.read().splitlines()

    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def write_lines(path, lines) -> int:
    """
    Write lines to a UTF-8 file, one per line

    Returns
    -------
    int
        number of lines written
    """
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    count = 0

    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line + "\n")
            count += 1

    log.info("Wrote %s lines to %s", count, path)

    return count


def write_labeled_corpus(path, seqs) -> int:
    """
    Write labeled sequences as `skeleton<TAB>ids<TAB>provenance` lines,
    ids space separated

    Parameters
    ----------
    path : str
        output file
    seqs : iterable
        LabeledSequence records

    Returns
    -------
    int
        number of records written
    """
    return write_lines(
        path,
        (
            f"{x.letters}\t{' '.join(str(int(y)) for y in x.labels)}"
            f"\t{x.provenance}"
            for x in seqs
        ),
    )


def iter_labeled_corpus(path) -> Iterator[LabeledSequence]:
    """
    Read a labeled corpus file, the provenance column is optional and
    defaults to gold

    Parameters
    ----------
    path : str
        labeled corpus file

    Yields
    ------
    LabeledSequence
        records in file order

    Raises
    ------
    ValueError
        Raised on a line with the wrong number of columns or labels
    """
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            columns = line.rstrip("\n").split("\t")

            if len(columns) not in (2, 3):
                raise ValueError(
                    f"{path}:{line_no} has {len(columns)} columns, expected"
                    " 2 or 3"
                )

            try:
                yield LabeledSequence(
                    letters=columns[0],
                    labels=tuple(int(x) for x in columns[1].split()),
                    provenance=columns[2] if len(columns) == 3 else "gold",
                )
            except ValueError as err:
                raise ValueError(f"{path}:{line_no}: {err}") from err


def read_labeled_corpus(path) -> List[LabeledSequence]:
    seqs = list(iter_labeled_corpus(path))
    log.info("Read %s labeled sequences from %s", len(seqs), path)

    return seqs
