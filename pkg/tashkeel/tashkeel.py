import argparse
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
import json
import os
import sys
from timeit import default_timer as timer

import torch

from tashkeel.utils import slack
from tashkeel.utils.arabic_text import write_class_table
from tashkeel.utils.corpus import (
    CharVocab,
    CorpusStats,
    build_vocab,
    filter_finetune,
    prepare_pretrain,
)
from tashkeel.utils.errors import (
    CheckpointError,
    ConfigError,
    EmptyCorpus,
    EmptyEvaluationSet,
    LineCountMismatch,
    NonFiniteGradient,
    TashkeelError,
)
from tashkeel.utils.evaluation import evaluate_corpus
from tashkeel.utils.inference import Diacritizer
from tashkeel.utils.io import (
    acquire_lock,
    read_config,
    read_labeled_corpus,
    read_lines,
    release_lock,
    write_json,
    write_labeled_corpus,
    write_lines,
)
from tashkeel.utils.log import (
    get_logger,
    remove_file_handlers,
    set_file_handler,
)
from tashkeel.utils.noisy_student import (
    NsRoundSpec,
    PseudoLabelStats,
    pseudo_label,
    run_ns_round,
    stats_file,
)
from tashkeel.utils.training import finetune, pretrain_mlm
from tashkeel.utils.utils import (
    CONFIG_SCHEMA,
    PROFILES,
    filter_config,
    format_duration,
    model_config,
    resolve_config,
    split_into_chunks,
    submit_to_pool,
    train_config,
    verify_config,
)


log = get_logger("tashkeel")

EXIT_IO = 1
EXIT_EMPTY_CORPUS = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4

RUN_DIR_COMMANDS = ("pretrain", "finetune", "train_student")

COMMAND_HELP = {
    "prepare": "Filter a fine-tuning corpus or prepare pretraining lines",
    "build_vocab": "Build the character vocabulary from prepared corpora",
    "export_classes": "Write the diacritic class table as TSV",
    "pretrain": "Masked character pretraining",
    "finetune": "Train an encoder-only or encoder-decoder diacritizer",
    "pseudo_label": "Label unlabeled text with a trained model",
    "train_student": "Run one Noisy-Student round",
    "diacritize": "Diacritize text with a trained model",
    "evaluate": "Score diacritized text against a reference",
}


class ConfigArgumentParser(argparse.ArgumentParser):
    """Argument parser exiting with the config error code"""

    def error(self, message):
        self.print_usage(sys.stderr)
        log.error("%s: %s", self.prog, message)
        sys.exit(EXIT_CONFIG)


def _str_to_bool(value) -> bool:
    if value.lower() in ("true", "1", "yes"):
        return True
    if value.lower() in ("false", "0", "no"):
        return False

    raise argparse.ArgumentTypeError(f"expected true or false, got {value}")


def parse_args(argv=None) -> argparse.Namespace:
    """
    Parse cmd line arguments, one flag per config key of each command

    Returns
    -------
    argparse.Namespace
        parsed arguments
    """
    parser = ConfigArgumentParser(prog="tashkeel")

    subparsers = parser.add_subparsers(
        help="Command to run", dest="command", required=True
    )

    for command, schema in CONFIG_SCHEMA.items():
        command_parser = subparsers.add_parser(
            command, help=COMMAND_HELP[command]
        )
        command_parser.add_argument(
            "--config",
            help=(
                "JSON config file, the config.json snapshot of a previous run"
                " reproduces it"
            ),
        )
        command_parser.add_argument(
            "--profile",
            choices=sorted(PROFILES),
            help="built in defaults to layer the config over (default: paper)",
        )

        for key, spec in schema.items():
            kwargs = {
                "default": None,
                "help": f"{spec.help} (default: {spec.default})",
            }

            if spec.type is bool:
                kwargs.update(type=_str_to_bool, metavar="{true,false}")
            elif spec.type is list:
                kwargs.update(nargs="+")
            else:
                kwargs.update(type=spec.type)

            if spec.choices:
                kwargs.update(choices=spec.choices)

            command_parser.add_argument(f"--{key}", **kwargs)

    return parser.parse_args(argv)


def load_run_config(args) -> dict:
    """
    Resolve and verify the config of the parsed command

    Parameters
    ----------
    args : argparse.Namespace
        parsed command line

    Returns
    -------
    dict
        verified config
    """
    cli_config = {
        key: getattr(args, key) for key in CONFIG_SCHEMA[args.command]
    }

    try:
        file_config = read_config(args.config) if args.config else {}
    except json.JSONDecodeError as err:
        log.error("%s is not valid JSON: %s", args.config, err)
        raise ConfigError([f"{args.config} is not valid JSON: {err}"]) from err

    if not isinstance(file_config, dict):
        log.error("%s must hold a JSON object", args.config)
        raise ConfigError([f"{args.config} must hold a JSON object"])

    config = resolve_config(
        args.command,
        profile=args.profile,
        file_config=file_config,
        cli_config=cli_config,
    )
    verify_config(config)

    return config


def snapshot_path(config) -> str:
    """Where the resolved config of a command is written"""
    if config["command"] in RUN_DIR_COMMANDS:
        return os.path.join(config["run_dir"], "config.json")

    output = config.get("output") or config.get("report")

    return f"{output}.config.json" if output else None


def read_vocab(path) -> CharVocab:
    with open(path, encoding="utf-8") as fh:
        return CharVocab.from_dict(json.load(fh))


def prepare(config) -> dict:
    """
    Prepare a fine-tuning (filtered, labeled) or pretraining (bare,
    truncated) corpus and write its stats next to it

    Parameters
    ----------
    config : dict
        verified prepare config

    Returns
    -------
    dict
        corpus stats
    """
    lines = read_lines(config["input"], binary=True)

    if config["mode"] == "pretrain":
        kept = write_lines(
            config["output"],
            prepare_pretrain(lines, max_len=config["pretrain_max_len"]),
        )
        stats = {"total_in": len(lines), "kept": kept}
    else:
        filters = filter_config(config)
        chunks = split_into_chunks(lines, config["workers"])

        if len(chunks) > 1:
            log.info(
                "Filtering %s lines over %s processes", len(lines), len(chunks)
            )

            with ProcessPoolExecutor(max_workers=len(chunks)) as executor:
                jobs = submit_to_pool(
                    pool=executor,
                    func=filter_finetune,
                    item_input="lines",
                    items=chunks,
                    config=filters,
                )
                # dict order is submission order => input order
                results = [future.result() for future in jobs]
        else:
            results = [filter_finetune(lines, config=filters)]

        kept_seqs = [seq for seqs, _ in results for seq in seqs]
        merged = sum((x for _, x in results), CorpusStats())

        write_labeled_corpus(config["output"], kept_seqs)
        stats = {
            **merged.to_dict(),
            "filter_config": asdict(filters),
            "filter_config_hash": filters.config_hash(),
        }

    write_json(stats_file(config["output"]), stats)

    if not stats["kept"]:
        log.error("No lines of %s survived preparation", config["input"])
        raise EmptyCorpus(f"prepared corpus {config['output']} is empty")

    return stats


def make_vocab(config) -> dict:
    corpus = (
        line.split("\t", 1)[0]
        for path in config["inputs"]
        for line in read_lines(path)
    )
    vocab = build_vocab(corpus)
    write_json(
        config["output"], {**vocab.to_dict(), "vocab_hash": vocab.vocab_hash()}
    )

    return {"characters": len(vocab.chars), "vocab_hash": vocab.vocab_hash()}


def export_classes(config) -> dict:
    write_class_table(config["output"])

    return {"output": config["output"]}


def pretrain(config) -> dict:
    vocab = read_vocab(config["vocab"])
    best = pretrain_mlm(
        train_config(config),
        read_lines(config["corpus"]),
        model_config(config, vocab_size=len(vocab), arch="mlm"),
        vocab,
        config["run_dir"],
        resume=config["resume"],
    )

    return {"best checkpoint": best}


def finetune_diacritizer(config) -> dict:
    if config["init"] != "scratch" and not config["init_checkpoint"]:
        raise ConfigError(
            [f"init_checkpoint required for a {config['init']} init"]
        )

    vocab = read_vocab(config["vocab"])
    history = finetune(
        arch=config["arch"],
        init=config["init"],
        train_config=train_config(config),
        corpus=read_labeled_corpus(config["corpus"]),
        vocab=vocab,
        run_dir=config["run_dir"],
        model_config=model_config(config, vocab_size=len(vocab)),
        init_checkpoint=config["init_checkpoint"],
        resume=config["resume"],
    )
    best = min(history, key=lambda x: x["val_der"])

    return {
        "epochs": len(history),
        "best epoch": best["epoch"],
        "best validation DER": f"{best['val_der'] * 100:.3f}%",
    }


def pseudo_label_corpus(config) -> dict:
    teacher = Diacritizer.from_checkpoint(
        config["checkpoint"], batch_size=config["inference_batch_size"]
    )
    stats = PseudoLabelStats()
    write_labeled_corpus(
        config["output"],
        pseudo_label(teacher, read_lines(config["input"]), stats=stats),
    )
    write_json(stats_file(config["output"]), stats.to_dict())

    return stats.to_dict()


def train_student(config) -> dict:
    spec = NsRoundSpec(
        teacher_checkpoint=config["teacher_checkpoint"],
        unlabeled_source=config["unlabeled"],
        combine_with=config["combine_with"],
        sample_size=config["sample_size"],
        filters=filter_config(config),
        seed=config["seed"],
        inference_batch_size=config["inference_batch_size"],
    )
    _, report = run_ns_round(spec, train_config(config), config["run_dir"])

    return {
        "pseudo labeled": report["stages"]["pseudo_labeled"],
        "combined corpus": report["stages"]["combined_kept"],
        "best validation DER": f"{report['student_best_val_der'] * 100:.3f}%",
    }


def diacritize(config) -> dict:
    diacritizer = Diacritizer.from_checkpoint(
        config["checkpoint"], batch_size=config["inference_batch_size"]
    )
    lines = read_lines(config["input"])
    write_lines(config["output"], diacritizer.diacritize_lines(lines))

    return {"lines": len(lines)}


def evaluate(config) -> dict:
    report = evaluate_corpus(
        config["reference"],
        config["hypothesis"],
        include_no_tashkeel=config["include_no_tashkeel"],
        confusion=config["confusion"],
    )

    print(report.format_table(), end="")

    if config["report"]:
        write_json(config["report"], report.to_dict())

    return report.to_dict()


COMMANDS = {
    "prepare": prepare,
    "build_vocab": make_vocab,
    "export_classes": export_classes,
    "pretrain": pretrain,
    "finetune": finetune_diacritizer,
    "pseudo_label": pseudo_label_corpus,
    "train_student": train_student,
    "diacritize": diacritize,
    "evaluate": evaluate,
}


def run_command(config) -> dict:
    """
    Run one command, holding the run directory lock and writing the log
    file there for training commands

    Parameters
    ----------
    config : dict
        verified config

    Returns
    -------
    dict
        summary of the command
    """
    command = config["command"]
    lock_fd = None

    try:
        if command in RUN_DIR_COMMANDS:
            lock_fd = acquire_lock(config["run_dir"])
            set_file_handler(log, log_dir=config["run_dir"])

        snapshot = snapshot_path(config)

        if snapshot:
            write_json(snapshot, config)

        start = timer()
        summary = COMMANDS[command](config)

        log.info(
            "Completed %s in %s", command, format_duration(timer() - start)
        )
    finally:
        if lock_fd is not None:
            release_lock(lock_fd)
            remove_file_handlers(log)

    return summary


def exit_code(error) -> int:
    if isinstance(error, NonFiniteGradient):
        return EXIT_NUMERIC
    if isinstance(error, EmptyCorpus):
        return EXIT_EMPTY_CORPUS
    if isinstance(
        error,
        (OSError, CheckpointError, LineCountMismatch, EmptyEvaluationSet),
    ):
        return EXIT_IO
    return EXIT_CONFIG


def main(argv=None) -> None:
    args = parse_args(argv)

    try:
        config = load_run_config(args)
    except ConfigError:
        sys.exit(EXIT_CONFIG)
    except OSError as error:
        log.error("Could not read config: %s", error)
        sys.exit(EXIT_IO)

    log.setLevel(config["log_level"])
    torch.set_num_threads(config["threads"])

    run = config.get("run_dir") or config.get("output") or config.get("report")

    try:
        summary = run_command(config)
    except (OSError, TashkeelError, ValueError) as error:
        log.error("%s failed: %s", config["command"], error)

        if config["command"] in RUN_DIR_COMMANDS:
            slack.notify(
                config,
                config["command"],
                run,
                completed=False,
                error=str(error),
            )

        sys.exit(exit_code(error))

    if config["command"] in RUN_DIR_COMMANDS:
        slack.notify(config, config["command"], run, summary=summary)


if __name__ == "__main__":
    main()
