"""General utility functions"""

from collections import namedtuple
from typing import List

from .corpus import FilterConfig
from .errors import ConfigError
from .log import get_logger
from .model import ModelConfig
from .training import INITS, TrainConfig

log = get_logger("tashkeel")

ConfigKey = namedtuple(
    "ConfigKey",
    ["type", "default", "help", "choices", "required"],
    defaults=[None, False],
)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")

_COMMON = {
    "log_level": ConfigKey(str, "INFO", "logging level", LOG_LEVELS),
    "seed": ConfigKey(int, 0, "seed for every random choice of the run"),
    "threads": ConfigKey(int, 1, "torch intra-op threads"),
    "slack_log_webhook": ConfigKey(
        str, None, "webhook to post completed run messages to"
    ),
    "slack_alert_webhook": ConfigKey(
        str, None, "webhook to post failed run alerts to"
    ),
}

_FILTER = {
    "min_len": ConfigKey(
        int, 6, "minimum characters (letters, marks and spaces)"
    ),
    "max_len": ConfigKey(
        int, 1024, "maximum characters (letters, marks and spaces)"
    ),
    "min_dtl": ConfigKey(float, 0.6, "minimum diacritics to letters ratio"),
}

_MODEL = {
    "d_model": ConfigKey(int, 512, "model dimension"),
    "n_heads": ConfigKey(int, 16, "attention heads"),
    "n_layers_encoder": ConfigKey(int, 6, "encoder layers"),
    "n_layers_decoder": ConfigKey(int, 0, "decoder layers (ed only)"),
    "ffn_dim": ConfigKey(int, None, "feed-forward dimension (4 x d_model)"),
    "dropout": ConfigKey(float, 0.1, "dropout probability"),
    "model_max_len": ConfigKey(int, 1024, "maximum input positions"),
}

_TRAIN = {
    "lr": ConfigKey(float, 3e-5, "AdamW learning rate"),
    "weight_decay": ConfigKey(float, 1e-2, "AdamW decoupled weight decay"),
    "batch_size": ConfigKey(int, 32, "sequences per batch"),
    "max_epochs": ConfigKey(int, 200, "maximum epochs"),
    "patience": ConfigKey(int, 5, "epochs without improvement to stop"),
    "eval_fraction": ConfigKey(float, 0.02, "fraction held out"),
    "checkpoint_epoch": ConfigKey(int, 5, "epoch of the early checkpoint"),
    "resume": ConfigKey(bool, False, "continue from the last checkpoint"),
}

_RUN_DIR = {"run_dir": ConfigKey(str, None, "run directory", required=True)}

_INFERENCE = {
    "inference_batch_size": ConfigKey(int, 32, "segments per forward pass"),
}


def _required(help_text, key_type=str) -> ConfigKey:
    return ConfigKey(key_type, None, help_text, required=True)


CONFIG_SCHEMA = {
    "prepare": {
        **_COMMON,
        **_FILTER,
        "input": _required("raw UTF-8 text, one sentence per line"),
        "output": _required("output corpus"),
        "mode": ConfigKey(
            str, "finetune", "corpus to prepare", ("finetune", "pretrain")
        ),
        "pretrain_max_len": ConfigKey(
            int, 512, "truncation length of pretraining lines"
        ),
        "workers": ConfigKey(int, 1, "processes to filter with"),
    },
    "build_vocab": {
        **_COMMON,
        "inputs": _required("prepared corpora to read characters from", list),
        "output": _required("vocabulary JSON to write"),
    },
    "export_classes": {
        **_COMMON,
        "output": _required("class table TSV to write"),
    },
    "pretrain": {
        **_COMMON,
        **_MODEL,
        **_TRAIN,
        **_RUN_DIR,
        "corpus": _required("prepared pretraining corpus"),
        "vocab": _required("vocabulary JSON"),
        "mask_prob": ConfigKey(float, 0.15, "MLM selection probability"),
    },
    "finetune": {
        **_COMMON,
        **_MODEL,
        **_TRAIN,
        **_RUN_DIR,
        "corpus": _required("prepared labeled corpus"),
        "vocab": _required("vocabulary JSON"),
        "arch": ConfigKey(str, "eo", "architecture", ("eo", "ed")),
        "init": ConfigKey(str, "scratch", "initialisation", INITS),
        "init_checkpoint": ConfigKey(
            str, None, "checkpoint for pretrained and warm_start inits"
        ),
    },
    "pseudo_label": {
        **_COMMON,
        **_INFERENCE,
        "checkpoint": _required("teacher checkpoint"),
        "input": _required("unlabeled UTF-8 text"),
        "output": _required("labeled corpus to write"),
    },
    "train_student": {
        **_COMMON,
        **_FILTER,
        **_TRAIN,
        **_RUN_DIR,
        **_INFERENCE,
        "teacher_checkpoint": _required("teacher checkpoint"),
        "unlabeled": _required("unlabeled UTF-8 text"),
        "combine_with": _required("labeled corpus to combine with"),
        "sample_size": ConfigKey(int, 1_000_000, "unlabeled lines to sample"),
    },
    "diacritize": {
        **_COMMON,
        **_INFERENCE,
        "checkpoint": _required("trained eo or ed checkpoint"),
        "input": _required("UTF-8 text to diacritize"),
        "output": _required("diacritized output"),
    },
    "evaluate": {
        **_COMMON,
        "reference": _required("gold diacritized text"),
        "hypothesis": _required("system output"),
        "report": ConfigKey(str, None, "JSON report to write"),
        "include_no_tashkeel": ConfigKey(
            bool, True, "count reference NoTashkeel positions"
        ),
        "confusion": ConfigKey(
            bool, False, "add class confusion counts to the report"
        ),
    },
}

# values are layered over schema defaults, `pretrain` and `ed` entries
# apply on top for those commands / architectures
PROFILES = {
    "paper": {
        "all": {"seed": 0},
        "pretrain": {"batch_size": 512, "max_epochs": 6},
        "ed": {"n_layers_encoder": 3, "n_layers_decoder": 3},
    },
    "desk": {
        "all": {
            "d_model": 64,
            "n_heads": 4,
            "n_layers_encoder": 2,
            "batch_size": 16,
            "lr": 1e-3,
            "max_epochs": 50,
            "sample_size": 200,
        },
        "pretrain": {"max_epochs": 5},
        "ed": {"n_layers_encoder": 1, "n_layers_decoder": 1},
    },
}
PROFILES["full"] = PROFILES["paper"]


def profile_values(profile, command, arch=None) -> dict:
    """
    Values a profile sets for the given command

    Parameters
    ----------
    profile : str
        full or desk
    command : str
        CLI command
    arch : str | None
        architecture, for ed specific layer counts

    Returns
    -------
    dict
        profile values restricted to the keys the command accepts
    """
    layers = PROFILES[profile]
    values = {**layers["all"]}

    if command == "pretrain":
        values.update(layers["pretrain"])
    if arch == "ed":
        values.update(layers["ed"])

    return {k: v for k, v in values.items() if k in CONFIG_SCHEMA[command]}


def resolve_config(
    command, profile=None, file_config=None, cli_config=None
) -> dict:
    """
    Layer schema defaults < profile < config file < command line

    Parameters
    ----------
    command : str
        CLI command
    profile : str | None
        built in profile name
    file_config : dict | None
        contents of a config file
    cli_config : dict | None
        values given on the command line, None values are unset

    Returns
    -------
    dict
        resolved config, not yet verified
    """
    file_config = dict(file_config or {})
    cli_config = {k: v for k, v in (cli_config or {}).items() if v is not None}

    # a config snapshot names its own command and profile
    file_config.pop("command", None)
    profile = (
        cli_config.pop("profile", None)
        or profile
        or file_config.get("profile")
        or "paper"
    )
    file_config.pop("profile", None)

    config = {k: v.default for k, v in CONFIG_SCHEMA[command].items()}

    if profile not in PROFILES:
        raise ConfigError(
            [f"unknown profile {profile}, expected one of {sorted(PROFILES)}"]
        )

    arch = (
        cli_config.get("arch")
        or file_config.get("arch")
        or config.get("arch")
    )
    config.update(profile_values(profile, command, arch))

    config.update(file_config)
    config.update(cli_config)
    config["command"] = command
    config["profile"] = profile

    return config


def verify_config(config) -> None:
    """
    Verify that config keys, types and values are valid, collecting every
    problem before raising

    Parameters
    ----------
    config : dict
        resolved config including `command`

    Raises
    ------
    ConfigError
        Raised listing every invalid entry
    """
    log.debug(
        "Verifying contents of config are valid, contents parsed: %s", config
    )
    errors = []
    command = config.get("command")
    schema = CONFIG_SCHEMA.get(command)

    if schema is None:
        raise ConfigError([f"unknown command {command}"])

    for key, value in config.items():
        if key in ("command", "profile"):
            continue

        if key not in schema:
            errors.append(f"unknown parameter {key} for command {command}")
            continue

        spec = schema[key]

        if value is None:
            if spec.required:
                errors.append(f"required parameter {key} not defined")
            continue

        expected = (int, float) if spec.type is float else spec.type

        wrong_bool = isinstance(value, bool) and spec.type is not bool

        if wrong_bool or not isinstance(value, expected):
            errors.append(
                f"{key} not of expected type. Expected: {spec.type.__name__}"
                f" | Found {type(value).__name__}"
            )
            continue

        if spec.choices and value not in spec.choices:
            errors.append(
                f"{key} must be one of {', '.join(spec.choices)}, found"
                f" {value}"
            )

    for key, spec in schema.items():
        if spec.required and key not in config:
            errors.append(f"required parameter {key} not defined")

    if not errors:
        errors.extend(_check_values(config))

    if errors:
        error = ConfigError(errors)
        log.error(str(error))
        raise error
    else:
        log.debug("Config valid")


def _check_values(config) -> List[str]:
    """Range checks owned by the typed config records"""
    errors = []
    schema = CONFIG_SCHEMA[config["command"]]
    builders = (
        ("filter", _FILTER, filter_config),
        ("model", _MODEL, lambda x: model_config(x, vocab_size=1)),
        ("train", _TRAIN, train_config),
    )

    for name, keys, builder in builders:
        if not set(keys) <= set(schema):
            continue

        try:
            builder(config)
        except ValueError as err:
            errors.append(f"invalid {name} settings: {err}")

    for key, minimum in (
        ("threads", 1),
        ("workers", 1),
        ("inference_batch_size", 1),
        ("sample_size", 0),
    ):
        value = config.get(key)

        if key in schema and value is not None and value < minimum:
            errors.append(f"{key} must be at least {minimum}")

    return errors


def filter_config(config) -> FilterConfig:
    filters = FilterConfig(
        min_len=config["min_len"],
        max_len=config["max_len"],
        min_dtl=float(config["min_dtl"]),
    )

    if filters.min_len < 0 or filters.max_len < filters.min_len:
        raise ValueError(
            "length thresholds must satisfy 0 <= min_len <= max_len"
        )

    return filters


def model_config(config, vocab_size, arch=None) -> ModelConfig:
    arch = arch or config.get("arch", "mlm")

    return ModelConfig(
        arch=arch,
        d_model=config["d_model"],
        n_heads=config["n_heads"],
        n_layers_encoder=config["n_layers_encoder"],
        n_layers_decoder=config["n_layers_decoder"] if arch == "ed" else 0,
        ffn_dim=config["ffn_dim"],
        dropout=float(config["dropout"]),
        max_len=config["model_max_len"],
        vocab_size=vocab_size,
    )


def train_config(config) -> TrainConfig:
    return TrainConfig(
        lr=float(config["lr"]),
        weight_decay=float(config["weight_decay"]),
        batch_size=config["batch_size"],
        max_epochs=config["max_epochs"],
        patience=config["patience"],
        mask_prob=float(config.get("mask_prob", 0.15)),
        seed=config["seed"],
        eval_fraction=float(config["eval_fraction"]),
        checkpoint_epoch=config["checkpoint_epoch"],
    )


def split_into_chunks(items, n) -> List[list]:
    """
    Split a list into at most n contiguous chunks of near equal length,
    preserving order so results can be re-joined

    Parameters
    ----------
    items : list
        items to split
    n : int
        number of chunks

    Returns
    ------
    list
        list of non-empty lists
    """
    n = max(1, min(n, len(items)))
    size, extra = divmod(len(items), n)
    chunks = []
    start = 0

    for idx in range(n):
        end = start + size + (1 if idx < extra else 0)
        chunks.append(items[start:end])
        start = end

    return [x for x in chunks if x]


def format_duration(seconds) -> str:
    return f"{int(seconds // 60)}m {int(seconds % 60)}s"


def submit_to_pool(pool, func, item_input, items, **kwargs) -> dict:
    """
    Submits one call to `func` in `pool` (either ThreadPoolExecutor or
    ProcessPoolExecutor) for each item in `items`. All additional
    arguments defined in `kwargs` are passed to the given function.

    Parameters
    ----------
    pool : ThreadPoolExecutor | ProcessPoolExecutor
        concurrent.futures executor to submit calls to
    func : callable
        function to call on submitting
    item_input : str
        function input field to submit each items of `items` to
    items : iterable
        iterable of object to submit

    Returns
    -------
    dict
        mapping of concurrent.futures.Future objects to the original
        `item` submitted for that future, in submission order
    """
    return {
        pool.submit(
            func,
            **{**{item_input: item}, **kwargs},
        ): item
        for item in items
    }
