"""
End to end tests train real (desk sized) models on CPU and take several
minutes each, they share the toy corpora built in `helper`.
"""

from pathlib import Path
import sys
import os

sys.path.append(os.path.abspath(Path(__file__).parent.parent.parent))

TEST_DATA_DIR = os.path.join(os.path.dirname(__file__), "test_data")

# desk profile values shared by every end to end run
BASE_CONFIG = {
    "log_level": "INFO",
    "threads": 4,
    "batch_size": 32,
    "patience": 5,
    "eval_fraction": 0.1,
    "dropout": 0.0,
    "model_max_len": 64,
}
