"""Regenerate tests/golden/*.txt from the current CLI (run with COLUMNS=80)."""

import contextlib
import io
import os
from pathlib import Path

from strnoc.cli import main

COMMANDS = ["", "simulate", "encode", "train", "finetune", "predict", "eval", "explain", "mac"]


def help_text(cmd: str) -> str:
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        main(([cmd] if cmd else []) + ["--help"])
    return buf.getvalue()


if __name__ == "__main__":
    os.environ["COLUMNS"] = "80"
    out = Path(__file__).resolve().parents[1] / "tests" / "golden"
    out.mkdir(exist_ok=True)
    for cmd in COMMANDS:
        (out / f"help_{cmd or 'main'}.txt").write_text(help_text(cmd), encoding="utf-8")
