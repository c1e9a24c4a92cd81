import logging
import os
from dataclasses import dataclass
from logging.handlers import RotatingFileHandler
from pathlib import Path

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

load_dotenv()


@dataclass(frozen=True)
class Settings:
    output_root: Path
    log_dir: Path
    db_path: Path


def load_settings() -> Settings:
    return Settings(
        output_root=Path(os.getenv("PILAB_OUTPUT_ROOT", "data/runs")),
        log_dir=Path(os.getenv("PILAB_LOG_DIR", "data/logs")),
        db_path=Path(os.getenv("PILAB_DB_PATH", "data/pilab.db")),
    )


def configure_logging(verbose: bool = False) -> None:
    settings = load_settings()
    settings.log_dir.mkdir(parents=True, exist_ok=True)
    root = logging.getLogger()
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    for h in list(root.handlers):
        root.removeHandler(h)
    fmt = logging.Formatter("%(asctime)s | %(levelname)s | %(filename)s:%(lineno)d | %(message)s")
    file_handler = RotatingFileHandler(
        settings.log_dir / "app.log", maxBytes=5 * 1024 * 1024, backupCount=3, encoding="utf-8"
    )
    file_handler.setFormatter(fmt)
    console = logging.StreamHandler()
    console.setFormatter(fmt)
    root.addHandler(file_handler)
    root.addHandler(console)
