"""Download the MNIST IDX files into a local directory.

    python -m ellelab.data.fetch_idx --output data/mnist
"""

import argparse
import gzip
import logging
import time
from pathlib import Path
from typing import Iterable, Optional

import requests

from ellelab.utils import load_config

logger = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://storage.googleapis.com/cvdf-datasets/mnist/"
IDX_FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)


def _get(getter, url: str) -> bytes:
    resp = getter.get(url, timeout=60)
    resp.raise_for_status()
    return resp.content


def download(url: str, attempts: int = 3, pause: float = 2.0, session: Optional[requests.Session] = None) -> bytes:
    getter = session or requests
    for attempt in range(1, attempts):
        try:
            return _get(getter, url)
        except requests.RequestException as exc:
            logger.warning("Download of %s failed (%s), retry %d/%d", url, exc, attempt, attempts - 1)
            time.sleep(pause * attempt)
    return _get(getter, url)


def fetch_all(
    output_dir: Path,
    base_url: str = DEFAULT_BASE_URL,
    names: Iterable[str] = IDX_FILES,
    overwrite: bool = False,
    session: Optional[requests.Session] = None,
) -> list:
    output_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in names:
        target = output_dir / name
        if target.exists() and not overwrite:
            logger.info("Keeping existing %s", target)
            written.append(target)
            continue
        payload = download(f"{base_url}{name}.gz", session=session)
        target.write_bytes(gzip.decompress(payload))
        logger.info("Wrote %s (%d bytes)", target, target.stat().st_size)
        written.append(target)
        time.sleep(0.34)
    return written


def main():
    config = load_config().get("idx", {})
    parser = argparse.ArgumentParser(description="Fetch MNIST IDX files")
    parser.add_argument("--output", default=config.get("directory", "data/mnist"))
    parser.add_argument("--base-url", default=config.get("base_url", DEFAULT_BASE_URL))
    parser.add_argument("--overwrite", action="store_true")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s [%(levelname)s] %(name)s: %(message)s")
    fetch_all(Path(args.output), args.base_url, overwrite=args.overwrite)


if __name__ == "__main__":
    main()
