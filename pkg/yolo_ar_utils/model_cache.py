import logging
import os
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import urlparse

import httpx

logger = logging.getLogger(__name__)

CACHE_ENV = "YOLO_AR_MODEL_CACHE"
URL_ENV = "YOLO_AR_PRETRAINED_URL"
DEFAULT_CACHE = Path.home() / ".cache" / "yolo_ar"


def default_cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, DEFAULT_CACHE))


async def get_model(
    url: str, transport: httpx.AsyncBaseTransport | None = None
) -> bytes:
    async with httpx.AsyncClient(
        timeout=httpx.Timeout(timeout=30), follow_redirects=True, transport=transport
    ) as httpx_client:
        logger.info(f"Attempting to fetch model from: {url}")
        response = await httpx_client.get(url)
        response.raise_for_status()
        return response.content


@dataclass(frozen=True)
class CachedModel:
    name: str
    path: Path
    url: str
    size_bytes: int


class ModelCache:
    """Pretrained models downloaded once into a local directory."""

    models: list[CachedModel]

    def __init__(
        self,
        directory: str | Path | None = None,
        transport: httpx.AsyncBaseTransport | None = None,
    ):
        self.directory = Path(directory) if directory else default_cache_dir()
        self.transport = transport
        self.models = []

    def path_for(self, url: str) -> Path:
        name = Path(urlparse(url).path).name or "model.onnx"
        return self.directory / name

    async def retrieve_model_from(self, url: str) -> bool:
        target = self.path_for(url)
        if target.exists():
            logger.info("Using cached model %s", target)
            self.models.append(CachedModel(target.stem, target, url, target.stat().st_size))
            return True

        try:
            content = await get_model(url, self.transport)
        except httpx.HTTPError as e:
            logger.warning("Failed to fetch model from %s: %s", url, e)
            return False

        self.directory.mkdir(parents=True, exist_ok=True)
        partial = target.with_suffix(target.suffix + ".part")
        partial.write_bytes(content)
        partial.replace(target)
        logger.info("Successfully fetched %s (%d bytes)", target.name, len(content))
        self.models.append(CachedModel(target.stem, target, url, len(content)))
        return True
